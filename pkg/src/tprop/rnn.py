"""Vanilla recurrent network: forward rollout, losses, exact gradients.

Batches are stored column per sample: a sequence batch has shape
(tau, d, B) and hidden states are (p, B) matrices, so every time step is a
single matrix-matrix product. Losses are batch means, and the gradients
returned by :func:`bptt` are gradients of that batch-mean loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import Activation, get_activation
from .linalg import DimensionMismatch, orthogonal

SOFTMAX_CE = "softmax_ce"
MSE = "mse"
OUTPUT_KINDS = (SOFTMAX_CE, MSE)

# A direction has one entry per parameter tensor, same shapes as the params.
Direction = dict[str, np.ndarray]


class LabelMismatch(ValueError):
    """Labels do not fit the output head (shape, dtype or class range)."""


class CacheMismatch(ValueError):
    """Forward cache was produced by differently shaped parameters."""


@dataclass
class RnnParams:
    """Parameters of h_t = a(W_xh x_t + W_hh h_{t-1} + b_h), y = s(W_hy h_tau + b_y)."""

    W_xh: np.ndarray  # (p, d)
    W_hh: np.ndarray  # (p, p)
    b_h: np.ndarray   # (p,)
    W_hy: np.ndarray  # (K, p)
    b_y: np.ndarray   # (K,)
    activation: Activation
    output_kind: str = SOFTMAX_CE

    @property
    def p(self) -> int:
        return self.W_hh.shape[0]

    @property
    def d(self) -> int:
        return self.W_xh.shape[1]

    @property
    def n_out(self) -> int:
        return self.W_hy.shape[0]

    def tensors(self) -> Direction:
        """Live references to the parameter tensors, keyed by name."""
        return {
            "W_xh": self.W_xh,
            "W_hh": self.W_hh,
            "b_h": self.b_h,
            "W_hy": self.W_hy,
            "b_y": self.b_y,
        }

    def copy(self) -> "RnnParams":
        return RnnParams(
            W_xh=self.W_xh.copy(),
            W_hh=self.W_hh.copy(),
            b_h=self.b_h.copy(),
            W_hy=self.W_hy.copy(),
            b_y=self.b_y.copy(),
            activation=self.activation,
            output_kind=self.output_kind,
        )


@dataclass
class ForwardCache:
    """Everything the backward passes need from one rollout.

    hs stacks h_0 .. h_tau (so hs[0] is the zero initial state), us the
    pre-activations of steps 1 .. tau.
    """

    xs: np.ndarray      # (tau, d, B)
    us: np.ndarray      # (tau, p, B)
    hs: np.ndarray      # (tau + 1, p, B)
    logits: np.ndarray  # (K, B)
    y_hat: np.ndarray   # (K, B); softmax probabilities, or the logits for mse
    output_kind: str

    @property
    def tau(self) -> int:
        return self.xs.shape[0]

    @property
    def batch(self) -> int:
        return self.xs.shape[2]


def init_params(
    p: int,
    d: int,
    n_out: int,
    activation: str | Activation = "tanh",
    output_kind: str = SOFTMAX_CE,
    seed: int = 0,
) -> RnnParams:
    """Random orthogonal weight matrices, zero biases."""
    if isinstance(activation, str):
        activation = get_activation(activation)
    if output_kind not in OUTPUT_KINDS:
        raise ValueError(f"unknown output kind {output_kind!r}")
    rng = np.random.default_rng(seed)
    return RnnParams(
        W_xh=orthogonal(rng, p, d),
        W_hh=orthogonal(rng, p, p),
        b_h=np.zeros(p),
        W_hy=orthogonal(rng, n_out, p),
        b_y=np.zeros(n_out),
        activation=activation,
        output_kind=output_kind,
    )


def softmax(z: np.ndarray) -> np.ndarray:
    """Columnwise softmax, stabilized by subtracting the column max."""
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def forward(params: RnnParams, x_seq: np.ndarray) -> ForwardCache:
    """Roll the network over x_seq (tau, d, B), starting from h_0 = 0."""
    x_seq = np.asarray(x_seq, dtype=np.float64)
    if x_seq.ndim != 3:
        raise DimensionMismatch(f"expected (tau, d, B) inputs, got {x_seq.shape}")
    tau, d, B = x_seq.shape
    if d != params.d:
        raise DimensionMismatch(f"input dim {d} but W_xh expects {params.d}")
    p = params.p
    us = np.empty((tau, p, B))
    hs = np.zeros((tau + 1, p, B))
    act = params.activation
    h = hs[0]
    for t in range(tau):
        u = params.W_xh @ x_seq[t] + params.W_hh @ h + params.b_h[:, None]
        h = act.apply(u)
        us[t] = u
        hs[t + 1] = h
    logits = params.W_hy @ h + params.b_y[:, None]
    if params.output_kind == SOFTMAX_CE:
        y_hat = softmax(logits)
    else:
        y_hat = logits
    return ForwardCache(
        xs=x_seq, us=us, hs=hs, logits=logits, y_hat=y_hat,
        output_kind=params.output_kind,
    )


def _check_labels(y, cache: ForwardCache):
    K, B = cache.logits.shape
    if cache.output_kind == SOFTMAX_CE:
        y = np.asarray(y)
        if y.shape != (B,) or not np.issubdtype(y.dtype, np.integer):
            raise LabelMismatch(
                f"need {B} integer class labels, got shape {y.shape} dtype {y.dtype}"
            )
        if y.min(initial=0) < 0 or y.max(initial=0) >= K:
            raise LabelMismatch(f"labels outside [0, {K})")
        return y
    y = np.asarray(y, dtype=np.float64)
    if y.shape == (B,) and K == 1:
        y = y[None, :]
    if y.shape != (K, B):
        raise LabelMismatch(f"need ({K}, {B}) regression targets, got {y.shape}")
    return y


def loss(y, cache: ForwardCache) -> float:
    """Batch-mean loss: cross entropy after softmax, or plain squared error.

    The squared error is averaged over output coordinates and batch, without
    a 1/2 factor.
    """
    y = _check_labels(y, cache)
    K, B = cache.logits.shape
    if cache.output_kind == SOFTMAX_CE:
        z = cache.logits
        zmax = z.max(axis=0)
        lse = zmax + np.log(np.exp(z - zmax).sum(axis=0))
        return float(np.mean(lse - z[y, np.arange(B)]))
    return float(np.mean((cache.y_hat - y) ** 2))


def output_delta(y, cache: ForwardCache) -> np.ndarray:
    """Gradient of the batch-mean loss with respect to the logits, (K, B)."""
    y = _check_labels(y, cache)
    K, B = cache.logits.shape
    if cache.output_kind == SOFTMAX_CE:
        delta = cache.y_hat.copy()
        delta[y, np.arange(B)] -= 1.0
        return delta / B
    return 2.0 * (cache.y_hat - y) / (K * B)


def loss_grad_state(params: RnnParams, y, cache: ForwardCache) -> np.ndarray:
    """Gradient of the batch-mean loss with respect to h_tau, shape (p, B)."""
    _check_cache(params, cache)
    return params.W_hy.T @ output_delta(y, cache)


def _check_cache(params: RnnParams, cache: ForwardCache):
    tau, p, B = cache.us.shape
    if p != params.p or cache.xs.shape[1] != params.d:
        raise CacheMismatch(
            f"cache built for (p={p}, d={cache.xs.shape[1]}), "
            f"params have (p={params.p}, d={params.d})"
        )
    if cache.hs.shape != (tau + 1, p, B):
        raise CacheMismatch("hidden-state stack inconsistent with pre-activations")
    if cache.logits.shape[0] != params.n_out:
        raise CacheMismatch("output head size changed since the forward pass")
    if cache.output_kind != params.output_kind:
        raise CacheMismatch("output kind changed since the forward pass")


def bptt(params: RnnParams, cache: ForwardCache, y) -> Direction:
    """Exact gradient of the batch-mean loss for every parameter tensor."""
    _check_cache(params, cache)
    act = params.activation
    dz = output_delta(y, cache)
    grad: Direction = {
        "W_xh": np.zeros_like(params.W_xh),
        "W_hh": np.zeros_like(params.W_hh),
        "b_h": np.zeros_like(params.b_h),
        "W_hy": dz @ cache.hs[-1].T,
        "b_y": dz.sum(axis=1),
    }
    gh = params.W_hy.T @ dz
    for t in range(cache.tau - 1, -1, -1):
        e = act.deriv(cache.us[t]) * gh
        grad["W_hh"] += e @ cache.hs[t].T
        grad["W_xh"] += e @ cache.xs[t].T
        grad["b_h"] += e.sum(axis=1)
        if t > 0:
            gh = params.W_hh.T @ e
    return grad
