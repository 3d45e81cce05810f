"""Backward target displacements through layerwise regularized inverses.

Instead of chaining transposed Jacobians, the backward pass propagates the
displacement lambda_t = v_t - h_t between a virtual target v_t and the state
h_t attained on the forward pass. One step of the recurrence maps the
displacement through the (linearization of the) regularized inverse of the
transition, and the parameter direction is assembled exactly like a gradient,
with lambda_t standing in for the backpropagated error.

The regularized inverse of h -> a(W_xh x + W_hh h + b_h) is

    v -> V (a^{-1}(proj(v)) - W_xh x - b_h),   V = (W_hh^T W_hh + r I)^{-1} W_hh^T,

where proj clips v into the activation's shrunken image so a^{-1} stays
finite. V is computed once per backward pass, whatever the sequence length,
which is what makes the method cheap; the factorization counter in
:mod:`tprop.linalg` lets tests pin that down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg, rnn

LINEARIZED = "linearized"
FINITE_DIFFERENCE = "finite_difference"
EXACT_INVERSE = "exact_inverse"
VARIANTS = (LINEARIZED, FINITE_DIFFERENCE, EXACT_INVERSE)


@dataclass
class TpHyper:
    """Hyperparameters of the target-propagation backward pass.

    gamma_h scales the initial displacement at the last step, gamma_theta is
    the parameter stepsize applied by the training loop, r the ridge
    coefficient of the inverses, epsilon the clip margin of the projection.
    """

    gamma_h: float = 1e-2
    gamma_theta: float = 1e-1
    r: float = 1.0
    epsilon: float = 1e-3
    variant: str = LINEARIZED

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


def precompute_V(params: rnn.RnnParams, r: float) -> np.ndarray:
    """Ridge pseudo-inverse of the recurrent matrix; one factorization."""
    return linalg.ridge_pinv(params.W_hh, r)


def inverse_apply(
    params: rnn.RnnParams,
    V: np.ndarray,
    x_t: np.ndarray,
    v_t: np.ndarray,
    eps: float = 1e-3,
) -> np.ndarray:
    """Regularized inverse of the step-t transition, applied to target v_t.

    Columns are independent samples; x_t is (d, B) and v_t is (p, B).
    """
    act = params.activation
    z = act.inverse(act.project(v_t, eps), eps)
    return V @ (z - params.W_xh @ x_t - params.b_h[:, None])


def inverse_jacobian_T_apply(
    params: rnn.RnnParams,
    V: np.ndarray,
    h_t: np.ndarray,
    lam: np.ndarray,
    eps: float = 1e-3,
) -> np.ndarray:
    """Linearized inverse step: V diag(da^{-1}(proj(h_t))) lam, columnwise.

    This is the operator the backward recursion applies in place of the
    transposed layer Jacobian W_hh^T diag(a'(u_t)) that plain backprop uses.
    The inverse derivative is evaluated at the projected state, which keeps
    it finite when h_t saturates (the clip is only active there).
    """
    act = params.activation
    s = act.inv_deriv(act.project(h_t, eps), eps)
    return V @ (s * lam)


def _rule_linearized(params, V, cache, t, lam, hyper):
    return inverse_jacobian_T_apply(params, V, cache.hs[t + 1], lam, hyper.epsilon)


def _rule_finite_difference(params, V, cache, t, lam, hyper):
    # v_{t-1} = h_{t-1} + f^{-1}(v_t) - f^{-1}(h_t), so the displacement is
    # the difference of the two inverse applications.
    a = inverse_apply(params, V, cache.xs[t], cache.hs[t + 1] + lam, hyper.epsilon)
    b = inverse_apply(params, V, cache.xs[t], cache.hs[t + 1], hyper.epsilon)
    return a - b


def _rule_exact_inverse(params, V, cache, t, lam, hyper):
    # v_{t-1} = f^{-1}(v_t) without the correction term.
    v = inverse_apply(params, V, cache.xs[t], cache.hs[t + 1] + lam, hyper.epsilon)
    return v - cache.hs[t]


def _rule_true_jacobian(params, V, cache, t, lam, hyper):
    # Debug rule: the actual transposed layer Jacobian. Substituting it for
    # the inverse reproduces -gamma_h times the backprop gradient exactly.
    e = params.activation.deriv(cache.us[t]) * lam
    return params.W_hh.T @ e


_RULES = {
    LINEARIZED: _rule_linearized,
    FINITE_DIFFERENCE: _rule_finite_difference,
    EXACT_INVERSE: _rule_exact_inverse,
}


def _backward(params, cache, y, hyper, rule) -> rnn.Direction:
    rnn._check_cache(params, cache)
    V = precompute_V(params, hyper.r)
    act = params.activation
    lam = -hyper.gamma_h * rnn.loss_grad_state(params, y, cache)
    d: rnn.Direction = {
        "W_xh": np.zeros_like(params.W_xh),
        "W_hh": np.zeros_like(params.W_hh),
        "b_h": np.zeros_like(params.b_h),
    }
    for t in range(cache.tau - 1, -1, -1):
        e = act.deriv(cache.us[t]) * lam
        d["W_hh"] += e @ cache.hs[t].T
        d["W_xh"] += e @ cache.xs[t].T
        d["b_h"] += e.sum(axis=1)
        if t > 0:
            lam = rule(params, V, cache, t, lam, hyper)
    # The output head keeps its plain gradient; the direction is its negation
    # so that theta + gamma_theta * d descends.
    dz = rnn.output_delta(y, cache)
    d["W_hy"] = -(dz @ cache.hs[-1].T)
    d["b_y"] = -dz.sum(axis=1)
    return d


def backward_targets(
    params: rnn.RnnParams,
    cache: rnn.ForwardCache,
    y,
    hyper: TpHyper,
    debug_true_jacobian: bool = False,
) -> rnn.Direction:
    """Linearized-inverse backward pass; returns an update direction.

    The recursion starts from lambda_tau = -gamma_h * dloss/dh_tau and stops
    after producing the displacement for step 1 (a step-0 displacement would
    multiply nothing). Exactly one matrix factorization happens per call.

    With ``debug_true_jacobian`` the inverse operator is replaced by the true
    transposed layer Jacobian, which turns the result into -gamma_h times the
    backprop gradient for the recurrent tensors; useful as a wiring check.
    """
    rule = _rule_true_jacobian if debug_true_jacobian else _rule_linearized
    return _backward(params, cache, y, hyper, rule)


def backward_targets_dtp(
    params: rnn.RnnParams, cache: rnn.ForwardCache, y, hyper: TpHyper
) -> rnn.Direction:
    """Difference variant: displacement f^{-1}(v_t) - f^{-1}(h_t).

    Agrees with :func:`backward_targets` up to O(gamma_h^2); halving gamma_h
    shrinks the difference between the two by about 4x.
    """
    return _backward(params, cache, y, hyper, _rule_finite_difference)


def backward_targets_exact(
    params: rnn.RnnParams, cache: rnn.ForwardCache, y, hyper: TpHyper
) -> rnn.Direction:
    """Plain inverse variant: v_{t-1} = f^{-1}(v_t), no correction term."""
    return _backward(params, cache, y, hyper, _rule_exact_inverse)


def tp_direction(
    params: rnn.RnnParams, cache: rnn.ForwardCache, y, hyper: TpHyper
) -> rnn.Direction:
    """Dispatch on hyper.variant; the training loop calls this."""
    return _backward(params, cache, y, hyper, _RULES[hyper.variant])
