"""Training loop, experiment configs, grid search.

A run is described by a flat ExperimentConfig that serializes to a key=value
text file; the file written next to a run's metrics (config.snapshot) is
itself a valid config input, so any run can be reproduced from its output
directory. Fixed seed means a bit-reproducible sequence of batches, losses
and accuracies (wall times are measured, so they vary).
"""

from __future__ import annotations

import dataclasses
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import gru as gru_mod
from . import rnn, targetprop, tasks
from .linalg import SingularSystem

BP = "bp"
TP = "tp"
TP_DTP = "tp-dtp"
TP_EXACT = "tp-exact"
METHODS = (BP, TP, TP_DTP, TP_EXACT)

TASKS = (tasks.TEMPORAL_ORDER, tasks.ADDING, "pixels")

DATA_DIR_ENV = "TPROP_DATA_DIR"

_VARIANT_OF = {
    TP: targetprop.LINEARIZED,
    TP_DTP: targetprop.FINITE_DIFFERENCE,
    TP_EXACT: targetprop.EXACT_INVERSE,
}


class ConfigError(ValueError):
    """Experiment config is incomplete or inconsistent."""


class ParseError(ValueError):
    """A metrics or config file could not be parsed."""


@dataclass
class ExperimentConfig:
    task: str = tasks.TEMPORAL_ORDER
    T: int = 60                 # synthetic sequence length
    k: int = 1                  # pixels per step for image tasks
    permute: bool = False       # permute pixels before chunking
    perm_seed: int = 12345
    data_dir: str = ""          # IDX directory; falls back to $TPROP_DATA_DIR
    model: str = "rnn"          # rnn | gru
    hidden: int = 100
    activation: str = "tanh"
    method: str = TP
    gamma: float = 1e-3         # bp stepsize
    gamma_h: float = 1e-2       # tp target stepsize
    gamma_theta: float = 1e-1   # tp parameter stepsize
    r: float = 1.0              # ridge coefficient of the inverses
    epsilon: float = 1e-3       # projection clip margin
    momentum: float = 0.9       # bp momentum (Nesterov); 0 disables
    tp_momentum: bool = False   # opt-in momentum on tp directions
    batch: int = 20
    iters: int = 10000
    eval_every: int = 1000      # held-out eval cadence for image tasks
    stop_at_acc: float = 0.0    # stop once running accuracy reaches this; 0 never
    seed: int = 0

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.model not in ("rnn", "gru"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.model == "gru" and self.method != BP and self.method != TP:
            raise ConfigError("gru supports methods bp and tp only")
        if self.hidden < 1 or self.batch < 1 or self.iters < 0:
            raise ConfigError("hidden, batch and iters must be positive")
        if self.task != "pixels" and self.T < 10:
            raise ConfigError("synthetic tasks need T >= 10")
        if self.r < 0:
            raise ConfigError("ridge coefficient must be nonnegative")
        from .activations import ACTIVATIONS
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as f:
        for fld in dataclasses.fields(cfg):
            v = getattr(cfg, fld.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            f.write(f"{fld.name} = {v}\n")


def load_config(path) -> ExperimentConfig:
    """Parse a key = value config file written by :func:`save_config`."""
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key = value")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in fields:
                raise ParseError(f"{path}:{lineno}: unknown key {key!r}")
            ftype = fields[key].type
            try:
                if ftype == "bool":
                    if raw not in ("true", "false"):
                        raise ValueError(raw)
                    values[key] = raw == "true"
                elif ftype == "int":
                    values[key] = int(raw)
                elif ftype == "float":
                    values[key] = float(raw)
                else:
                    values[key] = raw
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad value for {key}: {raw!r}") from exc
    return ExperimentConfig(**values)


@dataclass
class MetricsLog:
    """Per-iteration training metrics plus optional held-out evaluations."""

    iters: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    accs: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    eval_iters: list[int] = field(default_factory=list)
    eval_accs: list[float] = field(default_factory=list)
    diverged: bool = False
    diverged_at: int | None = None

    def running_accuracy(self, window: int = 100) -> float:
        if not self.accs:
            return 0.0
        return float(np.mean(self.accs[-window:]))

    def to_csv(self, path) -> None:
        eval_at = dict(zip(self.eval_iters, self.eval_accs))
        with_eval = bool(eval_at)
        tmp = f"{path}.tmp"
        with open(tmp, "w") as f:
            f.write("iter,loss,acc,wall_ms" + (",eval_acc" if with_eval else "") + "\n")
            for i, it in enumerate(self.iters):
                row = (f"{it},{self.losses[i]:.17g},{self.accs[i]:.17g},"
                       f"{self.wall_ms[i]:.3f}")
                if with_eval:
                    ev = eval_at.get(it)
                    row += f",{ev:.17g}" if ev is not None else ","
                f.write(row + "\n")
            if self.diverged:
                f.write(f"# diverged_at={self.diverged_at}\n")
        os.replace(tmp, path)

    @classmethod
    def from_csv(cls, path) -> "MetricsLog":
        log = cls()
        with open(path) as f:
            header = f.readline().strip()
            if not header.startswith("iter,loss,acc,wall_ms"):
                raise ParseError(f"{path}: unexpected header {header!r}")
            with_eval = header == "iter,loss,acc,wall_ms,eval_acc"
            if not with_eval and header != "iter,loss,acc,wall_ms":
                raise ParseError(f"{path}: unexpected header {header!r}")
            for lineno, line in enumerate(f, 2):
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    if line.startswith("# diverged_at="):
                        log.diverged = True
                        log.diverged_at = int(line.split("=", 1)[1])
                    continue
                parts = line.split(",")
                if len(parts) != (5 if with_eval else 4):
                    raise ParseError(f"{path}:{lineno}: wrong field count")
                try:
                    it = int(parts[0])
                    log.iters.append(it)
                    log.losses.append(float(parts[1]))
                    log.accs.append(float(parts[2]))
                    log.wall_ms.append(float(parts[3]))
                    if with_eval and parts[4]:
                        log.eval_iters.append(it)
                        log.eval_accs.append(float(parts[4]))
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from exc
        return log


@dataclass
class TrainResult:
    log: MetricsLog
    params: object  # RnnParams or GruParams


class _SyntheticTask:
    def __init__(self, cfg: ExperimentConfig):
        self.name = cfg.task
        self.T = cfg.T
        self.batch = cfg.batch
        if cfg.task == tasks.TEMPORAL_ORDER:
            self.d, self.n_out = tasks.N_SYMBOLS, 4
            self.output_kind = rnn.SOFTMAX_CE
            self._gen = tasks.gen_temporal_order
        else:
            self.d, self.n_out = 2, 1
            self.output_kind = rnn.MSE
            self._gen = tasks.gen_adding

    def sample(self, rng) -> tasks.Batch:
        return self._gen(self.T, self.batch, rng)

    def accuracy(self, y_hat, labels) -> float:
        if self.output_kind == rnn.SOFTMAX_CE:
            return tasks.classification_accuracy(y_hat, labels)
        return tasks.adding_accuracy(y_hat, labels)


class _PixelTask:
    def __init__(self, cfg: ExperimentConfig):
        root = cfg.data_dir or os.environ.get(DATA_DIR_ENV, "")
        if not root:
            raise ConfigError(
                f"pixels task needs data_dir or ${DATA_DIR_ENV} pointing at the IDX files"
            )
        def p(name):
            path = os.path.join(root, name)
            if not os.path.exists(path):
                raise ConfigError(f"missing dataset file {path}")
            return path
        self.train = tasks.load_idx(p("train-images-idx3-ubyte"), p("train-labels-idx1-ubyte"))
        self.test = tasks.load_idx(p("t10k-images-idx3-ubyte"), p("t10k-labels-idx1-ubyte"))
        self.name = "pixels"
        self.k = cfg.k
        self.batch = cfg.batch
        if self.train.pixels % cfg.k != 0:
            raise ConfigError(f"k={cfg.k} does not divide {self.train.pixels} pixels")
        self.permutation = (
            tasks.fixed_permutation(cfg.perm_seed, self.train.pixels)
            if cfg.permute else None
        )
        self.d = cfg.k
        self.n_out = int(self.train.labels.max()) + 1
        self.output_kind = rnn.SOFTMAX_CE
        self._epoch = None

    def sample(self, rng) -> tasks.Batch:
        if self._epoch is None:
            self._epoch = tasks.epoch_indices(self.train.n, self.batch, rng)
        return tasks.image_batch(self.train, next(self._epoch), self.k, self.permutation)

    def accuracy(self, y_hat, labels) -> float:
        return tasks.classification_accuracy(y_hat, labels)


def build_task(cfg: ExperimentConfig):
    if cfg.task == "pixels":
        return _PixelTask(cfg)
    return _SyntheticTask(cfg)


def init_model(cfg: ExperimentConfig, task, seed: int):
    if cfg.model == "gru":
        return gru_mod.init_gru_params(
            cfg.hidden, task.d, task.n_out, task.output_kind, seed
        )
    return rnn.init_params(
        cfg.hidden, task.d, task.n_out, cfg.activation, task.output_kind, seed
    )


def nesterov_step(theta: dict, velocity: dict, grad: dict,
                  gamma: float, momentum: float) -> None:
    """One Nesterov momentum step, in place on the parameter tensors.

    v <- mu v - gamma g;  theta <- theta + mu v - gamma g. With momentum 0
    this is a plain gradient step.
    """
    for name, g in grad.items():
        v = momentum * velocity[name] - gamma * g
        velocity[name] = v
        theta[name] += momentum * v - gamma * g


def _forward_for(params, inputs):
    if isinstance(params, gru_mod.GruParams):
        return gru_mod.gru_forward(params, inputs)
    return rnn.forward(params, inputs)


def _direction_for(cfg, params, cache, y, hyper):
    """Update direction for one batch. BP returns the negated gradient so
    every method's update is theta += stepsize * direction."""
    if cfg.method == BP:
        if isinstance(params, gru_mod.GruParams):
            g = gru_mod.gru_bptt(params, cache, y)
        else:
            g = rnn.bptt(params, cache, y)
        return {k: -v for k, v in g.items()}
    if isinstance(params, gru_mod.GruParams):
        return gru_mod.gru_tp_backward(params, cache, y, hyper)
    return targetprop.tp_direction(params, cache, y, hyper)


def evaluate(params, task, n_batches: int, rng: np.random.Generator) -> float:
    """Held-out accuracy: fresh batches for synthetic tasks, the test split
    (in n_batches slices of 250, or all of it for n_batches = 0) for images."""
    if isinstance(task, _PixelTask):
        n = task.test.n if n_batches == 0 else min(task.test.n, 250 * n_batches)
        correct = 0
        for start in range(0, n, 250):
            idx = np.arange(start, min(start + 250, n))
            b = tasks.image_batch(task.test, idx, task.k, task.permutation)
            cache = _forward_for(params, b.inputs)
            correct += int(np.sum(np.argmax(cache.y_hat, axis=0) == b.labels))
        return correct / n
    accs = []
    for _ in range(max(n_batches, 1)):
        b = task.sample(rng)
        cache = _forward_for(params, b.inputs)
        accs.append(task.accuracy(cache.y_hat, b.labels))
    return float(np.mean(accs))


def train(cfg: ExperimentConfig, params=None) -> TrainResult:
    """Run the configured experiment; never raises on divergence.

    A non-finite loss (or a singular inverse system) truncates the log and
    sets the divergence marker instead of crashing.
    """
    cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    s_init, s_data, s_eval = ss.spawn(3)
    task = build_task(cfg)
    if params is None:
        params = init_model(cfg, task, int(s_init.generate_state(1)[0]))
    rng_data = np.random.default_rng(s_data)
    rng_eval = np.random.default_rng(s_eval)
    theta = params.tensors()
    velocity = {k: np.zeros_like(v) for k, v in theta.items()}
    hyper = targetprop.TpHyper(
        gamma_h=cfg.gamma_h, gamma_theta=cfg.gamma_theta, r=cfg.r,
        epsilon=cfg.epsilon, variant=_VARIANT_OF.get(cfg.method, targetprop.LINEARIZED),
    )
    log = MetricsLog()
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for it in range(cfg.iters):
            t0 = time.perf_counter()
            batch = task.sample(rng_data)
            cache = _forward_for(params, batch.inputs)
            loss = rnn.loss(batch.labels, cache)
            if not np.isfinite(loss):
                log.diverged = True
                log.diverged_at = it
                break
            acc = task.accuracy(cache.y_hat, batch.labels)
            try:
                direction = _direction_for(cfg, params, cache, batch.labels, hyper)
            except SingularSystem:
                log.diverged = True
                log.diverged_at = it
                break
            if cfg.method == BP:
                nesterov_step(theta, velocity, {k: -v for k, v in direction.items()},
                              cfg.gamma, cfg.momentum)
            elif cfg.tp_momentum:
                nesterov_step(theta, velocity, {k: -v for k, v in direction.items()},
                              cfg.gamma_theta, cfg.momentum)
            else:
                for name, d in direction.items():
                    theta[name] += cfg.gamma_theta * d
            log.iters.append(it)
            log.losses.append(loss)
            log.accs.append(acc)
            log.wall_ms.append((time.perf_counter() - t0) * 1000.0)
            if (
                isinstance(task, _PixelTask)
                and cfg.eval_every > 0
                and (it + 1) % cfg.eval_every == 0
            ):
                log.eval_iters.append(it)
                log.eval_accs.append(evaluate(params, task, 0, rng_eval))
            if cfg.stop_at_acc > 0 and log.running_accuracy() >= cfg.stop_at_acc:
                break
    return TrainResult(log=log, params=params)


def training_area(losses) -> float:
    """Area under the raw training-loss curve, trapezoidal rule with unit
    spacing. Note the endpoint convention: n samples span n - 1 intervals,
    so a constant loss c over 400 iterations integrates to 399 c."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size < 2:
        return float(losses.sum())
    return float(np.trapezoid(losses))


@dataclass
class GridCell:
    gamma_theta: float
    r: float
    area: float  # nan when diverged
    diverged: bool


def _grid_run(args) -> GridCell:
    cfg, gt, r = args
    run = dataclasses.replace(cfg, gamma_theta=gt, r=r)
    result = train(run)
    diverged = result.log.diverged or len(result.log.losses) < run.iters
    area = float("nan") if diverged else training_area(result.log.losses)
    return GridCell(gamma_theta=gt, r=r, area=area, diverged=diverged)


def grid_search(
    base: ExperimentConfig,
    gamma_theta_grid,
    r_grid,
    gamma_h: float | None = None,
    horizon: int = 400,
    jobs: int = 1,
) -> list[GridCell]:
    """Area under the training-loss curve for every (gamma_theta, r) cell.

    gamma_h is held fixed across the grid; each cell trains for ``horizon``
    iterations from the same seed. Diverged cells get area nan. Cells are
    independent runs, so jobs > 1 fans them out over processes.
    """
    cfg = dataclasses.replace(
        base,
        iters=horizon,
        gamma_h=base.gamma_h if gamma_h is None else gamma_h,
        stop_at_acc=0.0,
    )
    cfg.validate()
    work = [(cfg, float(gt), float(r)) for gt in gamma_theta_grid for r in r_grid]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_grid_run, work))
    return [_grid_run(w) for w in work]
