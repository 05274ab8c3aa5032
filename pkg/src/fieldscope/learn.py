"""A 2-10-2 tanh regressor for velocity fields, trained with Levenberg-Marquardt."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .core import Grid, RngHandle, grid_points

log = logging.getLogger(__name__)

N_IN, N_HIDDEN, N_OUT = 2, 10, 2
N_PARAMS = N_HIDDEN * N_IN + N_HIDDEN + N_OUT * N_HIDDEN + N_OUT  # 52

_W1 = slice(0, N_HIDDEN * N_IN)
_B1 = slice(_W1.stop, _W1.stop + N_HIDDEN)
_W2 = slice(_B1.stop, _B1.stop + N_OUT * N_HIDDEN)
_B2 = slice(_W2.stop, _W2.stop + N_OUT)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float).reshape(-1, 2)
        t = np.asarray(self.targets, dtype=float).reshape(-1, 2)
        if len(x) != len(t):
            raise ValueError(f"{len(x)} inputs but {len(t)} targets")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", t)

    def __len__(self):
        return len(self.inputs)


@dataclass(frozen=True)
class Normalizer:
    """Per-axis affine map ``u = (p - center) / scale``."""

    center: tuple[float, float] = (0.0, 0.0)
    scale: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if any(s == 0 or not math.isfinite(s) for s in self.scale):
            raise ValueError("normalizer scale must be finite and non-zero")

    @classmethod
    def from_bounds(cls, x_min, x_max, y_min, y_max) -> Normalizer:
        """Map the rectangle onto ``[-1, 1]^2`` (a zero-width axis keeps unit scale)."""
        sx = (x_max - x_min) / 2 or 1.0
        sy = (y_max - y_min) / 2 or 1.0
        return cls(((x_min + x_max) / 2, (y_min + y_max) / 2), (sx, sy))

    def normalize(self, p):
        return (np.asarray(p, dtype=float) - self.center) / self.scale

    def denormalize(self, u):
        return np.asarray(u, dtype=float) * self.scale + self.center


@dataclass
class MlpModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    normalizer: Normalizer = field(default_factory=Normalizer)
    seed: int = 0

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=float).reshape(N_HIDDEN, N_IN)
        self.b1 = np.asarray(self.b1, dtype=float).reshape(N_HIDDEN)
        self.W2 = np.asarray(self.W2, dtype=float).reshape(N_OUT, N_HIDDEN)
        self.b2 = np.asarray(self.b2, dtype=float).reshape(N_OUT)
        if not np.all(np.isfinite(self.params)):
            raise ValueError("model parameters must be finite")

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    def with_params(self, theta) -> MlpModel:
        theta = np.asarray(theta, dtype=float)
        return replace(
            self,
            W1=theta[_W1].reshape(N_HIDDEN, N_IN).copy(),
            b1=theta[_B1].copy(),
            W2=theta[_W2].reshape(N_OUT, N_HIDDEN).copy(),
            b2=theta[_B2].copy(),
        )

    def __call__(self, p):
        return forward(self, p)


def zero_model(normalizer: Normalizer | None = None) -> MlpModel:
    return MlpModel(
        np.zeros((N_HIDDEN, N_IN)), np.zeros(N_HIDDEN), np.zeros((N_OUT, N_HIDDEN)), np.zeros(N_OUT),
        normalizer or Normalizer(),
    )


def forward_normalized(m: MlpModel, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.tanh(u @ m.W1.T + m.b1) @ m.W2.T + m.b2


def forward(m: MlpModel, p) -> np.ndarray:
    """Network output at ``p``; accepts a single point or an ``(n, 2)`` array."""
    return forward_normalized(m, m.normalizer.normalize(p))


def residual_and_jacobian(m: MlpModel, d: Dataset):
    """Residuals ``forward - target`` stacked per sample as ``[rx0, ry0, rx1, ...]``
    and their exact Jacobian (``2n x 52``) with respect to the parameter vector."""
    if len(d) == 0:
        raise ValueError("empty dataset")
    u = m.normalizer.normalize(d.inputs)
    n = len(u)
    h = np.tanh(u @ m.W1.T + m.b1)
    out = h @ m.W2.T + m.b2
    r = (out - d.targets).ravel()

    dh = 1.0 - h * h
    J = np.zeros((n, N_OUT, N_PARAMS))
    for k in range(N_OUT):
        g = dh * m.W2[k]
        J[:, k, _W1] = (g[:, :, None] * u[:, None, :]).reshape(n, -1)
        J[:, k, _B1] = g
        J[:, k, _W2.start + k * N_HIDDEN:_W2.start + (k + 1) * N_HIDDEN] = h
        J[:, k, _B2.start + k] = 1.0
    return r, J.reshape(2 * n, N_PARAMS)


def _sse(m: MlpModel, d: Dataset) -> float:
    r = forward(m, d.inputs) - d.targets
    return float(np.dot(r.ravel(), r.ravel()))


def _damped_solve(A: np.ndarray, grad: np.ndarray, lam: float) -> np.ndarray:
    A = A.copy()
    A[np.diag_indices_from(A)] += lam
    return cho_solve(cho_factor(A), -grad)


def lm_step(J: np.ndarray, r: np.ndarray, lam: float) -> np.ndarray:
    """Solve ``(J^T J + lam I) delta = -J^T r`` by Cholesky factorization."""
    return _damped_solve(J.T @ J, J.T @ r, lam)


@dataclass(frozen=True)
class TrainConfig:
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    max_epochs: int = 200
    grad_tol: float = 1e-7
    lambda_max: float = 1e10
    seed: int = 0
    init: str = "uniform"
    val_fraction: float = 0.0
    max_fail: int = 6
    restarts: int = 1

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if not (self.lambda_up > 1 > self.lambda_down > 0):
            raise ValueError("need lambda_up > 1 > lambda_down > 0")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")
        if self.init not in ("uniform", "nguyen-widrow"):
            raise ValueError(f"unknown init {self.init!r}")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.max_fail < 1:
            raise ValueError("max_fail must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")


def init_model(normalizer: Normalizer, rng: RngHandle, mode: str = "uniform", seed: int = 0) -> MlpModel:
    theta = rng.uniform(-0.5, 0.5, N_PARAMS)
    m = zero_model(normalizer).with_params(theta)
    if mode == "nguyen-widrow":
        beta = 0.7 * N_HIDDEN ** (1.0 / N_IN)
        norms = np.linalg.norm(m.W1, axis=1, keepdims=True)
        m.W1 = beta * m.W1 / np.where(norms > 0, norms, 1.0)
        m.b1 = rng.uniform(-beta, beta, N_HIDDEN)
    m.seed = seed
    return m


def lm_train(
    d: Dataset,
    cfg: TrainConfig = TrainConfig(),
    rng: RngHandle | None = None,
    normalizer: Normalizer | None = None,
    init: MlpModel | None = None,
):
    """Fit the network to ``d`` by Levenberg-Marquardt.

    Returns ``(model, history)`` where ``history`` holds the sum of squared
    errors at the start and after every accepted step (so it never increases).
    Training stops after ``max_epochs`` accepted steps, when the gradient's
    infinity norm drops below ``grad_tol``, or when the damping exceeds
    ``lambda_max``.

    With ``cfg.val_fraction > 0`` a random hold-out of that share of the
    samples is not trained on; training also stops once the hold-out error
    has failed to improve for ``cfg.max_fail`` accepted steps in a row, and
    the weights with the best hold-out error are returned. ``history`` then
    refers to the training part only.

    With ``cfg.restarts > 1`` training is repeated from fresh random
    weights (drawn from ``rng.child(100, i)`` for restart ``i >= 1``) and the
    run with the lowest final training error wins. ``init`` only seeds the
    first run.
    """
    if len(d) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = rng or RngHandle(cfg.seed)
    best = _train_once(d, cfg, rng, normalizer, init)
    for i in range(1, cfg.restarts):
        cand = _train_once(d, cfg, rng.child(100, i), normalizer, None)
        if cand[1][-1] < best[1][-1]:
            best = cand
    return best


def _train_once(d: Dataset, cfg: TrainConfig, rng: RngHandle, normalizer, init):
    if len(d) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(d) < N_PARAMS:
        warnings.warn(f"only {len(d)} samples for {N_PARAMS} parameters", stacklevel=3)
    if init is None:
        model = init_model(normalizer or Normalizer(), rng, cfg.init, cfg.seed)
    else:
        model = init
    val = None
    if cfg.val_fraction > 0:
        n_val = int(round(cfg.val_fraction * len(d)))
        if 0 < n_val < len(d):
            order = np.argsort(rng.child(1).uniform(size=len(d)), kind="stable")
            held, kept = np.sort(order[:n_val]), np.sort(order[n_val:])
            val = Dataset(d.inputs[held], d.targets[held])
            d = Dataset(d.inputs[kept], d.targets[kept])
    theta = model.params
    lam = cfg.lambda0
    loss = _sse(model, d)
    history = [loss]
    if val is not None:
        best_val, best_model, fails = _sse(model, val), model, 0

    for epoch in range(cfg.max_epochs):
        r, J = residual_and_jacobian(model, d)
        grad = J.T @ r
        if np.max(np.abs(grad)) < cfg.grad_tol:
            log.debug("gradient below tolerance after %d epochs", epoch)
            break
        A = J.T @ J
        accepted = False
        while lam <= cfg.lambda_max:
            try:
                delta = _damped_solve(A, grad, lam)
            except LinAlgError:
                lam *= cfg.lambda_up
                if lam > cfg.lambda_max:
                    raise TrainingError(f"damped normal matrix singular up to lambda={cfg.lambda_max:g}")
                continue
            trial = model.with_params(theta + delta)
            trial_loss = _sse(trial, d)
            if trial_loss < loss:
                model, theta, loss = trial, theta + delta, trial_loss
                history.append(loss)
                lam *= cfg.lambda_down
                accepted = True
                break
            lam *= cfg.lambda_up
        if not accepted:
            log.debug("damping exceeded lambda_max after %d epochs", epoch)
            break
        if val is not None:
            val_loss = _sse(model, val)
            if val_loss < best_val:
                best_val, best_model, fails = val_loss, model, 0
            else:
                fails += 1
                if fails >= cfg.max_fail:
                    log.debug("hold-out error stalled after %d epochs", epoch + 1)
                    break
    if val is not None:
        model = best_model
    return model, history


def evaluate_on_grid(m, g: Grid):
    """Sample a field (any callable) at every grid point, row-major."""
    from .localize import GridField

    return GridField(g, np.asarray(m(grid_points(g)), dtype=float))


def rmse(m: MlpModel, d: Dataset) -> float:
    return math.sqrt(_sse(m, d) / (2 * len(d)))
