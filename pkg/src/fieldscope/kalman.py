"""Hierarchical Kalman filters whose innovations expose unmodeled velocity fields.

A model of level N uses the sum of N learned fields as its control input.
Whatever the learned fields do not explain shows up in the innovation, and
innovation divided by the time step is a sample of the unexplained field at
the position where the control was evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import SystemMatrices
from .sim import Trajectory

FILTERED = "filtered"
OPEN_LOOP = "open-loop"

CONTROL_MEASURED = "measured"
CONTROL_POSTERIOR = "posterior"


class DegenerateCovarianceError(np.linalg.LinAlgError):
    """Raised when the innovation covariance cannot be inverted."""


def default_noise(sigma_process: float, sigma_meas: float, q_field: float = 1.0, q_v: float = 1e-2):
    """Default ``(Q, R, P0)``.

    The position block of ``Q`` carries ``q_field`` on top of the process
    jitter: the transition has no velocity memory, so an unmodeled field is
    process noise of roughly unit scale per step. Keeping it well above ``R``
    keeps the gain near one; a small gain inflates innovations by ``1/K``.
    """
    q_p = sigma_process**2 + q_field
    Q = np.diag([q_p, q_p, q_v, q_v])
    R = sigma_meas**2 * np.eye(2)
    P0 = np.diag([R[0, 0], R[1, 1], 1.0, 1.0])
    return Q, R, P0


@dataclass(frozen=True)
class KalmanModel:
    """A filter model of level ``len(learned_fields)``.

    Each learned field is a callable mapping ``(n, 2)`` positions to ``(n, 2)``
    velocities (a trained regressor or an analytic stand-in).
    """

    learned_fields: tuple[Callable, ...] = ()
    Q: np.ndarray = field(default_factory=lambda: default_noise(0.1, 0.1)[0])
    R: np.ndarray = field(default_factory=lambda: default_noise(0.1, 0.1)[1])
    P0: np.ndarray | None = None
    matrices: SystemMatrices = field(default_factory=SystemMatrices)

    def __post_init__(self):
        object.__setattr__(self, "learned_fields", tuple(self.learned_fields))
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        P0 = np.diag([R[0, 0], R[1, 1], 1.0, 1.0]) if self.P0 is None else np.asarray(self.P0, float)
        for name, m, n in (("Q", Q, 4), ("R", R, 2), ("P0", P0, 4)):
            if m.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")
            if not np.allclose(m, m.T):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(m).min() < -1e-12:
                raise ValueError(f"{name} must be positive semi-definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "P0", P0)

    @property
    def level(self) -> int:
        return len(self.learned_fields)

    @property
    def dk(self) -> float:
        return self.matrices.dk


@dataclass(frozen=True)
class InnovationRecord:
    """Innovation of the step from measurement ``k`` to ``k + 1``.

    ``z`` is the measured position at ``k``, where the control input was
    evaluated, so ``(z, v_residual)`` is a sample of the unexplained field.
    """

    k: int
    z: np.ndarray
    y_tilde: np.ndarray
    v_residual: np.ndarray


def control_input(model: KalmanModel, p) -> np.ndarray:
    """Sum of the learned fields at ``p``; zero for a level-0 model."""
    pts = np.asarray(p, dtype=float)
    total = np.zeros(pts.shape if pts.ndim > 1 else (2,))
    for g in model.learned_fields:
        out = np.asarray(g(np.atleast_2d(pts)), dtype=float)
        total = total + (out if pts.ndim > 1 else out[0])
    return total


def predict(model: KalmanModel, x, P, p_for_control=None, u=None):
    """Time update. Pass either the control point or a precomputed control ``u``."""
    m = model.matrices
    if u is None:
        u = control_input(model, p_for_control)
    x_pred = m.F @ x + m.B @ u
    P_pred = m.F @ P @ m.F.T + model.Q
    return x_pred, P_pred


def update(x_pred, P_pred, z, R, matrices: SystemMatrices | None = None, k: int = 0, z_anchor=None):
    """Measurement update; returns ``(x, P, InnovationRecord)``.

    ``z_anchor`` is the position the record is attached to (defaults to ``z``).
    """
    m = matrices or SystemMatrices()
    H = m.H
    z = np.asarray(z, dtype=float)
    y = z - H @ x_pred
    S = H @ P_pred @ H.T + R
    try:
        c = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovarianceError(f"innovation covariance is singular: {S.tolist()}") from exc
    # K = P H^T S^-1 via the Cholesky factor of S
    PHt = P_pred @ H.T
    K = np.linalg.solve(c.T, np.linalg.solve(c, PHt.T)).T
    x_post = x_pred + K @ y
    I_KH = np.eye(4) - K @ H
    # Joseph form keeps P symmetric positive semi-definite
    P_post = I_KH @ P_pred @ I_KH.T + K @ R @ K.T
    P_post = 0.5 * (P_post + P_post.T)
    anchor = z if z_anchor is None else np.asarray(z_anchor, dtype=float)
    record = InnovationRecord(k, anchor.copy(), y, y / m.dk)
    return x_post, P_post, record


def run_filter(
    model: KalmanModel,
    traj: Trajectory | np.ndarray,
    mode: str = FILTERED,
    control_point: str = CONTROL_MEASURED,
    return_covariances: bool = False,
):
    """Filter one trajectory and return one InnovationRecord per transition.

    ``mode="open-loop"`` predicts each step straight from the previous
    measurement instead of the posterior estimate.
    """
    zs = np.asarray(traj.measurements if isinstance(traj, Trajectory) else traj, dtype=float)
    k0 = traj.k0 if isinstance(traj, Trajectory) else 0
    if len(zs) == 0:
        raise ValueError("cannot filter an empty trajectory")
    m = model.matrices
    records: list[InnovationRecord] = []
    covs = []

    if mode == OPEN_LOOP:
        u = control_input(model, zs[:-1]) if len(zs) > 1 else np.zeros((0, 2))
        for k in range(len(zs) - 1):
            y = zs[k + 1] - (zs[k] + m.dk * u[k])
            records.append(InnovationRecord(k0 + k, zs[k].copy(), y, y / m.dk))
        return (records, covs) if return_covariances else records
    if mode != FILTERED:
        raise ValueError(f"unknown filter mode {mode!r}")

    x = np.array([zs[0, 0], zs[0, 1], 0.0, 0.0])
    P = model.P0.copy()
    if control_point == CONTROL_MEASURED and len(zs) > 1:
        controls = control_input(model, zs[:-1])
    elif control_point not in (CONTROL_MEASURED, CONTROL_POSTERIOR):
        raise ValueError(f"unknown control point {control_point!r}")
    for k in range(len(zs) - 1):
        if control_point == CONTROL_MEASURED:
            anchor = zs[k]
            x_pred, P_pred = predict(model, x, P, u=controls[k])
        else:
            anchor = x[:2].copy()
            x_pred, P_pred = predict(model, x, P, p_for_control=anchor)
        x, P, rec = update(x_pred, P_pred, zs[k + 1], model.R, m, k0 + k, anchor)
        records.append(rec)
        if return_covariances:
            covs.append(P)
    return (records, covs) if return_covariances else records


def records_to_arrays(records: Sequence[InnovationRecord], drop_first: bool = True):
    """Stack records into ``(positions, residual_velocities)`` arrays."""
    recs = list(records)[1:] if drop_first else list(records)
    if not recs:
        return np.zeros((0, 2)), np.zeros((0, 2))
    return np.array([r.z for r in recs]), np.array([r.v_residual for r in recs])
