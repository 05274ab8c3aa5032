"""Analytic central velocity fields of static attractors and repellers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

ATTRACTOR_SQRT = "attractor-sqrt"
ATTRACTOR_GAUSS = "attractor-gauss"
REPELLER_EXP = "repeller-exp"
KINDS = (ATTRACTOR_SQRT, ATTRACTOR_GAUSS, REPELLER_EXP)

_REQUIRED = {
    ATTRACTOR_SQRT: ("b1", "c1", "f1"),
    ATTRACTOR_GAUSS: ("b2", "c2", "f2", "alpha1"),
    REPELLER_EXP: ("b3", "alpha2"),
}

DEFAULT_PARAMS = {
    ATTRACTOR_SQRT: {"b1": 2.0, "c1": 4.0, "f1": 80.0},
    ATTRACTOR_GAUSS: {"b2": 1.1, "c2": 8.0, "f2": 80.0, "alpha1": 50.0},
    REPELLER_EXP: {"b3": 0.8, "alpha2": 1000.0},
}


@dataclass(frozen=True)
class CentralFieldSpec:
    """One static object: its profile kind, center of force and constants.

    ``growing`` only applies to the repeller: ``False`` (default) evaluates
    ``b3 * exp(-d**2 / alpha2)``, ``True`` the literal positive exponent.
    """

    kind: str
    center: tuple[float, float]
    params: dict = field(default_factory=dict)
    growing: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        params = {**DEFAULT_PARAMS[self.kind], **self.params}
        extra = set(params) - set(_REQUIRED[self.kind])
        if extra:
            raise ValueError(f"unexpected parameters {sorted(extra)} for {self.kind}")
        for name in _REQUIRED[self.kind]:
            value = float(params[name])
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{self.kind}.{name} must be positive, got {value}")
            params[name] = value
        if self.kind == ATTRACTOR_SQRT and params["c1"] > params["f1"]:
            raise ValueError("attractor-sqrt requires c1 <= f1")
        if self.kind == ATTRACTOR_GAUSS and params["c2"] > params["f2"]:
            raise ValueError("attractor-gauss requires c2 <= f2")
        object.__setattr__(self, "params", params)

    @property
    def is_attractor(self) -> bool:
        return self.kind != REPELLER_EXP

    def __call__(self, p):
        return field_vector(self, p)


def default_specs() -> list[CentralFieldSpec]:
    """The two attractors and the repeller of the reference scenario."""
    return [
        CentralFieldSpec(ATTRACTOR_SQRT, (0.0, 15.0)),
        CentralFieldSpec(ATTRACTOR_GAUSS, (-10.0, 10.0)),
        CentralFieldSpec(REPELLER_EXP, (0.0, -5.0)),
    ]


def speed_profile(spec: CentralFieldSpec, d):
    """Field speed at distance ``d`` from the center (scalar or array)."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 0):
        raise ValueError("distance must be non-negative")
    p = spec.params
    if spec.kind == ATTRACTOR_SQRT:
        c, f = p["c1"], p["f1"]
        out = np.where(d_arr <= c, np.sqrt(d_arr) / p["b1"], math.sqrt(c) / p["b1"])
        out = np.where(d_arr > f, 0.0, out)
    elif spec.kind == ATTRACTOR_GAUSS:
        c, f = p["c2"], p["f2"]
        out = np.where(d_arr <= c, p["b2"] * np.exp(-((d_arr - c) ** 2) / p["alpha1"]), p["b2"])
        out = np.where(d_arr > f, 0.0, out)
    else:
        sign = 1.0 if spec.growing else -1.0
        out = p["b3"] * np.exp(sign * d_arr**2 / p["alpha2"])
    return float(out) if out.ndim == 0 else out


def field_vector(spec: CentralFieldSpec, p) -> np.ndarray:
    """Velocity induced by ``spec`` at ``p`` (shape ``(2,)`` or ``(n, 2)``).

    Attractors point at the center, repellers away from it; the center
    itself maps to the zero vector.
    """
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    offset = pts - np.asarray(spec.center)
    d = np.hypot(offset[:, 0], offset[:, 1])
    speed = np.atleast_1d(speed_profile(spec, d))
    sign = -1.0 if spec.is_attractor else 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(d[:, None] > 0, offset / d[:, None], 0.0)
    out = sign * speed[:, None] * unit
    return out[0] if single else out


def superpose(specs: Iterable[CentralFieldSpec], p) -> np.ndarray:
    """Sum of the velocities of every field in ``specs`` at ``p``."""
    return FieldSum(list(specs))(p)


class FieldSum:
    """Callable sum of velocity fields, so analytic specs and learned
    regressors can stand in for each other wherever a field is expected."""

    def __init__(self, fields: Sequence):
        self.fields = tuple(fields)

    def __call__(self, p):
        pts = np.asarray(p, dtype=float)
        total = np.zeros(pts.shape if pts.ndim > 1 else (2,))
        for f in self.fields:
            total = total + np.asarray(f(pts))
        return total
