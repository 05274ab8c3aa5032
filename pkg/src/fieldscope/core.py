"""Shared value types, system matrices, the 2-D grid and seeded randomness."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

# Tolerance used when counting grid points, so that spans that are an exact
# multiple of the step (0.9 / 0.3) are not lost to floating-point rounding.
_GRID_EPS = 1e-9


@dataclass(frozen=True)
class StateVector:
    x: float
    y: float
    vx: float
    vy: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.vx, self.vy)):
            raise ValueError(f"non-finite state {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy], dtype=float)


@dataclass(frozen=True)
class Measurement:
    x: float
    y: float
    k: int

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite measurement {self}")
        if self.k < 0:
            raise ValueError(f"negative time index {self.k}")


@dataclass(frozen=True)
class SystemMatrices:
    """Transition, control and observation matrices for a time step ``dk``.

    The transition keeps position and discards velocity; the control map
    injects a velocity both into the position (scaled by ``dk``) and into the
    velocity rows. Consequently ``H @ B == dk * I``.
    """

    dk: float = 1.0
    F: np.ndarray = field(init=False, repr=False)
    B: np.ndarray = field(init=False, repr=False)
    H: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.dk > 0 and math.isfinite(self.dk)):
            raise ValueError(f"time step must be positive, got {self.dk}")
        F = np.zeros((4, 4))
        F[0, 0] = F[1, 1] = 1.0
        B = np.array([[self.dk, 0.0], [0.0, self.dk], [1.0, 0.0], [0.0, 1.0]])
        H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
        for name, value in (("F", F), ("B", B), ("H", H)):
            value.flags.writeable = False
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    step: float

    @property
    def nx(self) -> int:
        return int(math.floor((self.x_max - self.x_min) / self.step + _GRID_EPS)) + 1

    @property
    def ny(self) -> int:
        return int(math.floor((self.y_max - self.y_min) / self.step + _GRID_EPS)) + 1

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape ``(ny, nx)`` of row-major grid data."""
        return self.ny, self.nx

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def xs(self) -> np.ndarray:
        return np.minimum(self.x_min + np.arange(self.nx) * self.step, self.x_max)

    @property
    def ys(self) -> np.ndarray:
        return np.minimum(self.y_min + np.arange(self.ny) * self.step, self.y_max)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return self.x_min, self.x_max, self.y_min, self.y_max


def make_grid(x_min: float, x_max: float, y_min: float, y_max: float, step: float) -> Grid:
    """Build a regular grid over a rectangle.

    Equal bounds on an axis are allowed and give a single row or column.
    """
    values = (x_min, x_max, y_min, y_max, step)
    if not all(math.isfinite(v) for v in values):
        raise ValueError("grid bounds and step must be finite")
    if step <= 0:
        raise ValueError(f"grid step must be positive, got {step}")
    if x_max < x_min or y_max < y_min:
        raise ValueError(f"inverted grid bounds {values[:4]}")
    return Grid(float(x_min), float(x_max), float(y_min), float(y_max), float(step))


def grid_points(g: Grid) -> np.ndarray:
    """All grid points as an ``(nx*ny, 2)`` array, y outer and x inner, both ascending."""
    X, Y = np.meshgrid(g.xs, g.ys)
    return np.column_stack([X.ravel(), Y.ravel()])


def nearest_index(g: Grid, p) -> tuple[int, int]:
    """Indices ``(i, j)`` (x index, y index) of the grid point closest to ``p``.

    Points outside the grid are clamped onto its border.
    """
    i = math.floor((p[0] - g.x_min) / g.step + 0.5)
    j = math.floor((p[1] - g.y_min) / g.step + 0.5)
    return min(max(i, 0), g.nx - 1), min(max(j, 0), g.ny - 1)


class RngHandle:
    """Seeded random source; the only place randomness enters the package.

    Child handles are derived from ``(seed, *keys)`` so that independent
    consumers (agents, noise streams, training) never share a stream and
    never depend on consumption order elsewhere.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in _key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.key))
        )

    def child(self, *keys: int) -> RngHandle:
        return RngHandle(self.seed, self.key + tuple(keys))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def __repr__(self):
        return f"RngHandle(seed={self.seed}, key={self.key})"


def max_workers() -> int:
    """Worker cap from ``FIELDSCOPE_THREADS`` (default: CPU count)."""
    raw = os.environ.get("FIELDSCOPE_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1
