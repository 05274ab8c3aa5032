"""Locate and classify an object from the divergence of its sampled velocity field."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import Grid, grid_points, nearest_index

ATTRACTIVE = "attractive"
REPULSIVE = "repulsive"


@dataclass(frozen=True)
class GridField:
    """Velocity vectors on a grid, row-major (``grid.size x 2``)."""

    grid: Grid
    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float).reshape(-1, 2)
        if len(v) != self.grid.size:
            raise ValueError(f"{len(v)} vectors for a grid of {self.grid.size} points")
        object.__setattr__(self, "vectors", v)

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.vectors[:, 0], self.vectors[:, 1])

    @property
    def angle(self) -> np.ndarray:
        """Direction in radians, ``atan2(vy, vx)``."""
        return np.arctan2(self.vectors[:, 1], self.vectors[:, 0])


@dataclass(frozen=True)
class ScalarField:
    """A scalar per grid point as an ``(ny, nx)`` array."""

    grid: Grid
    values: np.ndarray


@dataclass(frozen=True)
class ObjectEstimate:
    position: tuple[float, float]
    nature: str
    div_value: float
    size: float | None = None

    @property
    def is_attractive(self) -> bool:
        return self.nature == ATTRACTIVE


def divergence(f: GridField) -> ScalarField:
    """``d vx/dx + d vy/dy`` by central differences inside the grid and
    second-order one-sided differences on its border."""
    g = f.grid
    if g.nx < 3 or g.ny < 3:
        raise ValueError(f"divergence needs at least a 3x3 grid, got {g.nx}x{g.ny}")
    v = f.vectors.reshape(g.ny, g.nx, 2)
    dvx_dx = np.gradient(v[:, :, 0], g.step, axis=1, edge_order=2)
    dvy_dy = np.gradient(v[:, :, 1], g.step, axis=0, edge_order=2)
    return ScalarField(g, dvx_dx + dvy_dy)


def coverage_mask(g: Grid, inputs, radius: float) -> np.ndarray:
    """``(ny, nx)`` boolean mask of cells with a training input within ``radius``."""
    if not radius > 0:
        raise ValueError("coverage radius must be positive")
    pts = np.asarray(getattr(inputs, "inputs", inputs), dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros(g.shape, dtype=bool)
    dist, _ = cKDTree(pts).query(grid_points(g), k=1, distance_upper_bound=radius * (1 + 1e-12))
    return (dist <= radius).reshape(g.shape)


def locate(div: ScalarField, mask: np.ndarray | None = None) -> ObjectEstimate:
    """Cell of largest ``|div|`` (first in row-major order on ties); negative
    divergence there means attractive, anything else repulsive."""
    values = np.asarray(div.values, dtype=float)
    absdiv = np.abs(values)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(values.shape)
        if not mask.any():
            raise ValueError("every grid cell is masked out")
        absdiv = np.where(mask, absdiv, -1.0)
    flat = int(np.argmax(absdiv))
    j, i = divmod(flat, div.grid.nx)
    value = float(values[j, i])
    nature = ATTRACTIVE if value < 0 else REPULSIVE
    return ObjectEstimate((float(div.grid.xs[i]), float(div.grid.ys[j])), nature, value)


def estimate_size(div: ScalarField, est: ObjectEstimate, fraction: float = 0.1, n_rays: int = 32) -> float | None:
    """Mean radius at which ``|div|`` along rays from the estimate first drops
    below ``fraction`` of its peak. Rays leaving the grid first are ignored;
    ``None`` if no ray qualifies. A supplementary diagnostic, not a fitted size."""
    g = div.grid
    absdiv = np.abs(div.values)
    peak = abs(est.div_value)
    if peak == 0:
        return None
    x0, y0 = est.position
    reach = np.hypot(g.x_max - g.x_min, g.y_max - g.y_min)
    radii = np.arange(1, int(reach / g.step) + 1) * g.step
    found = []
    for theta in np.linspace(0, 2 * np.pi, n_rays, endpoint=False):
        c, s = np.cos(theta), np.sin(theta)
        for r in radii:
            x, y = x0 + r * c, y0 + r * s
            if not (g.x_min <= x <= g.x_max and g.y_min <= y <= g.y_max):
                break
            i, j = nearest_index(g, (x, y))
            if absdiv[j, i] < fraction * peak:
                found.append(r)
                break
    return float(np.mean(found)) if found else None
