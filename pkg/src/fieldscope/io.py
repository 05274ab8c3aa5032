"""CSV and model-file formats.

All CSVs use ``.`` as decimal separator, ``\\n`` line endings and 9
significant digits, so two runs with the same seed diff byte for byte.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import make_grid
from .kalman import InnovationRecord
from .learn import N_HIDDEN, N_IN, N_OUT, MlpModel, Normalizer
from .localize import GridField, ObjectEstimate
from .sim import Trajectory

TRAJECTORY_HEADER = ("agent_id", "k", "x_true", "y_true", "x_meas", "y_meas")
INNOVATION_HEADER = ("agent_id", "k", "x_meas", "y_meas", "vx_residual", "vy_residual")
FIELD_HEADER = ("x", "y", "vx", "vy")
OBJECTS_HEADER = ("object_id", "x_est", "y_est", "nature", "div_value", "x_true", "y_true")


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    out = f"{float(v):.9g}"
    return "0" if out == "-0" else out


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def read_rows(path, header: Sequence[str]) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != tuple(header):
            raise ValueError(f"{path}: expected header {','.join(header)}, got {reader.fieldnames}")
        return list(reader)


# trajectories


def write_trajectories(path, trajs: Sequence[Trajectory]) -> Path:
    def rows():
        for t in trajs:
            for k, s, z in zip(t.ks, t.states, t.measurements):
                yield t.agent_id, k, s[0], s[1], z[0], z[1]

    return write_rows(path, TRAJECTORY_HEADER, rows())


def read_trajectories(path) -> list[Trajectory]:
    """Rebuild trajectories from CSV. Velocities, termination reason and
    destination are not stored and come back as zeros / ``"unknown"`` / ``-1``."""
    groups: dict[int, list] = {}
    for r in read_rows(path, TRAJECTORY_HEADER):
        groups.setdefault(int(r["agent_id"]), []).append(
            (int(r["k"]), float(r["x_true"]), float(r["y_true"]), float(r["x_meas"]), float(r["y_meas"]))
        )
    out = []
    for agent_id, rows in groups.items():
        rows.sort()
        a = np.array(rows)
        states = np.column_stack([a[:, 1:3], np.zeros((len(a), 2))])
        out.append(Trajectory(agent_id, states, a[:, 3:5], "unknown", k0=int(a[0, 0])))
    return out


# innovations


def write_innovations(path, per_agent: Sequence[tuple[int, Sequence[InnovationRecord]]]) -> Path:
    def rows():
        for agent_id, records in per_agent:
            for r in records:
                yield agent_id, r.k, r.z[0], r.z[1], r.v_residual[0], r.v_residual[1]

    return write_rows(path, INNOVATION_HEADER, rows())


def read_innovations(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(agent_ids, ks, positions, residual_velocities)``."""
    rows = read_rows(path, INNOVATION_HEADER)
    if not rows:
        return np.zeros(0, int), np.zeros(0, int), np.zeros((0, 2)), np.zeros((0, 2))
    a = np.array([[float(r[h]) for h in INNOVATION_HEADER] for r in rows])
    return a[:, 0].astype(int), a[:, 1].astype(int), a[:, 2:4], a[:, 4:6]


# fields


def write_field(path, f: GridField) -> Path:
    from .core import grid_points

    pts = grid_points(f.grid)
    return write_rows(path, FIELD_HEADER, np.column_stack([pts, f.vectors]))


def read_field(path) -> GridField:
    """Load a field CSV and recover its grid from the coordinates.

    The rows must be a complete regular grid in row-major order.
    """
    a = np.array([[float(r[h]) for h in FIELD_HEADER] for r in read_rows(path, FIELD_HEADER)])
    if len(a) == 0:
        raise ValueError(f"{path}: empty field")
    xs = np.unique(a[:, 0])
    ys = np.unique(a[:, 1])
    steps = np.diff(xs) if len(xs) > 1 else np.diff(ys)
    if len(steps) == 0:
        raise ValueError(f"{path}: a field needs more than one point")
    step = float(np.median(steps))
    g = make_grid(xs[0], xs[-1], ys[0], ys[-1], step)
    if g.nx != len(xs) or g.ny != len(ys) or len(a) != g.size:
        raise ValueError(f"{path}: points do not form a complete regular grid")
    order = np.lexsort((a[:, 0], a[:, 1]))
    return GridField(g, a[order, 2:4])


# objects


def write_objects(path, estimates: Sequence[ObjectEstimate], truths: Sequence | None = None) -> Path:
    def rows():
        for i, e in enumerate(estimates):
            t = truths[i] if truths is not None and truths[i] is not None else (None, None)
            yield i + 1, e.position[0], e.position[1], e.nature, e.div_value, t[0], t[1]

    return write_rows(path, OBJECTS_HEADER, rows())


# models


def write_model(path, m: MlpModel) -> Path:
    """Plain-text model: an architecture/seed header and one line per parameter group."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nz = m.normalizer
    lines = [
        f"mlp {N_IN} {N_HIDDEN} {N_OUT} seed {m.seed}",
        "W1 " + " ".join(repr(float(v)) for v in m.W1.ravel()),
        "b1 " + " ".join(repr(float(v)) for v in m.b1),
        "W2 " + " ".join(repr(float(v)) for v in m.W2.ravel()),
        "b2 " + " ".join(repr(float(v)) for v in m.b2),
        "norm " + " ".join(repr(float(v)) for v in (*nz.center, *nz.scale)),
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_model(path) -> MlpModel:
    lines = [ln.split() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or lines[0][:4] != ["mlp", str(N_IN), str(N_HIDDEN), str(N_OUT)]:
        raise ValueError(f"{path}: not a {N_IN}-{N_HIDDEN}-{N_OUT} model file")
    seed = int(lines[0][5]) if len(lines[0]) >= 6 and lines[0][4] == "seed" else 0
    groups = {ln[0]: np.array([float(v) for v in ln[1:]]) for ln in lines[1:]}
    expected = {"W1": N_HIDDEN * N_IN, "b1": N_HIDDEN, "W2": N_OUT * N_HIDDEN, "b2": N_OUT, "norm": 4}
    for name, n in expected.items():
        if name not in groups or len(groups[name]) != n:
            raise ValueError(f"{path}: parameter group {name} missing or not of length {n}")
    norm = groups["norm"]
    return MlpModel(
        groups["W1"], groups["b1"], groups["W2"], groups["b2"],
        Normalizer((norm[0], norm[1]), (norm[2], norm[3])), seed,
    )
