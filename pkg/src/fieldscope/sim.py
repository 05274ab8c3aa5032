"""Agent trajectories driven by static velocity fields, with noisy position fixes."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Measurement, RngHandle, StateVector, max_workers
from .fields import CentralFieldSpec, FieldSum

ARRIVED = "arrived"
STALLED = "stalled"
MAX_STEPS = "max-steps"

DEST_NEW = "new"
DEST_ALTERNATE = "alternate"


@dataclass(frozen=True)
class NoiseParams:
    sigma_process: float = 0.1
    sigma_meas: float = 0.1

    def __post_init__(self):
        if self.sigma_process < 0 or self.sigma_meas < 0:
            raise ValueError("noise standard deviations must be non-negative")


@dataclass(frozen=True)
class Limits:
    """Termination rules for one agent.

    An agent also stops once it has moved less than ``arrival_radius`` over
    the last ``stall_window`` steps: where a repeller balances the
    destination's pull the agent settles short of the arrival radius and
    would otherwise pile up samples at one point until ``max_steps``.
    ``stall_window = 0`` disables the rule.
    """

    arrival_radius: float = 0.5
    max_steps: int = 500
    stall_window: int = 10


@dataclass(frozen=True)
class ScenarioStage:
    """One stage: the object that appears and how many agents observe it.

    ``destinations`` is ``"new"`` (every agent heads to the new attractor) or
    ``"alternate"`` (agent ``a`` heads to the ``a mod n``-th attractor present).
    """

    stage_id: int
    new_object: CentralFieldSpec
    n_trajectories: int = 100
    destinations: str = DEST_NEW

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError("a stage needs at least one trajectory")
        if self.destinations not in (DEST_NEW, DEST_ALTERNATE):
            raise ValueError(f"unknown destination rule {self.destinations!r}")
        if self.destinations == DEST_NEW and not self.new_object.is_attractor:
            raise ValueError("destination rule 'new' needs the new object to be an attractor")


@dataclass
class Trajectory:
    """True states ``(n, 4)`` and measured positions ``(n, 2)`` of one agent.

    ``active`` lists the indices (into the stage's object list) of every
    field that drove the agent; ``destination`` is one of them.
    """

    agent_id: int
    states: np.ndarray
    measurements: np.ndarray
    reason: str
    destination: int = -1
    active: tuple[int, ...] = ()
    k0: int = 0

    def __len__(self):
        return len(self.measurements)

    @property
    def ks(self) -> np.ndarray:
        return self.k0 + np.arange(len(self))

    def pairs(self) -> list[tuple[StateVector, Measurement]]:
        return [
            (StateVector(*map(float, s)), Measurement(float(z[0]), float(z[1]), int(k)))
            for s, z, k in zip(self.states, self.measurements, self.ks)
        ]


def spawn_position(rng: RngHandle, bounds: Sequence[float]) -> np.ndarray:
    x_min, x_max, y_min, y_max = bounds
    return np.array([rng.uniform(x_min, x_max), rng.uniform(y_min, y_max)])


def step_agent(p, active, dk: float, noise: NoiseParams, rng: RngHandle):
    """Advance one step: returns ``(next_position, applied_velocity)``."""
    p = np.asarray(p, dtype=float)
    v = np.asarray(active(p) if callable(active) else FieldSum(active)(p), dtype=float)
    jitter = rng.normal(0.0, noise.sigma_process, 2)
    return p + dk * v + jitter, v


def measure(p_true, noise: NoiseParams, rng: RngHandle) -> np.ndarray:
    return np.asarray(p_true, dtype=float) + rng.normal(0.0, noise.sigma_meas, 2)


def simulate_trajectory(
    start,
    destination: CentralFieldSpec,
    repellers: Sequence[CentralFieldSpec],
    dk: float,
    noise: NoiseParams,
    limits: Limits,
    rng: RngHandle,
    agent_id: int = 0,
) -> Trajectory:
    """Run one agent until it is within ``arrival_radius`` of its destination,
    has stalled, or has produced ``max_steps`` records."""
    if not destination.is_attractor:
        raise ValueError("destination must be an attractor")
    process_rng, meas_rng = rng.child(0), rng.child(1)
    drive = FieldSum([destination, *repellers])
    target = np.asarray(destination.center)

    p = np.asarray(start, dtype=float)
    positions, velocities = [p], [np.zeros(2)]
    measured = [measure(p, noise, meas_rng)]
    reason = MAX_STEPS
    while True:
        if np.hypot(*(p - target)) <= limits.arrival_radius:
            reason = ARRIVED
            break
        w = limits.stall_window
        if w and len(positions) > w and np.hypot(*(p - positions[-1 - w])) < limits.arrival_radius:
            reason = STALLED
            break
        if len(positions) >= limits.max_steps:
            break
        p, v = step_agent(p, drive, dk, noise, process_rng)
        positions.append(p)
        velocities.append(v)
        measured.append(measure(p, noise, meas_rng))

    states = np.column_stack([np.array(positions), np.array(velocities)])
    return Trajectory(agent_id, states, np.array(measured), reason)


def assign_destination(objects: Sequence[CentralFieldSpec], rule: str, agent_id: int) -> int:
    """Index of the attractor that agent ``agent_id`` heads to."""
    if rule == DEST_NEW:
        if not objects[-1].is_attractor:
            raise ValueError("destination rule 'new' needs the new object to be an attractor")
        return len(objects) - 1
    attractors = [i for i, o in enumerate(objects) if o.is_attractor]
    if not attractors:
        raise ValueError("no attractor available as a destination")
    return attractors[agent_id % len(attractors)]


def active_set(objects: Sequence[CentralFieldSpec], destination: int) -> tuple[int, ...]:
    """The destination plus every repeller, in object order."""
    return tuple(i for i, o in enumerate(objects) if i == destination or not o.is_attractor)


def run_stage(
    stage: ScenarioStage,
    objects: Sequence[CentralFieldSpec],
    bounds: Sequence[float],
    dk: float,
    noise: NoiseParams,
    limits: Limits,
    rng: RngHandle,
) -> list[Trajectory]:
    """Simulate every agent of a stage.

    ``objects`` holds all objects introduced so far, the stage's new one last.
    Agent ``a`` draws from ``rng.child(stage_id, a)`` only, so results do not
    depend on how agents are scheduled.
    """
    if not objects or objects[-1] is not stage.new_object:
        raise ValueError("the stage's new object must be the last of the accumulated objects")

    def one(agent_id: int) -> Trajectory:
        agent_rng = rng.child(stage.stage_id, agent_id)
        dest = assign_destination(objects, stage.destinations, agent_id)
        active = active_set(objects, dest)
        start = spawn_position(agent_rng.child(0), bounds)
        repellers = [objects[i] for i in active if i != dest]
        traj = simulate_trajectory(
            start, objects[dest], repellers, dk, noise, limits, agent_rng.child(1), agent_id
        )
        traj.destination = dest
        traj.active = active
        return traj

    ids = range(stage.n_trajectories)
    workers = min(max_workers(), stage.n_trajectories)
    if workers <= 1:
        return [one(a) for a in ids]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, ids))
