"""Stage-by-stage experiment: simulate, filter, train, localize, compare."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .config import ScenarioConfig
from .core import Grid, RngHandle, max_workers
from .fields import CentralFieldSpec
from .kalman import InnovationRecord, records_to_arrays, run_filter
from .learn import Dataset, MlpModel, evaluate_on_grid, lm_train
from .localize import ATTRACTIVE, REPULSIVE, GridField, ObjectEstimate, coverage_mask, divergence, estimate_size, locate
from .sim import Trajectory, run_stage

log = logging.getLogger(__name__)

# child-seed tags under the experiment seed
_SIM_STREAM = 1
_TRAIN_STREAM = 2


class StageError(RuntimeError):
    def __init__(self, stage_id: int, cause: Exception):
        self.stage_id = stage_id
        super().__init__(f"stage {stage_id} failed: {cause}")


@dataclass
class FieldMetrics:
    mag_rmse: float
    abs_theta_rmse_deg: float
    angle_mae_deg: float
    n_cells: int


@dataclass
class StageResult:
    stage_id: int
    spec: CentralFieldSpec
    model: MlpModel
    estimate: ObjectEstimate
    dataset: Dataset
    trajectories: list[Trajectory]
    records: list[tuple[int, list[InnovationRecord]]]
    mask: np.ndarray
    loss_history: list[float]
    model_path: str = ""
    position_error: float = math.nan
    nature_correct: bool = False
    metrics: FieldMetrics | None = None

    @property
    def true_nature(self) -> str:
        return ATTRACTIVE if self.spec.is_attractor else REPULSIVE

    @property
    def residual_rms(self) -> float:
        return residual_rms(self.records)


@dataclass
class ExperimentReport:
    seed: int
    stages: list[StageResult] = field(default_factory=list)
    learned: dict[int, MlpModel] = field(default_factory=dict)


def residual_rms(per_agent: Sequence[tuple[int, Sequence[InnovationRecord]]], drop_first: bool = True) -> float:
    """Root mean square of residual-velocity norms over all training records."""
    chunks = [records_to_arrays(recs, drop_first)[1] for _, recs in per_agent]
    v = np.concatenate(chunks) if chunks else np.zeros((0, 2))
    return float(np.sqrt(np.mean(np.sum(v * v, axis=1)))) if len(v) else math.nan


def prior_fields(traj: Trajectory, new_index: int, learned: dict) -> list:
    """Learned fields of every already-known object that drove ``traj``."""
    return [learned[i] for i in traj.active if i != new_index and i in learned]


def filter_trajectories(
    cfg: ScenarioConfig,
    trajs: Sequence[Trajectory],
    model_for,
) -> list[tuple[int, list[InnovationRecord]]]:
    """Run one filter per trajectory; ``model_for(traj)`` picks its KalmanModel."""

    def one(t: Trajectory):
        return t.agent_id, run_filter(model_for(t), t, cfg.filter.mode, cfg.filter.control_point)

    workers = min(max_workers(), max(1, len(trajs)))
    if workers <= 1:
        return [one(t) for t in trajs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, trajs))


def pool_records(per_agent) -> Dataset:
    xs, vs = [], []
    for _, recs in per_agent:
        x, v = records_to_arrays(recs, drop_first=True)
        xs.append(x)
        vs.append(v)
    return Dataset(np.concatenate(xs), np.concatenate(vs))


def localize_field(f: GridField, inputs=None, mask_radius: float | None = 5.0) -> tuple[ObjectEstimate, np.ndarray | None]:
    """Run the divergence localization on a sampled field, optionally masked
    to cells near ``inputs``."""
    div = divergence(f)
    mask = None
    if mask_radius is not None and inputs is not None:
        mask = coverage_mask(f.grid, inputs, mask_radius)
    est = locate(div, mask)
    est = ObjectEstimate(est.position, est.nature, est.div_value, estimate_size(div, est))
    return est, mask


def field_metrics(learned: GridField, truth: GridField, mask: np.ndarray | None = None) -> FieldMetrics:
    """Magnitude and direction agreement of two sampled fields inside ``mask``.

    Direction statistics skip cells where the true field vanishes.
    """
    sel = np.ones(learned.grid.size, bool) if mask is None else np.asarray(mask, bool).ravel()
    mag_err = learned.magnitude[sel] - truth.magnitude[sel]
    has_dir = sel & (truth.magnitude > 1e-12)
    th_l, th_t = learned.angle[has_dir], truth.angle[has_dir]
    abs_theta = np.degrees(np.abs(th_l) - np.abs(th_t))
    wrapped = np.degrees(np.abs(np.angle(np.exp(1j * (th_l - th_t)))))
    return FieldMetrics(
        float(np.sqrt(np.mean(mag_err**2))) if sel.any() else math.nan,
        float(np.sqrt(np.mean(abs_theta**2))) if has_dir.any() else math.nan,
        float(np.mean(wrapped)) if has_dir.any() else math.nan,
        int(sel.sum()),
    )


def compare_to_truth(report: ExperimentReport, grid: Grid, specs: Sequence[CentralFieldSpec] | None = None):
    """Fill position error, nature match and field metrics of every stage.

    Returns a list of per-stage metric dicts.
    """
    table = []
    for res in report.stages:
        spec = specs[res.stage_id - 1] if specs is not None else res.spec
        est = res.estimate
        res.position_error = float(math.dist(est.position, spec.center))
        res.nature_correct = est.nature == (ATTRACTIVE if spec.is_attractor else REPULSIVE)
        res.metrics = field_metrics(evaluate_on_grid(res.model, grid), evaluate_on_grid(spec, grid), res.mask)
        table.append({
            "stage": res.stage_id,
            "position_error": res.position_error,
            "nature_correct": res.nature_correct,
            "mag_rmse": res.metrics.mag_rmse,
            "abs_theta_rmse_deg": res.metrics.abs_theta_rmse_deg,
            "angle_mae_deg": res.metrics.angle_mae_deg,
        })
    return table


def run_experiment(cfg: ScenarioConfig, seed: int | None = None, out_dir=None) -> ExperimentReport:
    """Learn every stage's object in order and localize it.

    Each trajectory is filtered by a model holding the learned fields of the
    already-known objects that drove it, so its residuals isolate the newest
    object. Artifacts are written to ``out_dir`` when given.
    """
    seed = cfg.seed if seed is None else seed
    root = RngHandle(seed)
    grid = cfg.make_grid()
    specs = cfg.specs()
    stages = cfg.scenario_stages(specs)
    normalizer = cfg.normalizer()
    out = Path(out_dir) if out_dir is not None else None
    report = ExperimentReport(seed)

    for idx, stage in enumerate(stages):
        try:
            res = _run_stage(cfg, stage, specs[: idx + 1], idx, report.learned, grid, normalizer, root, seed)
        except Exception as exc:
            raise StageError(stage.stage_id, exc) from exc
        report.learned[idx] = res.model
        report.stages.append(res)
        if out is not None:
            res.model_path = f"stage{stage.stage_id}_model.txt"
            io.write_trajectories(out / f"stage{stage.stage_id}_trajectories.csv", res.trajectories)
            io.write_innovations(out / f"stage{stage.stage_id}_innovations.csv", res.records)
            io.write_model(out / res.model_path, res.model)
            io.write_field(out / f"stage{stage.stage_id}_field.csv", evaluate_on_grid(res.model, grid))
        log.info("stage %d: %s at (%.2f, %.2f)", stage.stage_id, res.estimate.nature, *res.estimate.position)

    compare_to_truth(report, grid, specs)
    if out is not None:
        write_report(out, report)
    return report


def _run_stage(cfg, stage, objects, idx, learned, grid, normalizer, root, seed) -> StageResult:
    trajs = run_stage(
        stage, objects, cfg.bounds, cfg.dk, cfg.noise_params(), cfg.limits(), root.child(_SIM_STREAM)
    )
    records = filter_trajectories(cfg, trajs, lambda t: cfg.kalman_model(prior_fields(t, idx, learned)))
    data = pool_records(records)
    model, history = lm_train(
        data, cfg.train_config(seed), root.child(_TRAIN_STREAM, stage.stage_id), normalizer
    )
    radius = cfg.mask.radius if cfg.mask.enabled else None
    est, mask = localize_field(evaluate_on_grid(model, grid), data, radius)
    return StageResult(stage.stage_id, stage.new_object, model, est, data, trajs, records, mask, history)


def object_labels(specs: Sequence[CentralFieldSpec]) -> list[str]:
    counts = {"Attractor": 0, "Repeller": 0}
    labels = []
    for s in specs:
        base = "Attractor" if s.is_attractor else "Repeller"
        counts[base] += 1
        labels.append(f"{base}{counts[base]}")
    n_rep = sum(not s.is_attractor for s in specs)
    return [lab[:-1] if lab.startswith("Repeller") and n_rep == 1 else lab for lab in labels]


REPORT_HEADER = (
    "stage", "object", "kind", "x_true", "y_true", "x_est", "y_est", "nature", "nature_correct",
    "div_value", "position_error", "size_est", "mag_rmse", "abs_theta_rmse_deg", "angle_mae_deg",
    "n_samples", "residual_rms", "final_sse", "model_path",
)


def write_report(out: Path, report: ExperimentReport) -> None:
    labels = object_labels([r.spec for r in report.stages])
    rows = []
    for lab, r in zip(labels, report.stages):
        m = r.metrics
        rows.append((
            r.stage_id, lab, r.spec.kind, r.spec.center[0], r.spec.center[1],
            r.estimate.position[0], r.estimate.position[1], r.estimate.nature, int(r.nature_correct),
            r.estimate.div_value, r.position_error, r.estimate.size,
            m.mag_rmse, m.abs_theta_rmse_deg, m.angle_mae_deg,
            len(r.dataset), r.residual_rms, r.loss_history[-1], r.model_path,
        ))
    io.write_rows(out / "report.csv", REPORT_HEADER, rows)
    io.write_objects(
        out / "objects.csv", [r.estimate for r in report.stages], [r.spec.center for r in report.stages]
    )
    (out / "report.txt").write_text(format_table(report, labels), encoding="utf-8")


def _pair(p) -> str:
    return f"({p[0]:.1f}, {p[1]:.1f})"


def format_table(report: ExperimentReport, labels=None) -> str:
    labels = labels or object_labels([r.spec for r in report.stages])
    head = ("Object", "Real Position", "Estimated Position", "Nature", "Error")
    body = [
        (lab, _pair(r.spec.center), _pair(r.estimate.position), r.estimate.nature.capitalize(),
         f"{r.position_error:.2f}")
        for lab, r in zip(labels, report.stages)
    ]
    widths = [max(len(row[i]) for row in (head, *body)) for i in range(len(head))]
    line = lambda row: "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
    out = [f"seed {report.seed}", line(head), line(tuple("-" * w for w in widths))]
    out += [line(row) for row in body]
    return "\n".join(out) + "\n"
