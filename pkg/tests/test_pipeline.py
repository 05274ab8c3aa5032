import math

import numpy as np
import pytest

from conftest import default_run
from fieldscope import pipeline
from fieldscope.config import parse_config
from fieldscope.core import make_grid
from fieldscope.fields import default_specs
from fieldscope.localize import ATTRACTIVE, REPULSIVE
from fieldscope.pipeline import (
    ExperimentReport,
    StageError,
    StageResult,
    compare_to_truth,
    field_metrics,
    filter_trajectories,
    format_table,
    localize_field,
    object_labels,
    prior_fields,
    residual_rms,
    run_experiment,
)
from fieldscope.learn import evaluate_on_grid

NOISE_FREE = {"noise": {"sigma_process": 0.0, "sigma_meas": 0.0}, "filter": {"r": 1e-10}}


def test_default_run_has_three_estimates():
    report = default_run(42)
    assert len(report.stages) == 3
    assert [s.stage_id for s in report.stages] == [1, 2, 3]
    assert all(s.estimate.nature in (ATTRACTIVE, REPULSIVE) for s in report.stages)
    assert sorted(report.learned) == [0, 1, 2]


def test_first_attractor_found_near_its_center():
    s = default_run(42).stages[0]
    assert s.estimate.nature == ATTRACTIVE
    assert math.dist(s.estimate.position, (0, 15)) <= 1.0


def test_default_run_natures():
    assert [s.estimate.nature for s in default_run(42).stages] == [ATTRACTIVE, ATTRACTIVE, REPULSIVE]
    assert all(s.nature_correct for s in default_run(42).stages)


def test_default_run_position_errors_within_one_unit():
    errors = [s.position_error for s in default_run(42).stages]
    assert all(e <= 1.0 for e in errors), errors


def test_noise_free_run_beats_noisy_run():
    noisy = [s.position_error for s in default_run(42).stages]
    clean = [s.position_error for s in run_experiment(parse_config(NOISE_FREE), seed=42).stages]
    assert all(c < n for c, n in zip(clean, noisy)), (clean, noisy)


def test_repeller_stage_uses_destination_models():
    report = default_run(42)
    stage = report.stages[2]
    assert {t.active for t in stage.trajectories} == {(0, 2), (1, 2)}
    t = stage.trajectories[1]
    assert prior_fields(t, 2, report.learned) == [report.learned[t.destination]]
    assert len(stage.dataset) == sum(len(t) - 2 for t in stage.trajectories)


def test_known_objects_reduce_repeller_residuals():
    cfg = parse_config({})
    stage = default_run(42).stages[2]
    level0 = residual_rms(filter_trajectories(cfg, stage.trajectories, lambda t: cfg.kalman_model()))
    assert stage.residual_rms < level0


def test_perfect_fields_give_zero_field_error():
    cfg = parse_config({})
    grid = cfg.make_grid()
    specs = default_specs()
    report = ExperimentReport(0)
    for i, spec in enumerate(specs):
        est, mask = localize_field(evaluate_on_grid(spec, grid))
        report.stages.append(StageResult(i + 1, spec, spec, est, None, [], [], mask, [0.0]))
    table = compare_to_truth(report, grid)
    for row, res in zip(table, report.stages):
        assert row["mag_rmse"] == 0 and row["angle_mae_deg"] == 0 and row["abs_theta_rmse_deg"] == 0
        assert row["position_error"] <= math.hypot(grid.step, grid.step) / 2 + 1e-9
        assert row["nature_correct"]


def test_field_metrics_known_offsets():
    g = make_grid(0, 1, 0, 1, 0.5)
    truth = evaluate_on_grid(lambda p: np.tile([1.0, 0.0], (len(p), 1)), g)
    rotated = evaluate_on_grid(lambda p: np.tile([0.0, 2.0], (len(p), 1)), g)
    m = field_metrics(rotated, truth)
    assert m.mag_rmse == pytest.approx(1.0) and m.angle_mae_deg == pytest.approx(90.0)
    assert m.abs_theta_rmse_deg == pytest.approx(90.0) and m.n_cells == 9
    mask = np.zeros(g.shape, bool)
    mask[0, 0] = True
    assert field_metrics(rotated, truth, mask).n_cells == 1


def test_repeated_runs_are_identical(small_config):
    a = run_experiment(small_config, seed=5)
    b = run_experiment(small_config, seed=5)
    for x, y in zip(a.stages, b.stages):
        assert x.estimate == y.estimate
        assert np.array_equal(x.model.params, y.model.params)
        assert x.loss_history == y.loss_history
    c = run_experiment(small_config, seed=6)
    assert not np.array_equal(a.stages[0].model.params, c.stages[0].model.params)


def test_artifacts_written(small_config, tmp_path):
    run_experiment(small_config, seed=1, out_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    for i in (1, 2, 3):
        for kind in ("trajectories.csv", "innovations.csv", "model.txt", "field.csv"):
            assert f"stage{i}_{kind}" in names
    assert {"report.csv", "report.txt", "objects.csv"} <= set(names)
    rows = (tmp_path / "report.csv").read_text().splitlines()
    assert rows[0].split(",") == list(pipeline.REPORT_HEADER) and len(rows) == 4
    assert "Repeller" in (tmp_path / "report.txt").read_text()


def test_stage_failure_names_the_stage(small_config, monkeypatch):
    calls = []

    def flaky(*args, **kwargs):
        calls.append(1)
        if len(calls) == 2:
            raise RuntimeError("boom")
        return real(*args, **kwargs)

    real = pipeline.lm_train
    monkeypatch.setattr(pipeline, "lm_train", flaky)
    with pytest.raises(StageError, match="stage 2 failed: boom") as err:
        run_experiment(small_config, seed=0)
    assert err.value.stage_id == 2


def test_labels_and_table():
    specs = default_specs()
    assert object_labels(specs) == ["Attractor1", "Attractor2", "Repeller"]
    assert object_labels(specs + [specs[2]]) == ["Attractor1", "Attractor2", "Repeller1", "Repeller2"]
    text = format_table(default_run(42))
    lines = text.splitlines()
    assert lines[0] == "seed 42"
    assert lines[1].split() == ["Object", "Real", "Position", "Estimated", "Position", "Nature", "Error"]
    assert lines[3].startswith("Attractor1  (0.0, 15.0)")


def test_residual_rms_of_nothing_is_nan():
    assert math.isnan(residual_rms([]))
