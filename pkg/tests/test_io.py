import numpy as np
import pytest

from fieldscope import io
from fieldscope.core import RngHandle, make_grid
from fieldscope.fields import default_specs
from fieldscope.kalman import KalmanModel, run_filter
from fieldscope.learn import N_PARAMS, Normalizer, evaluate_on_grid, zero_model
from fieldscope.localize import ATTRACTIVE, ObjectEstimate
from fieldscope.sim import Limits, NoiseParams, simulate_trajectory


def _trajs():
    a1, _, rep = default_specs()
    return [
        simulate_trajectory(s, a1, [rep], 1.0, NoiseParams(), Limits(max_steps=30), RngHandle(i), agent_id=i)
        for i, s in enumerate([(3.0, -12.0), (-8.0, 2.0)])
    ]


@pytest.mark.parametrize(
    "value, text",
    [(1, "1"), (np.int64(3), "3"), (0.1, "0.1"), (-0.0, "0"), (1 / 3, "0.333333333"), (1e-20, "1e-20"),
     (None, ""), ("attractive", "attractive")],
)
def test_number_format(value, text):
    assert io.fmt(value) == text


def test_trajectory_csv_round_trip(tmp_path):
    trajs = _trajs()
    path = io.write_trajectories(tmp_path / "t.csv", trajs)
    raw = path.read_bytes()
    assert raw.startswith(b"agent_id,k,x_true,y_true,x_meas,y_meas\n") and b"\r" not in raw
    back = io.read_trajectories(path)
    assert [t.agent_id for t in back] == [0, 1]
    for a, b in zip(trajs, back):
        assert np.allclose(a.measurements, b.measurements, rtol=1e-8)
        assert np.allclose(a.states[:, :2], b.states[:, :2], rtol=1e-8)
        assert b.ks.tolist() == a.ks.tolist()


def test_innovation_csv_round_trip(tmp_path):
    per_agent = [(t.agent_id, run_filter(KalmanModel(), t)) for t in _trajs()]
    path = io.write_innovations(tmp_path / "i.csv", per_agent)
    agents, ks, xs, vs = io.read_innovations(path)
    n = sum(len(r) for _, r in per_agent)
    assert len(agents) == n and set(agents) == {0, 1}
    assert np.allclose(vs[0], per_agent[0][1][0].v_residual, rtol=1e-8)
    assert np.allclose(xs[1], per_agent[0][1][1].z, rtol=1e-8)
    assert ks[:3].tolist() == [0, 1, 2]
    empty = io.write_innovations(tmp_path / "e.csv", [])
    assert io.read_innovations(empty)[2].shape == (0, 2)


def test_wrong_header_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="expected header"):
        io.read_innovations(p)


def test_field_csv_round_trip(tmp_path):
    g = make_grid(-2, 2, -1, 1, 0.5)
    f = evaluate_on_grid(default_specs()[0], g)
    back = io.read_field(io.write_field(tmp_path / "f.csv", f))
    assert back.grid == g
    assert np.allclose(back.vectors, f.vectors, rtol=1e-8)


def test_field_csv_must_be_complete(tmp_path):
    g = make_grid(0, 1, 0, 1, 0.5)
    p = io.write_field(tmp_path / "f.csv", evaluate_on_grid(default_specs()[0], g))
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ValueError):
        io.read_field(p)


def test_objects_csv(tmp_path):
    est = ObjectEstimate((0.1, 15.1), ATTRACTIVE, -0.93)
    text = io.write_objects(tmp_path / "o.csv", [est], [(0, 15)]).read_text()
    assert text == "object_id,x_est,y_est,nature,div_value,x_true,y_true\n1,0.1,15.1,attractive,-0.93,0,15\n"
    text = io.write_objects(tmp_path / "o2.csv", [est]).read_text()
    assert text.splitlines()[1].endswith("-0.93,,")


def test_model_file_round_trip(tmp_path):
    m = zero_model(Normalizer((1.0, -2.0), (20.0, 10.0))).with_params(RngHandle(0).normal(size=N_PARAMS))
    m.seed = 77
    path = io.write_model(tmp_path / "m.txt", m)
    lines = path.read_text().splitlines()
    assert lines[0] == "mlp 2 10 2 seed 77"
    assert [ln.split()[0] for ln in lines[1:]] == ["W1", "b1", "W2", "b2", "norm"]
    back = io.read_model(path)
    assert np.array_equal(back.params, m.params) and back.seed == 77
    assert back.normalizer == m.normalizer


@pytest.mark.parametrize(
    "text",
    ["mlp 2 20 2 seed 0\n", "mlp 2 10 2 seed 0\nW1 1 2\n", ""],
)
def test_malformed_model_files(tmp_path, text):
    p = tmp_path / "m.txt"
    p.write_text(text)
    with pytest.raises(ValueError):
        io.read_model(p)
