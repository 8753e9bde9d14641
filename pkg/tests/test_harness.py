import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tendon_jae import jmm as J
from tendon_jae.errors import EmptyLog
from tendon_jae.estimator import EKFConfig
from tendon_jae.harness import (EstimationFailed, NoiseSpec, TrajectoryLog, TrajectorySpec, build_jmm, emit_plots,
                                generate_trajectory, reflect, run_experiment)
from tendon_jae.model import KinematicModel, MuscleDef, load_demo_model, muscle_lengths_batch

from conftest import hinge


def test_stationary_fixed_point(planar2_demo):
    model, gs, jmms = planar2_demo
    res = run_experiment(model, gs, jmms, TrajectorySpec(ticks=200, step_sigma=0.0))
    for v in res.summary["rmse"].values():
        assert np.deg2rad(v) < 1e-6


def test_log_shape_and_columns(upper6_demo):
    model, gs, jmms = upper6_demo
    res = run_experiment(model, gs, jmms, TrajectorySpec(ticks=30, seed=3))
    log = res.log
    assert len(log) == 30
    assert log.column("tick").tolist() == list(range(1, 31))
    assert "est_neck__scap_roll" in log.columns and "err_shoulder_pitch" in log.columns
    assert len([c for c in log.columns if c.startswith("z_")]) == 9
    rel = run_experiment(model, gs, jmms, TrajectorySpec(ticks=5), ekf=EKFConfig(mode="relative"))
    assert not any(c.startswith("z_") for c in rel.log.columns)


def test_measurement_consistency(planar2_demo):
    model, gs, jmms = planar2_demo
    res = run_experiment(model, gs, jmms, TrajectorySpec(ticks=300, seed=1))
    log = res.log
    th = np.deg2rad(np.stack([log.column(f"true_{j}") for j in model.joint_names], axis=1))
    raw = muscle_lengths_batch(model, th)
    raw0 = muscle_lengths_batch(model, np.zeros((1, 2)))[0]  # trajectory starts at the calibration pose
    for i, m in enumerate(model.muscle_names):
        acc = np.cumsum(log.column(f"dz_{m}"))
        assert np.abs(acc - (raw[:, i] - raw0[i])).max() < 1e-9
        assert np.abs(acc - log.column(f"z_{m}")).max() < 1e-9


def test_closed_trajectory_returns_to_zero(planar2_demo):
    model, gs, jmms = planar2_demo
    res = run_experiment(model, gs, jmms, TrajectorySpec(kind="sinusoid", ticks=400, period=200.0))
    for m in model.muscle_names:
        assert abs(res.log.column(f"dz_{m}").sum()) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(-3, 0), st.floats(0.01, 3))
def test_reflect_within_bounds(x, lo, width):
    y = reflect(np.array([x]), lo, lo + width)[0]
    assert lo - 1e-12 <= y <= lo + width + 1e-12


def test_trajectory_limits_and_determinism():
    m = load_demo_model("upper6")
    spec = TrajectorySpec(ticks=3000, step_sigma=np.deg2rad(5.0), seed=9)
    a = generate_trajectory(m, spec, np.zeros(6))
    assert (a >= m.lower).all() and (a <= m.upper).all()
    assert np.array_equal(a, generate_trajectory(m, spec, np.zeros(6)))
    s = generate_trajectory(m, TrajectorySpec(kind="sinusoid", ticks=100, amplitude=1.0), np.zeros(6))
    assert (s >= m.lower).all() and (s <= m.upper).all()


def test_replay_trajectory(tmp_path, planar2_demo):
    model, gs, jmms = planar2_demo
    p = tmp_path / "replay.csv"
    p.write_text("elbow,shoulder\n0,0\n1,2\n2,4\n3,6\n")
    th = generate_trajectory(model, TrajectorySpec(kind="replay_file", replay_path=str(p), ticks=3), None)
    assert np.allclose(np.rad2deg(th), [[0, 0], [2, 1], [4, 2], [6, 3]])
    res = run_experiment(model, gs, jmms, TrajectorySpec(kind="replay_file", replay_path=str(p), ticks=3))
    assert len(res.log) == 3


def test_estimation_failure_carries_partial_result(planar2_demo):
    model, gs, jmms = planar2_demo
    bad = EKFConfig(observation_noise_r=1e-30)  # 3 muscles, 2 joints: S is rank 2 plus ~0
    with pytest.raises(EstimationFailed) as ei:
        run_experiment(model, gs, jmms, TrajectorySpec(ticks=20), ekf=bad)
    assert ei.value.result.summary["failed_tick"] == ei.value.tick


def test_build_jmm_elbow1_report():
    m = load_demo_model("elbow1")
    jm, rep = build_jmm(m, ["elbow"], m.muscle_names, J.DatasetSpec.uniform(m, ["elbow"], 9), degree=4)
    assert rep["sample_count"] == 9 and rep["basis_size"] == 5
    assert max(rep["holdout_residual"]["max"].values()) < 1e-4
    assert rep["holdout_residual"]["poses"] == 1000
    assert rep["wall_time_s"] >= 0 and set(rep["grid_residual"]["rms"]) == set(m.muscle_names)


def test_build_jmm_reference_count_dry_run():
    joints = tuple(hinge(f"q{i}", f"l{i}", f"l{i + 1}", xyz=(0.1, 0, 0), lo=-0.5, hi=0.5) for i in range(8))
    mus = MuscleDef("m", (("l0", np.array([0.0, 0.02, 0.0])), ("l8", np.array([0.0, 0.02, 0.0]))))
    m = KinematicModel(tuple(f"l{i}" for i in range(9)), joints, (mus,), "chain8")
    spec = J.DatasetSpec((5, 5, 5, 5, 5, 7, 7, 7), tuple([(-0.5, 0.5)] * 8))
    jm, rep = build_jmm(m, m.joint_names, ["m"], spec, degree=5, dry_run=True)
    assert jm is None
    assert rep["sample_count"] == 1071875 and rep["basis_size"] == 1287


def test_build_jmm_degree0_is_mean(tmp_path):
    m = load_demo_model("planar2")
    spec = J.DatasetSpec.uniform(m, m.joint_names, 7)
    jm, rep = build_jmm(m, m.joint_names, m.muscle_names, spec, degree=0, out_file=tmp_path / "c.json")
    L = np.concatenate([blk[1] for blk in J.sample_grid(m, spec, m.joint_names, m.muscle_names).chunks()])
    assert np.allclose(jm.coefficients[:, 0], L.mean(axis=0), atol=1e-15)
    for i, mus in enumerate(m.muscle_names):
        assert rep["grid_residual"]["rms"][mus] == pytest.approx(L[:, i].std(), rel=1e-9)
    assert J.load_jmm(tmp_path / "c.json").coefficients.tobytes() == jm.coefficients.tobytes()


def test_csv_roundtrip_and_determinism(upper6_demo, tmp_path):
    model, gs, jmms = upper6_demo
    spec = TrajectorySpec(ticks=50, seed=4)
    noise = NoiseSpec(measurement_sigma=1e-5)
    a = run_experiment(model, gs, jmms, spec, noise).log.to_csv(tmp_path / "a.csv")
    b = run_experiment(model, gs, jmms, spec, noise).log.to_csv()
    assert a == b
    back = TrajectoryLog.from_csv(tmp_path / "a.csv")
    assert back.to_csv() == a
    c = run_experiment(model, gs, jmms, TrajectorySpec(ticks=50, seed=5), noise).log.to_csv()
    assert c != a and c.split("sha256=")[1][:64] != a.split("sha256=")[1][:64]


def test_emit_plots(planar2_demo, upper6_demo, tmp_path):
    model, gs, jmms = planar2_demo
    log = run_experiment(model, gs, jmms, TrajectorySpec(ticks=40)).log
    # 3-joint log assembled from the upper6 scapula columns
    m6, gs6, j6 = upper6_demo
    log6 = run_experiment(m6, gs6, j6, TrajectorySpec(ticks=40)).log
    keep = ["tick"] + [c for c in log6.columns if any(c.endswith(j) for j in ("neck_roll", "scap_roll", "shoulder_roll"))]
    sub = TrajectoryLog(log6.header, keep, np.stack([log6.column(c) for c in keep], axis=1))
    files = emit_plots(sub, tmp_path / "p")
    assert len([f for f in files if f.suffix == ".csv"]) == 3
    first = {f.name: f.read_bytes() for f in files}
    again = emit_plots(sub, tmp_path / "p")
    assert {f.name: f.read_bytes() for f in again} == first
    pytest.importorskip("matplotlib")
    subprocess.run([sys.executable, str(tmp_path / "p" / "plot_log.py")], check=True)
    pngs = sorted(p.name for p in (tmp_path / "p").glob("*.png"))
    assert pngs == ["errors.png", "overlay_neck_roll.png", "overlay_scap_roll.png", "overlay_shoulder_roll.png"]
    with pytest.raises(EmptyLog):
        emit_plots(TrajectoryLog({}, log.columns, np.empty((0, len(log.columns)))), tmp_path / "e")
