import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from tendon_jae.errors import AngleOutOfRange, DoubleCalibration, LengthMismatch, ModelValidationError
from tendon_jae.model import (DEMO_MODELS, KinematicModel, MuscleDef, calibrate, forward_kinematics,
                              load_demo_model, load_model, model_from_dict, model_to_dict, muscle_lengths,
                              muscle_lengths_batch, numeric_muscle_jacobian)

from conftest import elbow_model, hinge


def planar_arm():
    joints = (hinge("j1", "base", "l1"), hinge("j2", "l1", "l2", xyz=(1, 0, 0)),
              hinge("tip", "l2", "l3", xyz=(1, 0, 0), lo=-0.1, hi=0.1))
    m = MuscleDef("rigid", (("l1", np.array([0.0, 0.0, 0.0])), ("l1", np.array([0.10, 0.0, 0.0]))))
    return KinematicModel(("base", "l1", "l2", "l3"), joints, (m,), "arm")


def rz(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0, 0], [s, c, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1.0]])


def tx(d):
    T = np.eye(4)
    T[0, 3] = d
    return T


def test_fk_zero_pose_composes_origins():
    fk = forward_kinematics(planar_arm(), np.zeros(3))
    assert np.array_equal(fk["base"], np.eye(4))
    assert np.allclose(fk["l3"][:3, 3], [2, 0, 0])


def test_fk_single_rotation():
    fk = forward_kinematics(planar_arm(), [np.pi / 2, 0, 0])
    assert np.allclose(fk["l1"][:3, :3], rz(np.pi / 2)[:3, :3], atol=1e-15)


def test_fk_planar_arm_end_position():
    # independent oracle: explicit matrix product of the chain
    t = (np.pi / 2, np.pi / 2)
    T = rz(t[0]) @ tx(1.0) @ rz(t[1]) @ tx(1.0)
    assert np.allclose(T[:3, 3], [-1, 1, 0], atol=1e-15)
    fk = forward_kinematics(planar_arm(), [t[0], t[1], 0.0])
    assert np.allclose(fk["l3"][:3, 3], [-1, 1, 0], atol=1e-12)
    assert np.allclose(fk["l3"], T, atol=1e-12)


def test_fk_errors():
    arm = planar_arm()
    with pytest.raises(AngleOutOfRange) as ei:
        forward_kinematics(arm, [0, 0, 0.2])
    assert ei.value.joint == "tip"
    with pytest.raises(LengthMismatch):
        forward_kinematics(arm, [0, 0])


def test_fk_deterministic():
    m = load_demo_model("upper6")
    th = np.full(6, 0.1)
    a, b = forward_kinematics(m, th), forward_kinematics(m, th)
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_rigid_muscle_constant():
    arm = planar_arm()
    for th in ([0, 0, 0], [1.0, -2.0, 0.05]):
        assert muscle_lengths(arm, th).values[0] == pytest.approx(0.10, abs=1e-15)
    assert np.all(numeric_muscle_jacobian(arm, [0.3, 0.2, 0.0]) == 0)


def test_law_of_cosines():
    a, b = 0.05, 0.08
    m = elbow_model(a, b)
    rng = np.random.default_rng(0)
    th = rng.uniform(-0.1, np.pi - 0.1, 100)
    got = muscle_lengths_batch(m, th[:, None])[:, 0]
    want = np.sqrt(a * a + b * b - 2 * a * b * np.cos(np.pi - th))
    assert np.allclose(got, want, rtol=0, atol=1e-15)


def test_calibrate_examples():
    m = elbow_model(0.05, 0.05)
    raw = muscle_lengths(m, [np.pi / 2])
    cal = calibrate(m, raw)
    assert cal.calibrated
    assert cal.values[0] == pytest.approx(0.05 * np.sqrt(2) - 0.10, abs=1e-15)
    assert cal.values[0] == pytest.approx(-0.02929, abs=1e-5)
    assert np.all(calibrate(m, muscle_lengths(m, [0.0])).values == 0)
    assert np.all(calibrate(m, raw, [np.pi / 2]).values == 0)
    with pytest.raises(DoubleCalibration):
        calibrate(m, cal)


def test_numeric_jacobian_closed_form():
    # d/dtheta sqrt(a^2 + b^2 + 2ab cos(theta)) with this geometry's sign convention
    a, b = 0.05, 0.08
    m = elbow_model(a, b)
    for th in np.linspace(0.1, 2.5, 9):
        l = np.sqrt(a * a + b * b - 2 * a * b * np.cos(np.pi - th))
        want = -a * b * np.sin(np.pi - th) / l
        assert numeric_muscle_jacobian(m, [th], step=1e-5)[0, 0] == pytest.approx(want, rel=1e-8)


def test_numeric_jacobian_second_order():
    a, b = 0.05, 0.08
    m = elbow_model(a, b)
    th = 1.0
    l = np.sqrt(a * a + b * b - 2 * a * b * np.cos(np.pi - th))
    exact = -a * b * np.sin(np.pi - th) / l
    e1 = abs(numeric_muscle_jacobian(m, [th], 1e-3)[0, 0] - exact)
    e2 = abs(numeric_muscle_jacobian(m, [th], 5e-4)[0, 0] - exact)
    assert 3.0 < e1 / e2 < 5.0  # halving the step quarters the error


@pytest.mark.parametrize("name", DEMO_MODELS)
def test_unspanned_columns_zero(name):
    m = load_demo_model(name)
    rng = np.random.default_rng(1)
    th = rng.uniform(m.lower + 0.01, m.upper - 0.01)
    J = numeric_muscle_jacobian(m, th)
    for i, mus in enumerate(m.muscle_names):
        spanned = set(m.spanned_joints(mus))
        for j, joint in enumerate(m.joint_names):
            if joint not in spanned:
                assert abs(J[i, j]) < 1e-9
            # every demo muscle actually moves with the joints it spans
        assert spanned


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.floats(0, 1))
def test_rigid_transform_invariance(rotvec, shift, frac):
    m = load_demo_model("upper6")
    T = np.eye(4)
    T[:3, :3] = Rotation.from_rotvec(rotvec).as_matrix()
    T[:3, 3] = shift
    moved = m.transformed(T)
    th = m.lower + frac * (m.upper - m.lower)
    a = muscle_lengths(m, th).values
    b = muscle_lengths(moved, th).values
    assert np.allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("name", DEMO_MODELS)
def test_model_dict_roundtrip(name, tmp_path):
    m = load_demo_model(name)
    p = tmp_path / "m.json"
    p.write_text(json.dumps(model_to_dict(m)))
    m2 = load_model(p)
    th = 0.5 * (m.lower + m.upper)
    assert np.allclose(muscle_lengths(m, th).values, muscle_lengths(m2, th).values, atol=1e-15)


def _doc():
    return json.loads(json.dumps(model_to_dict(load_demo_model("planar2"))))


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d["joints"][1].update(axis=[0, 0, 2]), "joints[1].axis"),
    (lambda d: d["joints"][0].update(limits=[10, -10]), "joints[0].limits"),
    (lambda d: d["joints"][0].pop("child"), "joints[0].child"),
    (lambda d: d.pop("muscles"), "muscles"),
    (lambda d: d["muscles"][0]["via_points"][0].update(position=[0, "x", 0]), "muscles[0].via_points[0].position"),
])
def test_loader_reports_path(mutate, path):
    d = _doc()
    mutate(d)
    with pytest.raises(ModelValidationError) as ei:
        model_from_dict(d)
    assert ei.value.path == path


@pytest.mark.parametrize("mutate", [
    lambda d: d["muscles"][0]["via_points"][0].update(link="nowhere"),
    lambda d: d["muscles"][0].update(via_points=d["muscles"][0]["via_points"][:1]),
    lambda d: d["joints"][1].update(parent="forearm"),  # cycle
    lambda d: d["links"].append("floating"),  # second root
])
def test_loader_rejects_structure(mutate):
    d = _doc()
    mutate(d)
    with pytest.raises(ModelValidationError):
        model_from_dict(d)
