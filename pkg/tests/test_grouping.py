import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tendon_jae.errors import ValidationFailed
from tendon_jae.grouping import (GroupSpec, collect_violations, groups_from_dict, groups_to_dict, load_groups,
                                 selection_matrix, validate)
from tendon_jae.harness import demo_groups_path
from tendon_jae.model import load_demo_model


def codes(groups, **kw):
    return sorted(v.code for v in collect_violations(groups, **kw))


def test_single_group():
    gs = validate([GroupSpec("a", ("q1", "q2"))])
    assert gs.sources == {}


def test_mutual_borrowing():
    neck = GroupSpec("neck", ("n1", "n2"), ("s1",))
    scap = GroupSpec("scapula", ("s1", "s2"), ("n1",))
    gs = validate([neck, scap])
    assert gs.sources == {"s1": ("scapula", 0), "n1": ("neck", 0)}


def test_orphan_and_double_estimation():
    with pytest.raises(ValidationFailed) as ei:
        validate([GroupSpec("a", ("q1",), ("q9",)), GroupSpec("b", ("q1", "q2"))])
    got = sorted(v.code for v in ei.value.violations)
    assert got == ["double_estimation", "orphan"]
    assert {v.path for v in ei.value.violations} == {"groups[0].borrowed_joints[0]", "groups[1].estimated_joints[0]"}


def test_other_violations():
    assert codes([GroupSpec("a", tuple(f"q{i}" for i in range(9)))]) == ["dof_cap"]
    assert codes([GroupSpec("a", ("q1", "q2"))], dof_cap=1) == ["dof_cap"]
    assert codes([GroupSpec("a", ("q1",), ("q1",))]) == ["estimated_and_borrowed", "self_borrow"]
    assert codes([GroupSpec("a", ("q1", "q1"))]) == ["duplicate_entry"]
    assert codes([GroupSpec("a", ("q1",)), GroupSpec("a", ("q2",))]) == ["duplicate_group", "duplicate_group"]


def test_model_name_checks():
    m = load_demo_model("planar2")
    got = codes([GroupSpec("a", ("shoulder", "wrist"), (), ("elbow_flexor", "nope"))], model=m)
    assert got == ["unknown_joint", "unknown_muscle"]


def test_selection_matrix_examples():
    assert np.array_equal(selection_matrix(GroupSpec("a", ("1", "2", "3", "4"))), np.eye(4))
    S = selection_matrix(GroupSpec("a", ("1", "2", "3", "4"), ("5", "6", "7", "8")))
    assert np.array_equal(S, np.diag([1, 1, 1, 1, 0, 0, 0, 0]))
    assert np.array_equal(selection_matrix(GroupSpec("a", (), ("1", "2"))), np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 8), st.integers(0, 8))
def test_selection_projector(ny, nn):
    S = selection_matrix(GroupSpec("g", tuple(f"y{i}" for i in range(ny)), tuple(f"n{i}" for i in range(nn))))
    assert np.array_equal(S @ S, S)
    assert S.shape == (ny + nn, ny + nn)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.data())
def test_validate_idempotent(n_groups, per_group, data):
    owned = {g: [f"g{g}_q{i}" for i in range(per_group)] for g in range(n_groups)}
    groups = []
    for g in range(n_groups):
        others = [j for h in owned if h != g for j in owned[h]]
        borrowed = data.draw(st.lists(st.sampled_from(others), unique=True, max_size=3)) if others else []
        groups.append(GroupSpec(f"g{g}", tuple(owned[g]), tuple(borrowed)))
    first = validate(groups)
    second = validate(first.groups)
    assert first == second
    for joint, (src, idx) in first.sources.items():
        assert first.group(src).estimated_joints[idx] == joint


def test_demo_group_files():
    for name in ("elbow1", "planar2", "upper6"):
        groups = load_groups(demo_groups_path(name))
        gs = validate(groups, model=load_demo_model(name))
        assert sorted(gs.estimated_joints) == sorted(load_demo_model(name).joint_names)
    assert len(validate(load_groups(demo_groups_path("upper6"))).sources) == 4


def test_group_file_roundtrip(tmp_path):
    groups = load_groups(demo_groups_path("upper6"))
    doc = groups_to_dict(groups)
    assert groups_from_dict(json.loads(json.dumps(doc))) == groups
    p = tmp_path / "g.json"
    doc["groups"][0]["jmm"] = "neck.jmm.json"
    p.write_text(json.dumps(doc))
    assert load_groups(p)[0].jmm_ref == str(tmp_path / "neck.jmm.json")
