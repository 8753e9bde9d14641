"""Estimation groups and their sharing topology.

A group estimates some joints itself and borrows others from neighbouring
groups because its polyarticular muscles also cross those joints. Each
borrowed joint must have exactly one authoritative source group.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationFailed

DOF_CAP = 8


@dataclass(frozen=True)
class GroupSpec:
    name: str
    estimated_joints: tuple
    borrowed_joints: tuple = ()
    muscles: tuple = ()
    jmm_ref: str | None = None

    @property
    def joints(self) -> tuple:
        """JMM joint order: estimated joints followed by borrowed ones."""
        return tuple(self.estimated_joints) + tuple(self.borrowed_joints)

    @property
    def n_estimated(self) -> int:
        return len(self.estimated_joints)


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    message: str

    def as_dict(self):
        return {"code": self.code, "path": self.path, "message": self.message}


@dataclass(frozen=True)
class GroupSet:
    groups: tuple
    # borrowed joint -> (source group name, index within its estimated_joints)
    sources: dict = field(default_factory=dict)

    def group(self, name: str) -> GroupSpec:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def source_of(self, joint: str):
        """(group, index) authoritatively estimating ``joint``."""
        for g in self.groups:
            if joint in g.estimated_joints:
                return g.name, g.estimated_joints.index(joint)
        raise KeyError(joint)

    @property
    def estimated_joints(self) -> list:
        return [j for g in self.groups for j in g.estimated_joints]


def collect_violations(groups, dof_cap: int = DOF_CAP, model=None, jmms=None) -> list:
    """Every problem with a group list; empty when it is valid.

    When ``model`` is given, joint/muscle names are checked against it. When
    ``jmms`` (name -> PolynomialJMM) is given, each group's referenced JMM
    must have joint order estimated ++ borrowed and contain its muscles.
    """
    out = []
    names = [g.name for g in groups]
    owner = {}
    for gi, g in enumerate(groups):
        p = f"groups[{gi}]"
        if names.count(g.name) > 1:
            out.append(Violation("duplicate_group", f"{p}.name", f"group name {g.name!r} used more than once"))
        for field_name in ("estimated_joints", "borrowed_joints", "muscles"):
            seq = list(getattr(g, field_name))
            dupes = sorted({x for x in seq if seq.count(x) > 1})
            if dupes:
                out.append(Violation("duplicate_entry", f"{p}.{field_name}", f"repeated entries {dupes}"))
        both = sorted(set(g.estimated_joints) & set(g.borrowed_joints))
        if both:
            out.append(Violation("estimated_and_borrowed", f"{p}", f"joints both estimated and borrowed: {both}"))
        n = len(set(g.estimated_joints) | set(g.borrowed_joints))
        if n > dof_cap:
            out.append(Violation("dof_cap", f"{p}", f"{n} DOFs exceeds cap of {dof_cap}"))
        for ji, j in enumerate(g.estimated_joints):
            if j in owner and owner[j] != g.name:
                out.append(Violation("double_estimation", f"{p}.estimated_joints[{ji}]",
                                     f"joint {j!r} already estimated by group {owner[j]!r}"))
            else:
                owner[j] = g.name
        if model is not None:
            for field_name in ("estimated_joints", "borrowed_joints"):
                for ji, j in enumerate(getattr(g, field_name)):
                    if j not in model.joint_names:
                        out.append(Violation("unknown_joint", f"{p}.{field_name}[{ji}]", f"no joint {j!r} in model"))
            for mi, m in enumerate(g.muscles):
                if m not in model.muscle_names:
                    out.append(Violation("unknown_muscle", f"{p}.muscles[{mi}]", f"no muscle {m!r} in model"))
        if jmms is not None:
            jmm = jmms.get(g.jmm_ref)
            if jmm is None:
                out.append(Violation("missing_jmm", f"{p}.jmm", f"no JMM loaded for {g.jmm_ref!r}"))
            else:
                if tuple(jmm.joint_names) != g.joints:
                    out.append(Violation("jmm_joint_order", f"{p}.jmm",
                                         f"JMM joints {list(jmm.joint_names)} != estimated+borrowed {list(g.joints)}"))
                missing = [m for m in g.muscles if m not in jmm.muscle_names]
                if missing:
                    out.append(Violation("jmm_muscles", f"{p}.jmm", f"JMM lacks muscles {missing}"))
    for gi, g in enumerate(groups):
        for ji, j in enumerate(g.borrowed_joints):
            src = owner.get(j)
            if src is None:
                out.append(Violation("orphan", f"groups[{gi}].borrowed_joints[{ji}]",
                                     f"borrowed joint {j!r} is estimated by no group"))
            elif src == g.name:
                out.append(Violation("self_borrow", f"groups[{gi}].borrowed_joints[{ji}]",
                                     f"joint {j!r} borrowed from its own group"))
    return out


def validate(groups, dof_cap: int = DOF_CAP, model=None, jmms=None) -> GroupSet:
    """Check a list of groups and resolve each borrowed joint's source.

    Raises :class:`ValidationFailed` listing all violations at once.
    """
    groups = tuple(groups)
    violations = collect_violations(groups, dof_cap, model, jmms)
    if violations:
        raise ValidationFailed(violations)
    gs = GroupSet(groups)
    sources = {}
    for g in groups:
        for j in g.borrowed_joints:
            sources[j] = gs.source_of(j)
    return GroupSet(groups, sources)


def selection_matrix(group: GroupSpec) -> np.ndarray:
    """Diagonal projector keeping estimated joints, zeroing borrowed ones."""
    return np.diag(np.r_[np.ones(len(group.estimated_joints)), np.zeros(len(group.borrowed_joints))])


# --- files -----------------------------------------------------------------

def groups_from_dict(doc: dict) -> list:
    out = []
    for g in doc["groups"]:
        out.append(GroupSpec(
            name=g["name"],
            estimated_joints=tuple(g.get("estimated_joints", ())),
            borrowed_joints=tuple(g.get("borrowed_joints", ())),
            muscles=tuple(g.get("muscles", ())),
            jmm_ref=g.get("jmm"),
        ))
    return out


def groups_to_dict(groups) -> dict:
    return {"groups": [
        {"name": g.name, "estimated_joints": list(g.estimated_joints), "borrowed_joints": list(g.borrowed_joints),
         "muscles": list(g.muscles), "jmm": g.jmm_ref}
        for g in groups
    ]}


def load_groups(path) -> list:
    """Read a group file. Relative ``jmm`` paths resolve against the file's directory."""
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    groups = groups_from_dict(doc)
    resolved = []
    for g in groups:
        ref = g.jmm_ref
        if ref is not None and not Path(ref).is_absolute():
            ref = str(path.parent / ref)
        resolved.append(GroupSpec(g.name, g.estimated_joints, g.borrowed_joints, g.muscles, ref))
    return resolved
