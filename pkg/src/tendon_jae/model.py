"""Kinematic chain with straight-line muscle routing.

This is the geometric ground truth: forward kinematics over a tree of
single-axis revolute joints, and muscle lengths as the summed distance
between consecutive via-points. Everything downstream (dataset grids,
simulated encoders, finite-difference oracles) is computed from here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import AngleOutOfRange, DoubleCalibration, LengthMismatch, ModelValidationError

# Slack allowed when comparing an angle to its limits, to absorb deg->rad rounding.
LIMIT_SLACK = 1e-12


@dataclass(frozen=True)
class JointDef:
    name: str
    parent_link: str
    child_link: str
    axis: np.ndarray
    origin_xyz: np.ndarray
    origin_quat: np.ndarray  # scalar-last (x, y, z, w)
    lower_limit: float
    upper_limit: float

    @property
    def origin(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = Rotation.from_quat(self.origin_quat).as_matrix()
        T[:3, 3] = self.origin_xyz
        return T


@dataclass(frozen=True)
class MuscleDef:
    name: str
    via_points: tuple  # ((link, np.ndarray(3)), ...)


@dataclass(frozen=True)
class MuscleLengths:
    values: np.ndarray
    calibrated: bool = False


@dataclass(frozen=True, eq=False)
class KinematicModel:
    links: tuple
    joints: tuple
    muscles: tuple
    name: str = "model"
    base_link: str = field(init=False)

    def __post_init__(self):
        _check_model(self)
        children = {j.child_link for j in self.joints}
        base = [l for l in self.links if l not in children]
        object.__setattr__(self, "base_link", base[0])
        object.__setattr__(self, "_joint_index", {j.name: i for i, j in enumerate(self.joints)})
        object.__setattr__(self, "_muscle_index", {m.name: i for i, m in enumerate(self.muscles)})
        object.__setattr__(self, "_order", _topological_order(self))
        object.__setattr__(self, "_origins", np.array([j.origin for j in self.joints]).reshape(-1, 4, 4))
        object.__setattr__(self, "_axes", np.array([j.axis for j in self.joints], dtype=float).reshape(-1, 3))

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def joint_names(self) -> list:
        return [j.name for j in self.joints]

    @property
    def muscle_names(self) -> list:
        return [m.name for m in self.muscles]

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.lower_limit for j in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.upper_limit for j in self.joints])

    def joint_index(self, name: str) -> int:
        return self._joint_index[name]

    def muscle_index(self, name: str) -> int:
        return self._muscle_index[name]

    def link_path_joints(self, link_a: str, link_b: str) -> set:
        """Names of joints on the tree path between two links."""
        up = {j.child_link: j for j in self.joints}

        def chain(link):
            out = []
            while link in up:
                out.append(up[link])
                link = up[link].parent_link
            return out

        ca, cb = chain(link_a), chain(link_b)
        na, nb = {j.name for j in ca}, {j.name for j in cb}
        return na ^ nb

    def spanned_joints(self, muscle: str) -> list:
        """Joints a muscle crosses, in canonical joint order."""
        m = self.muscles[self.muscle_index(muscle)]
        names = set()
        for (la, _), (lb, _) in zip(m.via_points[:-1], m.via_points[1:]):
            names |= self.link_path_joints(la, lb)
        return [j for j in self.joint_names if j in names]

    def transformed(self, T: np.ndarray) -> "KinematicModel":
        """Same model with the base frame moved by the rigid transform ``T``.

        Implemented by pre-multiplying the origins of joints hanging off the base.
        """
        joints = []
        for j in self.joints:
            if j.parent_link == self.base_link:
                O = T @ j.origin
                j = JointDef(j.name, j.parent_link, j.child_link, j.axis, O[:3, 3].copy(),
                             Rotation.from_matrix(O[:3, :3]).as_quat(), j.lower_limit, j.upper_limit)
            joints.append(j)
        # via-points on the base link move with it as well
        muscles = []
        for m in self.muscles:
            vps = tuple(
                (link, (T[:3, :3] @ p + T[:3, 3]) if link == self.base_link else p) for link, p in m.via_points
            )
            muscles.append(MuscleDef(m.name, vps))
        return KinematicModel(self.links, tuple(joints), tuple(muscles), self.name)


def _topological_order(model):
    by_parent = {}
    for i, j in enumerate(model.joints):
        by_parent.setdefault(j.parent_link, []).append(i)
    order = []
    children = {j.child_link for j in model.joints}
    stack = [l for l in model.links if l not in children]
    while stack:
        link = stack.pop(0)
        for i in by_parent.get(link, []):
            order.append(i)
            stack.append(model.joints[i].child_link)
    return tuple(order)


def _check_model(model):
    links = list(model.links)
    if len(set(links)) != len(links):
        raise ModelValidationError("links", "duplicate link names")
    link_set = set(links)
    seen_children = set()
    seen_names = set()
    for i, j in enumerate(model.joints):
        p = f"joints[{i}]"
        if j.name in seen_names:
            raise ModelValidationError(f"{p}.name", f"duplicate joint name {j.name!r}")
        seen_names.add(j.name)
        for attr in ("parent_link", "child_link"):
            if getattr(j, attr) not in link_set:
                raise ModelValidationError(f"{p}.{attr}", f"unknown link {getattr(j, attr)!r}")
        if j.child_link in seen_children:
            raise ModelValidationError(f"{p}.child_link", f"link {j.child_link!r} has more than one parent")
        seen_children.add(j.child_link)
        axis = np.asarray(j.axis, dtype=float)
        if axis.shape != (3,) or not np.all(np.isfinite(axis)) or abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ModelValidationError(f"{p}.axis", "axis must be a unit 3-vector")
        q = np.asarray(j.origin_quat, dtype=float)
        if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ModelValidationError(f"{p}.origin", "rotation must be a unit quaternion")
        if np.asarray(j.origin_xyz).shape != (3,):
            raise ModelValidationError(f"{p}.origin", "translation must be a 3-vector")
        if not (np.isfinite(j.lower_limit) and np.isfinite(j.upper_limit)):
            raise ModelValidationError(f"{p}.limits", "limits must be finite")
        if not j.lower_limit < j.upper_limit:
            raise ModelValidationError(f"{p}.limits", "lower limit must be below upper limit")
    roots = [l for l in links if l not in seen_children]
    if len(roots) != 1:
        raise ModelValidationError("joints", f"expected a single base link, found {roots}")
    # every link must be reachable from the root (catches cycles)
    reach, frontier = {roots[0]}, [roots[0]]
    while frontier:
        l = frontier.pop()
        for j in model.joints:
            if j.parent_link == l and j.child_link not in reach:
                reach.add(j.child_link)
                frontier.append(j.child_link)
    if reach != link_set:
        raise ModelValidationError("joints", f"links not connected to base: {sorted(link_set - reach)}")
    mnames = set()
    for i, m in enumerate(model.muscles):
        p = f"muscles[{i}]"
        if m.name in mnames:
            raise ModelValidationError(f"{p}.name", f"duplicate muscle name {m.name!r}")
        mnames.add(m.name)
        if len(m.via_points) < 2:
            raise ModelValidationError(f"{p}.via_points", "need at least a start and an end point")
        for k, (link, pos) in enumerate(m.via_points):
            if link not in link_set:
                raise ModelValidationError(f"{p}.via_points[{k}].link", f"unknown link {link!r}")
            if np.asarray(pos).shape != (3,):
                raise ModelValidationError(f"{p}.via_points[{k}].position", "position must be a 3-vector")


def _check_theta(model, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1:] != (model.dof,):
        raise LengthMismatch(f"expected {model.dof} joint angles, got shape {theta.shape}")
    flat = theta.reshape(-1, model.dof)
    lo, hi = model.lower - LIMIT_SLACK, model.upper + LIMIT_SLACK
    bad = ~((flat >= lo) & (flat <= hi))
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise AngleOutOfRange(model.joints[c].name, float(flat[r, c]))
    return theta


def _axis_rotations(axes, angles):
    """Batched Rodrigues: axes (3,), angles (n,) -> (n, 4, 4)."""
    x, y, z = axes
    c, s = np.cos(angles), np.sin(angles)
    C = 1.0 - c
    R = np.empty(angles.shape + (4, 4))
    R[..., 0, 0] = c + x * x * C
    R[..., 0, 1] = x * y * C - z * s
    R[..., 0, 2] = x * z * C + y * s
    R[..., 1, 0] = y * x * C + z * s
    R[..., 1, 1] = c + y * y * C
    R[..., 1, 2] = y * z * C - x * s
    R[..., 2, 0] = z * x * C - y * s
    R[..., 2, 1] = z * y * C + x * s
    R[..., 2, 2] = c + z * z * C
    R[..., :3, 3] = 0.0
    R[..., 3, :3] = 0.0
    R[..., 3, 3] = 1.0
    return R


def _fk_batch(model, thetas):
    n = thetas.shape[0]
    out = {model.base_link: np.broadcast_to(np.eye(4), (n, 4, 4))}
    for i in model._order:
        j = model.joints[i]
        parent = out[j.parent_link]
        out[j.child_link] = parent @ model._origins[i] @ _axis_rotations(model._axes[i], thetas[:, i])
    return out


def forward_kinematics(model: KinematicModel, theta) -> dict:
    """World transform (4x4) of every link at joint angles ``theta`` [rad]."""
    theta = _check_theta(model, theta)
    if theta.ndim != 1:
        raise LengthMismatch("forward_kinematics takes a single pose; use forward_kinematics_batch")
    return {k: v[0].copy() for k, v in _fk_batch(model, theta[None, :]).items()}


def forward_kinematics_batch(model: KinematicModel, thetas) -> dict:
    thetas = _check_theta(model, np.atleast_2d(thetas))
    return _fk_batch(model, thetas)


def _lengths_batch(model, thetas):
    tf = _fk_batch(model, thetas)
    L = np.zeros((thetas.shape[0], len(model.muscles)))
    for k, m in enumerate(model.muscles):
        prev = None
        for link, pos in m.via_points:
            T = tf[link]
            w = T[:, :3, :3] @ np.asarray(pos, dtype=float) + T[:, :3, 3]
            if prev is not None:
                L[:, k] += np.linalg.norm(w - prev, axis=1)
            prev = w
    return L


def muscle_lengths(model: KinematicModel, theta) -> MuscleLengths:
    """Raw (uncalibrated) muscle lengths [m] at a single pose."""
    theta = _check_theta(model, theta)
    return MuscleLengths(_lengths_batch(model, np.atleast_2d(theta))[0], calibrated=False)


def muscle_lengths_batch(model: KinematicModel, thetas) -> np.ndarray:
    """Raw muscle lengths for an (n, D) array of poses, returned as (n, M)."""
    thetas = _check_theta(model, np.atleast_2d(np.asarray(thetas, dtype=float)))
    return _lengths_batch(model, thetas)


def calibrate(model: KinematicModel, raw: MuscleLengths, theta_ref=None) -> MuscleLengths:
    """Subtract the raw lengths at ``theta_ref`` (default: all joints at zero)."""
    if raw.calibrated:
        raise DoubleCalibration("lengths are already calibrated")
    if theta_ref is None:
        theta_ref = np.zeros(model.dof)
    ref = muscle_lengths(model, theta_ref).values
    return MuscleLengths(np.asarray(raw.values, dtype=float) - ref, calibrated=True)


def numeric_muscle_jacobian(model: KinematicModel, theta, step: float = 1e-5) -> np.ndarray:
    """Central-difference dl/dtheta, shape (M, D)."""
    if not step > 0:
        raise ValueError("step must be positive")
    theta = _check_theta(model, theta)
    D = model.dof
    E = np.eye(D) * step
    plus = muscle_lengths_batch(model, theta[None, :] + E)
    minus = muscle_lengths_batch(model, theta[None, :] - E)
    return ((plus - minus) / (2.0 * step)).T


# --- model files -----------------------------------------------------------

def _vec(obj, n, path):
    try:
        v = np.asarray(obj, dtype=float)
    except (TypeError, ValueError):
        raise ModelValidationError(path, f"expected {n} numbers")
    if v.shape != (n,) or not np.all(np.isfinite(v)):
        raise ModelValidationError(path, f"expected {n} finite numbers")
    return v


def model_from_dict(doc: dict) -> KinematicModel:
    """Build a model from its JSON document form (angles in degrees)."""
    for key in ("links", "joints", "muscles"):
        if key not in doc:
            raise ModelValidationError(key, "missing top-level key")
    links = doc["links"]
    if not isinstance(links, list) or not all(isinstance(l, str) for l in links):
        raise ModelValidationError("links", "expected a list of link names")
    joints = []
    for i, jd in enumerate(doc["joints"]):
        p = f"joints[{i}]"
        for key in ("name", "parent", "child", "axis", "limits"):
            if key not in jd:
                raise ModelValidationError(f"{p}.{key}", "missing field")
        axis = _vec(jd["axis"], 3, f"{p}.axis")
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ModelValidationError(f"{p}.axis", "axis must have unit norm")
        origin = jd.get("origin", {})
        xyz = _vec(origin.get("xyz", [0, 0, 0]), 3, f"{p}.origin.xyz")
        if "quat" in origin:
            quat = _vec(origin["quat"], 4, f"{p}.origin.quat")
            if abs(np.linalg.norm(quat) - 1.0) > 1e-9:
                raise ModelValidationError(f"{p}.origin.quat", "quaternion must have unit norm")
        else:
            rpy = _vec(origin.get("rpy", [0, 0, 0]), 3, f"{p}.origin.rpy")
            quat = Rotation.from_euler("xyz", np.deg2rad(rpy)).as_quat()
        lim = _vec(jd["limits"], 2, f"{p}.limits")
        if not lim[0] < lim[1]:
            raise ModelValidationError(f"{p}.limits", "lower limit must be below upper limit")
        joints.append(JointDef(jd["name"], jd["parent"], jd["child"], axis, xyz, quat,
                               float(np.deg2rad(lim[0])), float(np.deg2rad(lim[1]))))
    muscles = []
    for i, md in enumerate(doc["muscles"]):
        p = f"muscles[{i}]"
        if "name" not in md or "via_points" not in md:
            raise ModelValidationError(p, "muscle needs name and via_points")
        vps = []
        for k, vp in enumerate(md["via_points"]):
            if "link" not in vp:
                raise ModelValidationError(f"{p}.via_points[{k}].link", "missing field")
            vps.append((vp["link"], _vec(vp.get("position"), 3, f"{p}.via_points[{k}].position")))
        muscles.append(MuscleDef(md["name"], tuple(vps)))
    return KinematicModel(tuple(links), tuple(joints), tuple(muscles), doc.get("name", "model"))


def model_to_dict(model: KinematicModel) -> dict:
    return {
        "name": model.name,
        "links": list(model.links),
        "joints": [
            {
                "name": j.name,
                "parent": j.parent_link,
                "child": j.child_link,
                "axis": [float(a) for a in j.axis],
                "origin": {"xyz": [float(a) for a in j.origin_xyz], "quat": [float(a) for a in j.origin_quat]},
                "limits": [float(np.rad2deg(j.lower_limit)), float(np.rad2deg(j.upper_limit))],
            }
            for j in model.joints
        ],
        "muscles": [
            {"name": m.name, "via_points": [{"link": l, "position": [float(a) for a in p]} for l, p in m.via_points]}
            for m in model.muscles
        ],
    }


def load_model(path) -> KinematicModel:
    with open(path) as fh:
        doc = json.load(fh)
    return model_from_dict(doc)


DEMO_MODELS = ("elbow1", "planar2", "upper6")


def demo_model_path(name: str) -> Path:
    if name not in DEMO_MODELS:
        raise KeyError(f"unknown demo model {name!r}; choose from {DEMO_MODELS}")
    return Path(__file__).parent / "data" / f"{name}.json"


def load_demo_model(name: str) -> KinematicModel:
    return load_model(demo_model_path(name))
