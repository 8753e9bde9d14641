"""EKF joint-angle estimation from muscle-length measurements.

Prediction integrates measured length increments through the pseudo-inverse
of the muscle Jacobian, restricted to the joints a group owns. The update
step has two variants:

* ``absolute`` compares calibrated absolute lengths with the JMM output;
* ``relative`` never reads absolute lengths. It checks whether the measured
  increment is consistent with the Jacobian at the previous estimate, and
  linearizes through the change of the Jacobian along the predicted motion.
  The information comes entirely from the JMM's curvature.

For several groups, :func:`step_group_set` steps every group and then copies
each borrowed joint from the group that owns it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import jmm as jmm_mod
from .errors import DimensionMismatch, NonFinite, SingularInnovation
from .grouping import GroupSet, GroupSpec, selection_matrix

ABSOLUTE = "absolute"
RELATIVE = "relative"
MAX_INNOVATION_CONDITION = 1e12


@dataclass(frozen=True)
class EKFConfig:
    """Filter tuning. Variances may be scalars or per-name mappings."""

    process_noise_q: float | Mapping = np.deg2rad(0.5) ** 2
    observation_noise_r: float | Mapping = 0.5e-3**2
    initial_covariance_p0: float | Mapping = np.deg2rad(10.0) ** 2
    pinv_tolerance: float = 1e-8
    mode: str = ABSOLUTE
    overwrite: bool = True
    # where H is linearized in relative mode: "pred" (theta_k|k-1) or "prev"
    relative_h_at: str = "pred"

    def __post_init__(self):
        if self.mode not in (ABSOLUTE, RELATIVE):
            raise ValueError(f"mode must be {ABSOLUTE!r} or {RELATIVE!r}")
        if not 0 < self.pinv_tolerance < 1:
            raise ValueError("pinv_tolerance must be in (0, 1)")
        if self.relative_h_at not in ("pred", "prev"):
            raise ValueError("relative_h_at must be 'pred' or 'prev'")
        for name in ("process_noise_q", "observation_noise_r", "initial_covariance_p0"):
            v = getattr(self, name)
            vals = v.values() if isinstance(v, Mapping) else [v]
            if not all(float(x) > 0 for x in vals):
                raise ValueError(f"{name} must be positive")

    @staticmethod
    def _vector(value, names):
        if isinstance(value, Mapping):
            return np.array([float(value[n]) for n in names])
        return np.full(len(names), float(value))

    def q(self, joints):
        return np.diag(self._vector(self.process_noise_q, joints))

    def r(self, muscles):
        return np.diag(self._vector(self.observation_noise_r, muscles))

    def p0(self, joints):
        return self._vector(self.initial_covariance_p0, joints)


@dataclass(frozen=True)
class EstimatorState:
    theta_hat: np.ndarray
    covariance_p: np.ndarray
    tick: int = 0

    @classmethod
    def initial(cls, group: GroupSpec, config: EKFConfig, theta0=None) -> "EstimatorState":
        n = len(group.joints)
        theta0 = np.zeros(n) if theta0 is None else np.asarray(theta0, dtype=float).copy()
        if theta0.shape != (n,):
            raise DimensionMismatch(f"initial estimate needs {n} entries")
        return cls(theta0, np.diag(config.p0(group.joints)), 0)


@dataclass(frozen=True)
class StepTrace:
    prediction: np.ndarray
    residual_e: np.ndarray
    kalman_gain_k: np.ndarray
    innovation_cov_s: np.ndarray


@dataclass(frozen=True)
class MeasurementFrame:
    """One tick of group-local measurements.

    ``delta_z`` is the length change since the previous tick; ``z_abs`` the
    calibrated absolute lengths, required in absolute mode only. Relative
    mode never reads ``z_abs``.
    """

    delta_z: np.ndarray
    z_abs: np.ndarray | None = None


def _rows(jmm, group):
    """Indices of the group's muscles inside the JMM's muscle list."""
    if not group.muscles:
        return np.arange(len(jmm.muscle_names))
    names = list(jmm.muscle_names)
    return np.array([names.index(m) for m in group.muscles], dtype=int)


def _check_dims(state, jmm, group, frame):
    n = len(group.joints)
    if state.theta_hat.shape != (n,) or state.covariance_p.shape != (n, n):
        raise DimensionMismatch(f"state does not match group {group.name!r} with {n} joints")
    if jmm.dof != n:
        raise DimensionMismatch(f"JMM has {jmm.dof} joints, group {group.name!r} has {n}")
    m = len(_rows(jmm, group))
    dz = np.asarray(frame.delta_z, dtype=float)
    if dz.shape != (m,):
        raise DimensionMismatch(f"delta_z has shape {dz.shape}, group {group.name!r} has {m} muscles")
    if not (np.all(np.isfinite(dz)) and np.all(np.isfinite(state.theta_hat))):
        raise NonFinite("non-finite delta_z or theta")
    return dz


def predict(state: EstimatorState, jmm, group: GroupSpec, frame: MeasurementFrame, config: EKFConfig):
    """Propagate through ``Sel @ pinv(G(theta)) @ delta_z`` and add process noise."""
    dz = _check_dims(state, jmm, group, frame)
    rows = _rows(jmm, group)
    G = jmm_mod.jacobian(jmm, state.theta_hat)[rows]
    step = selection_matrix(group) @ (np.linalg.pinv(G, rcond=config.pinv_tolerance) @ dz)
    theta_pred = state.theta_hat + step
    P_pred = state.covariance_p + config.q(group.joints)
    return theta_pred, P_pred


def _correct(theta_pred, P_pred, J, e, R, tick):
    S = J @ P_pred @ J.T + R
    if np.linalg.cond(S) > MAX_INNOVATION_CONDITION:
        raise SingularInnovation(f"innovation covariance is numerically singular at tick {tick}")
    K = np.linalg.solve(S, J @ P_pred).T  # P J^T S^-1, S symmetric
    theta = theta_pred + K @ e
    P = (np.eye(len(theta)) - K @ J) @ P_pred
    P = 0.5 * (P + P.T)
    return theta, P, K, S


def update_absolute(state_pred: EstimatorState, jmm, group: GroupSpec, frame: MeasurementFrame,
                    config: EKFConfig):
    if frame.z_abs is None:
        raise DimensionMismatch("absolute mode needs z_abs in the measurement frame")
    rows = _rows(jmm, group)
    z = np.asarray(frame.z_abs, dtype=float)
    if z.shape != rows.shape:
        raise DimensionMismatch(f"z_abs has shape {z.shape}, expected {rows.shape}")
    if not np.all(np.isfinite(z)):
        raise NonFinite("non-finite z_abs")
    th = state_pred.theta_hat
    e = z - jmm_mod.evaluate(jmm, th)[rows]
    G = jmm_mod.jacobian(jmm, th)[rows]
    theta, P, K, S = _correct(th, state_pred.covariance_p, G, e, config.r(group.muscles), state_pred.tick)
    return EstimatorState(theta, P, state_pred.tick), StepTrace(th.copy(), e, K, S)


def update_relative(state_pred: EstimatorState, state_prev: EstimatorState, jmm, group: GroupSpec,
                    frame: MeasurementFrame, config: EKFConfig):
    rows = _rows(jmm, group)
    dz = np.asarray(frame.delta_z, dtype=float)
    th_pred, th_prev = state_pred.theta_hat, state_prev.theta_hat
    dtheta = th_pred - th_prev
    e = dz - jmm_mod.jacobian(jmm, th_prev)[rows] @ dtheta
    at = th_pred if config.relative_h_at == "pred" else th_prev
    H = jmm_mod.jacobian_directional_derivative(jmm, at, dtheta)[rows]
    theta, P, K, S = _correct(th_pred, state_pred.covariance_p, H, e, config.r(group.muscles), state_pred.tick)
    return EstimatorState(theta, P, state_pred.tick), StepTrace(th_pred.copy(), e, K, S)


def step(state: EstimatorState, jmm, group: GroupSpec, frame: MeasurementFrame, config: EKFConfig):
    """One predict + update for a single group."""
    theta_pred, P_pred = predict(state, jmm, group, frame, config)
    pred = EstimatorState(theta_pred, P_pred, state.tick + 1)
    if config.mode == ABSOLUTE:
        return update_absolute(pred, jmm, group, frame, config)
    return update_relative(pred, state, jmm, group, frame, config)


def apply_overwrites(states: dict, group_set: GroupSet, config: EKFConfig) -> dict:
    """Copy every borrowed joint from its source group's posterior.

    The borrowed joint's covariance row/column is reset to the prior
    variance with no cross terms: its value is imposed from outside.
    """
    out = {}
    for g in group_set.groups:
        st = states[g.name]
        theta = st.theta_hat.copy()
        P = st.covariance_p.copy()
        p0 = config.p0(g.joints)
        for i, joint in enumerate(g.borrowed_joints, start=g.n_estimated):
            src, idx = group_set.sources[joint]
            theta[i] = states[src].theta_hat[idx]
            P[i, :] = 0.0
            P[:, i] = 0.0
            P[i, i] = p0[i]
        out[g.name] = EstimatorState(theta, P, st.tick)
    return out


def step_group_set(states: dict, group_set: GroupSet, jmms: dict, frames: dict, config: EKFConfig):
    """Advance every group one tick, then overwrite borrowed joints.

    ``jmms`` and ``frames`` are keyed by group name. Returns ``(states,
    traces)``. If any group fails, the exception propagates and the input
    states are untouched.
    """
    posterior, traces = {}, {}
    for g in group_set.groups:
        posterior[g.name], traces[g.name] = step(states[g.name], jmms[g.name], g, frames[g.name], config)
    if config.overwrite:
        posterior = apply_overwrites(posterior, group_set, config)
    return posterior, traces


@dataclass
class GroupSetEstimator:
    """Stateful convenience wrapper holding one state per group."""

    group_set: GroupSet
    jmms: dict
    config: EKFConfig = field(default_factory=EKFConfig)
    states: dict = field(default=None)

    def __post_init__(self):
        if self.states is None:
            self.states = {g.name: EstimatorState.initial(g, self.config) for g in self.group_set.groups}

    def reset(self, theta0: Mapping[str, float] | None = None):
        """Start every group at ``theta0`` (joint name -> rad, default zero)."""
        theta0 = theta0 or {}
        self.states = {
            g.name: EstimatorState.initial(g, self.config, [theta0.get(j, 0.0) for j in g.joints])
            for g in self.group_set.groups
        }

    def step(self, frames: dict) -> dict:
        self.states, traces = step_group_set(self.states, self.group_set, self.jmms, frames, self.config)
        return traces

    def estimate(self) -> dict:
        """Authoritative estimate per estimated joint (joint name -> rad)."""
        out = {}
        for g in self.group_set.groups:
            for i, j in enumerate(g.estimated_joints):
                out[j] = float(self.states[g.name].theta_hat[i])
        return out
