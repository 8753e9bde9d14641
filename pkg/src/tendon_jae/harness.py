"""Simulation harness: trajectories, simulated encoders, experiment runs.

The geometric model plays the robot. Joint trajectories are generated
(random walk reflected at the limits, sinusoids, or replayed from a file),
incremental encoders report length changes, and the estimator is run on
those readings. Everything is seeded, and the CSV log is byte-reproducible.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import jmm as jmm_mod
from .errors import EmptyLog, TendonJAEError
from .estimator import ABSOLUTE, EKFConfig, EstimatorState, MeasurementFrame, step_group_set
from .grouping import GroupSet, load_groups, validate
from .model import KinematicModel, load_demo_model, load_model, muscle_lengths_batch

RANDOM_WALK = "random_walk"
SINUSOID = "sinusoid"
REPLAY = "replay_file"


@dataclass(frozen=True)
class TrajectorySpec:
    """Joint motion of the simulated robot. Angles in radians.

    ``start`` defaults to the calibration pose, i.e. the robot is zeroed
    wherever it happens to stand.
    """

    kind: str = RANDOM_WALK
    ticks: int = 1000
    step_sigma: float = float(np.deg2rad(0.5))
    seed: int = 0
    start: tuple | None = None
    amplitude: float = float(np.deg2rad(20.0))  # sinusoid
    period: float = 200.0  # sinusoid, ticks
    replay_path: str | None = None

    def __post_init__(self):
        if self.kind not in (RANDOM_WALK, SINUSOID, REPLAY):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.kind == REPLAY and not self.replay_path:
            raise ValueError("replay_file trajectories need replay_path")
        if self.ticks < 0:
            raise ValueError("ticks must be nonnegative")


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement corruption.

    ``calibration_offset`` is the pose (radians per joint, in model order)
    at which the encoders were zeroed; the estimator believes that pose is
    all zeros. ``length_bias`` is a constant added to every stored absolute
    length; it never affects increments.
    """

    measurement_sigma: float = 0.0
    calibration_offset: tuple | None = None
    length_bias: float = 0.0


def reflect(x, lower, upper):
    """Fold values back into [lower, upper] by mirror reflection."""
    w = upper - lower
    y = np.mod(x - lower, 2.0 * w)
    return lower + np.where(y > w, 2.0 * w - y, y)


def generate_trajectory(model: KinematicModel, spec: TrajectorySpec, start) -> np.ndarray:
    """Poses for ticks 0..ticks, shape (ticks + 1, D)."""
    lo, hi = model.lower, model.upper
    start = np.asarray(start, dtype=float)
    if spec.kind == RANDOM_WALK:
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(2)[0])
        steps = rng.normal(0.0, spec.step_sigma, size=(spec.ticks, model.dof))
        out = np.empty((spec.ticks + 1, model.dof))
        out[0] = start
        for k in range(spec.ticks):
            out[k + 1] = reflect(out[k] + steps[k], lo, hi)
        return out
    if spec.kind == SINUSOID:
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(2)[0])
        phase = rng.uniform(0, 2 * np.pi, size=model.dof)
        t = np.arange(spec.ticks + 1)[:, None]
        raw = start + spec.amplitude * (np.sin(2 * np.pi * t / spec.period + phase) - np.sin(phase))
        return reflect(raw, lo, hi)
    return read_replay(model, spec.replay_path, spec.ticks)


def read_replay(model: KinematicModel, path, ticks=None) -> np.ndarray:
    """Replay CSV: header of joint names, one row per tick, degrees."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    missing = [j for j in model.joint_names if j not in header]
    if missing:
        raise ValueError(f"{path}: replay file lacks joints {missing}")
    cols = [header.index(j) for j in model.joint_names]
    data = np.deg2rad(np.array([[float(r[c]) for c in cols] for r in body]))
    if ticks is not None:
        data = data[: ticks + 1]
    return reflect(data, model.lower, model.upper)


# --- logs ------------------------------------------------------------------

@dataclass
class TrajectoryLog:
    """Per-tick table with a key=value header. Angles in degrees, lengths in meters."""

    header: dict
    columns: list
    rows: np.ndarray

    def __len__(self):
        return self.rows.shape[0]

    def column(self, name) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        for k, v in self.header.items():
            buf.write(f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(x) for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "TrajectoryLog":
        header, lines = {}, []
        with open(path, newline="") as fh:
            for line in fh:
                if line.startswith("#"):
                    k, _, v = line[1:].strip().partition("=")
                    header[k] = v
                else:
                    lines.append(line)
        reader = csv.reader(lines)
        columns = next(reader, None)
        if columns is None:
            raise EmptyLog(f"{path}: no column header")
        data = [[float(x) for x in r] for r in reader if r]
        rows = np.array(data, dtype=float).reshape(len(data), len(columns))
        return cls(header, columns, rows)


def _fmt(x):
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def fingerprint(**parts) -> dict:
    """Header lines: one per config part plus a digest over all of them."""
    lines = {k: json.dumps(_jsonable(v), sort_keys=True, separators=(",", ":")) for k, v in parts.items()}
    digest = hashlib.sha256("\n".join(f"{k}={v}" for k, v in lines.items()).encode()).hexdigest()
    return {**lines, "sha256": digest}


def _jmm_digest(jmm) -> str:
    return hashlib.sha256(json.dumps(jmm_mod.jmm_to_dict(jmm), sort_keys=True).encode()).hexdigest()[:16]


# --- experiment ------------------------------------------------------------

@dataclass
class ExperimentResult:
    log: TrajectoryLog
    summary: dict
    states: dict = field(default=None, repr=False)


class EstimationFailed(TendonJAEError):
    def __init__(self, tick, cause, result):
        self.tick = tick
        self.cause = cause
        self.result = result
        super().__init__(f"estimation failed at tick {tick}: {cause}")


def run_experiment(model: KinematicModel, group_set: GroupSet, jmms: dict, trajectory: TrajectorySpec,
                   noise: NoiseSpec = NoiseSpec(), ekf: EKFConfig = EKFConfig(), initial_estimate=None,
                   converge_threshold: float = float(np.deg2rad(5.0)), check_health: bool = True
                   ) -> ExperimentResult:
    """Simulate the robot along ``trajectory`` and run the grouped estimator.

    ``jmms`` maps group name to its fitted mapping. ``initial_estimate``
    (radians, model joint order) defaults to all zeros, the pose the
    estimator believes the encoders were zeroed at. Raises
    :class:`EstimationFailed` carrying the partial result if a tick fails.
    """
    D = model.dof
    offset = np.zeros(D) if noise.calibration_offset is None else np.asarray(noise.calibration_offset, dtype=float)
    if offset.shape != (D,):
        raise ValueError(f"calibration_offset needs {D} entries")
    if np.any(offset < model.lower) or np.any(offset > model.upper):
        raise ValueError("calibration_offset must lie within joint limits")
    start = offset if trajectory.start is None else np.asarray(trajectory.start, dtype=float)
    thetas = generate_trajectory(model, trajectory, start)

    raw = muscle_lengths_batch(model, thetas)
    ref = muscle_lengths_batch(model, offset[None, :])[0]
    dz = np.diff(raw, axis=0)
    if noise.measurement_sigma > 0:
        rng = np.random.default_rng(np.random.SeedSequence(trajectory.seed).spawn(2)[1])
        dz = dz + rng.normal(0.0, noise.measurement_sigma, size=dz.shape)
    # incremental encoder: absolute reading = zeroed start + accumulated increments
    z_abs = (raw[0] - ref) + np.cumsum(dz, axis=0) + noise.length_bias

    init = np.zeros(D) if initial_estimate is None else np.asarray(initial_estimate, dtype=float)
    groups = group_set.groups
    midx = {g.name: [model.muscle_index(m) for m in g.muscles] for g in groups}
    jidx = {g.name: [model.joint_index(j) for j in g.joints] for g in groups}
    states = {g.name: EstimatorState.initial(g, ekf, init[jidx[g.name]]) for g in groups}

    true_cols = [f"true_{j}" for j in model.joint_names]
    dz_cols = [f"dz_{m}" for m in model.muscle_names]
    z_cols = [f"z_{m}" for m in model.muscle_names] if ekf.mode == ABSOLUTE else []
    est_cols = [f"est_{g.name}__{j}" for g in groups for j in g.joints]
    owned = [j for j in model.joint_names if any(j in g.estimated_joints for g in groups)]
    err_cols = [f"err_{j}" for j in owned]
    columns = ["tick"] + true_cols + dz_cols + z_cols + est_cols + err_cols

    rows = []
    min_eig, max_asym = np.inf, 0.0
    failure = None
    for k in range(trajectory.ticks):
        frames = {
            g.name: MeasurementFrame(dz[k, midx[g.name]], z_abs[k, midx[g.name]] if ekf.mode == ABSOLUTE else None)
            for g in groups
        }
        try:
            states, _ = step_group_set(states, group_set, jmms, frames, ekf)
        except TendonJAEError as exc:
            failure = (k + 1, exc)
            break
        if check_health:
            for st in states.values():
                P = st.covariance_p
                max_asym = max(max_asym, float(np.abs(P - P.T).max()))
                min_eig = min(min_eig, float(np.linalg.eigvalsh(0.5 * (P + P.T))[0]))
        est = np.concatenate([states[g.name].theta_hat for g in groups])
        auth = {}
        for g in groups:
            for i, j in enumerate(g.estimated_joints):
                auth[j] = states[g.name].theta_hat[i]
        err = np.array([auth[j] - thetas[k + 1, model.joint_index(j)] for j in owned])
        row = np.concatenate([[k + 1], np.rad2deg(thetas[k + 1]), dz[k], z_abs[k] if z_cols else [],
                              np.rad2deg(est), np.rad2deg(err)])
        rows.append(row)

    header = fingerprint(
        model=model.name,
        joints=model.joint_names,
        muscles=model.muscle_names,
        groups=[{"name": g.name, "estimated": g.estimated_joints, "borrowed": g.borrowed_joints,
                 "muscles": g.muscles} for g in groups],
        jmms={g.name: _jmm_digest(jmms[g.name]) for g in groups},
        trajectory=asdict(trajectory),
        noise=asdict(noise),
        ekf=asdict(ekf),
        initial_estimate=init,
    )
    log = TrajectoryLog(header, columns, np.array(rows, dtype=float).reshape(len(rows), len(columns)))
    summary = summarize(log, model, group_set, np.rad2deg(converge_threshold))
    summary["min_cov_eigenvalue"] = None if not np.isfinite(min_eig) else min_eig
    summary["max_cov_asymmetry"] = max_asym
    summary["failed_tick"] = failure[0] if failure else None
    result = ExperimentResult(log, summary, states)
    if failure:
        raise EstimationFailed(failure[0], failure[1], result)
    return result


def summarize(log: TrajectoryLog, model, group_set: GroupSet, threshold_deg: float = 5.0) -> dict:
    """Error statistics from a log (all angles in degrees).

    ``rmse`` covers the final half of the ticks. ``copy_rmse`` does the same
    for every group's own copy of each joint, which is where borrowed-joint
    drift shows up when overwriting is disabled.
    """
    n = len(log)
    out = {"ticks": n, "rmse": {}, "max_error": {}, "bias": {}, "final_quarter_max_error": {},
           "convergence_tick": {}, "copy_rmse": {}}
    if n == 0:
        return out
    half, quarter = n // 2, n - max(1, n // 4)
    ticks = log.column("tick")
    for c in log.columns:
        if not c.startswith("err_"):
            continue
        j = c[4:]
        e = log.column(c)
        out["rmse"][j] = float(np.sqrt(np.mean(e[half:] ** 2)))
        out["max_error"][j] = float(np.abs(e).max())
        out["bias"][j] = float(np.mean(e[half:]))
        out["final_quarter_max_error"][j] = float(np.abs(e[quarter:]).max())
        above = np.nonzero(np.abs(e) >= threshold_deg)[0]
        if len(above) == 0:
            out["convergence_tick"][j] = int(ticks[0])
        elif above[-1] == n - 1:
            out["convergence_tick"][j] = None
        else:
            out["convergence_tick"][j] = int(ticks[above[-1] + 1])
    for g in group_set.groups:
        out["copy_rmse"][g.name] = {}
        for j in g.joints:
            e = log.column(f"est_{g.name}__{j}") - log.column(f"true_{j}")
            out["copy_rmse"][g.name][j] = float(np.sqrt(np.mean(e[half:] ** 2)))
    return out


# --- JMM construction -------------------------------------------------------

def build_jmm(model: KinematicModel, joints, muscles, dataset: jmm_mod.DatasetSpec, degree: int = 4,
              ridge: float = 1e-10, out_file=None, workers: int = 1, holdout: int = 1000, seed: int = 0,
              anchor_zero: bool = True, dry_run: bool = False):
    """Grid-sample, fit and optionally save a JMM; returns ``(jmm, report)``.

    The report carries the sample count, basis size, wall time, and residual
    statistics per muscle on the grid and on ``holdout`` random poses.
    ``anchor_zero`` pins the fit to zero at the all-zero pose (skipped for
    degree 0, where it would discard the constant fit). ``dry_run`` only
    counts samples and basis functions and returns ``(None, report)``.
    """
    t0 = time.perf_counter()
    stream = jmm_mod.sample_grid(model, dataset, joints, muscles)
    basis = jmm_mod.enumerate_basis(len(joints), degree)
    if dry_run:
        return None, {"model": model.name, "joints": list(joints), "muscles": list(muscles),
                      "per_joint_samples": [int(n) for n in dataset.per_joint_samples],
                      "sample_count": stream.count(), "degree": degree, "basis_size": len(basis),
                      "wall_time_s": time.perf_counter() - t0, "dry_run": True}
    anchor = np.zeros(len(joints)) if anchor_zero and degree > 0 else None
    jmm, info = jmm_mod.fit(stream, basis, ridge=ridge, workers=workers, anchor=anchor, return_info=True)
    fit_time = time.perf_counter() - t0

    sq = np.zeros(len(muscles))
    gmax = np.zeros(len(muscles))
    for th, L in stream.chunks():
        r = jmm_mod.evaluate(jmm, th) - L
        sq += (r**2).sum(axis=0)
        gmax = np.maximum(gmax, np.abs(r).max(axis=0))
    grid_rms = np.sqrt(sq / len(stream))

    rng = np.random.default_rng(seed)
    ranges = np.asarray(dataset.ranges)
    th = rng.uniform(ranges[:, 0], ranges[:, 1], size=(holdout, len(joints)))
    full = np.zeros((holdout, model.dof))
    full[:, [model.joint_index(j) for j in joints]] = th
    mi = [model.muscle_index(m) for m in muscles]
    truth = muscle_lengths_batch(model, full)[:, mi] - muscle_lengths_batch(model, np.zeros((1, model.dof)))[0, mi]
    res = np.abs(jmm_mod.evaluate(jmm, th) - truth)
    span = truth.max(axis=0) - truth.min(axis=0)

    report = {
        "model": model.name,
        "joints": list(joints),
        "muscles": list(muscles),
        "per_joint_samples": [int(n) for n in dataset.per_joint_samples],
        "ranges_deg": np.rad2deg(ranges).tolist(),
        "sample_count": len(stream),
        "degree": degree,
        "basis_size": len(basis),
        "ridge_relative": ridge,
        "ridge_absolute": info.ridge_absolute,
        "anchored_at_zero": anchor is not None,
        "gram_condition": info.condition,
        "rank": info.rank,
        "wall_time_s": fit_time,
        "grid_residual": {"max": dict(zip(muscles, gmax.tolist())), "rms": dict(zip(muscles, grid_rms.tolist()))},
        "holdout_residual": {
            "poses": holdout,
            "max": dict(zip(muscles, res.max(axis=0).tolist())),
            "mean": dict(zip(muscles, res.mean(axis=0).tolist())),
            "length_range": dict(zip(muscles, span.tolist())),
        },
    }
    if out_file is not None:
        jmm_mod.save_jmm(jmm, out_file)
        report["out_file"] = str(out_file)
    return jmm, report


# --- demos -----------------------------------------------------------------

def demo_groups_path(name: str) -> Path:
    return Path(__file__).parent / "data" / f"{name}_groups.json"


def prepare_demo(name: str, samples: int = 9, degree: int = 4, ridge: float = 1e-10, workers: int = 1):
    """Load a shipped demo model, its groups, and fit one JMM per group in memory."""
    model = load_demo_model(name)
    groups = load_groups(demo_groups_path(name))
    jmms = {}
    for g in groups:
        spec = jmm_mod.DatasetSpec.uniform(model, g.joints, samples)
        stream = jmm_mod.sample_grid(model, spec, g.joints, g.muscles)
        jmms[g.name] = jmm_mod.fit(stream, jmm_mod.enumerate_basis(len(g.joints), degree), ridge=ridge,
                                   workers=workers, anchor=np.zeros(len(g.joints)) if degree > 0 else None)
    group_set = validate(groups, model=model, jmms={g.jmm_ref: jmms[g.name] for g in groups})
    return model, group_set, jmms


def load_experiment_files(model_file, group_file, jmm_files=None):
    """Load model, groups and JMMs from disk and validate them together.

    ``jmm_files`` optionally maps group name to a JMM path, overriding the
    group file's references.
    """
    model = load_demo_model(model_file[5:]) if str(model_file).startswith("demo:") else load_model(model_file)
    groups = load_groups(group_file)
    jmm_files = jmm_files or {}
    by_ref, jmms = {}, {}
    for g in groups:
        path = jmm_files.get(g.name, g.jmm_ref)
        if path is not None and Path(path).exists():
            jmms[g.name] = jmm_mod.load_jmm(path)
            by_ref[g.jmm_ref] = jmms[g.name]
    group_set = validate(groups, model=model, jmms=by_ref)
    return model, group_set, jmms


# --- plots -----------------------------------------------------------------

PLOT_SCRIPT = '''\
"""Overlay true and estimated joint angles from the CSV files next to this script."""
import csv
import glob
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def read(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0]
    data = {c: [float(r[i]) for r in rows[1:]] for i, c in enumerate(cols)}
    return cols, data


def main():
    files = sorted(glob.glob(os.path.join(HERE, "joint_*.csv")))
    fig_err, ax_err = plt.subplots(figsize=(8, 3))
    for path in files:
        joint = os.path.basename(path)[len("joint_"):-len(".csv")]
        cols, data = read(path)
        fig, ax = plt.subplots(figsize=(8, 3))
        ax.plot(data["tick"], data["true"], "o", ms=2, label="true")
        for c in cols:
            if c.startswith("est_"):
                ax.plot(data["tick"], data[c], lw=1, label=c[4:])
        ax.set_xlabel("tick")
        ax.set_ylabel(joint + " [deg]")
        ax.legend(loc="best", fontsize="small")
        fig.tight_layout()
        fig.savefig(os.path.join(HERE, "overlay_" + joint + ".png"), dpi=100)
        plt.close(fig)
        if "error" in data:
            ax_err.plot(data["tick"], data["error"], lw=1, label=joint)
    ax_err.set_xlabel("tick")
    ax_err.set_ylabel("estimate - true [deg]")
    ax_err.legend(loc="best", fontsize="small")
    fig_err.tight_layout()
    fig_err.savefig(os.path.join(HERE, "errors.png"), dpi=100)


if __name__ == "__main__":
    main()
'''


def emit_plots(log: TrajectoryLog, out_dir) -> list:
    """Write one CSV per joint plus ``plot_log.py``; returns the written paths.

    Running the script yields one overlay figure per joint and one error figure.
    """
    if len(log) == 0:
        raise EmptyLog("log has no rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    joints = [c[5:] for c in log.columns if c.startswith("true_")]
    written = []
    tick = log.column("tick")
    for j in joints:
        est_cols = [c for c in log.columns if c.startswith("est_") and c.endswith(f"__{j}")]
        cols = ["tick", "true"] + [f"est_{c[4:].split('__')[0]}" for c in est_cols]
        data = [tick, log.column(f"true_{j}")] + [log.column(c) for c in est_cols]
        if f"err_{j}" in log.columns:
            cols.append("error")
            data.append(log.column(f"err_{j}"))
        path = out / f"joint_{j}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in zip(*data):
                w.writerow([_fmt(x) for x in row])
        written.append(path)
    script = out / "plot_log.py"
    script.write_text(PLOT_SCRIPT)
    written.append(script)
    return written
