"""Command line entry point: ``tendon-jae {build-jmm,run,plot,validate-groups}``.

All angles on the command line and in config/log files are degrees.
Exit codes: 0 success, 1 invalid input, 2 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import jmm as jmm_mod
from .errors import TendonJAEError, ValidationFailed
from .estimator import EKFConfig
from .grouping import collect_violations, load_groups
from .harness import (EstimationFailed, NoiseSpec, TrajectoryLog, TrajectorySpec, build_jmm, emit_plots,
                      load_experiment_files, run_experiment)
from .model import load_demo_model, load_model

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _floats(text):
    if text is None or isinstance(text, list):
        return text
    return [float(x) for x in str(text).split(",") if x.strip()]


def _names(text):
    if text is None or isinstance(text, list):
        return text
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _load_model_arg(spec):
    spec = str(spec)
    return load_demo_model(spec[5:]) if spec.startswith("demo:") else load_model(spec)


def _emit(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


# --- build-jmm -------------------------------------------------------------

def cmd_build_jmm(args):
    model = _load_model_arg(args.model)
    joints, muscles = _names(args.joints), _names(args.muscles)
    if args.group_file:
        g = {g.name: g for g in load_groups(args.group_file)}[args.group]
        joints = joints or list(g.joints)
        muscles = muscles or list(g.muscles)
    if not joints or not muscles:
        raise ValueError("need --joints and --muscles (or --group-file with --group)")
    counts = [int(x) for x in _floats(args.samples)]
    if len(counts) == 1:
        counts = counts * len(joints)
    if args.ranges:
        r = _floats(args.ranges)
        ranges = tuple(zip(np.deg2rad(r[0::2]), np.deg2rad(r[1::2])))
    else:
        ranges = tuple((model.joints[model.joint_index(j)].lower_limit, model.joints[model.joint_index(j)].upper_limit)
                       for j in joints)
    spec = jmm_mod.DatasetSpec(tuple(counts), ranges)
    _, report = build_jmm(model, joints, muscles, spec, degree=args.degree, ridge=args.ridge, out_file=args.out,
                          workers=args.workers, holdout=args.holdout, seed=args.seed,
                          anchor_zero=not args.no_anchor, dry_run=args.dry_run)
    _emit(report, args.report)
    return EXIT_OK


# --- run -------------------------------------------------------------------

RUN_DEFAULTS = {
    "mode": "absolute",
    "trajectory": "random_walk",
    "ticks": 1000,
    "step_sigma": 0.5,
    "seed": 0,
    "start": None,
    "amplitude": 20.0,
    "period": 200.0,
    "replay_path": None,
    "measurement_sigma": 0.0,
    "calibration_offset": None,
    "length_bias": 0.0,
    "process_noise_q": 0.5**2,
    "observation_noise_r": 0.5e-3**2,
    "initial_covariance_p0": 10.0**2,
    "pinv_tolerance": 1e-8,
    "overwrite": True,
    "relative_h_at": "pred",
    "initial_estimate": None,
    "jmm": None,
    "out": None,
    "summary": None,
}


def _run_settings(args):
    """Merge defaults < config file < explicit flags."""
    settings = dict(RUN_DEFAULTS)
    base = Path(".")
    if args.config:
        base = Path(args.config).parent
        with open(args.config) as fh:
            doc = json.load(fh)
        unknown = set(doc) - set(settings) - {"model", "groups"}
        if unknown:
            raise ValueError(f"{args.config}: unknown keys {sorted(unknown)}")
        settings.update(doc)
        for key in ("model", "groups", "replay_path"):
            v = settings.get(key)
            if v and not str(v).startswith("demo:") and not Path(v).is_absolute():
                settings[key] = str(base / v)
        if isinstance(settings.get("jmm"), dict):
            settings["jmm"] = {k: str(base / v) if not Path(v).is_absolute() else v
                               for k, v in settings["jmm"].items()}
    for key, value in vars(args).items():
        if key in ("config", "func", "command") or value is None:
            continue
        settings[key] = value
    if isinstance(settings.get("jmm"), list):
        settings["jmm"] = dict(item.split("=", 1) for item in settings["jmm"])
    for key in ("model", "groups"):
        if not settings.get(key):
            raise ValueError(f"missing required setting {key!r}")
    return settings


def cmd_run(args):
    s = _run_settings(args)
    model, group_set, jmms = load_experiment_files(s["model"], s["groups"], s["jmm"])
    missing = [g.name for g in group_set.groups if g.name not in jmms]
    if missing:
        raise ValueError(f"no JMM file found for groups {missing}")
    deg = lambda v: None if v is None else tuple(np.deg2rad(_floats(v)))
    traj = TrajectorySpec(kind=s["trajectory"], ticks=int(s["ticks"]), step_sigma=float(np.deg2rad(s["step_sigma"])),
                          seed=int(s["seed"]), start=deg(s["start"]), amplitude=float(np.deg2rad(s["amplitude"])),
                          period=float(s["period"]), replay_path=s["replay_path"])
    noise = NoiseSpec(measurement_sigma=float(s["measurement_sigma"]), calibration_offset=deg(s["calibration_offset"]),
                      length_bias=float(s["length_bias"]))
    ekf = EKFConfig(process_noise_q=float(np.deg2rad(1.0) ** 2 * s["process_noise_q"]),
                    observation_noise_r=float(s["observation_noise_r"]),
                    initial_covariance_p0=float(np.deg2rad(1.0) ** 2 * s["initial_covariance_p0"]),
                    pinv_tolerance=float(s["pinv_tolerance"]), mode=s["mode"], overwrite=bool(s["overwrite"]),
                    relative_h_at=s["relative_h_at"])
    init = deg(s["initial_estimate"])
    try:
        result = run_experiment(model, group_set, jmms, traj, noise, ekf, initial_estimate=init)
        code = EXIT_OK
    except EstimationFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        result = exc.result
        code = EXIT_RUNTIME
    if s["out"]:
        result.log.to_csv(s["out"])
    _emit(result.summary, s["summary"])
    return code


# --- plot / validate -------------------------------------------------------

def cmd_plot(args):
    log = TrajectoryLog.from_csv(args.log)
    for p in emit_plots(log, args.out_dir):
        print(p)
    return EXIT_OK


def cmd_validate_groups(args):
    groups = load_groups(args.groups)
    model = _load_model_arg(args.model) if args.model else None
    jmms = None
    if args.check_jmms:
        jmms = {g.jmm_ref: jmm_mod.load_jmm(g.jmm_ref) for g in groups if g.jmm_ref and Path(g.jmm_ref).exists()}
    violations = collect_violations(groups, args.dof_cap, model, jmms)
    _emit({"valid": not violations, "violations": [v.as_dict() for v in violations]})
    return EXIT_OK if not violations else EXIT_INVALID


def build_parser():
    p = argparse.ArgumentParser(prog="tendon-jae", description="Joint-angle estimation experiments for tendon-driven chains.")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-jmm", help="grid-sample a model and fit a polynomial JMM")
    b.add_argument("--model", required=True, help="model JSON path or demo:NAME")
    b.add_argument("--joints", help="comma-separated joint names (JMM variable order)")
    b.add_argument("--muscles", help="comma-separated muscle names")
    b.add_argument("--group-file", help="take joints/muscles from a group file ...")
    b.add_argument("--group", help="... using this group")
    b.add_argument("--samples", default="9", help="N for all joints, or one N per joint, comma-separated")
    b.add_argument("--ranges", help="lo,hi pairs in degrees per joint (default: joint limits)")
    b.add_argument("--degree", type=int, default=4)
    b.add_argument("--ridge", type=float, default=1e-10, help="ridge relative to mean Gram diagonal")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--holdout", type=int, default=1000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--no-anchor", action="store_true", help="do not pin the fit to zero at the zero pose")
    b.add_argument("--dry-run", action="store_true", help="only count samples and basis functions")
    b.add_argument("--out", help="JMM output path")
    b.add_argument("--report", help="fit report path (default stdout)")
    b.set_defaults(func=cmd_build_jmm)

    r = sub.add_parser("run", help="simulate a trajectory and run the estimator")
    r.add_argument("--config", help="experiment JSON; flags override its values")
    r.add_argument("--model")
    r.add_argument("--groups")
    r.add_argument("--jmm", action="append", metavar="GROUP=PATH", help="override a group's JMM file")
    r.add_argument("--mode", choices=["absolute", "relative"])
    r.add_argument("--trajectory", choices=["random_walk", "sinusoid", "replay_file"])
    r.add_argument("--ticks", type=int)
    r.add_argument("--step-sigma", type=float, help="random-walk step std [deg/tick]")
    r.add_argument("--seed", type=int)
    r.add_argument("--start", help="start pose [deg], comma-separated (default: calibration pose)")
    r.add_argument("--amplitude", type=float, help="sinusoid amplitude [deg]")
    r.add_argument("--period", type=float, help="sinusoid period [ticks]")
    r.add_argument("--replay-path")
    r.add_argument("--measurement-sigma", type=float, help="std of noise on each length increment [m]")
    r.add_argument("--calibration-offset", help="pose at which encoders were zeroed [deg]")
    r.add_argument("--length-bias", type=float, help="constant added to absolute lengths [m]")
    r.add_argument("--process-noise-q", type=float, help="[deg^2]")
    r.add_argument("--observation-noise-r", type=float, help="[m^2]")
    r.add_argument("--initial-covariance-p0", type=float, help="[deg^2]")
    r.add_argument("--pinv-tolerance", type=float)
    r.add_argument("--no-overwrite", dest="overwrite", action="store_const", const=False)
    r.add_argument("--relative-h-at", choices=["pred", "prev"])
    r.add_argument("--initial-estimate", help="initial estimate [deg] (default zeros)")
    r.add_argument("--out", help="CSV log path")
    r.add_argument("--summary", help="summary JSON path (default stdout)")
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plot", help="write per-joint CSVs and a plotting script from a log")
    pl.add_argument("--log", required=True)
    pl.add_argument("--out-dir", required=True)
    pl.set_defaults(func=cmd_plot)

    v = sub.add_parser("validate-groups", help="check a group file")
    v.add_argument("--groups", required=True)
    v.add_argument("--model")
    v.add_argument("--check-jmms", action="store_true")
    v.add_argument("--dof-cap", type=int, default=8)
    v.set_defaults(func=cmd_validate_groups)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationFailed as exc:
        _emit({"valid": False, "violations": [v.as_dict() for v in exc.violations]})
        return EXIT_INVALID
    except (TendonJAEError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
