"""Batch benchmark CLI.

Subcommands: track (RMSE matrix), ablation-arm (arm-weight sweep), sysid
(parameter recovery from a log), replay (episode playback check), demo
(scripted peg batch), teleop (live websocket service).

Config file: YAML, flat keys, versioned. All keys optional; command-line
flags override file values. Example:

    schema_version: 1
    controllers: [mpc_l1, mpc, ik_pid]   # or a single name
    trajectories: [ellipse, figure8]
    repeats: 3
    seed: 0
    disturbances: benchmark              # none | noisy | benchmark
    duration: 60.0
    out_dir: runs/exp1

Outputs land under out_dir next to a manifest recording the resolved
config, its hash and the package version; the input config file is never
touched. Exit codes: 0 ok, 1 one or more runs failed, 2 bad config.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from .arm_model import ArmParams
from .closed_loop import CONTROLLERS, run_tracking
from .mpc.problem import MpcWeights
from .trajectories import KINDS, make_trajectory

CONFIG_SCHEMA_VERSION = 1
CONFIG_KEYS = ("schema_version", "controllers", "trajectories", "repeats",
               "seed", "disturbances", "duration", "out_dir")
PROFILES = ("none", "noisy", "benchmark")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """One batch request: the controller x trajectory matrix to run."""

    controllers: tuple = ("mpc_l1",)
    trajectories: tuple = ("ellipse",)
    repeats: int = 3
    seed: int = 0
    disturbances: str = "benchmark"
    duration: float = 60.0
    out_dir: str = "runs"

    def __post_init__(self):
        if isinstance(self.controllers, str):
            self.controllers = (self.controllers,)
        if isinstance(self.trajectories, str):
            self.trajectories = (self.trajectories,)
        self.controllers = tuple(self.controllers)
        self.trajectories = tuple(self.trajectories)
        for c in self.controllers:
            if c not in CONTROLLERS:
                raise ConfigError(f"unknown controller {c!r}; "
                                  f"expected one of {CONTROLLERS}")
        for t in self.trajectories:
            if t not in KINDS or t == "file":
                raise ConfigError(f"unknown trajectory kind {t!r}")
        if not isinstance(self.repeats, int) or self.repeats < 1:
            raise ConfigError("repeats must be an integer >= 1")
        if self.disturbances not in PROFILES:
            raise ConfigError(f"unknown disturbance profile "
                              f"{self.disturbances!r}; expected {PROFILES}")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")

    def asdict(self) -> dict:
        d = dataclasses.asdict(self)
        d["controllers"] = list(self.controllers)
        d["trajectories"] = list(self.trajectories)
        return d


def load_config(path: str | None, overrides: dict) -> RunConfig:
    """File first, explicit flags override, dataclass defaults fill in."""
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        unknown = set(raw) - set(CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        ver = raw.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if ver != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"config schema_version {ver} not supported "
                              f"(this build reads {CONFIG_SCHEMA_VERSION})")
        data.update(raw)
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc))


def _code_version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:
        return "unknown"


def write_manifest(out_dir: str, command: str, cfg_dict: dict):
    blob = json.dumps(cfg_dict, sort_keys=True).encode()
    manifest = {"command": command,
                "config": cfg_dict,
                "config_sha256": hashlib.sha256(blob).hexdigest(),
                "code_version": _code_version(),
                "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


# ------------------------------------------------------------------ track

TABLE_FIELDS = ("controller", "trajectory", "runs", "completed",
                "rmse_mean_cm", "rmse_std_cm", "max_err_mean_cm",
                "solve_ms_median")


def _aggregate(results) -> list:
    """Collapse per-seed runs into one table row per controller x kind."""
    rows = []
    keys = []
    for r in results:
        k = (r.controller, r.trajectory)
        if k not in keys:
            keys.append(k)
    for ctrl, traj in keys:
        grp = [r for r in results
               if (r.controller, r.trajectory) == (ctrl, traj)]
        done = [r for r in grp if r.completed]
        rmse = np.array([r.rmse_cm for r in done])
        maxe = np.array([r.max_err_cm for r in done])
        med = [r.solve_ms[0] for r in done if r.solve_ms]
        rows.append({
            "controller": ctrl, "trajectory": traj,
            "runs": len(grp), "completed": len(done),
            "rmse_mean_cm": float(rmse.mean()) if len(done) else float("nan"),
            "rmse_std_cm": (float(rmse.std(ddof=1)) if len(done) > 1
                            else 0.0),
            "max_err_mean_cm": (float(maxe.mean()) if len(done)
                                else float("nan")),
            "solve_ms_median": (float(np.median(med)) if med
                                else float("nan")),
        })
    return rows


def format_table(rows) -> str:
    """Aligned text table; mean +/- std in one column."""
    hdr = ["controller", "trajectory", "runs", "ok", "rmse_cm",
           "max_cm", "solve_ms"]
    body = []
    for r in rows:
        body.append([r["controller"], r["trajectory"], str(r["runs"]),
                     str(r["completed"]),
                     f"{r['rmse_mean_cm']:.3f} +/- {r['rmse_std_cm']:.3f}",
                     f"{r['max_err_mean_cm']:.2f}",
                     f"{r['solve_ms_median']:.1f}"])
    widths = [max(len(hdr[i]), *(len(b[i]) for b in body)) if body
              else len(hdr[i]) for i in range(len(hdr))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(hdr, widths))]
    for b in body:
        lines.append("  ".join(v.rjust(w) if i >= 2 else v.ljust(w)
                               for i, (v, w) in enumerate(zip(b, widths))))
    return "\n".join(lines)


def write_table(rows, out_dir: str):
    with open(os.path.join(out_dir, "rmse_table.csv"), "w",
              newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_FIELDS)
        w.writeheader()
        w.writerows(rows)
    text = format_table(rows)
    with open(os.path.join(out_dir, "rmse_table.txt"), "w") as fh:
        fh.write(text + "\n")
    return text


def export_error_distribution(results, path: str):
    """Long-format per-axis error samples for external plotting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["controller", "trajectory", "axis", "error_m"])
        for r in results:
            if r.err is None:
                continue
            for i, axis in enumerate("xyz"):
                for e in r.err[:, i]:
                    w.writerow([r.controller, r.trajectory, axis,
                                f"{e:.9g}"])


def run_matrix(cfg: RunConfig, weights: MpcWeights | None = None,
               progress=print) -> list:
    results = []
    trace_dir = os.path.join(cfg.out_dir, "traces")
    os.makedirs(trace_dir, exist_ok=True)
    for ctrl in cfg.controllers:
        for traj in cfg.trajectories:
            for i in range(cfg.repeats):
                seed = cfg.seed + i
                t0 = time.monotonic()
                res = run_tracking(ctrl, traj, seed=seed,
                                   duration=cfg.duration,
                                   disturbances=cfg.disturbances,
                                   weights=weights)
                if res.trace is not None:   # a run can fail on tick one
                    res.write_trace(os.path.join(
                        trace_dir, f"{ctrl}_{traj}_seed{seed}.csv"))
                results.append(res)
                status = ("ok" if res.completed
                          else f"FAILED ({res.fail_reason})")
                if progress:
                    progress(f"  {ctrl} {traj} seed={seed}: "
                             f"rmse={res.rmse_cm:.3f} cm {status} "
                             f"[{time.monotonic() - t0:.1f}s]")
    return results


def cmd_track(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    write_manifest(cfg.out_dir, "track", cfg.asdict())
    results = run_matrix(cfg)
    rows = _aggregate(results)
    text = write_table(rows, cfg.out_dir)
    export_error_distribution(
        results, os.path.join(cfg.out_dir, "error_distribution.csv"))
    print(text)
    return 0 if all(r.completed for r in results) else 1


# ----------------------------------------------------------- ablation-arm

def run_ablation_arm_flex(cfg: RunConfig, factor: float = 5.0,
                          rate: float = 8.0, progress=print):
    """Scale the arm-motion penalty and measure the tracking price.

    The probe trajectory is time-warped by `rate` so the reference demands
    a large fraction of the base's lateral authority; at gentle speeds the
    base alone tracks well and arm agility never shows up in the error.
    A stiffer arm weight then makes the whole platform chase the reference
    and the EE error grows; the ratio quantifies how much.
    """
    kind = cfg.trajectories[0]
    probe = make_trajectory(kind, duration=cfg.duration, rate=rate)
    heavy = MpcWeights()
    heavy.joint_cmd = heavy.joint_cmd * factor
    ratios, pairs = [], []
    for i in range(cfg.repeats):
        seed = cfg.seed + i
        base = run_tracking("mpc_l1", kind, seed=seed,
                            duration=cfg.duration,
                            disturbances=cfg.disturbances, trajectory=probe)
        slow = run_tracking("mpc_l1", kind, seed=seed,
                            duration=cfg.duration,
                            disturbances=cfg.disturbances, trajectory=probe,
                            weights=heavy)
        pairs.append((base, slow))
        if base.completed and slow.completed:
            ratios.append(slow.rmse_cm / base.rmse_cm)
        if progress:
            progress(f"  seed={seed}: default={base.rmse_cm:.3f} cm, "
                     f"x{factor:g}={slow.rmse_cm:.3f} cm")
    ratios = np.array(ratios)
    report = {"factor": factor, "trajectory": kind, "rate": rate,
              "seeds": [cfg.seed + i for i in range(cfg.repeats)],
              "ratio_mean": float(ratios.mean()) if len(ratios) else
              float("nan"),
              "ratio_std": (float(ratios.std(ddof=1)) if len(ratios) > 1
                            else 0.0),
              "default_rmse_cm": [p[0].rmse_cm for p in pairs],
              "scaled_rmse_cm": [p[1].rmse_cm for p in pairs]}
    return report, pairs


def cmd_ablation(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    man = cfg.asdict()
    man["factor"] = args.factor
    man["rate"] = args.rate
    write_manifest(cfg.out_dir, "ablation-arm", man)
    report, pairs = run_ablation_arm_flex(cfg, factor=args.factor,
                                          rate=args.rate)
    with open(os.path.join(cfg.out_dir, "ablation_arm.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    print(f"arm weight x{args.factor:g} on {report['trajectory']}: "
          f"rmse ratio {report['ratio_mean']:.3f} "
          f"+/- {report['ratio_std']:.3f} over {cfg.repeats} seeds")
    ok = all(a.completed and b.completed for a, b in pairs)
    return 0 if ok else 1


# ------------------------------------------------------------------ sysid

def _perturbed_arm(seed: int) -> ArmParams:
    # plausible assembly errors; joint-1 offset stays pinned (gauge choice)
    rng = np.random.default_rng(seed)
    arm = ArmParams()
    for i, j in enumerate(arm.joints):
        j.d += rng.uniform(-0.005, 0.005)
        j.a += rng.uniform(-0.005, 0.005)
        j.alpha += rng.uniform(-0.01, 0.01)
        if i > 0:
            j.theta_offset += rng.uniform(-0.01, 0.01)
    return arm


def cmd_sysid(args) -> int:
    from .sysid import (ExcitationError, MotionLog, format_report,
                        identify_beta, identify_dh, make_excitation_log)

    os.makedirs(args.out_dir, exist_ok=True)
    write_manifest(args.out_dir, "sysid",
                   {"trace": args.trace, "seed": args.seed})
    if args.trace is not None:
        log = MotionLog.from_trace(args.trace)
        init = ArmParams()
    else:
        # synthetic check: excite a nominal arm, start the fit from a
        # perturbed guess, confirm the pipeline recovers the geometry
        log = make_excitation_log(ArmParams(), duration=6.0, seed=args.seed)
        init = _perturbed_arm(args.seed + 1)
    try:
        arm_hat, report = identify_dh(log, init)
        beta, beta_report = identify_beta(log, full_output=True)
    except ExcitationError as exc:
        print(f"identification failed: {exc}", file=sys.stderr)
        return 1
    params = {"schema_version": CONFIG_SCHEMA_VERSION,
              "dh": [[float(j.theta_offset), float(j.d), float(j.a),
                      float(j.alpha)] for j in arm_hat.joints],
              "beta": [float(b) for b in beta]}
    with open(os.path.join(args.out_dir, "identified_params.yaml"),
              "w") as fh:
        yaml.safe_dump(params, fh, sort_keys=False)
    lines = [format_report(arm_hat, report),
             "servo beta: " + "  ".join(f"{b:.4f}" for b in beta),
             "beta 95% rel CI: " + "  ".join(
                 f"{c:.4f}" for c in beta_report["rel_ci"])]
    if beta_report["wide_ci"]:
        lines.append("warning: at least one beta interval is wide; "
                     "log excitation is marginal")
    text = "\n".join(lines)
    with open(os.path.join(args.out_dir, "sysid_report.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return 0


# ------------------------------------------------- replay / demo / teleop

def cmd_replay(args) -> int:
    from .teleop.episodes import EpisodeError, replay_episode

    try:
        run, dev_cm = replay_episode(args.episode)
    except (EpisodeError, OSError) as exc:
        print(f"cannot replay: {exc}", file=sys.stderr)
        return 2
    status = "ok" if run.completed else f"FAILED ({run.fail_reason})"
    print(f"replay {status}: tracking rmse {run.rmse_cm:.3f} cm, "
          f"deviation from recording {dev_cm:.3f} cm")
    return 0 if run.completed else 1


def cmd_demo(args) -> int:
    from .teleop.episodes import write_episode
    from .teleop.scripted import peg_batch, success_rate

    os.makedirs(args.out_dir, exist_ok=True)
    write_manifest(args.out_dir, "demo",
                   {"scenes": args.scenes, "seed": args.seed,
                    "controller": args.controller,
                    "disturbances": args.disturbances})
    results = peg_batch(n_scenes=args.scenes, base_seed=args.seed,
                        controller=args.controller,
                        disturbances=args.disturbances,
                        record=args.record,
                        progress=lambda i, r: print(
                            f"  scene {i} (seed {r.scene.seed}): "
                            + ("ok" if r.success else r.reason)))
    with open(os.path.join(args.out_dir, "peg_results.csv"), "w",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "hole_x", "hole_y", "success", "reason",
                    "max_depth_cm", "min_clearance_mm", "rmse_cm"])
        for r in results:
            w.writerow([r.scene.seed, f"{r.scene.hole_p[0]:.4f}",
                        f"{r.scene.hole_p[1]:.4f}", int(r.success),
                        r.reason, f"{100 * r.max_depth:.2f}",
                        f"{1e3 * r.min_clearance:.2f}",
                        f"{r.rmse_cm:.3f}"])
    if args.record:
        for r in results:
            if r.episode is not None and len(r.episode):
                write_episode(os.path.join(
                    args.out_dir,
                    f"peg_seed{r.scene.seed}.episode.jsonl"), r.episode)
    rate = success_rate(results)
    print(f"peg-in-hole: {int(round(rate * len(results)))}/{len(results)} "
          f"scenes succeeded ({100 * rate:.0f}%)")
    return 0


def cmd_teleop(args) -> int:
    import asyncio

    from .teleop.service import TeleopService

    svc = TeleopService(seed=args.seed, controller=args.controller,
                        disturbances=args.disturbances,
                        time_scale=args.time_scale,
                        record_dir=args.record_dir)
    print(f"teleop service on ws://{args.host}:{args.port} "
          f"(controller={args.controller}, profile={args.disturbances})")
    try:
        asyncio.run(svc.serve(host=args.host, port=args.port))
    except KeyboardInterrupt:
        pass
    return 0


# -------------------------------------------------------------------- CLI

def _overrides(args) -> dict:
    keys = ("controllers", "trajectories", "repeats", "seed",
            "disturbances", "duration", "out_dir")
    out = {}
    for k in keys:
        v = getattr(args, k, None)
        if v is None:
            continue
        if k in ("controllers", "trajectories") and isinstance(v, str):
            v = tuple(s.strip() for s in v.split(",") if s.strip())
        out[k] = v
    return out


def _add_matrix_flags(p):
    p.add_argument("--config", help="YAML config file (see module help)")
    p.add_argument("--controllers",
                   help=f"comma list from {', '.join(CONTROLLERS)}")
    p.add_argument("--trajectories",
                   help="comma list from setpoint, ellipse, figure8")
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--disturbances", choices=PROFILES)
    p.add_argument("--duration", type=float)
    p.add_argument("--out-dir", dest="out_dir")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="uamctl",
        description="aerial manipulator benchmark and teleop harness")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="closed-loop RMSE matrix")
    _add_matrix_flags(p)
    p.set_defaults(fn=cmd_track)

    p = sub.add_parser("ablation-arm", help="arm-weight ablation")
    _add_matrix_flags(p)
    p.add_argument("--factor", type=float, default=5.0,
                   help="arm penalty multiplier (default 5)")
    p.add_argument("--rate", type=float, default=8.0,
                   help="probe trajectory time-warp (default 8)")
    p.set_defaults(fn=cmd_ablation)

    p = sub.add_parser("sysid", help="identify arm geometry and servo poles")
    p.add_argument("--trace", help="closed-loop trace CSV to ingest "
                   "(default: synthetic excitation run)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", dest="out_dir", default="runs/sysid")
    p.set_defaults(fn=cmd_sysid)

    p = sub.add_parser("replay", help="re-execute a recorded episode")
    p.add_argument("episode", help="path to .episode.jsonl")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("demo", help="scripted peg-in-hole batch")
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--controller", default="mpc_l1", choices=CONTROLLERS)
    p.add_argument("--disturbances", default="benchmark", choices=PROFILES)
    p.add_argument("--record", action="store_true",
                   help="write one episode file per scene")
    p.add_argument("--out-dir", dest="out_dir", default="runs/demo")
    p.set_defaults(fn=cmd_demo)

    p = sub.add_parser("teleop", help="run the live teleop service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--controller", default="mpc_l1", choices=CONTROLLERS)
    p.add_argument("--disturbances", default="none", choices=PROFILES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--record-dir", dest="record_dir")
    p.add_argument("--time-scale", dest="time_scale", type=float,
                   default=1.0)
    p.set_defaults(fn=cmd_teleop)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
