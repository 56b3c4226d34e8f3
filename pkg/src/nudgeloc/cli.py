"""Command-line interface.

Subcommands: build-anchors, run-global, run-track, run-full, ablate,
render-preview.  All runs are seed-deterministic; a trial re-run with the
same config, seed, and trial index reproduces its frames.jsonl byte for
byte.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import report as report_mod
from .geometry import Pose, rotation_rpy
from .harness import (
    SuiteConfig,
    make_trial_inputs,
    run_experiment_suite,
    run_kidnap_trial,
    run_tracking_trial,
    run_trial,
    fresh_filter_rng,
    synth_trajectory,
    teleported_trajectory,
    trial_rngs,
    calibrate_lambda,
    noisy_odometry,
    TrialInputs,
    _PHASE_GLOBAL,
    _PHASE_TRACKING,
)
from .scene import CameraIntrinsics, observe, render, save_image
from .vpr import AnchorDatabase, build_anchor_db


def _get_dbs(cfg: dict, scene, artifacts, cache_dir: Path, which=("full", "small")) -> dict:
    """Build (or load cached) anchor databases rendered at the global setting."""
    _, km = cfgmod.build_cameras(cfg)
    cache_dir.mkdir(parents=True, exist_ok=True)
    dbs = {}
    for name in which:
        path = cfgmod.anchor_db_path(cache_dir, name)
        if path.exists():
            dbs[name] = AnchorDatabase.load(path)
        else:
            dbs[name] = build_anchor_db(scene, cfgmod.build_grid(cfg, name), km, artifacts)
            dbs[name].save(path)
    return dbs


def _resolved_lambda(cfg: dict, scene, artifacts, dbs, suite: SuiteConfig, fcfg):
    if not suite.calibrate:
        return fcfg
    lam = calibrate_lambda(
        scene, dbs["full"], fcfg, artifacts,
        suite.obs_sigma, suite.odom_sigma_t, suite.odom_sigma_r,
        seed=suite.seed * 1000 + 7,
    )
    return replace(fcfg, lam=lam)


def _single_trial_setup(args, phase: int, n_frames: int):
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        cfg["suite"]["seed"] = args.seed
    scene = cfgmod.build_scene(cfg)
    artifacts = cfgmod.build_artifacts(cfg)
    fcfg = cfgmod.build_filter_config(cfg)
    suite = cfgmod.build_suite_config(cfg)
    out = Path(args.out)
    dbs = _get_dbs(cfg, scene, artifacts, out)
    fcfg = _resolved_lambda(cfg, scene, artifacts, dbs, suite, fcfg)
    params = cfgmod.build_trajectory_params(cfg, n_frames)
    inputs_rng, filt_seed = trial_rngs(suite.seed, phase, args.trial)
    traj = synth_trajectory(params, scene.extents, inputs_rng)
    inputs = make_trial_inputs(
        scene, traj, fcfg, suite.obs_sigma, suite.odom_sigma_t, suite.odom_sigma_r, inputs_rng
    )
    return cfg, scene, artifacts, fcfg, suite, out, dbs, inputs, filt_seed


def cmd_build_anchors(args) -> int:
    cfg = cfgmod.load_config(args.config)
    scene = cfgmod.build_scene(cfg)
    artifacts = cfgmod.build_artifacts(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, km = cfgmod.build_cameras(cfg)
    for name in args.which:
        grid = cfgmod.build_grid(cfg, name)
        db = build_anchor_db(scene, grid, km, artifacts)
        path = cfgmod.anchor_db_path(out, name)
        db.save(path)
        print(f"{name}: {len(db)} anchors -> {path}")
    return 0


def cmd_run_global(args) -> int:
    _, scene, artifacts, fcfg, suite, out, dbs, inputs, filt_seed = _single_trial_setup(
        args, _PHASE_GLOBAL, args.frames
    )
    db = dbs.get({"nudged": "full", "attenuated": "small", "bpf": None}[args.variant])
    rep = run_trial(
        scene, db, fcfg, inputs, fresh_filter_rng(filt_seed), args.variant, artifacts,
        meta={"phase": "global", "trial": args.trial, "seed": suite.seed},
    )
    trial_dir = out / "trials" / "global" / f"t{args.trial:02d}" / args.variant
    report_mod.write_trial_dir(rep, trial_dir)
    s = rep.summary
    print(
        f"{args.variant}: final error {s['final_position_error']:.3f} m, "
        f"converged at {s['convergence_frame']}, {s['mean_step_hz']:.2f} Hz"
    )
    print(f"outputs in {trial_dir}")
    return 0


def cmd_run_track(args) -> int:
    _, scene, artifacts, fcfg, suite, out, dbs, inputs, filt_seed = _single_trial_setup(
        args, _PHASE_TRACKING, args.frames
    )
    db = dbs.get({"nudged": "full", "attenuated": "small", "bpf": None}[args.variant])
    rep = run_tracking_trial(
        scene, db, fcfg, inputs, fresh_filter_rng(filt_seed), args.variant, artifacts
    )
    rep.meta.update({"trial": args.trial, "seed": suite.seed})
    trial_dir = out / "trials" / "tracking" / f"t{args.trial:02d}" / args.variant
    report_mod.write_trial_dir(rep, trial_dir)
    s = rep.summary
    print(
        f"{args.variant}: mean error {s['mean_position_error']:.3f} m, "
        f"yaw {s['mean_abs_rpy_deg'][0]:.2f} deg"
    )
    print(f"outputs in {trial_dir}")
    return 0


def cmd_run_full(args) -> int:
    cfg, scene, artifacts, fcfg, suite, out, dbs, inputs, filt_seed = _single_trial_setup(
        args, _PHASE_GLOBAL, args.frames
    )
    if args.kidnap_frame is not None:
        # rebuild inputs with a teleported ground truth but continuous odometry
        inputs_rng, filt_seed = trial_rngs(suite.seed, _PHASE_GLOBAL, args.trial)
        params = cfgmod.build_trajectory_params(cfg, args.frames)
        base = synth_trajectory(params, scene.extents, inputs_rng)
        gt = teleported_trajectory(base, args.kidnap_frame, suite.kidnap_distance,
                                   scene.extents, inputs_rng)
        odometry = [Pose.identity()] + noisy_odometry(
            base, suite.odom_sigma_t, suite.odom_sigma_r, inputs_rng
        )
        observations = [
            observe(scene, p, fcfg.k_plus, suite.obs_sigma, inputs_rng) for p in gt.poses
        ]
        inputs = TrialInputs(gt, odometry, observations)
    rep = run_trial(
        scene, dbs["full"], fcfg, inputs, fresh_filter_rng(filt_seed), "nudged", artifacts,
        meta={"phase": "full", "trial": args.trial, "seed": suite.seed,
              "kidnap_frame": args.kidnap_frame},
    )
    trial_dir = out / "trials" / "full" / f"t{args.trial:02d}"
    report_mod.write_trial_dir(rep, trial_dir)
    s = rep.summary
    print(
        f"full run: final error {s['final_position_error']:.3f} m, "
        f"converged at {s['convergence_frame']}, {s['mean_step_hz']:.2f} Hz"
    )
    print(f"outputs in {trial_dir}")
    return 0


def cmd_ablate(args) -> int:
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        cfg["suite"]["seed"] = args.seed
    if args.trials is not None:
        cfg["suite"]["trials"] = args.trials
        cfg["suite"]["kidnap_trials"] = args.trials
    scene = cfgmod.build_scene(cfg)
    artifacts = cfgmod.build_artifacts(cfg)
    fcfg = cfgmod.build_filter_config(cfg)
    suite = cfgmod.build_suite_config(cfg)
    suite = replace(
        suite,
        run_tracking=not args.skip_tracking,
        run_kidnap=not args.skip_kidnap,
    )
    out = Path(args.out)
    dbs = _get_dbs(cfg, scene, artifacts, out)
    result = run_experiment_suite(scene, artifacts, fcfg, dbs, suite, out, progress=print)
    print(f"lambda = {result['lambda']:.4f}")
    failed = 0
    for g in result["gates"]:
        status = "PASS" if g["passed"] else "FAIL"
        if not g["passed"]:
            failed += 1
        print(f"[{status}] {g['name']}: {g['detail']}")
    print(f"outputs in {out}")
    if args.no_gates:
        return 0
    return 1 if failed else 0


def cmd_render_preview(args) -> int:
    cfg = cfgmod.load_config(args.config)
    scene = cfgmod.build_scene(cfg)
    artifacts = cfgmod.build_artifacts(cfg) if args.artifacts else None
    vals = [float(x) for x in args.pose.split(",")]
    if len(vals) not in (4, 6):
        raise SystemExit("--pose expects x,y,z,yaw_deg[,pitch_deg,roll_deg]")
    x, y, z, yaw = vals[:4]
    pitch, roll = (vals[4], vals[5]) if len(vals) == 6 else (0.0, 0.0)
    pose = Pose(rotation_rpy(np.deg2rad(yaw), np.deg2rad(pitch), np.deg2rad(roll)), [x, y, z])
    if args.resolution:
        w, h = (int(v) for v in args.resolution.split("x"))
        k = CameraIntrinsics(w, h, np.deg2rad(cfg["camera"]["hfov_deg"]))
    else:
        k, _ = cfgmod.build_cameras(cfg)
    img = render(scene, pose, k, artifacts)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_image(img, args.out)
    print(f"wrote {k.width}x{k.height} preview to {args.out}")
    return 0


def _add_common(p, trial=True):
    p.add_argument("--config", default=None, help="YAML config overlaying the defaults")
    p.add_argument("--seed", type=int, default=None, help="suite seed override")
    p.add_argument("--out", default="out", help="output directory")
    if trial:
        p.add_argument("--trial", type=int, default=0, help="trial index (rng isolation)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nudgeloc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-anchors", help="render and store anchor databases")
    b.add_argument("--config", default=None)
    b.add_argument("--out", default="out")
    b.add_argument("--which", nargs="+", default=["full", "small"], choices=["full", "small"])
    b.set_defaults(func=cmd_build_anchors)

    g = sub.add_parser("run-global", help="one global-localization trial")
    _add_common(g)
    g.add_argument("--variant", default="nudged", choices=["nudged", "bpf", "attenuated"])
    g.add_argument("--frames", type=int, default=100)
    g.set_defaults(func=cmd_run_global)

    t = sub.add_parser("run-track", help="one pose-tracking trial")
    _add_common(t)
    t.add_argument("--variant", default="nudged", choices=["nudged", "bpf"])
    t.add_argument("--frames", type=int, default=40)
    t.set_defaults(func=cmd_run_track)

    f = sub.add_parser("run-full", help="long adaptive run, optional mid-run kidnap")
    _add_common(f)
    f.add_argument("--frames", type=int, default=150)
    f.add_argument("--kidnap-frame", type=int, default=None)
    f.set_defaults(func=cmd_run_full)

    a = sub.add_parser("ablate", help="paired-trial experiment suite with variants")
    _add_common(a, trial=False)
    a.add_argument("--trials", type=int, default=None)
    a.add_argument("--skip-tracking", action="store_true")
    a.add_argument("--skip-kidnap", action="store_true")
    a.add_argument("--no-gates", action="store_true", help="always exit 0")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("render-preview", help="render one pose to an image file")
    r.add_argument("--config", default=None)
    r.add_argument("--out", default="preview.png")
    r.add_argument("--pose", required=True, help="x,y,z,yaw_deg[,pitch_deg,roll_deg]")
    r.add_argument("--resolution", default=None, help="WxH, defaults to the high-res setting")
    r.add_argument("--artifacts", action="store_true", help="composite map-side floaters")
    r.set_defaults(func=cmd_render_preview)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
