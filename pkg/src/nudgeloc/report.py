"""Result export: JSON-lines frame streams, CSV tables, and matplotlib figures.

frames.jsonl carries only deterministic fields so a re-run with the same
seed reproduces it byte-identically; per-frame wall times go to a separate
timing.csv next to it.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def write_frames_jsonl(frames, path) -> None:
    with open(path, "w") as fh:
        for f in frames:
            fh.write(json.dumps(f.to_json_dict(), sort_keys=True) + "\n")


def write_timing_csv(frames, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "wall_ms"])
        for f in frames:
            w.writerow([f.frame, f"{f.wall_ms:.3f}"])


def write_results_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_trial_dir(report, trial_dir) -> None:
    """frames.jsonl + timing.csv + results.json for one trial."""
    trial_dir = Path(trial_dir)
    trial_dir.mkdir(parents=True, exist_ok=True)
    write_frames_jsonl(report.frames, trial_dir / "frames.jsonl")
    write_timing_csv(report.frames, trial_dir / "timing.csv")
    write_results_json(
        {"variant": report.variant, "meta": report.meta, "summary": report.summary},
        trial_dir / "results.json",
    )


def write_summary_csv(aggregate: dict, path) -> None:
    """One row per (phase, variant) with the headline statistics."""
    rows = []
    for variant, a in aggregate.get("global", {}).items():
        rows.append(
            {
                "phase": "global",
                "variant": variant,
                "median_final_error_m": a["final_error"]["median"],
                "iqr_final_error_m": a["final_error"]["q3"] - a["final_error"]["q1"],
                "median_convergence_frame": a["median_convergence_frame"],
                "mean_step_hz": a["mean_step_hz"],
                "trials": a["trials"],
            }
        )
    for variant, a in aggregate.get("tracking", {}).items():
        rows.append(
            {
                "phase": "tracking",
                "variant": variant,
                "mean_position_error_m": a["mean_position_error"],
                "mean_yaw_error_deg": a["mean_yaw_error_deg"],
                "trials": a["trials"],
            }
        )
    if "kidnap" in aggregate:
        rows.append(
            {
                "phase": "kidnap",
                "variant": "nudged",
                "recovered": aggregate["kidnap"]["recovered"],
                "trials": aggregate["kidnap"]["trials"],
            }
        )
    keys: list = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def write_plotdata_csv(reports_by_phase: dict, path) -> None:
    """Long-format per-trial data for external plotting tools."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["phase", "variant", "trial", "final_position_error", "mean_position_error",
             "mean_yaw_error_deg", "convergence_frame", "mean_step_hz"]
        )
        for phase, by_variant in reports_by_phase.items():
            for variant, reports in by_variant.items():
                for i, r in enumerate(reports):
                    s = r.summary
                    w.writerow(
                        [
                            phase,
                            variant,
                            i,
                            f"{s['final_position_error']:.6f}",
                            f"{s['mean_position_error']:.6f}",
                            f"{s['mean_abs_rpy_deg'][0]:.6f}",
                            s["convergence_frame"] if s["convergence_frame"] is not None else "",
                            f"{s['mean_step_hz']:.6f}",
                        ]
                    )


def _boxplot(ax, data: dict, ylabel: str):
    labels = list(data.keys())
    ax.boxplot([data[k] for k in labels], tick_labels=labels, showfliers=True)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)


def render_figures(aggregate: dict, reports_by_phase: dict, fig_dir) -> list:
    """Box plots and convergence curves mirroring the delimited outputs."""
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []

    glob = reports_by_phase.get("global", {})
    if glob:
        fig, ax = plt.subplots(figsize=(6, 4))
        _boxplot(ax, {v: [r.summary["final_position_error"] for r in rs] for v, rs in glob.items()},
                 "final position error (m)")
        ax.set_title("Global localization: final error by variant")
        fig.tight_layout()
        p = fig_dir / "final_error_box.png"
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)

        fig, ax = plt.subplots(figsize=(6, 4))
        conv = {
            v: [
                r.summary["convergence_frame"]
                if r.summary["convergence_frame"] is not None
                else r.summary["n_frames"]
                for r in rs
            ]
            for v, rs in glob.items()
        }
        _boxplot(ax, conv, "convergence frame")
        ax.set_title("Frames until sustained convergence")
        fig.tight_layout()
        p = fig_dir / "convergence_box.png"
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)

        fig, ax = plt.subplots(figsize=(6, 4))
        for v, rs in glob.items():
            errs = np.array([[f.position_error for f in r.frames] for r in rs])
            ax.plot(np.median(errs, axis=0), label=v)
            ax.fill_between(
                np.arange(errs.shape[1]),
                np.percentile(errs, 25, axis=0),
                np.percentile(errs, 75, axis=0),
                alpha=0.2,
            )
        ax.set_xlabel("frame")
        ax.set_ylabel("position error (m)")
        ax.set_title("Median error per frame (IQR band)")
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        p = fig_dir / "error_vs_frame.png"
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)

        fig, ax = plt.subplots(figsize=(6, 4))
        hz = {v: 1000.0 * len(rs) / sum(sum(f.wall_ms for f in r.frames) / r.summary["n_frames"] for r in rs)
              for v, rs in glob.items()}
        ax.bar(list(hz.keys()), list(hz.values()))
        ax.set_ylabel("mean step rate (Hz)")
        ax.set_title("Filter step rate by variant")
        ax.grid(True, axis="y", alpha=0.3)
        fig.tight_layout()
        p = fig_dir / "step_rate.png"
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)

    track = reports_by_phase.get("tracking", {})
    if track:
        fig, axes = plt.subplots(1, 2, figsize=(9, 4))
        _boxplot(axes[0], {v: [r.summary["mean_position_error"] for r in rs] for v, rs in track.items()},
                 "mean position error (m)")
        _boxplot(axes[1], {v: [r.summary["mean_abs_rpy_deg"][0] for r in rs] for v, rs in track.items()},
                 "mean yaw error (deg)")
        fig.suptitle("Pose tracking by variant")
        fig.tight_layout()
        p = fig_dir / "tracking_box.png"
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)

    kid = reports_by_phase.get("kidnap", {}).get("nudged", [])
    if kid:
        fig, ax = plt.subplots(figsize=(6, 4))
        errs = np.array([[f.position_error for f in r.frames] for r in kid])
        ax.plot(np.median(errs, axis=0), label="median")
        ax.fill_between(
            np.arange(errs.shape[1]),
            np.percentile(errs, 25, axis=0),
            np.percentile(errs, 75, axis=0),
            alpha=0.2,
        )
        k = kid[0].meta.get("teleport_frame")
        if k is not None:
            ax.axvline(k, color="r", linestyle="--", label="teleport")
        ax.set_xlabel("frame")
        ax.set_ylabel("position error (m)")
        ax.set_title("Kidnap recovery")
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        p = fig_dir / "kidnap_recovery.png"
        fig.savefig(p, dpi=130)
        plt.close(fig)
        written.append(p)

    return written
