"""Config file handling: defaults, YAML overlay, and object builders.

The defaults describe the desk-scale benchmark setup: a 5 x 4 x 1.8 m room,
a 120x96 high-resolution render setting paired with the 80x64 global
setting, a dense 2502-anchor database and a sparse 504-anchor one.
"""

from __future__ import annotations

import copy
from pathlib import Path

import numpy as np
import yaml

from .harness import SuiteConfig, TrajectoryParams
from .particle_filter import FilterConfig
from .scene import ArtifactSpec, CameraIntrinsics, SceneModel
from .vpr import GridSpec

DEFAULT_CONFIG: dict = {
    "scene": {"preset": "default", "seed": 7, "extents": [5.0, 4.0, 1.8]},
    "artifacts": {
        "count": 10,
        "radius_range": [0.12, 0.30],
        "opacity_range": [0.30, 0.60],
        "color_jitter": 0.25,
        "seed": 0,
    },
    "camera": {
        "hfov_deg": 100.0,
        "k_plus": [120, 96],  # width, height; desk-scale tracking resolution
        "k_minus": [80, 64],
    },
    "filter": {
        "n_global": 400,
        "n_track": 200,
        "m_nudge": 16,
        "lam": 5.0,
        "beta": 1.0,
        "alpha_lik": 10.0,
        "sigma_t": 0.02,
        "sigma_r_deg": 1.0,
        "track_init_pos_std": [0.2, 0.2, 0.1],
        "track_init_rpy_std_deg": [5.0, 1.0, 1.0],
        "kidnap_ratio": 1.5,
        "kidnap_patience": 3,
        "resample_jitter_frac": 0.1,
    },
    "anchors": {
        "z": 0.9,  # anchor camera height (mid-room)
        "margin": 0.4,
        "full": {"nx": 14, "ny": 10, "nyaw": 18, "limit": 2502},
        "small": {"nx": 6, "ny": 6, "nyaw": 14},
    },
    "trajectory": {
        "speed": 0.05,
        "n_waypoints": 6,
        "z_range": [0.5, 1.3],
        "margin": 0.5,
        "yaw_rate_max_deg": 6.0,
        "pitch_amp_deg": 3.0,
        "roll_amp_deg": 2.0,
        "wobble_period": 40,
    },
    "odometry": {"sigma_t": 0.01, "sigma_r_deg": 0.5},
    "observation": {"noise_sigma": 0.01},
    "suite": {
        "seed": 0,
        "trials": 20,
        "global_frames": 100,
        "tracking_frames": 40,
        "kidnap_trials": 20,
        "teleport_frame": 60,
        "kidnap_tail": 52,
        "kidnap_distance": 3.0,
        "calibrate_lambda": True,
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None) -> dict:
    """Defaults overlaid with a YAML (or JSON) file when given."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    with open(path) as fh:
        user = yaml.safe_load(fh) or {}
    return _deep_merge(DEFAULT_CONFIG, user)


def build_scene(cfg: dict) -> SceneModel:
    s = cfg["scene"]
    if s.get("preset", "default") == "default" and "wall_textures" not in s:
        return SceneModel.default(seed=s.get("seed", 7), extents=s.get("extents", [5, 4, 1.8]))
    return SceneModel.from_dict(s)


def build_artifacts(cfg: dict) -> ArtifactSpec | None:
    a = cfg.get("artifacts")
    if a is None or a.get("count", 0) == 0:
        return None
    return ArtifactSpec.from_dict(a)


def build_cameras(cfg: dict) -> tuple[CameraIntrinsics, CameraIntrinsics]:
    c = cfg["camera"]
    fov = np.deg2rad(c["hfov_deg"])
    kp = CameraIntrinsics(c["k_plus"][0], c["k_plus"][1], fov)
    km = CameraIntrinsics(c["k_minus"][0], c["k_minus"][1], fov)
    return kp, km


def build_filter_config(cfg: dict) -> FilterConfig:
    f = cfg["filter"]
    kp, km = build_cameras(cfg)
    return FilterConfig(
        n_global=f["n_global"],
        n_track=f["n_track"],
        m_nudge=f["m_nudge"],
        lam=f["lam"],
        beta=f["beta"],
        alpha_lik=f["alpha_lik"],
        k_plus=kp,
        k_minus=km,
        sigma_t=f["sigma_t"],
        sigma_r=np.deg2rad(f["sigma_r_deg"]),
        track_init_pos_std=tuple(f["track_init_pos_std"]),
        track_init_rpy_std_deg=tuple(f["track_init_rpy_std_deg"]),
        kidnap_ratio=f["kidnap_ratio"],
        kidnap_patience=f["kidnap_patience"],
        resample_jitter_frac=f["resample_jitter_frac"],
    )


def build_grid(cfg: dict, which: str) -> GridSpec:
    a = cfg["anchors"]
    g = a[which]
    extents = cfg["scene"].get("extents", [5.0, 4.0, 1.8])
    m = a.get("margin", 0.4)
    return GridSpec(
        nx=g["nx"],
        ny=g["ny"],
        nyaw=g["nyaw"],
        x_range=tuple(g.get("x_range", (m, extents[0] - m))),
        y_range=tuple(g.get("y_range", (m, extents[1] - m))),
        z=g.get("z", a.get("z", 0.9)),
        limit=g.get("limit"),
    )


def build_trajectory_params(cfg: dict, n_frames: int) -> TrajectoryParams:
    t = cfg["trajectory"]
    return TrajectoryParams(
        n_frames=n_frames,
        speed=t["speed"],
        n_waypoints=t["n_waypoints"],
        waypoints=t.get("waypoints"),
        z_range=tuple(t["z_range"]),
        margin=t["margin"],
        yaw_rate_max=np.deg2rad(t["yaw_rate_max_deg"]),
        pitch_amp=np.deg2rad(t["pitch_amp_deg"]),
        roll_amp=np.deg2rad(t["roll_amp_deg"]),
        wobble_period=t["wobble_period"],
    )


def build_suite_config(cfg: dict) -> SuiteConfig:
    s = cfg["suite"]
    o = cfg["odometry"]
    return SuiteConfig(
        seed=s["seed"],
        trials=s["trials"],
        global_frames=s["global_frames"],
        tracking_frames=s["tracking_frames"],
        kidnap_trials=s["kidnap_trials"],
        teleport_frame=s["teleport_frame"],
        kidnap_tail=s["kidnap_tail"],
        kidnap_distance=s["kidnap_distance"],
        obs_sigma=cfg["observation"]["noise_sigma"],
        odom_sigma_t=o["sigma_t"],
        odom_sigma_r=np.deg2rad(o["sigma_r_deg"]),
        calibrate=s.get("calibrate_lambda", True),
        trajectory=build_trajectory_params(cfg, s["global_frames"]),
    )


def anchor_db_path(out_dir, which: str) -> Path:
    return Path(out_dir) / f"anchors_{which}.db"
