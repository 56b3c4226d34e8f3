"""Nudged adaptive particle filter for render-and-compare localization.

One iteration: motion prediction, SSIM-based likelihood weighting against
renders at the mode's resolution, retrieval-driven nudging, mode-dependent
resampling (systematic while localizing globally, Gaussian-approximate while
tracking), then a dispersion-based mode switch.  While tracking, retrieved
anchors are evaluated only to watch for kidnapping; a sustained high anchor
likelihood forces the filter back to global mode around the offending
anchors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .geometry import (
    Pose,
    PoseGaussian,
    Twist,
    compose,
    euler_rpy,
    exp_map,
    rotation_angle,
    rotation_rpy,
    sample_gaussian_pose,
    weighted_mean,
    weighted_variance,
)
from .metrics import downsample_area, ssim_batch
from .metrics import ssim  # noqa: F401  (re-exported: the filter's similarity metric)
from .scene import ArtifactSpec, CameraIntrinsics, SceneModel, render_batch
from .vpr import AnchorDatabase, encode, retrieve_top_m


class Mode(str, Enum):
    GLOBAL = "global"
    TRACKING = "tracking"


@dataclass
class Particle:
    weight: float
    pose: Pose


@dataclass
class ParticleSet:
    particles: list
    mode: Mode = Mode.GLOBAL
    frame: int = 0
    kidnap_streak: int = 0

    def __len__(self) -> int:
        return len(self.particles)

    def weights(self) -> np.ndarray:
        return np.array([p.weight for p in self.particles])

    def poses(self) -> list:
        return [p.pose for p in self.particles]

    def pairs(self) -> list:
        return [(p.weight, p.pose) for p in self.particles]

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.stack([p.pose.R for p in self.particles]),
            np.stack([p.pose.t for p in self.particles]),
        )


def _default_k_plus() -> CameraIntrinsics:
    return CameraIntrinsics(800, 680, np.deg2rad(100.0))


def _default_k_minus() -> CameraIntrinsics:
    return CameraIntrinsics(80, 64, np.deg2rad(100.0))


@dataclass
class FilterConfig:
    """Run parameters; angles in radians unless a field name says degrees."""

    n_global: int = 400
    n_track: int = 200
    m_nudge: int = 16
    lam: float = 5.0  # dispersion threshold for the tracking switch
    beta: float = 1.0  # rad^2 -> m^2 weight inside the dispersion scalar
    alpha_lik: float = 10.0  # likelihood sharpness: exp(alpha * ssim)
    k_plus: CameraIntrinsics = field(default_factory=_default_k_plus)
    k_minus: CameraIntrinsics = field(default_factory=_default_k_minus)
    sigma_t: float = 0.02  # motion-proposal translation noise (m)
    sigma_r: float = np.deg2rad(1.0)  # motion-proposal rotation noise (rad)
    track_init_pos_std: tuple = (0.2, 0.2, 0.1)
    track_init_rpy_std_deg: tuple = (5.0, 1.0, 1.0)  # yaw, pitch, roll
    kidnap_ratio: float = 1.5
    kidnap_patience: int = 3
    resample_jitter_frac: float = 0.1
    cov_floor: float = 1e-6
    adaptive: bool = True  # mode switching on; off = plain bootstrap filter

    def __post_init__(self):
        if min(self.n_global, self.n_track) < 1:
            raise ValueError("particle counts must be >= 1")
        if self.m_nudge < 0:
            raise ValueError("m_nudge must be >= 0")
        if self.lam <= 0:
            raise ValueError("lam must be > 0")
        if min(self.sigma_t, self.sigma_r) < 0 or min(self.track_init_pos_std) < 0:
            raise ValueError("noise scales must be >= 0")


@dataclass
class MeasureStats:
    """Per-particle similarities/likelihoods and the pre-normalization scale."""

    sims: np.ndarray
    liks: np.ndarray
    mean_lik: float  # sum_i w_prev_i * lik_i


@dataclass
class NudgeReport:
    evaluated: list = field(default_factory=list)  # anchor db indices, retrieval order
    distances: list = field(default_factory=list)
    sims: list = field(default_factory=list)
    liks: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    threshold: float = 0.0  # pre-nudge weighted-mean likelihood
    mean_lik_pre: float = 0.0
    mean_lik_post: float = 0.0
    best_ratio: float = 0.0

    @property
    def empty(self) -> bool:
        return not self.evaluated


def init_global(cfg: FilterConfig, extents, rng: np.random.Generator) -> ParticleSet:
    """Uniform prior over the room: positions in the box, yaw in [-pi, pi)."""
    extents = np.asarray(extents, dtype=np.float64)
    pos = rng.uniform(0.0, 1.0, (cfg.n_global, 3)) * extents
    yaw = rng.uniform(-np.pi, np.pi, cfg.n_global)
    w = 1.0 / cfg.n_global
    parts = [Particle(w, Pose(rotation_rpy(yaw[i]), pos[i])) for i in range(cfg.n_global)]
    return ParticleSet(parts, mode=Mode.GLOBAL)


def init_tracking(cfg: FilterConfig, center: Pose, rng: np.random.Generator) -> ParticleSet:
    """Gaussian prior around a pose estimate using the tracking init scales."""
    n = cfg.n_track
    dt = rng.normal(0.0, cfg.track_init_pos_std, (n, 3))
    std_rad = np.deg2rad(cfg.track_init_rpy_std_deg)
    drpy = rng.normal(0.0, std_rad, (n, 3))
    y0, p0, r0 = euler_rpy(center.R)
    parts = [
        Particle(
            1.0 / n,
            Pose(rotation_rpy(y0 + drpy[i, 0], p0 + drpy[i, 1], r0 + drpy[i, 2]), center.t + dt[i]),
        )
        for i in range(n)
    ]
    return ParticleSet(parts, mode=Mode.TRACKING)


def predict(pset: ParticleSet, odom: Pose, cfg: FilterConfig, rng: np.random.Generator) -> ParticleSet:
    """Right-compose each pose with the odometry increment plus tangent noise."""
    n = len(pset)
    du = rng.normal(0.0, cfg.sigma_t, (n, 3))
    dphi = rng.normal(0.0, cfg.sigma_r, (n, 3))
    parts = [
        Particle(p.weight, compose(p.pose, compose(odom, exp_map(Twist(du[i], dphi[i])))))
        for i, p in enumerate(pset.particles)
    ]
    return replace(pset, particles=parts)


def measure(
    pset: ParticleSet,
    observation: np.ndarray,
    scene: SceneModel,
    k: CameraIntrinsics,
    cfg: FilterConfig,
    artifacts: ArtifactSpec | None = None,
) -> tuple[ParticleSet, MeasureStats]:
    """Reweight particles by exp(alpha * SSIM(observation, render)) and normalize.

    Renders are map-side (artifacts composited); the observation is
    area-downsampled to the render resolution when needed.
    """
    obs_k = downsample_area(observation, (k.height, k.width))
    Rs, ts = pset.stacked()
    renders = render_batch(scene, Rs, ts, k, artifacts)
    sims = ssim_batch(obs_k, renders)
    liks = np.exp(cfg.alpha_lik * sims)
    w_prev = pset.weights()
    w_prev = w_prev / w_prev.sum()
    unnorm = w_prev * liks
    z = float(unnorm.sum())
    w_new = unnorm / z
    parts = [Particle(float(w_new[i]), p.pose) for i, p in enumerate(pset.particles)]
    return replace(pset, particles=parts), MeasureStats(sims, liks, z)


def nudge(
    pset: ParticleSet,
    observation: np.ndarray,
    db: AnchorDatabase,
    scene: SceneModel,
    cfg: FilterConfig,
    k: CameraIntrinsics,
    rng: np.random.Generator,
    stats: MeasureStats,
    artifacts: ArtifactSpec | None = None,
) -> tuple[ParticleSet, NudgeReport]:
    """Evaluate retrieved anchors; in global mode, union accepted ones into the set.

    An anchor is accepted when its likelihood strictly exceeds the pre-nudge
    weighted-mean likelihood (same pre-normalization scale as the particle
    weights).  While tracking, anchors are evaluated for the report only and
    never enter the resampled distribution.
    """
    if cfg.m_nudge == 0 or db is None or len(db) == 0:
        return pset, NudgeReport()
    hits = retrieve_top_m(db, encode(observation), min(cfg.m_nudge, len(db)))
    Rs = np.stack([h.pose.R for h in hits])
    ts = np.stack([h.pose.t for h in hits])
    obs_k = downsample_area(observation, (k.height, k.width))
    renders = render_batch(scene, Rs, ts, k, artifacts)
    sims = ssim_batch(obs_k, renders)
    liks = np.exp(cfg.alpha_lik * sims)
    threshold = stats.mean_lik
    accepted = [i for i in range(len(hits)) if liks[i] > threshold]

    n = len(pset)
    a = len(accepted)
    # computed so each accepted term is individually non-negative in floats
    mean_post = threshold + sum((liks[i] - threshold) for i in accepted) / (n + a)
    report = NudgeReport(
        evaluated=[h.index for h in hits],
        distances=[h.distance for h in hits],
        sims=[float(s) for s in sims],
        liks=[float(l) for l in liks],
        accepted=[hits[i].index for i in accepted],
        threshold=threshold,
        mean_lik_pre=threshold,
        mean_lik_post=float(mean_post),
        best_ratio=float(liks.max() / threshold),
    )
    if pset.mode == Mode.TRACKING or a == 0:
        return pset, report

    # union: existing normalized weights stay proportional; each accepted
    # anchor enters at (lik / N) on the pre-normalization scale, i.e. at
    # lik / (N * threshold) relative to the normalized set.
    anchor_w = np.array([liks[i] for i in accepted]) / (n * threshold)
    total = 1.0 + anchor_w.sum()
    parts = [Particle(p.weight / total, p.pose) for p in pset.particles]
    parts += [Particle(float(anchor_w[j] / total), hits[i].pose) for j, i in enumerate(accepted)]
    return replace(pset, particles=parts), report


def systematic_indices(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling: one uniform offset, n evenly spaced positions."""
    w = weights / weights.sum()
    positions = (rng.uniform() + np.arange(n)) / n
    return np.minimum(np.searchsorted(np.cumsum(w), positions), len(w) - 1)


def resample_global(
    pset: ParticleSet, n: int, rng: np.random.Generator, cfg: FilterConfig
) -> ParticleSet:
    """Systematic resampling to n particles plus small tangent jitter."""
    idx = systematic_indices(pset.weights(), n, rng)
    du = rng.normal(0.0, cfg.resample_jitter_frac * cfg.sigma_t, (n, 3))
    dphi = rng.normal(0.0, cfg.resample_jitter_frac * cfg.sigma_r, (n, 3))
    parts = [
        Particle(1.0 / n, compose(pset.particles[j].pose, exp_map(Twist(du[i], dphi[i]))))
        for i, j in enumerate(idx)
    ]
    return replace(pset, particles=parts)


def resample_tracking(
    pset: ParticleSet, n: int, rng: np.random.Generator, cfg: FilterConfig
) -> ParticleSet:
    """Gaussian-approximate resampling from the weighted mean and covariance."""
    mean = weighted_mean(pset.pairs())
    g = weighted_variance(pset.pairs(), mean)
    if g.dispersion(cfg.beta) < cfg.cov_floor:
        g = PoseGaussian(
            mean,
            g.cov_t + cfg.cov_floor * np.eye(3),
            g.cov_r + cfg.cov_floor * np.eye(3),
        )
    parts = [Particle(1.0 / n, sample_gaussian_pose(g, rng)) for _ in range(n)]
    return replace(pset, particles=parts)


@dataclass
class FrameRecord:
    """Per-frame output of one filter step."""

    frame: int
    mode: str  # mode used for this frame's measurement
    estimate: Pose
    sigma2: float
    wall_ms: float = 0.0
    position_error: float | None = None
    rotation_error_deg: float | None = None
    error_rpy_deg: tuple | None = None  # absolute yaw/pitch/roll errors
    nudge_evaluated: list = field(default_factory=list)
    nudge_accepted: list = field(default_factory=list)
    nudge_mean_lik_pre: float | None = None
    nudge_mean_lik_post: float | None = None
    nudge_best_ratio: float | None = None
    kidnap: bool = False

    def to_json_dict(self) -> dict:
        """Deterministic payload for JSON-lines export (timing kept separate)."""
        d = {
            "frame": self.frame,
            "mode": self.mode,
            "estimate": [float(x) for x in self.estimate.flat()],
            "sigma2": self.sigma2,
            "position_error": self.position_error,
            "rotation_error_deg": self.rotation_error_deg,
            "error_rpy_deg": list(self.error_rpy_deg) if self.error_rpy_deg is not None else None,
            "nudge_accepted": list(self.nudge_accepted),
            "nudge_evaluated": list(self.nudge_evaluated),
            "nudge_mean_lik_pre": self.nudge_mean_lik_pre,
            "nudge_mean_lik_post": self.nudge_mean_lik_post,
            "nudge_best_ratio": self.nudge_best_ratio,
            "kidnap": self.kidnap,
        }
        return d


def _pose_errors(estimate: Pose, truth: Pose):
    rel = truth.R.T @ estimate.R
    yaw, pitch, roll = euler_rpy(rel)
    return (
        float(np.linalg.norm(estimate.t - truth.t)),
        float(np.rad2deg(rotation_angle(rel))),
        tuple(abs(np.rad2deg(a)) for a in (yaw, pitch, roll)),
    )


def _kidnap_reinit(
    report: NudgeReport,
    db: AnchorDatabase,
    cfg: FilterConfig,
    extents,
    rng: np.random.Generator,
) -> ParticleSet:
    """Recovery prior: half the particles around offending anchors, half uniform."""
    offenders = [
        db.poses[idx]
        for idx, lik in zip(report.evaluated, report.liks)
        if lik > cfg.kidnap_ratio * report.threshold
    ]
    if not offenders:
        best = int(np.argmax(report.liks))
        offenders = [db.poses[report.evaluated[best]]]
    n = cfg.n_global
    n_anchor = n // 2
    std_rad = np.deg2rad(cfg.track_init_rpy_std_deg)
    parts = []
    for i in range(n_anchor):
        center = offenders[i % len(offenders)]
        dt = rng.normal(0.0, cfg.track_init_pos_std, 3)
        drpy = rng.normal(0.0, std_rad, 3)
        y0, p0, r0 = euler_rpy(center.R)
        pose = Pose(rotation_rpy(y0 + drpy[0], p0 + drpy[1], r0 + drpy[2]), center.t + dt)
        parts.append(Particle(1.0 / n, pose))
    extents = np.asarray(extents, dtype=np.float64)
    pos = rng.uniform(0.0, 1.0, (n - n_anchor, 3)) * extents
    yaw = rng.uniform(-np.pi, np.pi, n - n_anchor)
    parts += [Particle(1.0 / n, Pose(rotation_rpy(yaw[i]), pos[i])) for i in range(n - n_anchor)]
    return ParticleSet(parts, mode=Mode.GLOBAL)


def step(
    pset: ParticleSet,
    observation: np.ndarray,
    odom: Pose,
    db: AnchorDatabase | None,
    scene: SceneModel,
    cfg: FilterConfig,
    rng: np.random.Generator,
    artifacts: ArtifactSpec | None = None,
    ground_truth: Pose | None = None,
) -> tuple[ParticleSet, FrameRecord]:
    """One full filter iteration; returns the next particle set and its record."""
    t0 = time.perf_counter()
    mode = pset.mode
    k = cfg.k_minus if mode == Mode.GLOBAL else cfg.k_plus

    pred = predict(pset, odom, cfg, rng)
    weighted, stats = measure(pred, observation, scene, k, cfg, artifacts)
    if cfg.m_nudge > 0 and db is not None:
        xi_plus, report = nudge(weighted, observation, db, scene, cfg, k, rng, stats, artifacts)
    else:
        xi_plus, report = weighted, NudgeReport()

    estimate = weighted_mean(xi_plus.pairs())

    if mode == Mode.GLOBAL:
        resampled = resample_global(xi_plus, cfg.n_global, rng, cfg)
    else:
        resampled = resample_tracking(xi_plus, cfg.n_track, rng, cfg)

    post_mean = weighted_mean(resampled.pairs())
    sigma2 = weighted_variance(resampled.pairs(), post_mean).dispersion(cfg.beta)

    if cfg.adaptive:
        next_mode = Mode.TRACKING if sigma2 <= cfg.lam else Mode.GLOBAL
    else:
        next_mode = mode

    kidnapped = False
    streak = 0
    if cfg.adaptive and mode == Mode.TRACKING and not report.empty:
        if report.best_ratio > cfg.kidnap_ratio:
            streak = pset.kidnap_streak + 1
        if streak >= cfg.kidnap_patience:
            kidnapped = True
            next_mode = Mode.GLOBAL
            resampled = _kidnap_reinit(report, db, cfg, scene.extents, rng)
            streak = 0

    resampled.mode = next_mode
    resampled.frame = pset.frame + 1
    resampled.kidnap_streak = streak

    record = FrameRecord(
        frame=pset.frame,
        mode=mode.value,
        estimate=estimate,
        sigma2=float(sigma2),
        wall_ms=(time.perf_counter() - t0) * 1e3,
        nudge_evaluated=report.evaluated,
        nudge_accepted=report.accepted,
        nudge_mean_lik_pre=report.mean_lik_pre if not report.empty else None,
        nudge_mean_lik_post=report.mean_lik_post if not report.empty else None,
        nudge_best_ratio=report.best_ratio if not report.empty else None,
        kidnap=kidnapped,
    )
    if ground_truth is not None:
        record.position_error, record.rotation_error_deg, record.error_rpy_deg = _pose_errors(
            estimate, ground_truth
        )
    return resampled, record
