"""Place recognition: compact image descriptors, anchor databases, retrieval.

The descriptor is a 368-dim unit vector: a mean-centered 16x20 grayscale
thumbnail (320 values) concatenated with per-cell-normalized 8-bin gradient
orientation histograms over a 2x3 cell grid (48 values), L2-normalized.
Anchor databases hold one descriptor/pose pair per grid sample, rendered
map-side (artifacts on) at the low-resolution camera setting.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import cv2
import numpy as np

from .geometry import Pose, Twist, exp_map
from .metrics import downsample_area, luma
from .scene import ArtifactSpec, CameraIntrinsics, SceneModel, render_batch

WORK_SHAPE = (64, 80)  # gradient stage resolution (h, w)
THUMB_SHAPE = (16, 20)
HIST_CELLS = (2, 3)
HIST_BINS = 8
DESCRIPTOR_DIM = THUMB_SHAPE[0] * THUMB_SHAPE[1] + HIST_CELLS[0] * HIST_CELLS[1] * HIST_BINS
# relative energy of the gradient-histogram block against the thumbnail block;
# each cell histogram is direction-normalized and the block rescaled by the
# thumbnail norm so brightness-offset and contrast-scale invariance survive
HIST_WEIGHT = 0.6
# thumbnail pre-blur (x, y) sigmas in work-image pixels; the horizontal blur
# buys tolerance to the image shift a small yaw offset causes
THUMB_BLUR = (3.0, 1.4)

_RENDER_CHUNK = 256


@dataclass(frozen=True)
class Descriptor:
    """Unit-norm feature vector; is_null marks degenerate (zero-signal) inputs."""

    v: np.ndarray
    is_null: bool = False

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64).reshape(-1))


def encode(img: np.ndarray) -> Descriptor:
    """Deterministic descriptor of an image with at least 16x20 pixels.

    Invariant to uniform brightness offsets (mean-centered thumbnail,
    offset-free gradients) and to overall contrast scaling (L2
    normalization).  A zero-variance image yields a flagged null descriptor.
    """
    if img.shape[0] < THUMB_SHAPE[0] or img.shape[1] < THUMB_SHAPE[1]:
        raise ValueError(f"image {img.shape[:2]} smaller than {THUMB_SHAPE}")
    g = luma(img)
    if g.shape != WORK_SHAPE:
        g = downsample_area(g.astype(np.float32), WORK_SHAPE).astype(np.float64)
    # low-pass before the coarse resize so fine texture cannot alias into
    # the thumbnail; the thumbnail should carry scene layout, not moire
    blurred = cv2.GaussianBlur(g.astype(np.float32), (0, 0), sigmaX=THUMB_BLUR[0], sigmaY=THUMB_BLUR[1])
    thumb = downsample_area(blurred, THUMB_SHAPE).astype(np.float64)
    thumb -= thumb.mean()

    gy, gx = np.gradient(g)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)
    bins = np.clip(((ang + np.pi) * (HIST_BINS / (2.0 * np.pi))).astype(np.int64), 0, HIST_BINS - 1)
    rows = (np.arange(g.shape[0]) * HIST_CELLS[0]) // g.shape[0]
    cols = (np.arange(g.shape[1]) * HIST_CELLS[1]) // g.shape[1]
    cell = rows[:, None] * HIST_CELLS[1] + cols[None, :]
    hist = np.bincount(
        (cell * HIST_BINS + bins).ravel(),
        weights=mag.ravel(),
        minlength=HIST_CELLS[0] * HIST_CELLS[1] * HIST_BINS,
    ).reshape(HIST_CELLS[0] * HIST_CELLS[1], HIST_BINS)
    # per-cell orientation distributions, not magnitudes: robust to shading
    cell_norms = np.linalg.norm(hist, axis=1, keepdims=True)
    hist = (hist / np.maximum(cell_norms, 1e-9)).ravel()

    thumb_norm = np.linalg.norm(thumb)
    hist_norm = np.linalg.norm(hist)
    if hist_norm > 0.0:
        hist = hist * (HIST_WEIGHT * max(thumb_norm, 1e-6) / hist_norm)
    v = np.concatenate([thumb.ravel(), hist])
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        return Descriptor(np.zeros(DESCRIPTOR_DIM), is_null=True)
    return Descriptor(v / norm)


def cosine_distance(a: Descriptor, b: Descriptor) -> float:
    """1 - cos similarity in [0, 2]; null descriptors are maximally distant."""
    if a.is_null or b.is_null:
        return 2.0
    return float(np.clip(1.0 - a.v @ b.v, 0.0, 2.0))


@dataclass(frozen=True)
class GridSpec:
    """Uniform planar x/y/yaw sampling lattice for anchor placement.

    The optional `limit` truncates the row-major sample list to an exact
    anchor count that the per-axis counts cannot factor.  Anchors sit at a
    fixed height `z`, passed through the twist so the planar position picks
    up the left-Jacobian coupling of the yaw.
    """

    nx: int
    ny: int
    nyaw: int
    x_range: tuple = (0.4, 4.6)
    y_range: tuple = (0.4, 3.6)
    z: float = 0.9
    limit: int | None = None

    def __post_init__(self):
        if min(self.nx, self.ny, self.nyaw) < 1:
            raise ValueError("grid counts must be >= 1")
        full = self.nx * self.ny * self.nyaw
        if self.limit is not None and not 1 <= self.limit <= full:
            raise ValueError(f"limit {self.limit} outside 1..{full}")

    @staticmethod
    def _axis(lo: float, hi: float, n: int) -> np.ndarray:
        if n == 1:
            return np.array([(lo + hi) / 2.0])
        return np.linspace(lo, hi, n)

    def yaws(self) -> np.ndarray:
        y = np.linspace(0.0, 2.0 * np.pi, self.nyaw, endpoint=False)
        wrapped = np.mod(y + np.pi, 2.0 * np.pi) - np.pi
        # keep strictly inside the principal branch for the twist constructor
        return np.clip(wrapped, -np.pi + 1e-9, np.pi - 1e-9)

    def samples(self) -> np.ndarray:
        """(N, 3) rows of (x, y, yaw), row-major over x, y, yaw."""
        xs = self._axis(*self.x_range, self.nx)
        ys = self._axis(*self.y_range, self.ny)
        ws = self.yaws()
        out = np.array([(x, y, w) for x in xs for y in ys for w in ws])
        if self.limit is not None:
            out = out[: self.limit]
        return out

    @property
    def count(self) -> int:
        return self.limit if self.limit is not None else self.nx * self.ny * self.nyaw

    def spacing(self) -> tuple[float, float]:
        dx = (self.x_range[1] - self.x_range[0]) / max(self.nx - 1, 1)
        dy = (self.y_range[1] - self.y_range[0]) / max(self.ny - 1, 1)
        return dx, dy

    def to_dict(self) -> dict:
        return {
            "nx": self.nx,
            "ny": self.ny,
            "nyaw": self.nyaw,
            "x_range": list(self.x_range),
            "y_range": list(self.y_range),
            "z": self.z,
            "limit": self.limit,
        }

    @staticmethod
    def from_dict(d: dict) -> "GridSpec":
        kwargs = dict(d)
        for key in ("x_range", "y_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return GridSpec(**kwargs)


@dataclass
class AnchorDatabase:
    """Per-anchor descriptors and poses, plus the grid that generated them."""

    descriptors: np.ndarray  # (N, D) float64, unit rows (or zero when null)
    poses: list
    grid: GridSpec
    scene_seed: int
    null_flags: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.null_flags is None:
            self.null_flags = np.zeros(len(self.poses), dtype=bool)
        if self.descriptors.shape[0] != len(self.poses):
            raise ValueError("descriptor/pose count mismatch")

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    def save(self, path) -> None:
        header = {
            "format": "anchordb-v1",
            "dim": int(self.dim),
            "count": len(self),
            "scene_seed": int(self.scene_seed),
            "grid": self.grid.to_dict(),
        }
        flats = np.stack([p.flat() for p in self.poses]) if self.poses else np.zeros((0, 12))
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            fh.write(np.ascontiguousarray(self.descriptors, dtype=np.float64).tobytes())
            fh.write(np.ascontiguousarray(flats, dtype=np.float64).tobytes())
            fh.write(self.null_flags.astype(np.uint8).tobytes())

    @staticmethod
    def load(path) -> "AnchorDatabase":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode())
            if header.get("format") != "anchordb-v1":
                raise ValueError(f"unrecognized database file {path}")
            n, d = header["count"], header["dim"]
            desc = np.frombuffer(fh.read(8 * n * d), dtype=np.float64).reshape(n, d).copy()
            flats = np.frombuffer(fh.read(8 * n * 12), dtype=np.float64).reshape(n, 12)
            flags = np.frombuffer(fh.read(n), dtype=np.uint8).astype(bool)
        poses = [Pose.from_flat(f) for f in flats]
        return AnchorDatabase(desc, poses, GridSpec.from_dict(header["grid"]), header["scene_seed"], flags)


def anchor_pose(x: float, y: float, z: float, yaw: float) -> Pose:
    """Exponential of the planar twist [x, y, z, yaw, 0, 0]."""
    return exp_map(Twist([x, y, z], [yaw, 0.0, 0.0]))


def build_anchor_db(
    scene: SceneModel,
    grid: GridSpec,
    k_render: CameraIntrinsics,
    artifacts: ArtifactSpec | None = None,
) -> AnchorDatabase:
    """Render, encode, and store every grid sample (map-side, artifacts on)."""
    if not (
        0.0 <= grid.x_range[0] <= grid.x_range[1] <= scene.extents[0]
        and 0.0 <= grid.y_range[0] <= grid.y_range[1] <= scene.extents[1]
        and 0.0 <= grid.z <= scene.extents[2]
    ):
        raise ValueError("grid extents fall outside the room")
    samples = grid.samples()
    poses = [anchor_pose(x, y, grid.z, w) for x, y, w in samples]
    desc = np.zeros((len(poses), DESCRIPTOR_DIM))
    flags = np.zeros(len(poses), dtype=bool)
    for start in range(0, len(poses), _RENDER_CHUNK):
        chunk = poses[start : start + _RENDER_CHUNK]
        Rs = np.stack([p.R for p in chunk])
        ts = np.stack([p.t for p in chunk])
        imgs = render_batch(scene, Rs, ts, k_render, artifacts)
        for i, img in enumerate(imgs):
            d = encode(img)
            desc[start + i] = d.v
            flags[start + i] = d.is_null
    return AnchorDatabase(desc, poses, grid, scene.seed, flags)


class RetrievalHit(NamedTuple):
    index: int
    pose: Pose
    distance: float


def retrieve_top_m(db: AnchorDatabase, query: Descriptor, m: int) -> list[RetrievalHit]:
    """Exact brute-force top-m by ascending cosine distance, ties by index.

    Requesting more entries than stored warns and returns the full ranking.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    n = len(db)
    if n == 0:
        raise ValueError("empty anchor database")
    if m > n:
        warnings.warn(f"m={m} exceeds database size {n}; returning the full ranking", RuntimeWarning)
        m = n
    if query.is_null:
        dists = np.full(n, 2.0)
    else:
        dists = np.clip(1.0 - db.descriptors @ query.v, 0.0, 2.0)
        dists[db.null_flags] = 2.0
    order = np.argsort(dists, kind="stable")[:m]
    return [RetrievalHit(int(i), db.poses[i], float(dists[i])) for i in order]
