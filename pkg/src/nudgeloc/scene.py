"""Deterministic renderable environment: a textured room with props.

A pinhole raycaster plays the role of the renderable map: every pose maps to
an image, bit-exactly reproducible for identical inputs.  Map-side renders
can composite semi-transparent blobs over the geometry to emulate the
spurious floaters a reconstructed radiance map would contain; observations
never include them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _raycast
from .geometry import Pose

_DIRS_CACHE: dict[tuple, np.ndarray] = {}


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: resolution in pixels and horizontal field of view (rad).

    Pixels are square; the vertical FOV follows from the aspect ratio.
    """

    width: int
    height: int
    horizontal_fov: float

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("resolution must be at least 8x8")
        if not 0.0 < self.horizontal_fov < np.pi:
            raise ValueError("horizontal_fov must be in (0, pi)")

    @property
    def focal_px(self) -> float:
        return (self.width / 2.0) / math.tan(self.horizontal_fov / 2.0)

    def downscale(self, k: int) -> "CameraIntrinsics":
        """Integer downscale preserving aspect ratio and FOV exactly."""
        if self.width % k or self.height % k:
            raise ValueError(f"resolution {self.width}x{self.height} not divisible by {k}")
        return CameraIntrinsics(self.width // k, self.height // k, self.horizontal_fov)

    def ray_dirs(self) -> np.ndarray:
        """Unit ray directions in the camera frame (x fwd, y left, z up), (H*W, 3)."""
        key = (self.width, self.height, round(self.horizontal_fov, 12))
        cached = _DIRS_CACHE.get(key)
        if cached is not None:
            return cached
        f = self.focal_px
        ys = (self.width / 2.0 - (np.arange(self.width) + 0.5)) / f
        zs = (self.height / 2.0 - (np.arange(self.height) + 0.5)) / f
        zz, yy = np.meshgrid(zs, ys, indexing="ij")
        d = np.stack([np.ones_like(yy), yy, zz], axis=-1).reshape(-1, 3)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        d = np.ascontiguousarray(d)
        _DIRS_CACHE[key] = d
        return d


_KINDS = {"solid": 0, "checker": 1, "stripes_u": 2, "stripes_v": 3, "stripes_w": 4}


@dataclass(frozen=True)
class TextureSpec:
    """Procedural surface color: base/accent pattern plus positional gradients.

    grad_u/grad_v ramp linearly along the two in-plane coordinates
    (normalized by the room extents), which makes every patch of every face
    identifiable from its appearance.
    """

    kind: str = "solid"
    base: tuple = (0.5, 0.5, 0.5)
    accent: tuple = (0.0, 0.0, 0.0)
    cell: float = 0.5
    grad_u: tuple = (0.0, 0.0, 0.0)
    grad_v: tuple = (0.0, 0.0, 0.0)
    micro_cell: float = 0.08
    micro_amp: float = 0.0

    def row(self) -> np.ndarray:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown texture kind {self.kind!r}")
        if self.cell <= 0:
            raise ValueError("texture cell must be positive")
        if self.micro_cell <= 0:
            raise ValueError("micro_cell must be positive")
        return np.array(
            [
                _KINDS[self.kind], *self.base, *self.accent, 1.0 / self.cell,
                *self.grad_u, *self.grad_v, 1.0 / self.micro_cell, self.micro_amp,
            ]
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "base": list(self.base),
            "accent": list(self.accent),
            "cell": self.cell,
            "grad_u": list(self.grad_u),
            "grad_v": list(self.grad_v),
            "micro_cell": self.micro_cell,
            "micro_amp": self.micro_amp,
        }

    @staticmethod
    def from_dict(d: dict) -> "TextureSpec":
        return TextureSpec(
            kind=d.get("kind", "solid"),
            base=tuple(d.get("base", (0.5, 0.5, 0.5))),
            accent=tuple(d.get("accent", (0.0, 0.0, 0.0))),
            cell=float(d.get("cell", 0.5)),
            grad_u=tuple(d.get("grad_u", (0.0, 0.0, 0.0))),
            grad_v=tuple(d.get("grad_v", (0.0, 0.0, 0.0))),
            micro_cell=float(d.get("micro_cell", 0.08)),
            micro_amp=float(d.get("micro_amp", 0.0)),
        )


@dataclass(frozen=True)
class BoxProp:
    lo: tuple
    hi: tuple
    texture: TextureSpec

    def to_dict(self) -> dict:
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi), "texture": self.texture.to_dict()}


@dataclass(frozen=True)
class SphereProp:
    center: tuple
    radius: float
    texture: TextureSpec

    def to_dict(self) -> dict:
        return {
            "type": "sphere",
            "center": list(self.center),
            "radius": self.radius,
            "texture": self.texture.to_dict(),
        }


def _prop_from_dict(d: dict):
    tex = TextureSpec.from_dict(d.get("texture", {}))
    if d["type"] == "box":
        return BoxProp(tuple(d["lo"]), tuple(d["hi"]), tex)
    if d["type"] == "sphere":
        return SphereProp(tuple(d["center"]), float(d["radius"]), tex)
    raise ValueError(f"unknown prop type {d['type']!r}")


# face order: x_low, x_high, y_low, y_high, floor, ceiling.
# In-plane axes: x faces (u=y, v=z), y faces (u=z, v=x), z faces (u=x, v=y).
# Every wall gets a distinct luma structure (pattern kind, scale, ramp
# direction) so thumbnails of different viewpoints stay distinguishable.
# Luma-distinct walls: each face pairs a unique pattern orientation and
# scale with a unique brightness-ramp direction, so grayscale thumbnails of
# different walls (and different spots on one wall) stay separable.
_DEFAULT_WALLS = [
    # x_low: coarse checker, bright ramp left-to-right along y
    TextureSpec("checker", (0.12, 0.16, 0.40), (0.50, 0.62, 0.70), 0.83,
                grad_u=(0.40, 0.30, 0.10), micro_cell=0.071, micro_amp=0.14),
    # x_high: horizontal bands (along z), vertical bright-to-dark ramp
    TextureSpec("stripes_v", (0.55, 0.22, 0.18), (0.82, 0.66, 0.35), 0.37,
                grad_u=(0.0, 0.30, 0.35), grad_v=(-0.20, -0.10, 0.0), micro_cell=0.083, micro_amp=0.14),
    # y_low: wide vertical stripes (along x), dark ramp along x
    TextureSpec("stripes_v", (0.12, 0.38, 0.16), (0.62, 0.72, 0.55), 0.73,
                grad_v=(0.45, 0.10, 0.30), micro_cell=0.077, micro_amp=0.14),
    # y_high: smooth wall, low-contrast horizontal bands plus strong ramps
    TextureSpec("stripes_u", (0.62, 0.42, 0.62), (0.72, 0.52, 0.68), 0.59,
                grad_v=(-0.45, -0.25, -0.05), grad_u=(0.0, 0.10, 0.15), micro_cell=0.089, micro_amp=0.14),
    # floor: dark checker
    TextureSpec("checker", (0.36, 0.33, 0.30), (0.16, 0.16, 0.18), 0.66,
                grad_u=(0.22, 0.12, 0.0), micro_cell=0.067, micro_amp=0.12),
    # ceiling: near-solid bright
    TextureSpec("stripes_u", (0.80, 0.82, 0.86), (0.68, 0.70, 0.76), 1.17,
                grad_v=(0.0, -0.15, -0.15)),
]

_PROP_PALETTE = [
    (0.75, 0.25, 0.20),
    (0.20, 0.55, 0.75),
    (0.80, 0.65, 0.20),
    (0.30, 0.65, 0.30),
    (0.60, 0.30, 0.65),
    (0.85, 0.50, 0.35),
]


@dataclass
class SceneModel:
    """Room extents (m), six face textures, props, and the generation seed."""

    extents: np.ndarray = field(default_factory=lambda: np.array([5.0, 4.0, 1.8]))
    wall_textures: list = field(default_factory=lambda: list(_DEFAULT_WALLS))
    props: list = field(default_factory=list)
    seed: int = 0
    ambient: float = 0.40
    diffuse: float = 0.60
    falloff: float = 0.25

    def __post_init__(self):
        self.extents = np.asarray(self.extents, dtype=np.float64).reshape(3)
        if len(self.wall_textures) != 6:
            raise ValueError("exactly six face textures required")
        for p in self.props:
            self._check_inside(p)

    def _check_inside(self, p):
        if isinstance(p, BoxProp):
            lo, hi = np.asarray(p.lo), np.asarray(p.hi)
            if np.any(lo <= 0) or np.any(hi >= self.extents) or np.any(lo >= hi):
                raise ValueError(f"box prop {p.lo}..{p.hi} not strictly inside room")
        elif isinstance(p, SphereProp):
            c = np.asarray(p.center)
            if np.any(c - p.radius <= 0) or np.any(c + p.radius >= self.extents):
                raise ValueError(f"sphere prop at {p.center} not strictly inside room")
        else:
            raise ValueError(f"unknown prop {p!r}")

    @staticmethod
    def default(seed: int = 7, extents=(5.0, 4.0, 1.8)) -> "SceneModel":
        """Standard textured room with a seeded arrangement of props.

        Boxes stay low and near the walls, spheres small and high, so the
        central flight volume (z roughly 0.5..1.3 m) stays clear and views
        are dominated by the distinctive walls.
        """
        extents = np.asarray(extents, dtype=np.float64)
        rng = np.random.default_rng(seed)
        props = []
        # wall panels: thin, boldly colored rectangles mounted on each wall,
        # two per wall at staggered positions; coarse landmarks that make
        # every viewing direction identifiable even at thumbnail resolution
        panel_colors = [
            (0.95, 0.95, 0.92), (0.05, 0.05, 0.08),
            (0.92, 0.90, 0.20), (0.10, 0.10, 0.45),
            (0.05, 0.38, 0.05), (0.90, 0.25, 0.10),
            (0.85, 0.45, 0.75), (0.15, 0.55, 0.60),
        ]
        thick = 0.03
        for w in range(4):
            for j in range(2):
                along = (0.22 + 0.5 * j) + rng.uniform(-0.06, 0.06)
                half_w = rng.uniform(0.25, 0.40)
                z0 = rng.uniform(0.35, 0.55)
                z1 = z0 + rng.uniform(0.55, 0.85)
                tex = TextureSpec("solid", panel_colors[w * 2 + j])
                if w < 2:  # panels on the x walls extend along y
                    c = along * extents[1]
                    lo_y, hi_y = c - half_w, c + half_w
                    x0, x1 = (0.001, thick) if w == 0 else (extents[0] - thick, extents[0] - 0.001)
                    props.append(BoxProp((x0, lo_y, z0), (x1, hi_y, z1), tex))
                else:  # panels on the y walls extend along x
                    c = along * extents[0]
                    lo_x, hi_x = c - half_w, c + half_w
                    y0, y1 = (0.001, thick) if w == 2 else (extents[1] - thick, extents[1] - 0.001)
                    props.append(BoxProp((lo_x, y0, z0), (hi_x, y1, z1), tex))
        # two slender full-height columns break the far-wall distance
        # degeneracy: views across the room gain strong near-field parallax
        col_spots = [(0.68, 0.30), (0.32, 0.72)]
        for i, (fx, fy) in enumerate(col_spots):
            half = 0.13
            cx, cy = fx * extents[0], fy * extents[1]
            tex = TextureSpec(
                "stripes_w", (0.92, 0.88, 0.20) if i == 0 else (0.10, 0.72, 0.75),
                (0.10, 0.10, 0.12), 0.30,
            )
            props.append(
                BoxProp((cx - half, cy - half, 0.001), (cx + half, cy + half, extents[2] - 0.001), tex)
            )
        for i in range(4):
            sx, sy = rng.uniform(0.18, 0.35, 2)
            h = rng.uniform(0.35, 0.65)
            # ring placement: one prop per wall, offset along it
            wall = i % 4
            along = rng.uniform(0.25, 0.75)
            depth = rng.uniform(0.45, 0.75)
            if wall == 0:
                cx, cy = along * extents[0], depth
            elif wall == 1:
                cx, cy = along * extents[0], extents[1] - depth
            elif wall == 2:
                cx, cy = depth, along * extents[1]
            else:
                cx, cy = extents[0] - depth, along * extents[1]
            cx = float(np.clip(cx, sx + 0.05, extents[0] - sx - 0.05))
            cy = float(np.clip(cy, sy + 0.05, extents[1] - sy - 0.05))
            tex = TextureSpec(
                "checker", _PROP_PALETTE[i], tuple(0.55 * c for c in _PROP_PALETTE[i]), 0.20
            )
            props.append(BoxProp((cx - sx, cy - sy, 0.001), (cx + sx, cy + sy, h), tex))
        for i in range(2):
            r = rng.uniform(0.09, 0.12)
            cx = rng.uniform(0.6 + r, extents[0] - 0.6 - r)
            cy = rng.uniform(0.6 + r, extents[1] - 0.6 - r)
            cz = rng.uniform(1.5, extents[2] - r - 0.05)
            tex = TextureSpec("solid", _PROP_PALETTE[4 + i], grad_u=(0.2, 0.2, 0.2))
            props.append(SphereProp((cx, cy, cz), r, tex))
        return SceneModel(extents=extents, props=props, seed=seed)

    def packed(self):
        """Flat arrays consumed by the raycast kernel (cached)."""
        cached = self.__dict__.get("_packed")
        if cached is None:
            boxes = [p for p in self.props if isinstance(p, BoxProp)]
            spheres = [p for p in self.props if isinstance(p, SphereProp)]
            box_arr = (
                np.array([[*b.lo, *b.hi] for b in boxes]) if boxes else np.zeros((0, 6))
            )
            sph_arr = (
                np.array([[*s.center, s.radius] for s in spheres]) if spheres else np.zeros((0, 4))
            )
            tex = np.stack(
                [t.row() for t in self.wall_textures]
                + [b.texture.row() for b in boxes]
                + [s.texture.row() for s in spheres]
            )
            shade = np.array([self.ambient, self.diffuse, self.falloff])
            cached = (self.extents, 1.0 / self.extents, box_arr, sph_arr, tex, shade)
            self.__dict__["_packed"] = cached
        return cached

    def to_dict(self) -> dict:
        return {
            "extents": list(map(float, self.extents)),
            "seed": self.seed,
            "ambient": self.ambient,
            "diffuse": self.diffuse,
            "falloff": self.falloff,
            "wall_textures": [t.to_dict() for t in self.wall_textures],
            "props": [p.to_dict() for p in self.props],
        }

    @staticmethod
    def from_dict(d: dict) -> "SceneModel":
        kwargs = {}
        if "extents" in d:
            kwargs["extents"] = np.asarray(d["extents"], dtype=np.float64)
        for key in ("seed", "ambient", "diffuse", "falloff"):
            if key in d:
                kwargs[key] = d[key]
        if "wall_textures" in d:
            kwargs["wall_textures"] = [TextureSpec.from_dict(t) for t in d["wall_textures"]]
        if "props" in d:
            kwargs["props"] = [_prop_from_dict(p) for p in d["props"]]
        return SceneModel(**kwargs)


@dataclass(frozen=True)
class ArtifactSpec:
    """Floater emulation: world-space semi-transparent blobs composited on renders."""

    count: int = 10
    radius_range: tuple = (0.12, 0.30)
    opacity_range: tuple = (0.30, 0.60)
    color_jitter: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be >= 0")
        lo, hi = self.opacity_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("opacities must lie in [0, 1]")

    def sample_blobs(self, extents: np.ndarray):
        """Deterministic blob placement: (centers, radii, opacities, colors)."""
        rng = np.random.default_rng(self.seed)
        n = self.count
        centers = rng.uniform(0.15, 0.85, (n, 3)) * extents
        radii = rng.uniform(*self.radius_range, n)
        opac = rng.uniform(*self.opacity_range, n)
        colors = np.clip(0.72 + self.color_jitter * rng.uniform(-1, 1, (n, 3)), 0.05, 0.95)
        return centers, radii, opac, colors

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "radius_range": list(self.radius_range),
            "opacity_range": list(self.opacity_range),
            "color_jitter": self.color_jitter,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "ArtifactSpec":
        kwargs = dict(d)
        for key in ("radius_range", "opacity_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return ArtifactSpec(**kwargs)


def _composite_blobs(img: np.ndarray, R: np.ndarray, t: np.ndarray, k: CameraIntrinsics, blobs):
    """Alpha-blend projected blobs (sorted far to near) over one rendered image."""
    centers, radii, opac, colors = blobs
    if len(centers) == 0:
        return
    pc = (centers - t) @ R  # camera-frame positions, rows (fwd, left, up)
    order = np.argsort(-pc[:, 0], kind="stable")
    f = k.focal_px
    h, w = img.shape[:2]
    for i in order:
        fwd = pc[i, 0]
        if fwd < 0.05:
            continue
        col_c = w / 2.0 - f * pc[i, 1] / fwd - 0.5
        row_c = h / 2.0 - f * pc[i, 2] / fwd - 0.5
        rho = f * radii[i] / fwd
        r0 = max(0, int(math.floor(row_c - rho)))
        r1 = min(h, int(math.ceil(row_c + rho)) + 1)
        c0 = max(0, int(math.floor(col_c - rho)))
        c1 = min(w, int(math.ceil(col_c + rho)) + 1)
        if r0 >= r1 or c0 >= c1:
            continue
        rr = np.arange(r0, r1, dtype=np.float64) - row_c
        cc = np.arange(c0, c1, dtype=np.float64) - col_c
        d2 = rr[:, None] ** 2 + cc[None, :] ** 2
        alpha = opac[i] * np.clip(1.0 - d2 / (rho * rho), 0.0, None)
        patch = img[r0:r1, c0:c1]
        patch *= (1.0 - alpha[..., None]).astype(np.float32)
        patch += (alpha[..., None] * colors[i]).astype(np.float32)


def render_batch(
    scene: SceneModel,
    Rs: np.ndarray,
    ts: np.ndarray,
    k: CameraIntrinsics,
    artifacts: ArtifactSpec | None = None,
) -> np.ndarray:
    """Render a (P,3,3)/(P,3) pose batch to a (P,H,W,3) float32 image stack."""
    Rs = np.ascontiguousarray(Rs, dtype=np.float64)
    ts = np.ascontiguousarray(ts, dtype=np.float64)
    room, inv_room, boxes, spheres, tex, shade = scene.packed()
    dirs = k.ray_dirs()
    out = np.empty((Rs.shape[0], dirs.shape[0], 3), dtype=np.float32)
    _raycast.trace_batch(Rs, ts, dirs, room, inv_room, boxes, spheres, tex, shade, out)
    imgs = out.reshape(Rs.shape[0], k.height, k.width, 3)
    if artifacts is not None and artifacts.count > 0:
        blobs = artifacts.sample_blobs(scene.extents)
        for i in range(Rs.shape[0]):
            _composite_blobs(imgs[i], Rs[i], ts[i], k, blobs)
    return imgs


def render(
    scene: SceneModel,
    pose: Pose,
    k: CameraIntrinsics,
    artifacts: ArtifactSpec | None = None,
) -> np.ndarray:
    """Render one pose to an (H,W,3) float32 image with values in [0, 1]."""
    return render_batch(scene, pose.R[None], pose.t[None], k, artifacts)[0]


def observe(
    scene: SceneModel,
    pose: Pose,
    k: CameraIntrinsics,
    noise_sigma: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Camera-side image: artifact-free render plus clamped i.i.d. Gaussian noise."""
    img = render(scene, pose, k).astype(np.float64)
    if noise_sigma > 0:
        img = img + rng.normal(0.0, noise_sigma, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def save_image(img: np.ndarray, path: str) -> None:
    """Write an image in [0,1] as PNG (via matplotlib) or PPM."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if str(path).endswith(".ppm"):
        data = (arr * 255.0 + 0.5).astype(np.uint8)
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (data.shape[1], data.shape[0]))
            fh.write(data.tobytes())
    else:
        import matplotlib.image

        matplotlib.image.imsave(path, arr)
