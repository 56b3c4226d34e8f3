"""Numba kernel for batched pinhole raycasting of the procedural room scene.

Geometry and texture parameters arrive as flat float64 arrays so the kernel
stays nopython-compilable:

- room: (3,) box extents; the interior spans [0, extent] on each axis
- boxes: (B, 6) rows of lo_xyz, hi_xyz
- spheres: (S, 4) rows of center_xyz, radius
- tex: (6 + B + S, 16) rows of [kind, base_rgb, accent_rgb, inv_cell,
  grad_u_rgb, grad_v_rgb, micro_inv_cell, micro_amp] indexed by surface id:
  room faces 0..5 (axis*2 + high_side), then boxes, then spheres.  kind:
  0 solid, 1 checker, 2 stripes-u, 3 stripes-v, 4 stripes-w.  Gradients
  ramp along the two in-plane coordinates normalized by the room extents.
  The micro term adds a fine world-space checker of amplitude micro_amp,
  which narrows the basin of pixel-level similarity without touching the
  low-frequency appearance.
- shade: (3,) ambient, diffuse, inverse-distance falloff

Work is split over (pose, pixel-block) tasks so single-pose renders still
spread across threads; per-task rotation rows are hoisted so the pixel loop
vectorizes.
"""

import math
import warnings

import numpy as np
from numba import NumbaWarning, njit, prange

warnings.filterwarnings("ignore", category=NumbaWarning, message=".*TBB.*")

_EPS = 1e-9
_DMIN = 1e-12  # direction components are clamped away from zero before inversion
_BLOCK = 4096  # pixels per parallel task


@njit(cache=True, inline="always")
def _pattern(kind, inv_cell, a, b, c):
    """Binary pattern value for local texture coordinates (a, b, c)."""
    if kind == 1:  # checker over the first two coordinates plus the third
        m = math.floor(a * inv_cell) + math.floor(b * inv_cell) + math.floor(c * inv_cell)
        return float(m % 2)
    if kind == 2:  # stripes along the first coordinate
        return float(math.floor(a * inv_cell) % 2)
    if kind == 3:  # stripes along the second coordinate
        return float(math.floor(b * inv_cell) % 2)
    if kind == 4:  # stripes along the third coordinate (height bands on props)
        return float(math.floor(c * inv_cell) % 2)
    return 0.0


@njit(parallel=True, cache=True, fastmath=True)
def trace_batch(Rm, tv, dirs, room, inv_room, boxes, spheres, tex, shade, out):
    """Shade one ray per (pose, pixel) pair into out (P, n, 3) float32."""
    P = Rm.shape[0]
    n = dirs.shape[0]
    nb = boxes.shape[0]
    ns = spheres.shape[0]
    blocks = (n + _BLOCK - 1) // _BLOCK
    for task in prange(P * blocks):
        p = task // blocks
        j0 = (task - p * blocks) * _BLOCK
        j1 = min(n, j0 + _BLOCK)
        r00 = Rm[p, 0, 0]
        r01 = Rm[p, 0, 1]
        r02 = Rm[p, 0, 2]
        r10 = Rm[p, 1, 0]
        r11 = Rm[p, 1, 1]
        r12 = Rm[p, 1, 2]
        r20 = Rm[p, 2, 0]
        r21 = Rm[p, 2, 1]
        r22 = Rm[p, 2, 2]
        ox = tv[p, 0]
        oy = tv[p, 1]
        oz = tv[p, 2]
        for j in range(j0, j1):
            dx = r00 * dirs[j, 0] + r01 * dirs[j, 1] + r02 * dirs[j, 2]
            dy = r10 * dirs[j, 0] + r11 * dirs[j, 1] + r12 * dirs[j, 2]
            dz = r20 * dirs[j, 0] + r21 * dirs[j, 1] + r22 * dirs[j, 2]
            if -_DMIN < dx < _DMIN:
                dx = _DMIN if dx >= 0.0 else -_DMIN
            if -_DMIN < dy < _DMIN:
                dy = _DMIN if dy >= 0.0 else -_DMIN
            if -_DMIN < dz < _DMIN:
                dz = _DMIN if dz >= 0.0 else -_DMIN
            ix = 1.0 / dx
            iy = 1.0 / dy
            iz = 1.0 / dz

            # exit distance through the room box (camera is inside)
            tx = (room[0] - ox) * ix if dx > 0.0 else -ox * ix
            ty = (room[1] - oy) * iy if dy > 0.0 else -oy * iy
            tz = (room[2] - oz) * iz if dz > 0.0 else -oz * iz
            tbest = tx
            surf = 1 if dx > 0.0 else 0
            if ty < tbest:
                tbest = ty
                surf = 3 if dy > 0.0 else 2
            if tz < tbest:
                tbest = tz
                surf = 5 if dz > 0.0 else 4

            # axis-aligned boxes, slab test with precomputed inverse directions
            for b in range(nb):
                t1 = (boxes[b, 0] - ox) * ix
                t2 = (boxes[b, 3] - ox) * ix
                if t1 > t2:
                    t1, t2 = t2, t1
                tn = t1
                tf = t2
                t1 = (boxes[b, 1] - oy) * iy
                t2 = (boxes[b, 4] - oy) * iy
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tn:
                    tn = t1
                if t2 < tf:
                    tf = t2
                t1 = (boxes[b, 2] - oz) * iz
                t2 = (boxes[b, 5] - oz) * iz
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tn:
                    tn = t1
                if t2 < tf:
                    tf = t2
                if tf >= tn and _EPS < tn < tbest:
                    tbest = tn
                    surf = 6 + b

            # spheres
            for s in range(ns):
                cx = ox - spheres[s, 0]
                cy = oy - spheres[s, 1]
                cz = oz - spheres[s, 2]
                bq = dx * cx + dy * cy + dz * cz
                cq = cx * cx + cy * cy + cz * cz - spheres[s, 3] * spheres[s, 3]
                disc = bq * bq - cq
                if disc > 0.0:
                    ts_ = -bq - math.sqrt(disc)
                    if _EPS < ts_ < tbest:
                        tbest = ts_
                        surf = 6 + nb + s

            px = ox + tbest * dx
            py = oy + tbest * dy
            pz = oz + tbest * dz

            kind = int(tex[surf, 0])
            inv_cell = tex[surf, 7]
            if surf < 6:
                axis = surf // 2
                ua = axis + 1 if axis < 2 else 0
                va = axis - 1 if axis > 0 else 2
                if ua == 0:
                    u = px
                elif ua == 1:
                    u = py
                else:
                    u = pz
                if va == 0:
                    v = px
                elif va == 1:
                    v = py
                else:
                    v = pz
                m = _pattern(kind, inv_cell, u, v, 0.0)
                un = u * inv_room[ua]
                vn = v * inv_room[va]
            else:
                m = _pattern(kind, inv_cell, px, py, pz)
                un = pz * inv_room[2]
                vn = (px * inv_room[0] + py * inv_room[1]) * 0.5

            micro = tex[surf, 15] * (
                _pattern(1, tex[surf, 14], px, py, pz) - 0.5
            )
            factor = shade[0] + shade[1] / (1.0 + shade[2] * tbest)
            for c in range(3):
                col = (
                    tex[surf, 1 + c] * (1.0 - m)
                    + tex[surf, 4 + c] * m
                    + tex[surf, 8 + c] * un
                    + tex[surf, 11 + c] * vn
                    + micro
                )
                col *= factor
                if col < 0.0:
                    col = 0.0
                elif col > 1.0:
                    col = 1.0
                out[p, j, c] = col


def warmup():
    """Trigger JIT compilation with a tiny scene."""
    Rm = np.eye(3)[None]
    tv = np.array([[1.0, 1.0, 1.0]])
    dirs = np.array([[1.0, 0.0, 0.0]])
    room = np.array([2.0, 2.0, 2.0])
    boxes = np.zeros((0, 6))
    spheres = np.zeros((0, 4))
    tex = np.zeros((6, 16))
    tex[:, 7] = 1.0
    tex[:, 14] = 1.0
    shade = np.array([0.4, 0.6, 0.25])
    out = np.zeros((1, 1, 3), dtype=np.float32)
    trace_batch(Rm, tv, dirs, room, 1.0 / room, boxes, spheres, tex, shade, out)
