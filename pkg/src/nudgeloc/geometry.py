"""SE(3) pose algebra: composition, exponential/log maps, weighted pose statistics.

Conventions
-----------
- A Pose maps body coordinates to world coordinates: x_w = R @ x_b + t.
- The body frame is x-forward, y-left, z-up; world z is up.
- Twist rotation vectors are ordered (yaw, pitch, roll), i.e. the first
  component generates rotation about the world z axis, the second about y,
  the third about x.  Internally they are permuted to the usual (x, y, z)
  rotation-vector layout before applying Rodrigues' formula.
- Angles in radians, translations in meters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Switch to series expansions below this rotation angle.
_SMALL_ANGLE = 1e-6
# log_map refuses rotations closer than this to the pi branch cut.
_PI_MARGIN = 1e-6


class GeometryError(Exception):
    """Base class for pose-algebra errors."""


class AngleNearPiError(GeometryError):
    """Rotation angle too close to pi for a principal-branch log."""


class EmptySetError(GeometryError):
    """Statistics requested over an empty particle collection."""


class ZeroWeightError(GeometryError):
    """Total particle weight is not strictly positive."""


def skew(w: np.ndarray) -> np.ndarray:
    """Cross-product matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


@dataclass(frozen=True)
class Pose:
    """Rigid transform: 3x3 rotation matrix R and translation t (meters)."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def inverse(self) -> "Pose":
        Rt = self.R.T
        return Pose(Rt, -Rt @ self.t)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Transform body-frame point(s) (…,3) into the world frame."""
        return np.asarray(pts) @ self.R.T + self.t

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    def flat(self) -> np.ndarray:
        """Row-major 12-number record: 9 rotation entries then 3 translation."""
        return np.concatenate([self.R.ravel(), self.t])

    @staticmethod
    def from_flat(v) -> "Pose":
        v = np.asarray(v, dtype=np.float64).reshape(12)
        return Pose(v[:9].reshape(3, 3), v[9:])


@dataclass(frozen=True)
class Twist:
    """se(3) element: translational part u (m) and rotational part phi (rad).

    phi is ordered (yaw, pitch, roll); its norm must stay below pi
    (principal branch).
    """

    u: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64).reshape(3)
        phi = np.asarray(self.phi, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(phi))):
            raise ValueError("twist entries must be finite")
        if np.linalg.norm(phi) >= np.pi:
            raise ValueError("rotation magnitude must be < pi")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "phi", phi)

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class PoseGaussian:
    """Gaussian over poses: mean plus translation / rotation-tangent covariances."""

    mean: Pose
    cov_t: np.ndarray  # 3x3, m^2
    cov_r: np.ndarray  # 3x3, rad^2, (yaw, pitch, roll) ordering

    def __post_init__(self):
        for name in ("cov_t", "cov_r"):
            c = np.asarray(getattr(self, name), dtype=np.float64)
            if c.shape != (3, 3):
                raise ValueError(f"{name} must be 3x3")
            c = 0.5 * (c + c.T)
            if np.linalg.eigvalsh(c).min() < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
            object.__setattr__(self, name, c)

    def dispersion(self, beta: float = 1.0) -> float:
        """Scalar spread statistic: trace(cov_t) + beta * trace(cov_r)."""
        return float(np.trace(self.cov_t) + beta * np.trace(self.cov_r))


def compose(a: Pose, b: Pose) -> Pose:
    """Group product a*b: R = Ra Rb, t = Ra tb + ta."""
    return Pose(a.R @ b.R, a.R @ b.t + a.t)


def _rotvec(phi: np.ndarray) -> np.ndarray:
    """(yaw, pitch, roll) -> rotation vector in (x, y, z) component order."""
    return np.array([phi[2], phi[1], phi[0]])


def _phi_from_rotvec(w: np.ndarray) -> np.ndarray:
    return np.array([w[2], w[1], w[0]])


def exp_map(xi: Twist) -> Pose:
    """Closed-form exponential: Rodrigues rotation plus left-Jacobian translation."""
    w = _rotvec(xi.phi)
    theta = np.linalg.norm(w)
    K = skew(w)
    K2 = K @ K
    if theta < _SMALL_ANGLE:
        R = np.eye(3) + K + 0.5 * K2
        V = np.eye(3) + 0.5 * K + K2 / 6.0
    else:
        t2 = theta * theta
        R = np.eye(3) + (np.sin(theta) / theta) * K + ((1.0 - np.cos(theta)) / t2) * K2
        V = (
            np.eye(3)
            + ((1.0 - np.cos(theta)) / t2) * K
            + ((theta - np.sin(theta)) / (t2 * theta)) * K2
        )
    return Pose(R, V @ xi.u)


def log_map(p: Pose) -> Twist:
    """Inverse of exp_map on the principal branch.

    Raises AngleNearPiError when the rotation angle is within 1e-6 of pi.
    """
    tr = np.trace(p.R)
    c = min(1.0, max(-1.0, 0.5 * (tr - 1.0)))
    theta = np.arccos(c)
    if theta > np.pi - _PI_MARGIN:
        raise AngleNearPiError(f"rotation angle {theta:.9f} too close to pi")
    A = 0.5 * (p.R - p.R.T)
    w_raw = np.array([A[2, 1], A[0, 2], A[1, 0]])  # = sin(theta) * axis
    if theta < _SMALL_ANGLE:
        w = w_raw * (1.0 + theta * theta / 6.0)
    else:
        w = w_raw * (theta / np.sin(theta))
    K = skew(w)
    K2 = K @ K
    if theta < 1e-4:
        t2 = theta * theta
        coef = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        coef = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / (
            theta * theta
        )
    Vinv = np.eye(3) - 0.5 * K + coef * K2
    return Twist(Vinv @ p.t, _phi_from_rotvec(w))


def rotation_rpy(yaw: float, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """Rotation matrix Rz(yaw) Ry(pitch) Rx(roll)."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    Rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return Rz @ Ry @ Rx


def euler_rpy(R: np.ndarray) -> tuple[float, float, float]:
    """(yaw, pitch, roll) such that R = Rz(yaw) Ry(pitch) Rx(roll)."""
    pitch = -np.arcsin(min(1.0, max(-1.0, R[2, 0])))
    yaw = np.arctan2(R[1, 0], R[0, 0])
    roll = np.arctan2(R[2, 1], R[2, 2])
    return float(yaw), float(pitch), float(roll)


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic rotation angle of R in radians."""
    c = min(1.0, max(-1.0, 0.5 * (np.trace(R) - 1.0)))
    return float(np.arccos(c))


def _check_weights(pairs) -> tuple[np.ndarray, list]:
    pairs = list(pairs)
    if not pairs:
        raise EmptySetError("no particles")
    w = np.array([float(p[0]) for p in pairs])
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if total <= 0.0:
        raise ZeroWeightError("total weight must be > 0")
    return w / total, [p[1] for p in pairs]


def weighted_mean(pairs) -> Pose:
    """Weighted pose mean over (weight, Pose) pairs.

    Translation is the weighted arithmetic mean; rotation is the weighted
    chordal mean, i.e. the weighted sum of rotation matrices projected back
    to SO(3) by polar decomposition.  Unique while the rotation spread stays
    under 90 degrees.
    """
    w, poses = _check_weights(pairs)
    t = np.einsum("i,ij->j", w, np.stack([p.t for p in poses]))
    M = np.einsum("i,ijk->jk", w, np.stack([p.R for p in poses]))
    U, _, Vt = np.linalg.svd(M)
    S = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return Pose(U @ S @ Vt, t)


def weighted_variance(pairs, mean: Pose) -> PoseGaussian:
    """Weighted scatter about a mean pose.

    cov_t is the scatter of raw translation residuals; cov_r the scatter of
    the rotational tangent residuals log(mean^-1 * P_i), in (yaw, pitch,
    roll) ordering.
    """
    w, poses = _check_weights(pairs)
    mean_inv = mean.inverse()
    dt = np.stack([p.t for p in poses]) - mean.t
    cov_t = np.einsum("i,ij,ik->jk", w, dt, dt)
    dphi = np.zeros((len(poses), 3))
    for i, p in enumerate(poses):
        if w[i] == 0.0:
            continue
        dphi[i] = log_map(compose(mean_inv, p)).phi
    cov_r = np.einsum("i,ij,ik->jk", w, dphi, dphi)
    return PoseGaussian(mean, cov_t, cov_r)


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_gaussian_pose(g: PoseGaussian, rng: np.random.Generator) -> Pose:
    """Draw one pose: mean composed with exp of a tangent Gaussian perturbation.

    Rotation draws with norm >= pi are rejected and redrawn (principal
    branch); the stream stays deterministic for a given rng state.
    """
    Lt = _psd_sqrt(g.cov_t)
    Lr = _psd_sqrt(g.cov_r)
    du = Lt @ rng.standard_normal(3)
    for _ in range(100):
        dphi = Lr @ rng.standard_normal(3)
        if np.linalg.norm(dphi) < np.pi:
            break
    else:
        dphi = dphi * ((np.pi - 1e-9) / np.linalg.norm(dphi))
    return compose(g.mean, exp_map(Twist(du, dphi)))
