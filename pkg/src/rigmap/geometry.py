"""Lie-group and epipolar primitives.

Conventions used throughout the package:

* A ``Pose`` maps points from its own (camera) frame into the parent frame:
  ``x_parent = R @ x_cam + t``. The optical center is therefore ``t``.
* Cameras look along +z, x to the right, y down.
* Tangent vectors on SE(3) are ordered ``(omega, v)``: rotation first.
* For a relative pose ``T_ab = T_a^-1 T_b`` the epipolar constraint between
  image ``b`` (first view) and image ``a`` (second view) reads
  ``x_a^T K^-T [t]x R K^-1 x_b = 0`` with ``(R, t)`` taken from ``T_ab``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation as _Rot

SMALL_ANGLE = 1e-8


class DegenerateConfigurationError(ValueError):
    """Raised when correspondences cannot determine a fundamental matrix."""


# ---------------------------------------------------------------------------
# SO(3)
# ---------------------------------------------------------------------------


def skew(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        return np.array(
            [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
        )
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of ``skew`` on the antisymmetric part of ``m``."""
    m = np.asarray(m, dtype=float)
    a = 0.5 * (m - np.swapaxes(m, -1, -2))
    return np.stack([a[..., 2, 1], a[..., 0, 2], a[..., 1, 0]], axis=-1)


def rodrigues(theta) -> np.ndarray:
    """Exponential map so(3) -> SO(3); accepts (3,) or (n, 3)."""
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    th = np.atleast_2d(theta)
    angle = np.linalg.norm(th, axis=-1)
    K = skew(th)
    K2 = K @ K
    small = angle < SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    a = np.where(small, 1.0 - angle**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - angle**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    R = np.eye(3) + a[:, None, None] * K + b[:, None, None] * K2
    return R[0] if single else R


def so3_log(R) -> np.ndarray:
    """Logarithm SO(3) -> so(3) as a rotation vector; (3,3) or (n,3,3)."""
    R = np.asarray(R, dtype=float)
    return _Rot.from_matrix(R).as_rotvec()


def so3_left_jacobian(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    single = omega.ndim == 1
    w = np.atleast_2d(omega)
    th = np.linalg.norm(w, axis=-1)
    small = th < 1e-5
    safe = np.where(small, 1.0, th)
    a = np.where(small, 0.5 - th**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    b = np.where(small, 1.0 / 6.0 - th**2 / 120.0, (safe - np.sin(safe)) / safe**3)
    K = skew(w)
    J = np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)
    return J[0] if single else J


def so3_left_jacobian_inv(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    single = omega.ndim == 1
    w = np.atleast_2d(omega)
    th = np.linalg.norm(w, axis=-1)
    small = th < 1e-5
    safe = np.where(small, 1.0, th)
    c = np.where(
        small,
        1.0 / 12.0 + th**2 / 720.0,
        1.0 / safe**2 - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    K = skew(w)
    J = np.eye(3) - 0.5 * K + c[:, None, None] * (K @ K)
    return J[0] if single else J


# ---------------------------------------------------------------------------
# SE(3), batched over leading axis
# ---------------------------------------------------------------------------


def se3_exp(xi) -> tuple[np.ndarray, np.ndarray]:
    """Exp of tangent ``(omega, v)``; returns (R, t)."""
    xi = np.asarray(xi, dtype=float)
    R = rodrigues(xi[..., :3])
    J = so3_left_jacobian(xi[..., :3])
    t = np.einsum("...ij,...j->...i", J, xi[..., 3:])
    return R, t


def se3_log(R, t) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    t = np.asarray(t, dtype=float)
    w = so3_log(R)
    v = np.einsum("...ij,...j->...i", so3_left_jacobian_inv(w), t)
    return np.concatenate([w, v], axis=-1)


def se3_adjoint(R, t) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    t = np.asarray(t, dtype=float)
    Ad = np.zeros(R.shape[:-2] + (6, 6))
    Ad[..., :3, :3] = R
    Ad[..., 3:, 3:] = R
    Ad[..., 3:, :3] = skew(t) @ R
    return Ad


def _q_block(omega: np.ndarray, v: np.ndarray) -> np.ndarray:
    th = np.linalg.norm(omega, axis=-1)
    small = th < 1e-4
    s = np.where(small, 1.0, th)
    c1 = np.where(small, 1.0 / 6.0, (s - np.sin(s)) / s**3)
    c2 = np.where(small, 1.0 / 24.0, (s**2 + 2.0 * np.cos(s) - 2.0) / (2.0 * s**4))
    c3 = np.where(
        small, 1.0 / 120.0, (2.0 * s - 3.0 * np.sin(s) + s * np.cos(s)) / (2.0 * s**5)
    )
    P = skew(omega)
    V = skew(v)
    PV = P @ V
    VP = V @ P
    PVP = PV @ P
    return (
        0.5 * V
        + c1[:, None, None] * (PV + VP + PVP)
        + c2[:, None, None] * (P @ PV + VP @ P - 3.0 * PVP)
        + c3[:, None, None] * (PVP @ P + P @ PVP)
    )


def se3_left_jacobian(xi) -> np.ndarray:
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    J = np.zeros((xi.shape[0], 6, 6))
    Jr = so3_left_jacobian(xi[:, :3])
    J[:, :3, :3] = Jr
    J[:, 3:, 3:] = Jr
    J[:, 3:, :3] = _q_block(xi[:, :3], xi[:, 3:])
    return J


def se3_right_jacobian_inv(xi) -> np.ndarray:
    """Inverse right Jacobian: Log(Exp(xi) Exp(d)) ~ xi + Jr^-1 d."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    return np.linalg.inv(se3_left_jacobian(-xi))


def compose(Ra, ta, Rb, tb):
    return Ra @ Rb, np.einsum("...ij,...j->...i", Ra, tb) + ta


def invert(R, t):
    Rt = np.swapaxes(R, -1, -2)
    return Rt, -np.einsum("...ij,...j->...i", Rt, t)


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


def _frozen(a, shape) -> np.ndarray:
    out = np.array(a, dtype=float).reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform with an optional timestamp (seconds)."""

    rotation: np.ndarray
    translation: np.ndarray
    timestamp: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))
        if self.timestamp is not None:
            object.__setattr__(self, "timestamp", float(self.timestamp))

    @classmethod
    def identity(cls, timestamp=None) -> "Pose":
        return cls(np.eye(3), np.zeros(3), timestamp)

    @classmethod
    def from_matrix(cls, T, timestamp=None) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3], timestamp)

    @classmethod
    def exp(cls, xi, timestamp=None) -> "Pose":
        R, t = se3_exp(np.asarray(xi, dtype=float))
        return cls(R, t, timestamp)

    @property
    def position(self) -> np.ndarray:
        return self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Pose":
        R, t = invert(self.rotation, self.translation)
        return Pose(R, t, self.timestamp)

    def __matmul__(self, other: "Pose") -> "Pose":
        # the right operand is the frame being expressed, so it keeps its stamp
        R, t = compose(self.rotation, self.translation, other.rotation, other.translation)
        return Pose(R, t, other.timestamp)

    def log(self) -> np.ndarray:
        return se3_log(self.rotation, self.translation)

    def transform(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def with_timestamp(self, timestamp) -> "Pose":
        return Pose(self.rotation, self.translation, timestamp)

    def with_translation(self, translation) -> "Pose":
        return Pose(self.rotation, translation, self.timestamp)

    def scaled(self, s: float) -> "Pose":
        return Pose(self.rotation, s * self.translation, self.timestamp)

    def __repr__(self) -> str:
        rv = np.round(so3_log(self.rotation), 6)
        return f"Pose(rotvec={rv.tolist()}, t={np.round(self.translation, 6).tolist()}, stamp={self.timestamp})"


def stack_poses(poses) -> tuple[np.ndarray, np.ndarray]:
    R = np.stack([p.rotation for p in poses]) if poses else np.zeros((0, 3, 3))
    t = np.stack([p.translation for p in poses]) if poses else np.zeros((0, 3))
    return R, t


def pose_error(a: Pose, b: Pose) -> tuple[float, float]:
    """(rotation angle, translation distance) between two poses."""
    dr = float(np.linalg.norm(so3_log(a.rotation.T @ b.rotation)))
    return dr, float(np.linalg.norm(a.translation - b.translation))


def se3_interpolate(a: Pose, b: Pose, alpha: float) -> Pose:
    """Split interpolation: slerp on rotation, linear on translation."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha={alpha} outside [0, 1]")
    if alpha == 0.0:
        return a
    if alpha == 1.0:
        return b
    dR = rodrigues(alpha * so3_log(a.rotation.T @ b.rotation))
    t = (1.0 - alpha) * a.translation + alpha * b.translation
    stamp = None
    if a.timestamp is not None and b.timestamp is not None:
        stamp = (1.0 - alpha) * a.timestamp + alpha * b.timestamp
    return Pose(a.rotation @ dR, t, stamp)


def interpolate_at(times: np.ndarray, poses, t: float, max_gap: float = np.inf) -> Pose:
    """Pose at time ``t`` from a time-sorted sequence; ValueError outside the span."""
    times = np.asarray(times, dtype=float)
    if len(times) == 0 or t < times[0] - 1e-12 or t > times[-1] + 1e-12:
        raise ValueError(f"time {t} outside [{times[0] if len(times) else None}, "
                         f"{times[-1] if len(times) else None}]")
    hit = np.flatnonzero(np.abs(times - t) <= 1e-12)
    if hit.size:
        return poses[int(hit[0])]
    i = int(np.searchsorted(times, t)) - 1
    t0, t1 = times[i], times[i + 1]
    if t1 - t0 > max_gap:
        raise ValueError(f"bracket [{t0}, {t1}] longer than {max_gap}")
    return se3_interpolate(poses[i], poses[i + 1], (t - t0) / (t1 - t0))


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")

    @classmethod
    def from_matrix(cls, K) -> "Intrinsics":
        K = np.asarray(K, dtype=float)
        return cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2])

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)

    def scaled_focal(self, sx: float, sy: float) -> "Intrinsics":
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx, self.cy)

    def project(self, points_cam) -> tuple[np.ndarray, np.ndarray]:
        """Pixels (n, 2) and depths (n,) of camera-frame points."""
        p = np.asarray(points_cam, dtype=float)
        z = p[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * p[..., 0] / z + self.cx
            v = self.fy * p[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1), z

    def rays(self, pixels) -> np.ndarray:
        """Camera-frame rays with unit z for pixel coordinates (..., 2)."""
        px = np.asarray(pixels, dtype=float)
        x = (px[..., 0] - self.cx) / self.fx
        y = (px[..., 1] - self.cy) / self.fy
        return np.stack([x, y, np.ones_like(x)], axis=-1)

    def backproject(self, pixels, depth) -> np.ndarray:
        return self.rays(pixels) * np.asarray(depth, dtype=float)[..., None]


@dataclass(frozen=True)
class PixelGrid:
    """Depth-grid sampling lattice over an image of ``width`` x ``height`` pixels."""

    width: int = 480
    height: int = 160
    cols: int = 48
    rows: int = 16

    @property
    def u(self) -> np.ndarray:
        step = self.width / self.cols
        return (np.arange(self.cols) + 0.5) * step - 0.5

    @property
    def v(self) -> np.ndarray:
        step = self.height / self.rows
        return (np.arange(self.rows) + 0.5) * step - 0.5

    def pixels(self) -> np.ndarray:
        uu, vv = np.meshgrid(self.u, self.v)
        return np.stack([uu, vv], axis=-1)

    def contains(self, px) -> np.ndarray:
        px = np.asarray(px, dtype=float)
        return (
            (px[..., 0] >= -0.5) & (px[..., 0] <= self.width - 0.5)
            & (px[..., 1] >= -0.5) & (px[..., 1] <= self.height - 0.5)
        )

    def sample_depth(self, depth: np.ndarray, valid: np.ndarray, px) -> np.ndarray:
        """Bilinear interpolation of inverse depth at pixels; NaN where any
        neighbouring sample is invalid or the pixel falls outside the lattice.
        Inverse depth is affine in the image for a plane, so planar patches are
        reproduced exactly."""
        px = np.atleast_2d(np.asarray(px, dtype=float))
        out = np.full(px.shape[0], np.nan)
        fu = (px[:, 0] + 0.5) * self.cols / self.width - 0.5
        fv = (px[:, 1] + 0.5) * self.rows / self.height - 0.5
        ok = (fu >= 0) & (fu <= self.cols - 1) & (fv >= 0) & (fv <= self.rows - 1)
        if not ok.any():
            return out
        fu, fv = fu[ok], fv[ok]
        c0 = np.minimum(np.floor(fu).astype(int), self.cols - 2)
        r0 = np.minimum(np.floor(fv).astype(int), self.rows - 2)
        a = fu - c0
        b = fv - r0
        inv = np.where(valid, 1.0 / np.where(valid, depth, 1.0), np.nan)
        val = (
            (1 - a) * (1 - b) * inv[r0, c0]
            + a * (1 - b) * inv[r0, c0 + 1]
            + (1 - a) * b * inv[r0 + 1, c0]
            + a * b * inv[r0 + 1, c0 + 1]
        )
        # exact lattice hits must not depend on the far neighbours
        on_grid = (a == 0) & (b == 0)
        val = np.where(on_grid, inv[r0, c0], val)
        out[np.flatnonzero(ok)] = 1.0 / val
        return out


# ---------------------------------------------------------------------------
# Epipolar geometry
# ---------------------------------------------------------------------------


def essential_from_f(f, k: Intrinsics) -> np.ndarray:
    K = k.matrix
    return K.T @ np.asarray(f, dtype=float) @ K


def fundamental_from_pose(rel: Pose, k: Intrinsics) -> np.ndarray:
    """F with ``x_a^T F x_b = 0`` for ``rel = T_a^-1 T_b``, unit Frobenius norm."""
    E = skew(rel.translation) @ rel.rotation
    Kinv = k.inverse
    F = Kinv.T @ E @ Kinv
    return F / np.linalg.norm(F)


def _hartley(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.linalg.norm(pts - c, axis=1).mean()
    if d <= 0:
        raise DegenerateConfigurationError("all points coincide")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def eight_point(x1, x2, conditioning: float = 1e-8) -> np.ndarray:
    """Normalized eight-point estimate of F with ``x2^T F x1 = 0``.

    ``x1`` and ``x2`` are (n, 2) pixel arrays. The result is rank 2 with unit
    Frobenius norm.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != x2.shape or x1.ndim != 2 or x1.shape[1] != 2:
        raise ValueError("matches must be two (n, 2) arrays of equal shape")
    n = x1.shape[0]
    if n < 8:
        raise ValueError(f"eight-point needs at least 8 matches, got {n}")
    T1 = _hartley(x1)
    T2 = _hartley(x2)
    h1 = np.c_[x1, np.ones(n)] @ T1.T
    h2 = np.c_[x2, np.ones(n)] @ T2.T
    A = (h2[:, :, None] * h1[:, None, :]).reshape(n, 9)
    _, s, Vt = np.linalg.svd(A)
    if s[7] / s[0] < conditioning:
        raise DegenerateConfigurationError(
            f"correspondences leave F undetermined (sigma8/sigma1={s[7] / s[0]:.2e})"
        )
    F = Vt[-1].reshape(3, 3)
    U, d, Vt = np.linalg.svd(F)
    F = U @ np.diag([d[0], d[1], 0.0]) @ Vt
    F = T2.T @ F @ T1
    F /= np.linalg.norm(F)
    # fix the sign for reproducibility
    i = np.argmax(np.abs(F))
    return F if F.flat[i] > 0 else -F


def epipolar_residuals(F, x1, x2) -> np.ndarray:
    h1 = np.c_[np.asarray(x1, dtype=float), np.ones(len(x1))]
    h2 = np.c_[np.asarray(x2, dtype=float), np.ones(len(x2))]
    return np.einsum("ni,ij,nj->n", h2, np.asarray(F, dtype=float), h1)


def chordal_mean_rotation(rotations) -> np.ndarray:
    M = np.sum(np.asarray(rotations, dtype=float), axis=0)
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def mean_pose(poses) -> Pose:
    """Chordal rotation mean with arithmetic translation mean."""
    R, t = stack_poses(list(poses))
    return Pose(chordal_mean_rotation(R), t.mean(axis=0))
