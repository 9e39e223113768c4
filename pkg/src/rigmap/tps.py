"""3D thin-plate-style spline with the linear radial kernel ``U(r) = r``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist


@dataclass
class TpsModel:
    controls: np.ndarray  # (n, 3)
    affine: np.ndarray  # (3, 3), row-vector convention: x @ affine
    offset: np.ndarray  # (3,)
    weights: np.ndarray  # (n, 3)
    stiffness: float
    mode: str = "tps"  # tps | affine | rigid

    @classmethod
    def identity(cls) -> "TpsModel":
        return cls(np.zeros((0, 3)), np.eye(3), np.zeros(3), np.zeros((0, 3)), 0.0, "rigid")

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        out = pts @ self.affine + self.offset
        if len(self.controls) and np.any(self.weights):
            # chunked to bound memory on large clouds
            for s in range(0, len(pts), 20000):
                out[s:s + 20000] += cdist(pts[s:s + 20000], self.controls) @ self.weights
        return out

    def side_conditions(self) -> tuple[float, float]:
        """(|sum w_i|, |sum w_i p_i^T|), both zero for a well-posed fit."""
        if not len(self.controls):
            return 0.0, 0.0
        return (float(np.abs(self.weights.sum(axis=0)).max()),
                float(np.abs(self.controls.T @ self.weights).max()))


def _affine_only(src: np.ndarray, dst: np.ndarray, stiffness: float) -> TpsModel:
    P = np.c_[np.ones(len(src)), src]
    sol, *_ = np.linalg.lstsq(P, dst, rcond=None)
    return TpsModel(src.copy(), sol[1:], sol[0], np.zeros_like(src), stiffness, "affine")


def _rigid_only(src: np.ndarray, dst: np.ndarray, stiffness: float) -> TpsModel:
    if len(src) == 0:
        return TpsModel.identity()
    c = dst.mean(axis=0) - src.mean(axis=0)
    return TpsModel(src.copy(), np.eye(3), c, np.zeros_like(src), stiffness, "rigid")


def fit_tps(sources, targets, stiffness: float = 1e-4) -> TpsModel:
    """Fit ``phi`` with ``phi(sources) ~ targets``.

    Solves the bordered system ``[[K + lam I, P], [P^T, 0]]``; with fewer than
    four points only a translation is fitted, and coplanar controls fall back
    to a least-squares affine map.
    """
    src = np.asarray(sources, dtype=float).reshape(-1, 3)
    dst = np.asarray(targets, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("sources and targets must have the same shape")
    if stiffness < 0:
        raise ValueError("stiffness must be non-negative")
    n = len(src)
    if n < 4:
        return _rigid_only(src, dst, stiffness)
    P = np.c_[np.ones(n), src]
    if np.linalg.matrix_rank(P - np.r_[0.0, src.mean(axis=0)], tol=1e-9 * max(1.0, np.abs(src).max())) < 4:
        return _affine_only(src, dst, stiffness)
    K = cdist(src, src)
    L = np.zeros((n + 4, n + 4))
    L[:n, :n] = K + stiffness * np.eye(n)
    L[:n, n:] = P
    L[n:, :n] = P.T
    rhs = np.zeros((n + 4, 3))
    rhs[:n] = dst
    try:
        sol = scipy.linalg.solve(L, rhs, assume_a="sym", check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return _affine_only(src, dst, stiffness)
    if not np.all(np.isfinite(sol)):
        return _affine_only(src, dst, stiffness)
    w = sol[:n]
    return TpsModel(src.copy(), sol[n + 1:], sol[n], w, stiffness, "tps")


def deform_points(points_local, model: TpsModel, world_from_local) -> np.ndarray:
    """Warp local points with ``model`` and then move them rigidly."""
    pts = np.asarray(points_local, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros((0, 3))
    return world_from_local.transform(model(pts))
