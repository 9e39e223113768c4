"""Trajectory and point-cloud error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


def umeyama(src, dst, with_scale: bool = True):
    """Least-squares ``(s, R, t)`` with ``dst ~ s R src + t``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("point sets must be matching (n, 3) arrays")
    if len(src) < 2:
        raise ValueError("alignment needs at least two correspondences")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    cov = xd.T @ xs / len(src)
    U, sv, Vt = np.linalg.svd(cov)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    var = (xs**2).sum() / len(src)
    s = float(np.trace(np.diag(sv) @ D) / var) if with_scale and var > 0 else 1.0
    t = mu_d - s * R @ mu_s
    return s, R, t


def ate(estimate, truth, alignment: str = "sim3") -> float:
    """RMSE of position error after aligning ``estimate`` onto ``truth``."""
    est = np.asarray(estimate, dtype=float)
    gt = np.asarray(truth, dtype=float)
    if alignment not in ("se3", "sim3"):
        raise ValueError(f"unknown alignment {alignment!r}")
    s, R, t = umeyama(est, gt, with_scale=alignment == "sim3")
    err = (s * est @ R.T + t) - gt
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def align_points(points, estimate, truth, alignment: str = "sim3") -> np.ndarray:
    """Apply the trajectory alignment ``estimate -> truth`` to ``points``."""
    s, R, t = umeyama(estimate, truth, with_scale=alignment == "sim3")
    return s * np.asarray(points, dtype=float) @ R.T + t


@dataclass
class ScaleDrift:
    series: np.ndarray
    raw: np.ndarray
    mean: float
    std: float

    @property
    def mean_error(self) -> float:
        return abs(self.mean - 1.0)


def scale_drift_windows(estimate, truth, window: int = 100, stride: int = 5, frame_ids=None) -> ScaleDrift:
    """Per-window similarity scale (truth -> estimate), normalized by the
    first window.

    Without ``frame_ids`` a window is ``window`` consecutive poses. With them
    (one id per pose, increasing) a window covers the frame-index range
    ``[start, start + window)`` and windows holding fewer than three poses are
    skipped, so keyframe trajectories are measured in stream frames.
    """
    est = np.asarray(estimate, dtype=float)
    gt = np.asarray(truth, dtype=float)
    if len(est) != len(gt):
        raise ValueError("trajectories must have equal length")
    if frame_ids is None:
        if len(est) < window:
            raise ValueError(f"trajectory of {len(est)} poses shorter than window {window}")
        spans = [np.arange(s, s + window) for s in range(0, len(est) - window + 1, stride)]
    else:
        ids = np.asarray(frame_ids)
        if len(ids) != len(est):
            raise ValueError("one frame id per pose is required")
        if len(ids) == 0 or ids[-1] - ids[0] + 1 < window:
            raise ValueError(f"trajectory spans fewer than {window} frames")
        spans = [np.flatnonzero((ids >= s) & (ids < s + window))
                 for s in range(int(ids[0]), int(ids[-1]) - window + 2, stride)]
        spans = [sp for sp in spans if len(sp) >= 3]
    raw = np.array([umeyama(gt[sp], est[sp])[0] for sp in spans])
    series = raw / raw[0]
    return ScaleDrift(series, raw, float(series.mean()), float(series.std()))


@dataclass
class CloudMetrics:
    accuracy: float
    completeness: float

    @property
    def chamfer(self) -> float:
        return 0.5 * (self.accuracy + self.completeness)


def cloud_metrics(estimate, truth) -> CloudMetrics:
    est = np.asarray(estimate, dtype=float).reshape(-1, 3)
    gt = np.asarray(truth, dtype=float).reshape(-1, 3)
    if len(est) == 0 or len(gt) == 0:
        raise ValueError("point clouds must be non-empty")
    acc = cKDTree(gt).query(est, k=1)[0]
    comp = cKDTree(est).query(gt, k=1)[0]
    return CloudMetrics(float(acc.mean()), float(comp.mean()))


def trajectory_length(positions) -> float:
    p = np.asarray(positions, dtype=float)
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def ate_ratio(ate_value: float, positions_truth) -> float:
    """ATE as a percentage of the ground-truth path length."""
    return 100.0 * ate_value / trajectory_length(positions_truth)
