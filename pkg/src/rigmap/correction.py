"""Closed-form removal of the pose error caused by wrong focal lengths.

If a network reports focal lengths scaled by ``S = diag(sx, sy, 1)`` its
relative poses come from the essential matrix ``S E S`` instead of ``E``.
Given the scaling, the translation direction is restored exactly by
``S t_est`` and the rotation to first order by a small rotation orthogonal to
``t_est``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Intrinsics, Pose, rodrigues, skew, so3_log, vee
from .simulator import reference_pose


@dataclass(frozen=True)
class CorrectionConfig:
    switch_angle_deg: float = 5.0
    t_min: float = 1e-6
    rotation: bool = True
    translation: bool = True


@dataclass(frozen=True)
class ScalingError:
    sx: float
    sy: float
    damping: float = 1.0

    def __post_init__(self):
        if not (self.sx > 0 and self.sy > 0):
            raise ValueError(f"scaling must be positive, got ({self.sx}, {self.sy})")
        if not 0.0 <= self.damping <= 1.0:
            raise ValueError(f"damping {self.damping} outside [0, 1]")

    @property
    def matrix(self) -> np.ndarray:
        return np.diag([self.sx, self.sy, 1.0])

    @property
    def delta(self) -> np.ndarray:
        return self.matrix - np.eye(3)

    @property
    def damped_delta(self) -> np.ndarray:
        return self.damping * self.delta

    @property
    def effective(self) -> np.ndarray:
        return np.eye(3) + self.damped_delta

    @property
    def is_identity(self) -> bool:
        return not np.any(self.damped_delta)

    def damped(self, damping: float) -> "ScalingError":
        return ScalingError(self.sx, self.sy, damping)

    @staticmethod
    def mean(a: "ScalingError", b: "ScalingError") -> "ScalingError":
        if a.damping != b.damping:
            raise ValueError("cannot average scalings with different damping")
        return ScalingError(0.5 * (a.sx + b.sx), 0.5 * (a.sy + b.sy), a.damping)


def scaling_from_intrinsics(k_est: Intrinsics, k_global: Intrinsics, damping: float = 1.0) -> ScalingError:
    # principal points are assumed shared; any difference is ignored
    return ScalingError(k_est.fx / k_global.fx, k_est.fy / k_global.fy, damping)


def correct_translation(t_est, s: ScalingError, r_est=None, switch_angle_deg: float = 5.0) -> np.ndarray:
    t_est = np.asarray(t_est, dtype=float)
    if s.is_identity:
        return t_est
    S = s.effective
    if r_est is None or np.linalg.norm(so3_log(r_est)) < np.deg2rad(switch_angle_deg):
        return S @ t_est
    r_est = np.asarray(r_est, dtype=float)
    Si = np.diag(1.0 / np.diag(S))
    M = Si @ skew(t_est) @ r_est @ Si @ r_est.T
    return vee(M) * S[0, 0] * S[1, 1]


def rotation_error_vector(r_est, t_est, s: ScalingError) -> np.ndarray:
    """Small-angle rotation error; always orthogonal to ``t_est``."""
    r_est = np.asarray(r_est, dtype=float)
    t_est = np.asarray(t_est, dtype=float)
    D = s.damped_delta
    return skew(t_est) @ ((r_est @ D @ r_est.T - D) @ t_est) / (t_est @ t_est)


def correct_rotation(r_est, t_est, s: ScalingError, t_min: float = 1e-6):
    """(corrected rotation, error vector, skipped).

    Steps with ``|t_est| <= t_min`` carry no epipolar information about the
    rotation and are returned unchanged with ``skipped=True``.
    """
    r_est = np.asarray(r_est, dtype=float)
    t_est = np.asarray(t_est, dtype=float)
    if np.linalg.norm(t_est) <= t_min:
        return r_est, np.zeros(3), True
    if s.is_identity:
        return r_est, np.zeros(3), False
    theta = rotation_error_vector(r_est, t_est, s)
    return rodrigues(theta).T @ r_est, theta, False


@dataclass
class StepLog:
    theta_norm: float
    general_branch: bool
    skipped: bool
    damping: float


def correct_step(step: Pose, s: ScalingError, cfg: CorrectionConfig = CorrectionConfig(),
                 log: list | None = None) -> Pose:
    if s.is_identity or not (cfg.rotation or cfg.translation):
        if log is not None:
            log.append(StepLog(0.0, False, False, s.damping))
        return step
    R, t = step.rotation, step.translation
    R_new, theta, skipped = R, np.zeros(3), False
    if cfg.rotation:
        R_new, theta, skipped = correct_rotation(R, t, s, cfg.t_min)
    t_new = t
    general = bool(np.linalg.norm(so3_log(R)) >= np.deg2rad(cfg.switch_angle_deg))
    if cfg.translation:
        t_new = correct_translation(t, s, R, cfg.switch_angle_deg)
    if log is not None:
        log.append(StepLog(float(np.linalg.norm(theta)), general, skipped, s.damping))
    return Pose(R_new, t_new, step.timestamp)


def rectify_primary_chain(steps: Sequence[Pose], scalings: Sequence[ScalingError],
                          start: Pose | None = None, cfg: CorrectionConfig = CorrectionConfig(),
                          log: list | None = None) -> list:
    """Correct every relative step and compose them left to right.

    Returns the poses after ``start``; element ``i`` is
    ``start * corr(step_0) * ... * corr(step_i)``.
    """
    if len(steps) != len(scalings):
        raise ValueError("one scaling per step is required")
    cur = Pose.identity() if start is None else start
    out = []
    for step, s in zip(steps, scalings):
        cur = (cur @ correct_step(step, s, cfg, log)).with_timestamp(step.timestamp)
        out.append(cur)
    return out


def rectify_assistant_chain(raw_primary_times, raw_primary: Sequence[Pose],
                            rect_primary: Sequence[Pose], assistant_times,
                            raw_assistant: Sequence[Pose], s_joint: ScalingError,
                            cfg: CorrectionConfig = CorrectionConfig(), clamp: bool = False) -> list:
    """Assistant poses rebuilt on top of the rectified primary trajectory.

    Each assistant pose is re-expressed relative to its primary reference (the
    primary pose at the same time, interpolated if needed), corrected with the
    joint scaling and attached to the rectified reference. With ``clamp`` an
    assistant outside the primary span is referenced to the nearest end.
    """
    raw_primary_times = np.asarray(raw_primary_times, dtype=float)
    out = []
    for t_a, a in zip(assistant_times, raw_assistant):
        outside = t_a < raw_primary_times[0] - 1e-12 or t_a > raw_primary_times[-1] + 1e-12
        if outside and not clamp:
            raise ValueError(f"assistant time {t_a} outside primary span")
        ref_raw, _ = reference_pose(raw_primary_times, raw_primary, t_a)
        ref_rect, _ = reference_pose(raw_primary_times, rect_primary, t_a)
        rel = correct_step(ref_raw.inverse() @ a, s_joint, cfg)
        out.append((ref_rect @ rel).with_timestamp(t_a))
    return out
