"""Scale recovery from the fixed primary-assistant distance, and placement of
each sub-map in the world frame."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import Pose, se3_interpolate


@dataclass
class SpacingEstimate:
    submap: int
    spacings: np.ndarray
    mean: float
    scale: float = float("nan")

    @property
    def valid(self) -> bool:
        return self.spacings.size > 0 and self.mean > 0


def pair_spacing(primary: Pose, assistant: Pose) -> float:
    return float(np.linalg.norm(primary.translation - assistant.translation))


def async_pair_spacing(assistant: Pose, t_a: float, before: Pose, after: Pose) -> float:
    """Spacing to the primary pose interpolated at ``t_a`` between two
    time-stamped primary poses."""
    t0, t1 = before.timestamp, after.timestamp
    if t0 is None or t1 is None:
        raise ValueError("bracketing poses need timestamps")
    if not t0 <= t_a <= t1:
        raise ValueError(f"assistant time {t_a} outside bracket [{t0}, {t1}]")
    alpha = 0.0 if t1 == t0 else (t_a - t0) / (t1 - t0)
    return pair_spacing(se3_interpolate(before, after, alpha), assistant)


def collect_spacings(primary_times, primary: Sequence[Pose], assistant_times,
                     assistant: Sequence[Pose], max_bracket: Optional[float] = None) -> np.ndarray:
    """Spacing of every assistant pose whose time lies inside the primary span.

    Pairs interpolated across a bracket longer than ``max_bracket`` are
    dropped.
    """
    primary_times = np.asarray(primary_times, dtype=float)
    out = []
    for t_a, a in zip(assistant_times, assistant):
        hit = np.flatnonzero(primary_times == t_a)
        if hit.size:
            out.append(pair_spacing(primary[int(hit[0])], a))
            continue
        if t_a < primary_times[0] or t_a > primary_times[-1]:
            continue
        i = int(np.searchsorted(primary_times, t_a)) - 1
        if max_bracket is not None and primary_times[i + 1] - primary_times[i] > max_bracket:
            continue
        out.append(async_pair_spacing(a, t_a, primary[i], primary[i + 1]))
    return np.asarray(out, dtype=float)


def scale_factor(reference_spacing: float, spacing: float) -> float:
    if not spacing > 0:
        raise ValueError(f"non-positive mean spacing {spacing}")
    return reference_spacing / spacing


def rectify_poses(poses: Sequence[Pose], scale: float) -> list:
    """Scale translations; rotations are passed through untouched."""
    return [Pose(p.rotation, p.translation * scale, p.timestamp) for p in poses]


def align_submap_to_world(local_common: Optional[Pose], world_common: Optional[Pose]) -> Pose:
    """World-from-local transform that maps the first common frame's local
    pose onto its world pose. Identity for the first sub-map."""
    if local_common is None or world_common is None:
        return Pose.identity()
    return (world_common @ local_common.inverse()).with_timestamp(None)
