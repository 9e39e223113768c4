"""Keyframe selection, batching into sub-maps and assistant association."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import Intrinsics, Pose
from .simulator import ASSISTANT, LOOP, PRIMARY, SubmapOutput


@dataclass(frozen=True)
class PipelineConfig:
    tau_flow: float = 25.0
    n_max: int = 15
    n_overlap: int = 3
    sync: bool = True
    loop_radius: float = 2.0
    loop_min_gap: int = 50
    prefetch: int = 2

    def validate(self):
        if not self.tau_flow > 0:
            raise ValueError("tau_flow must be positive")
        if not self.n_max > self.n_overlap >= 1:
            raise ValueError("need n_max > n_overlap >= 1")


def select_keyframes(disparity: Sequence[float], tau_flow: float) -> list[int]:
    """Frame 0 plus every frame at which disparity accumulated since the last
    keyframe exceeds ``tau_flow``."""
    disparity = np.asarray(disparity, dtype=float)
    if np.any(disparity < 0):
        raise ValueError("disparities must be non-negative")
    if disparity.size == 0:
        return []
    keys = [0]
    acc = 0.0
    for i in range(1, disparity.size):
        acc += disparity[i]
        if acc > tau_flow:
            keys.append(i)
            acc = 0.0
    return keys


def batch_keyframes(keyframes: Sequence[int], n_max: int) -> list[np.ndarray]:
    keyframes = np.asarray(keyframes, dtype=int)
    return [keyframes[i:i + n_max] for i in range(0, len(keyframes), n_max)]


def associate_assistant(primary_times, assistant_times, sync: bool, tol: float = 1e-9) -> np.ndarray:
    """Assistant frame index for every primary timestamp.

    Sync mode requires exact matches. Async mode takes the nearest assistant
    frame that no earlier keyframe already claimed; equal distances go to the
    earlier assistant frame.
    """
    primary_times = np.asarray(primary_times, dtype=float)
    assistant_times = np.asarray(assistant_times, dtype=float)
    if assistant_times.size == 0:
        raise ValueError("assistant stream is empty")
    if sync:
        idx = np.searchsorted(assistant_times, primary_times)
        idx = np.clip(idx, 0, assistant_times.size - 1)
        miss = np.abs(assistant_times[idx] - primary_times) > tol
        if miss.any():
            t = primary_times[np.flatnonzero(miss)[0]]
            raise ValueError(f"no assistant frame at primary timestamp {t}")
        return idx.astype(int)
    used: set[int] = set()
    out = []
    for t in primary_times:
        c = int(np.searchsorted(assistant_times, t))
        lo, hi = max(c - 3, 0), min(c + 3, assistant_times.size)
        pick = _nearest_free(assistant_times, t, range(lo, hi), used)
        if pick is None:
            pick = _nearest_free(assistant_times, t, range(assistant_times.size), used)
        if pick is None:
            raise ValueError("assistant stream exhausted during de-duplication")
        used.add(pick)
        out.append(pick)
    return np.asarray(out, dtype=int)


def _nearest_free(times, t, candidates, used) -> Optional[int]:
    best = None
    for j in candidates:
        if j in used:
            continue
        key = (abs(times[j] - t), times[j])
        if best is None or key < best[0]:
            best = (key, j)
    return None if best is None else best[1]


def bridge_frames(previous: Optional[np.ndarray], new_keyframes, n_overlap: int):
    """(primary frame ids, common frame ids) of the next sub-map."""
    new_keyframes = np.asarray(new_keyframes, dtype=int)
    if previous is None or len(previous) == 0:
        return new_keyframes.copy(), np.zeros(0, dtype=int)
    common = np.asarray(previous, dtype=int)[-min(n_overlap, len(previous)):]
    if len(new_keyframes) and common[-1] >= new_keyframes[0]:
        raise ValueError("new keyframes must follow the previous sub-map")
    return np.concatenate([common, new_keyframes]), common.copy()


@dataclass
class Submap:
    """A backbone window plus everything the back-end derives from it.

    ``raw`` is never modified; ``poses`` and ``depth`` hold the corrected and
    scale-rectified geometry and are rebuilt from ``raw`` on global updates.
    """

    index: int
    raw: SubmapOutput
    primary_ids: np.ndarray
    new_ids: np.ndarray
    common_ids: np.ndarray
    assistant_ids: np.ndarray
    poses: list = field(default_factory=list)
    depth: Optional[np.ndarray] = None
    scale: float = 1.0
    spacing: float = float("nan")
    flagged: bool = False
    alignment: Pose = field(default_factory=Pose.identity)
    next_common_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def intrinsics(self) -> Intrinsics:
        return self.raw.intrinsics

    @property
    def frame_ids(self) -> np.ndarray:
        return self.raw.frame_ids

    @property
    def cameras(self) -> np.ndarray:
        return self.raw.cameras

    @property
    def confidence(self) -> np.ndarray:
        return self.raw.confidence

    @property
    def loop_pairs(self) -> list:
        return self.raw.loop_pairs

    def rows(self, camera: int) -> np.ndarray:
        return self.raw.rows(camera)

    def row_of(self, frame_id: int, camera: int = PRIMARY) -> int:
        return self.raw.row_of(frame_id, camera)

    def has_frame(self, frame_id: int, camera: int = PRIMARY) -> bool:
        return bool(np.any((self.raw.frame_ids == frame_id) & (self.raw.cameras == camera)))

    def pose_of(self, frame_id: int, camera: int = PRIMARY) -> Pose:
        return self.poses[self.row_of(frame_id, camera)]

    @property
    def central_id(self) -> int:
        ids = self.new_ids if len(self.new_ids) else self.primary_ids
        return int(ids[len(ids) // 2])

    @property
    def first_common(self) -> Optional[int]:
        return int(self.common_ids.min()) if len(self.common_ids) else None


def build_submap(output: SubmapOutput, primary_ids, common_ids, assistant_ids) -> Submap:
    primary_ids = np.asarray(primary_ids, dtype=int)
    common_ids = np.asarray(common_ids, dtype=int)
    new_ids = primary_ids[len(common_ids):]
    if len(set(primary_ids.tolist())) != len(primary_ids):
        raise ValueError("duplicate primary frame ids")
    assistant_ids = np.asarray(assistant_ids, dtype=int)
    if len(set(assistant_ids.tolist())) != len(assistant_ids):
        raise ValueError("duplicate assistant frame ids")
    return Submap(
        index=output.index,
        raw=output,
        primary_ids=primary_ids,
        new_ids=new_ids,
        common_ids=common_ids,
        assistant_ids=assistant_ids,
        poses=list(output.poses),
        depth=output.depth.copy(),
    )


__all__ = [
    "ASSISTANT",
    "LOOP",
    "PRIMARY",
    "PipelineConfig",
    "Submap",
    "associate_assistant",
    "batch_keyframes",
    "bridge_frames",
    "build_submap",
    "select_keyframes",
]
