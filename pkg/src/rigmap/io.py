"""File formats: TUM trajectories, ASCII point clouds, CSV tables and
replayable world files."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import Intrinsics, PixelGrid, Pose

WORLD_FORMAT_VERSION = 1


class TrajectoryParseError(ValueError):
    def __init__(self, path, line_no: int, msg: str):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.line_no = line_no


def _num(v: float) -> str:
    s = f"{v:.9g}"
    return "0" if s in ("-0", "0") else s


def format_pose(pose: Pose) -> str:
    q = Rotation.from_matrix(pose.rotation).as_quat()
    if q[3] < 0:
        q = -q
    q /= np.linalg.norm(q)
    stamp = 0.0 if pose.timestamp is None else pose.timestamp
    vals = " ".join(_num(v) for v in list(pose.translation) + list(q))
    return f"{stamp:.9f} {vals}"


def write_trajectory(poses: Sequence[Pose], path) -> None:
    with open(path, "w") as fh:
        for p in poses:
            fh.write(format_pose(p) + "\n")


def read_trajectory(path) -> list:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise TrajectoryParseError(path, n, f"expected 8 fields, got {len(parts)}")
            try:
                v = [float(x) for x in parts]
            except ValueError as exc:
                raise TrajectoryParseError(path, n, str(exc)) from None
            q = np.asarray(v[4:])
            if not np.isfinite(q).all() or np.linalg.norm(q) == 0:
                raise TrajectoryParseError(path, n, "invalid quaternion")
            R = Rotation.from_quat(q / np.linalg.norm(q)).as_matrix()
            out.append(Pose(R, v[1:4], v[0]))
    return out


def write_point_cloud(points, confidence, path) -> None:
    """ASCII cloud: a count header, then ``x y z confidence`` per line."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    confidence = np.asarray(confidence, dtype=float).reshape(-1)
    with open(path, "w") as fh:
        fh.write(f"# points {len(points)}\n")
        for p, c in zip(points, confidence):
            fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c:.6g}\n")


def read_point_cloud(path):
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.size == 0:
        return np.zeros((0, 3)), np.zeros(0)
    return data[:, :3], data[:, 3]


def write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------------------
# world files: <stem>.json holds the configuration, <stem>.npz the arrays
# ---------------------------------------------------------------------------


def _world_config_dict(cfg) -> dict:
    d = asdict(cfg)
    return d


def save_world(world, stem) -> tuple[Path, Path]:
    stem = Path(stem)
    meta = {"version": WORLD_FORMAT_VERSION, "config": _world_config_dict(world.config)}
    jpath = stem.with_suffix(".json")
    npath = stem.with_suffix(".npz")
    jpath.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    R = np.stack([p.rotation for p in world.primary])
    t = np.stack([p.translation for p in world.primary])
    Ra = np.stack([p.rotation for p in world.assistant])
    ta = np.stack([p.translation for p in world.assistant])
    np.savez(npath, times=world.times, assistant_times=world.assistant_times, landmarks=world.landmarks,
             disparity=world.disparity, primary_R=R, primary_t=t, assistant_R=Ra, assistant_t=ta)
    return jpath, npath


def load_world_config(path):
    from .simulator import WorldConfig

    meta = json.loads(Path(path).with_suffix(".json").read_text())
    if meta.get("version") != WORLD_FORMAT_VERSION:
        raise ValueError(f"unsupported world file version {meta.get('version')}")
    c = dict(meta["config"])
    c["intrinsics"] = Intrinsics(**c["intrinsics"])
    c["grid"] = PixelGrid(**c["grid"])
    return WorldConfig(**c)


def load_world(path):
    """Regenerate the world from its stored configuration and check it against
    the stored arrays."""
    from .simulator import generate_world

    cfg = load_world_config(path)
    world = generate_world(cfg)
    data = np.load(Path(path).with_suffix(".npz"))
    if not (np.array_equal(data["landmarks"], world.landmarks) and np.array_equal(data["times"], world.times)):
        raise ValueError("stored world arrays do not match the regenerated world")
    return world
