"""Synthetic stand-in for a feed-forward geometry network.

A world is a camera rig driving down an infinite "tunnel" made of a floor
plane and a ceiling plane. The primary camera follows a closed-form
trajectory; the assistant camera is rigidly attached to it. Per sub-map
outputs (intrinsics, local poses, depth, confidence) are produced from ground
truth and corrupted with controllable errors: an unknown scale, a focal-length
scaling error injected through the epipolar model, a smooth radial warp of the
depth, and optional unmodelled pose noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .geometry import (
    Intrinsics,
    PixelGrid,
    Pose,
    rodrigues,
    se3_interpolate,
    skew,
    so3_log,
)

PRIMARY, ASSISTANT, LOOP = 0, 1, 2
TRAJECTORIES = ("line", "arc", "loop", "random-walk")


class InsufficientCovisibility(ValueError):
    pass


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass(frozen=True)
class WorldConfig:
    trajectory: str = "loop"
    length: float = 200.0
    n_frames: int = 500
    spacing: float = 0.5
    rig_yaw_deg: float = 3.0
    frame_period: float = 0.1
    intrinsics: Intrinsics = Intrinsics(240.0, 240.0, 239.5, 79.5)
    grid: PixelGrid = PixelGrid()
    n_landmarks: int = 3000
    landmark_halfwidth: float = 12.0
    floor: float = 1.5
    ceiling: float = -2.5
    max_depth: float = 40.0
    wobble_deg: float = 2.0
    wobble_period: float = 25.0
    # assistant clock offset in seconds; nonzero means unsynchronized streams
    assistant_offset: float = 0.0
    seed: int = 0

    def validate(self):
        if self.trajectory not in TRAJECTORIES:
            raise ValueError(f"unknown trajectory kind {self.trajectory!r}")
        if not self.spacing > 0:
            raise ValueError("rig spacing must be positive")
        if self.n_frames < 2:
            raise ValueError("need at least two frames")
        if self.n_landmarks <= 0:
            raise ValueError("world needs landmarks")
        if not self.length > 0 or not self.frame_period > 0:
            raise ValueError("length and frame period must be positive")
        if not self.ceiling < 0 < self.floor:
            raise ValueError("camera must sit between ceiling and floor")

    @property
    def extrinsic(self) -> Pose:
        """Assistant camera expressed in the primary camera frame."""
        return Pose(_rot_y(np.deg2rad(self.rig_yaw_deg)), [self.spacing, 0.0, 0.0])

    @property
    def synchronized(self) -> bool:
        return self.assistant_offset == 0.0


class Trajectory:
    """Arclength-parameterized path in the x-z plane with a heading angle."""

    def __init__(self, kind: str, length: float, rng: np.random.Generator):
        self.kind = kind
        self.length = length
        if kind == "random-walk":
            n = max(4000, int(40 * length))
            s = np.linspace(-0.2 * length, 1.2 * length, n)
            amps = rng.uniform(0.1, 0.4, size=3)
            waves = rng.uniform(0.1, 0.3, size=3) * length
            phases = rng.uniform(0, 2 * np.pi, size=3)
            heading = sum(
                a * np.sin(2 * np.pi * s / w + p) for a, w, p in zip(amps, waves, phases)
            )
            x = cumulative_trapezoid(np.sin(heading), s, initial=0.0)
            z = cumulative_trapezoid(np.cos(heading), s, initial=0.0)
            i0 = np.searchsorted(s, 0.0)
            self._grid = (s, x - x[i0], z - z[i0], heading - heading[i0])

    def __call__(self, s) -> tuple[np.ndarray, np.ndarray]:
        """Positions (n, 3) and headings (n,) at arclengths ``s``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self.kind == "line":
            heading = np.zeros_like(s)
            pos = np.stack([np.zeros_like(s), np.zeros_like(s), s], axis=-1)
            return pos, heading
        if self.kind in ("arc", "loop"):
            turn = np.pi / 2 if self.kind == "arc" else 2 * np.pi
            radius = self.length / turn
            heading = s / radius
            pos = np.stack(
                [radius * (1 - np.cos(heading)), np.zeros_like(s), radius * np.sin(heading)],
                axis=-1,
            )
            return pos, heading
        g, x, z, h = self._grid
        pos = np.stack([np.interp(s, g, x), np.zeros_like(s), np.interp(s, g, z)], axis=-1)
        return pos, np.interp(s, g, h)


@dataclass
class FrameObservation:
    frame_id: int
    camera: int
    timestamp: float
    pose: Pose
    depth: np.ndarray
    confidence: np.ndarray
    landmark_ids: np.ndarray
    pixels: np.ndarray


@dataclass
class World:
    config: WorldConfig
    trajectory: Trajectory
    times: np.ndarray
    primary: list
    assistant_times: np.ndarray
    assistant: list
    landmarks: np.ndarray
    disparity: np.ndarray

    @property
    def n_frames(self) -> int:
        return len(self.times)

    def camera_pose(self, camera: int, frame_id: int) -> Pose:
        return self.assistant[frame_id] if camera == ASSISTANT else self.primary[frame_id]

    def primary_at(self, t) -> list:
        return _rig_poses(self.config, self.trajectory, np.atleast_1d(t))

    def render(self, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
        return render_depth(self.config, pose)

    def project(self, pose: Pose, margin: float = 0.0):
        """Landmark ids and pixels visible from ``pose``."""
        return _project_landmarks(self.config, self.landmarks, pose, margin)

    def observation(self, frame_id: int, camera: int = PRIMARY) -> FrameObservation:
        pose = self.camera_pose(camera, frame_id)
        depth, conf = self.render(pose)
        ids, px = self.project(pose)
        stamp = self.assistant_times[frame_id] if camera == ASSISTANT else self.times[frame_id]
        return FrameObservation(frame_id, camera, float(stamp), pose, depth, conf, ids, px)


def _rig_poses(cfg: WorldConfig, traj: Trajectory, t: np.ndarray) -> list:
    duration = (cfg.n_frames - 1) * cfg.frame_period
    s = cfg.length * t / duration
    pos, heading = traj(s)
    amp = np.deg2rad(cfg.wobble_deg)
    phase = 2 * np.pi * t / (cfg.wobble_period * cfg.frame_period)
    yaw = heading + amp * np.sin(phase)
    pitch = 0.6 * amp * np.sin(phase / 0.7 + 1.0)
    return [
        Pose(_rot_y(yaw[k]) @ _rot_x(pitch[k]), pos[k], t[k]) for k in range(len(t))
    ]


def render_depth(cfg: WorldConfig, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Depth and confidence grids for a camera at ``pose`` (camera-to-world)."""
    rays = cfg.intrinsics.rays(cfg.grid.pixels())
    dirs = rays @ pose.rotation.T
    dy = dirs[..., 1]
    cy = pose.translation[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(dy > 0, (cfg.floor - cy) / dy, np.where(dy < 0, (cfg.ceiling - cy) / dy, np.inf))
    lam = np.where(np.isfinite(lam) & (lam > 0), lam, np.inf)
    conf = np.clip(1.0 - lam / cfg.max_depth, 0.0, 1.0)
    depth = np.where(conf > 0, lam, 0.0)
    return depth, conf


def _project_landmarks(cfg, landmarks, pose, margin=0.0):
    cam = (landmarks - pose.translation) @ pose.rotation
    px, z = cfg.intrinsics.project(cam)
    g = cfg.grid
    ok = (
        (z > 1e-3)
        & (z < cfg.max_depth)
        & (px[:, 0] >= margin - 0.5)
        & (px[:, 0] <= g.width - 0.5 - margin)
        & (px[:, 1] >= margin - 0.5)
        & (px[:, 1] <= g.height - 0.5 - margin)
    )
    ids = np.flatnonzero(ok)
    return ids, px[ids]


def _mean_flow(cfg: WorldConfig, prev: Pose, cur: Pose) -> float:
    depth, conf = render_depth(cfg, cur)
    valid = conf > 0
    if not valid.any():
        return 0.0
    pix = cfg.grid.pixels()[valid]
    pts = cur.transform(cfg.intrinsics.backproject(pix, depth[valid]))
    cam = (pts - prev.translation) @ prev.rotation
    px, z = cfg.intrinsics.project(cam)
    front = z > 1e-6
    if not front.any():
        return 0.0
    return float(np.linalg.norm(px[front] - pix[front], axis=1).mean())


def generate_world(cfg: WorldConfig) -> World:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    traj = Trajectory(cfg.trajectory, cfg.length, rng)
    times = np.arange(cfg.n_frames) * cfg.frame_period
    primary = _rig_poses(cfg, traj, times)
    ext = cfg.extrinsic
    a_times = times + cfg.assistant_offset
    if cfg.synchronized:
        assistant = [p @ ext for p in primary]
    else:
        assistant = [p @ ext for p in _rig_poses(cfg, traj, a_times)]

    disparity = np.zeros(cfg.n_frames)
    for i in range(1, cfg.n_frames):
        disparity[i] = _mean_flow(cfg, primary[i - 1], primary[i])

    s = rng.uniform(0.0, cfg.length, size=cfg.n_landmarks)
    lateral = rng.uniform(-cfg.landmark_halfwidth, cfg.landmark_halfwidth, size=cfg.n_landmarks)
    on_floor = rng.random(cfg.n_landmarks) < 0.5
    pos, heading = traj(s)
    right = np.stack([np.cos(heading), np.zeros_like(s), -np.sin(heading)], axis=-1)
    pts = pos + lateral[:, None] * right
    pts[:, 1] = np.where(on_floor, cfg.floor, cfg.ceiling)

    seen = np.zeros(cfg.n_landmarks, dtype=int)
    for p in primary:
        ids, _ = _project_landmarks(cfg, pts, p)
        seen[ids] += 1
    pts = pts[seen >= 2]
    if len(pts) == 0:
        raise ValueError("no landmark is visible from two frames")
    return World(cfg, traj, times, primary, a_times, assistant, pts, disparity)


# ---------------------------------------------------------------------------
# correspondences and loop oracle
# ---------------------------------------------------------------------------


def synthesize_matches(world: World, i: int, j: int, min_count: int = 10, camera: int = PRIMARY):
    """Exact pixel matches between frames ``i`` and ``j``.

    Returns ``(x_i, x_j, landmark_ids)`` with ``x_j^T F x_i = 0`` for the
    fundamental matrix of the relative pose ``T_j^-1 T_i``.
    """
    if i == j:
        raise InsufficientCovisibility("a frame cannot be matched with itself")
    pi, pj = world.camera_pose(camera, i), world.camera_pose(camera, j)
    ids_i, px_i = world.project(pi)
    ids_j, px_j = world.project(pj)
    common, ai, aj = np.intersect1d(ids_i, ids_j, assume_unique=True, return_indices=True)
    if len(common) < min_count:
        raise InsufficientCovisibility(
            f"frames {i} and {j} share {len(common)} landmarks, need {min_count}"
        )
    return px_i[ai], px_j[aj], common


def loop_oracle(world: World, current: int, candidates: Sequence[int],
                radius: float = 2.0, min_gap: int = 50) -> Optional[int]:
    """Earliest candidate frame near ``current`` in space but not in time."""
    cand = np.asarray(sorted(candidates), dtype=int)
    cand = cand[current - cand > min_gap]
    if cand.size == 0:
        return None
    here = world.primary[current].translation
    pos = np.stack([world.primary[c].translation for c in cand])
    near = np.flatnonzero(np.linalg.norm(pos - here, axis=1) <= radius)
    return int(cand[near[0]]) if near.size else None


# ---------------------------------------------------------------------------
# sub-map synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistortionConfig:
    scale_sigma: float = 0.0
    # explicit per-sub-map multipliers; sub-maps past the end draw from scale_sigma
    scale_multipliers: tuple = ()
    intrinsic_error: float = 0.0
    # probability that a sub-map reports the true focal lengths
    intrinsic_exact_prob: float = 0.0
    fixed_scaling: Optional[tuple] = None
    assistant_independent: bool = False
    warp_amplitude: float = 0.0
    warp_quartic: float = 0.0
    # indices of warped sub-maps; empty warps every sub-map
    warp_submaps: tuple = ()
    rot_noise: float = 0.0
    trans_noise: float = 0.0
    seed: int = 0

    def validate(self):
        if self.warp_amplitude < 0:
            raise ValueError("warp amplitude must be non-negative")
        if self.fixed_scaling is not None and min(self.fixed_scaling) <= 0:
            raise ValueError("scaling factors must be positive")
        if not 0 <= self.intrinsic_error < 1:
            raise ValueError("intrinsic error must lie in [0, 1)")


@dataclass
class SubmapDraw:
    multiplier: float
    scaling: tuple
    assistant_scaling: tuple


def draw_submap_errors(dist: DistortionConfig, index: int) -> tuple[SubmapDraw, np.random.Generator]:
    rng = np.random.default_rng([dist.seed, index])
    z = rng.standard_normal()
    if index < len(dist.scale_multipliers):
        m = float(dist.scale_multipliers[index])
    else:
        m = float(np.exp(dist.scale_sigma * z))

    def focal():
        u = rng.uniform(-1.0, 1.0, size=2)
        exact = rng.random() < dist.intrinsic_exact_prob
        if dist.fixed_scaling is not None:
            return tuple(float(v) for v in dist.fixed_scaling)
        if exact or dist.intrinsic_error == 0:
            return (1.0, 1.0)
        return tuple(float(v) for v in 1.0 + dist.intrinsic_error * u)

    sp = focal()
    sa = focal() if dist.assistant_independent else sp
    return SubmapDraw(m, sp, sa), rng


def corrupt_step(rel: Pose, scaling) -> Pose:
    """Relative pose a network would report with focal lengths scaled by ``scaling``.

    The true essential matrix ``[t]x R`` is observed through normalized
    coordinates divided by ``S = diag(sx, sy, 1)``, which turns it into
    ``S E S``. That matrix is decomposed back into the nearest rotation and
    translation. The translation norm is chosen so that ``S t_est`` has the
    true length.
    """
    S = np.diag([scaling[0], scaling[1], 1.0])
    if np.array_equal(S, np.eye(3)):
        return rel
    R, t = rel.rotation, rel.translation
    norm = np.linalg.norm(t)
    if norm < 1e-9:
        return Pose(R, np.linalg.solve(S, t), rel.timestamp)
    U, _, Vt = np.linalg.svd(S @ skew(t) @ R @ S)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    best = None
    for Rc in (U @ W @ Vt, U @ W.T @ Vt):
        for sign in (1.0, -1.0):
            u = sign * U[:, 2]
            cost = np.linalg.norm(so3_log(Rc @ R.T)) + np.linalg.norm(u - t / norm)
            if best is None or cost < best[0]:
                best = (cost, Rc, u)
    _, Re, u = best
    return Pose(Re, u * norm / np.linalg.norm(S @ u), rel.timestamp)


def reference_pose(times: np.ndarray, poses: Sequence[Pose], t: float) -> tuple[Pose, bool]:
    """Pose of a time-sorted chain at ``t``; clamps to the ends outside the span.

    The flag says whether ``t`` was inside the span.
    """
    times = np.asarray(times, dtype=float)
    if t <= times[0]:
        return poses[0], bool(t == times[0])
    if t >= times[-1]:
        return poses[-1], bool(t == times[-1])
    i = int(np.searchsorted(times, t, side="right")) - 1
    if times[i] == t:
        return poses[i], True
    alpha = (t - times[i]) / (times[i + 1] - times[i])
    return se3_interpolate(poses[i], poses[i + 1], alpha), True


class RadialWarp:
    """Direction-preserving radial warp about a reference camera.

    A point ``X`` (reference camera coordinates) moves to ``g(X) X`` with
    ``g = 1 + a rho^2 + b rho^4`` and ``rho`` the normalized image radius of
    the point's projection. Since ``g`` depends on direction only, the inverse
    is ``Y / g(Y)``.
    """

    RHO_MAX = 1.5

    def __init__(self, k: Intrinsics, a: float, b: float = 0.0):
        self.k = k
        self.a = a
        self.b = b
        self.half_diag = float(np.hypot(k.cx + 0.5, k.cy + 0.5))

    @property
    def active(self) -> bool:
        return self.a != 0.0 or self.b != 0.0

    def gain(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        z = pts[..., 2]
        front = z > 1e-9
        zz = np.where(front, z, 1.0)
        du = self.k.fx * pts[..., 0] / zz
        dv = self.k.fy * pts[..., 1] / zz
        rho = np.where(front, np.hypot(du, dv) / self.half_diag, self.RHO_MAX)
        rho = np.minimum(rho, self.RHO_MAX)
        return 1.0 + self.a * rho**2 + self.b * rho**4

    def forward(self, pts) -> np.ndarray:
        return pts * self.gain(pts)[..., None]

    def inverse(self, pts) -> np.ndarray:
        return pts / self.gain(pts)[..., None]


def _cast_warped(warp: RadialWarp, origin, dirs, depth0, plane_normal, plane_offset, iters=30):
    """Depths along rays (unit-z ``dirs`` from ``origin``) to the warped plane.

    The unwarped surface is ``n . X = h``; the ray point ``Y`` lies on the
    warped surface when ``n . warp^-1(Y) = h``. Solved with the secant method
    starting from the unwarped depth.
    """

    def f(lam):
        y = origin + lam[:, None] * dirs
        return warp.inverse(y) @ plane_normal - plane_offset

    l0 = depth0.copy()
    l1 = depth0 * warp.gain(origin + depth0[:, None] * dirs)
    f0, f1 = f(l0), f(l1)
    for _ in range(iters):
        denom = f1 - f0
        done = np.abs(f1) <= 1e-13 * np.maximum(1.0, np.abs(plane_offset))
        if done.all():
            break
        safe = np.where(np.abs(denom) > 0, denom, 1.0)
        l2 = np.where(done | (denom == 0), l1, l1 - f1 * (l1 - l0) / safe)
        l0, f0 = l1, f1
        l1 = l2
        f1 = f(l1)
    return l1


@dataclass
class SubmapOutput:
    """One backbone inference bundle, all geometry in the local frame."""

    index: int
    frame_ids: np.ndarray
    cameras: np.ndarray
    timestamps: np.ndarray
    poses: list
    intrinsics: Intrinsics
    assistant_intrinsics: Intrinsics
    depth: np.ndarray
    confidence: np.ndarray
    loop_pairs: list = field(default_factory=list)
    truth: dict = field(default_factory=dict)

    def rows(self, camera: int) -> np.ndarray:
        return np.flatnonzero(self.cameras == camera)

    def row_of(self, frame_id: int, camera: int = PRIMARY) -> int:
        hit = np.flatnonzero((self.frame_ids == frame_id) & (self.cameras == camera))
        if hit.size == 0:
            raise KeyError(f"frame {frame_id} (camera {camera}) not in sub-map {self.index}")
        return int(hit[0])


def synthesize_submap_output(
    world: World,
    primary_ids: Sequence[int],
    assistant_ids: Sequence[int],
    distortion: DistortionConfig,
    index: int,
    loop_pairs: Sequence[tuple] = (),
) -> SubmapOutput:
    """Backbone output for one window of frames.

    ``loop_pairs`` lists ``(current, historical)`` primary frame pairs; the
    historical frame is added to the bundle so the relative pose between the
    two is observed.
    """
    cfg = world.config
    distortion.validate()
    primary_ids = np.asarray(primary_ids, dtype=int)
    assistant_ids = np.asarray(assistant_ids, dtype=int)
    if np.any(np.diff(primary_ids) <= 0):
        raise ValueError("primary frame ids must be strictly increasing")
    draw, rng = draw_submap_errors(distortion, index)
    m = draw.multiplier
    sp = draw.scaling
    s_joint = tuple(0.5 * (np.asarray(sp) + np.asarray(draw.assistant_scaling)))

    origin_inv = world.primary[primary_ids[0]].inverse()

    def local_truth(pose: Pose) -> Pose:
        return (origin_inv @ pose).scaled(m).with_timestamp(pose.timestamp)

    def noisy(step: Pose) -> Pose:
        if distortion.rot_noise == 0 and distortion.trans_noise == 0:
            return step
        dr = rodrigues(distortion.rot_noise * rng.standard_normal(3))
        dt = distortion.trans_noise * rng.standard_normal(3)
        return Pose(step.rotation @ dr, step.translation + dt, step.timestamp)

    p_true = [local_truth(world.primary[i]) for i in primary_ids]
    p_times = world.times[primary_ids]
    p_est = [Pose.identity(p_true[0].timestamp)]
    for a in range(1, len(p_true)):
        step = noisy(corrupt_step(p_true[a - 1].inverse() @ p_true[a], sp))
        p_est.append((p_est[-1] @ step).with_timestamp(p_true[a].timestamp))

    a_est = []
    for aid in assistant_ids:
        t_a = float(world.assistant_times[aid])
        a_true = local_truth(world.assistant[aid])
        ref_true, _ = reference_pose(p_times, p_true, t_a)
        ref_est, _ = reference_pose(p_times, p_est, t_a)
        rel = noisy(corrupt_step(ref_true.inverse() @ a_true, s_joint))
        a_est.append((ref_est @ rel).with_timestamp(t_a))

    l_est, l_ids = [], []
    for cur, hist in loop_pairs:
        r = int(np.searchsorted(primary_ids, cur))
        if r >= len(primary_ids) or primary_ids[r] != cur:
            raise ValueError(f"loop frame {cur} is not a primary frame of this window")
        h_true = local_truth(world.primary[hist])
        rel = noisy(corrupt_step(p_true[r].inverse() @ h_true, sp))
        l_est.append((p_est[r] @ rel).with_timestamp(h_true.timestamp))
        l_ids.append(hist)

    frame_ids = np.concatenate([primary_ids, assistant_ids, np.asarray(l_ids, dtype=int)])
    cameras = np.concatenate([
        np.full(len(primary_ids), PRIMARY),
        np.full(len(assistant_ids), ASSISTANT),
        np.full(len(l_ids), LOOP),
    ]).astype(int)
    poses = p_est + a_est + l_est
    timestamps = np.array([p.timestamp for p in poses], dtype=float)

    # depth: true surface in local units, warped about the reference camera
    warped = not distortion.warp_submaps or index in {int(i) for i in distortion.warp_submaps}
    warp = RadialWarp(cfg.intrinsics, distortion.warp_amplitude if warped else 0.0,
                      distortion.warp_quartic if warped else 0.0)
    rays = cfg.intrinsics.rays(cfg.grid.pixels()).reshape(-1, 3)
    depth = np.zeros((len(frame_ids),) + (cfg.grid.rows, cfg.grid.cols))
    conf = np.zeros_like(depth)
    world_from_local = world.primary[primary_ids[0]]
    for r, (fid, cam) in enumerate(zip(frame_ids, cameras)):
        wpose = world.assistant[fid] if cam == ASSISTANT else world.primary[fid]
        d, c = render_depth(cfg, wpose)
        conf[r] = c
        if not warp.active:
            depth[r] = d * m
            continue
        lt = local_truth(wpose)
        valid = (c > 0).reshape(-1)
        dirs = rays[valid] @ lt.rotation.T
        # world plane y = h in local (scaled) coordinates: n . X = h'
        n = world_from_local.rotation[1]
        out = np.zeros(rays.shape[0])
        for h in (cfg.floor, cfg.ceiling):
            # which plane each valid ray hits in the unwarped world
            wd = (rays[valid] @ wpose.rotation.T)[:, 1]
            sel = wd > 0 if h == cfg.floor else wd < 0
            if not sel.any():
                continue
            h_local = m * (h - world_from_local.translation[1])
            lam = _cast_warped(warp, lt.translation, dirs[sel], d.reshape(-1)[valid][sel] * m, n, h_local)
            idx = np.flatnonzero(valid)[sel]
            out[idx] = lam
        depth[r] = out.reshape(d.shape)

    truth = {
        "multiplier": m,
        "scaling": sp,
        "assistant_scaling": draw.assistant_scaling,
        "warp": warp,
    }
    return SubmapOutput(
        index=index,
        frame_ids=frame_ids,
        cameras=cameras,
        timestamps=timestamps,
        poses=poses,
        intrinsics=cfg.intrinsics.scaled_focal(*sp),
        assistant_intrinsics=cfg.intrinsics.scaled_focal(*draw.assistant_scaling),
        depth=depth,
        confidence=conf,
        loop_pairs=[(int(c), int(h)) for c, h in loop_pairs],
        truth=truth,
    )
