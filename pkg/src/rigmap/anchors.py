"""Anchors: verified 3D points shared between sub-maps.

Anchors are seeded on a grid over each frame, verified against the depth of
other frames, carried between neighbouring sub-maps through shared frames,
fused into one world position, thinned by local suppression and finally used
as control points of a per-sub-map non-rigid correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Intrinsics, PixelGrid, Pose
from .tps import TpsModel, deform_points, fit_tps


@dataclass(frozen=True)
class MappingConfig:
    enabled: bool = True
    n_grid: int = 24
    eta_proj: float = 0.02
    tau_conf: float = 0.5
    radius: float = 0.4
    tps_stiffness: float = 1e-4
    backward_depth: int = 10
    weight_floor: float = 1e-8
    adaptive_fusion: bool = True
    suppression: bool = True
    nonlinear: bool = True


# ---------------------------------------------------------------------------
# per-sub-map geometry view
# ---------------------------------------------------------------------------


@dataclass
class SubmapView:
    """Frames of one sub-map usable for mapping (primary and loop rows)."""

    index: int
    frame_ids: np.ndarray
    poses: list
    depth: np.ndarray
    confidence: np.ndarray
    intrinsics: Intrinsics
    grid: PixelGrid
    owned: np.ndarray  # frame ids whose dense points this sub-map contributes
    seed_rows: np.ndarray  # rows that may seed anchors, in stream order
    world: Pose = field(default_factory=Pose.identity)  # world-from-local
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def row(self, frame_id: int) -> Optional[int]:
        hit = np.flatnonzero(self.frame_ids == frame_id)
        return int(hit[0]) if hit.size else None

    def project(self, pts_local: np.ndarray, row: int):
        cam = self.poses[row].inverse().transform(pts_local)
        px, z = self.intrinsics.project(cam)
        return px, z

    def depth_at(self, row: int, px: np.ndarray) -> np.ndarray:
        return self.grid.sample_depth(self.depth[row], self.depth[row] > 0, px)

    def confidence_at(self, row: int, px: np.ndarray) -> np.ndarray:
        px = np.atleast_2d(px)
        g = self.grid
        fu = (px[:, 0] + 0.5) * g.cols / g.width - 0.5
        fv = (px[:, 1] + 0.5) * g.rows / g.height - 0.5
        c = np.clip(np.rint(fu).astype(int), 0, g.cols - 1)
        r = np.clip(np.rint(fv).astype(int), 0, g.rows - 1)
        return self.confidence[row][r, c]

    def backproject(self, row: int, px: np.ndarray, depth: np.ndarray) -> np.ndarray:
        return self.poses[row].transform(self.intrinsics.backproject(px, depth))

    def consistent(self, pts_local: np.ndarray, row: int, eta: float):
        """Mask and pixels of points whose depth agrees with frame ``row``."""
        px, z = self.project(pts_local, row)
        ok = (z > 1e-9) & self.grid.contains(px)
        d = np.full(len(pts_local), np.nan)
        if ok.any():
            d[ok] = self.depth_at(row, px[ok])
        with np.errstate(invalid="ignore"):
            ok &= np.isfinite(d) & (np.abs(z - d) <= eta * z)
        return ok, px


@dataclass
class Anchor:
    id: int
    local: dict = field(default_factory=dict)  # sub-map -> local xyz
    observations: dict = field(default_factory=dict)  # (sub-map, frame) -> pixel
    seed: tuple = ()
    position: Optional[np.ndarray] = None
    active: bool = True
    tag: int = -1  # optional external id of the seeding point

    @property
    def n_obs(self) -> int:
        return len(self.local)

    def frames_in(self, submap: int) -> list:
        return [f for (k, f) in self.observations if k == submap]


@dataclass
class AnchorStore:
    anchors: list = field(default_factory=list)
    by_submap: dict = field(default_factory=dict)

    def new(self, submap: int, point, seed, tag=-1) -> Anchor:
        a = Anchor(len(self.anchors), seed=seed, tag=tag)
        self.anchors.append(a)
        self.attach(a, submap, point)
        return a

    def attach(self, a: Anchor, submap: int, point):
        a.local[submap] = np.asarray(point, dtype=float)
        self.by_submap.setdefault(submap, []).append(a.id)

    def in_submap(self, submap: int) -> list:
        return [self.anchors[i] for i in self.by_submap.get(submap, [])]

    def __len__(self):
        return len(self.anchors)


def cell_of(px: np.ndarray, grid: PixelGrid, n_grid: int) -> np.ndarray:
    """Flat grid-cell index ``floor(pixel / cell size)`` per pixel."""
    px = np.atleast_2d(px)
    cw, ch = grid.width / n_grid, grid.height / n_grid
    c = np.clip(np.floor(px[:, 0] / cw).astype(int), 0, n_grid - 1)
    r = np.clip(np.floor(px[:, 1] / ch).astype(int), 0, n_grid - 1)
    return r * n_grid + c


def _record_observations(view: SubmapView, a_pts: np.ndarray, anchors: Sequence[Anchor], eta: float,
                         skip_row: Optional[int] = None):
    for row in range(len(view.frame_ids)):
        if row == skip_row:
            continue
        ok, px = view.consistent(a_pts, row, eta)
        fid = int(view.frame_ids[row])
        for n in np.flatnonzero(ok):
            anchors[n].observations.setdefault((view.index, fid), px[n])


def covered_cells(view: SubmapView, store: AnchorStore, row: int, n_grid: int) -> np.ndarray:
    mask = np.zeros(n_grid * n_grid, dtype=bool)
    existing = store.in_submap(view.index)
    if not existing:
        return mask
    pts = np.stack([a.local[view.index] for a in existing])
    px, z = view.project(pts, row)
    vis = (z > 1e-9) & view.grid.contains(px)
    mask[cell_of(px[vis], view.grid, n_grid)] = True
    return mask


def seed_frame(view: SubmapView, store: AnchorStore, row: int, cfg: MappingConfig,
               rng: np.random.Generator, candidates=None) -> list:
    """Seed at most one verified anchor in every uncovered cell of ``row``.

    ``candidates`` optionally gives ``(pixels, tags)`` to sample from instead
    of uniform random pixels.
    """
    n = cfg.n_grid
    g = view.grid
    free = np.flatnonzero(~covered_cells(view, store, row, n))
    if free.size == 0:
        return []
    if candidates is None:
        cw, ch = g.width / n, g.height / n
        u = rng.random((free.size, 2))
        px = np.c_[(free % n + u[:, 0]) * cw, (free // n + u[:, 1]) * ch]
        tags = np.full(free.size, -1)
    else:
        cpx, ctags = candidates
        cells = cell_of(cpx, g, n) if len(cpx) else np.zeros(0, dtype=int)
        picks = []
        for c in free:
            idx = np.flatnonzero(cells == c)
            if idx.size:
                picks.append(idx[rng.integers(idx.size)])
        if not picks:
            return []
        picks = np.asarray(picks)
        px, tags = np.asarray(cpx)[picks], np.asarray(ctags)[picks]
    conf = view.confidence_at(row, px)
    d = view.depth_at(row, px)
    ok = (conf > cfg.tau_conf) & np.isfinite(d) & (d > 0)
    px, d, tags = px[ok], d[ok], tags[ok]
    if len(px) == 0:
        return []
    pts = view.backproject(row, px, d)
    verified = np.zeros(len(pts), dtype=bool)
    for other in view.seed_rows:
        if other == row:
            continue
        ok, _ = view.consistent(pts, other, cfg.eta_proj)
        verified |= ok
    fid = int(view.frame_ids[row])
    out = []
    for n_, keep in enumerate(verified):
        if keep:
            a = store.new(view.index, pts[n_], (view.index, fid), int(tags[n_]))
            a.observations[(view.index, fid)] = px[n_]
            out.append(a)
    if out:
        _record_observations(view, np.stack([a.local[view.index] for a in out]), out, cfg.eta_proj, skip_row=row)
    return out


def extract_anchors(view: SubmapView, store: AnchorStore, cfg: MappingConfig, rng, candidates=None) -> list:
    """Seed the first frame of the sub-map."""
    if not len(view.seed_rows):
        return []
    row = int(view.seed_rows[0])
    cand = None if candidates is None else candidates.get(int(view.frame_ids[row]))
    return seed_frame(view, store, row, cfg, rng, cand) if candidates is None or cand is not None else []


def densify(view: SubmapView, store: AnchorStore, cfg: MappingConfig, rng, candidates=None) -> list:
    """Seed the remaining frames in order, only where no anchor projects."""
    out = []
    for row in view.seed_rows[1:]:
        row = int(row)
        cand = None
        if candidates is not None:
            cand = candidates.get(int(view.frame_ids[row]))
            if cand is None:
                continue
        out += seed_frame(view, store, row, cfg, rng, cand)
    return out


def _carry(src: SubmapView, dst: SubmapView, store: AnchorStore, anchors: Sequence[Anchor],
           shared: Sequence[int], cfg: MappingConfig, verify: bool) -> list:
    """Give ``anchors`` a local coordinate in ``dst`` from their pixels in the
    first shared frame where ``src`` observed them.

    With ``verify`` the depth ``dst`` reads at that pixel must agree with the
    anchor's depth in ``src``'s view of the same frame within ``eta_proj``.
    """
    pending = [a for a in anchors if dst.index not in a.local]
    pts = np.zeros((len(pending), 3))
    frame = np.full(len(pending), -1)
    pix = np.zeros((len(pending), 2))
    for f in sorted(shared):
        row = dst.row(int(f))
        if row is None:
            continue
        idx = [n for n, a in enumerate(pending)
               if frame[n] < 0 and (src.index, int(f)) in a.observations]
        if not idx:
            continue
        px = np.stack([pending[n].observations[(src.index, int(f))] for n in idx])
        d = dst.depth_at(row, px)
        good = np.isfinite(d) & (d > 0)
        if verify:
            src_row = src.row(int(f))
            if src_row is None:
                continue
            _, z = src.project(np.stack([pending[n].local[src.index] for n in idx]), src_row)
            with np.errstate(invalid="ignore"):
                good &= np.abs(z - d) <= cfg.eta_proj * d
        sel = np.asarray(idx)[good]
        pts[sel] = dst.backproject(row, px[good], d[good])
        frame[sel] = int(f)
        pix[sel] = px[good]
    moved = []
    for n in np.flatnonzero(frame >= 0):
        a = pending[n]
        store.attach(a, dst.index, pts[n])
        a.observations[(dst.index, int(frame[n]))] = pix[n]
        moved.append(a)
    if moved:
        _record_observations(dst, np.stack([a.local[dst.index] for a in moved]), moved, cfg.eta_proj)
    return moved


def propagate_forward(prev: SubmapView, nxt: SubmapView, store: AnchorStore, shared: Sequence[int],
                      cfg: MappingConfig) -> list:
    return _carry(prev, nxt, store, store.in_submap(prev.index), shared, cfg, verify=False)


def propagate_backward(nxt: SubmapView, chain: Sequence[SubmapView], store: AnchorStore,
                       new_anchors: Sequence[Anchor], shared_with: dict, cfg: MappingConfig) -> int:
    """Carry ``new_anchors`` from ``nxt`` into earlier sub-maps.

    ``chain`` lists earlier sub-maps nearest first; ``shared_with[(a, b)]``
    gives the frames shared by sub-maps ``a`` and ``b``. Recursion stops when
    no anchor survives or after ``cfg.backward_depth`` sub-maps.
    """
    total = 0
    src = nxt
    carried = list(new_anchors)
    for depth, dst in enumerate(chain):
        if depth >= cfg.backward_depth or not carried:
            break
        shared = shared_with.get((src.index, dst.index), ())
        carried = _carry(src, dst, store, carried, shared, cfg, verify=True)
        total += len(carried)
        src = dst
    return total


# ---------------------------------------------------------------------------
# fusion, suppression, deformation
# ---------------------------------------------------------------------------


def fusion_weights(world_pts: np.ndarray, centers: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    d2 = np.sum((world_pts - centers) ** 2, axis=-1)
    return 1.0 / np.maximum(d2, floor)


def fuse_anchor(a: Anchor, views: dict, cfg: MappingConfig = MappingConfig()) -> np.ndarray:
    ks = sorted(a.local)
    if not ks:
        raise ValueError(f"anchor {a.id} has no observation")
    pts = np.stack([views[k].world.transform(a.local[k]) for k in ks])
    if cfg.adaptive_fusion:
        w = fusion_weights(pts, np.stack([views[k].center for k in ks]), cfg.weight_floor)
    else:
        w = np.ones(len(ks))
    a.position = (w[:, None] * pts).sum(axis=0) / w.sum()
    return a.position


def suppress(positions: np.ndarray, n_obs: np.ndarray, radius: float) -> np.ndarray:
    """Active flags: a point is switched off when some neighbour within
    ``radius`` has strictly more observations."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    n_obs = np.asarray(n_obs)
    active = np.ones(len(positions), dtype=bool)
    if len(positions) == 0:
        return active
    tree = cKDTree(positions)
    for i, nb in enumerate(tree.query_ball_point(positions, radius)):
        if nb and np.any(n_obs[nb] > n_obs[i]):
            active[i] = False
    return active


def submap_model(view: SubmapView, store: AnchorStore, cfg: MappingConfig) -> TpsModel:
    if not cfg.nonlinear:
        return TpsModel.identity()
    ctrl = [a for a in store.in_submap(view.index) if a.active and a.position is not None]
    if not ctrl:
        return TpsModel.identity()
    src = np.stack([a.local[view.index] for a in ctrl])
    dst = view.world.inverse().transform(np.stack([a.position for a in ctrl]))
    return fit_tps(src, dst, cfg.tps_stiffness)


def dense_points(view: SubmapView, cfg: MappingConfig):
    """Local points of owned frames above the confidence gate.

    Returns ``(points, confidence, frame_ids, flat grid index)``.
    """
    pix = view.grid.pixels().reshape(-1, 2)
    pts, conf, fids, idx = [], [], [], []
    for f in view.owned:
        row = view.row(int(f))
        if row is None:
            continue
        d = view.depth[row].reshape(-1)
        c = view.confidence[row].reshape(-1)
        sel = np.flatnonzero((c > cfg.tau_conf) & (d > 0))
        pts.append(view.backproject(row, pix[sel], d[sel]))
        conf.append(c[sel])
        fids.append(np.full(sel.size, int(f)))
        idx.append(sel)
    if not pts:
        return np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    return np.concatenate(pts), np.concatenate(conf), np.concatenate(fids), np.concatenate(idx)


def deform_submap(view: SubmapView, model: TpsModel, cfg: MappingConfig):
    """World points ``T_wk * phi(local)`` with their confidence, frame ids and
    grid indices."""
    pts, conf, fids, idx = dense_points(view, cfg)
    return deform_points(pts, model, view.world), conf, fids, idx


@dataclass
class MapResult:
    points: np.ndarray
    confidence: np.ndarray
    frame_ids: np.ndarray
    grid_index: np.ndarray
    store: AnchorStore
    models: dict


def build_map(views: Sequence[SubmapView], shared_with: dict, neighbours: dict, cfg: MappingConfig,
              rng: np.random.Generator, candidates=None) -> MapResult:
    """Anchor pass over sub-maps in stream order, then fusion, suppression and
    per-sub-map deformation.

    ``neighbours[k]`` lists earlier sub-maps linked to ``k`` (nearest first);
    ``shared_with[(a, b)]`` lists their shared frame ids.
    """
    store = AnchorStore()
    by_index = {v.index: v for v in views}
    for v in views:
        for k in neighbours.get(v.index, []):
            propagate_forward(by_index[k], v, store, shared_with.get((k, v.index), ()), cfg)
        new = extract_anchors(v, store, cfg, rng, candidates)
        new += densify(v, store, cfg, rng, candidates)
        for k in neighbours.get(v.index, []):
            chain = [by_index[k]]
            # keep following the predecessor chain behind k
            j = k
            while neighbours.get(j):
                j = neighbours[j][0]
                chain.append(by_index[j])
            propagate_backward(v, chain, store, new, shared_with, cfg)
    for a in store.anchors:
        fuse_anchor(a, by_index, cfg)
    if store.anchors:
        pos = np.stack([a.position for a in store.anchors])
        nobs = np.array([a.n_obs for a in store.anchors])
        flags = suppress(pos, nobs, cfg.radius) if cfg.suppression else np.ones(len(pos), dtype=bool)
        for a, f in zip(store.anchors, flags):
            a.active = bool(f)
    pts, conf, fids, gidx, models = [], [], [], [], {}
    for v in views:
        model = submap_model(v, store, cfg)
        models[v.index] = model
        p, c, f, i = deform_submap(v, model, cfg)
        pts.append(p)
        conf.append(c)
        fids.append(f)
        gidx.append(i)
    if not pts:
        z = np.zeros(0)
        return MapResult(np.zeros((0, 3)), z, z.astype(int), z.astype(int), store, models)
    return MapResult(np.concatenate(pts), np.concatenate(conf), np.concatenate(fids),
                     np.concatenate(gidx), store, models)
