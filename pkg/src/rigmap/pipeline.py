"""End-to-end run: simulate, build sub-maps, rectify, optimize, map, evaluate."""

from __future__ import annotations

import csv
import logging
import queue
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import io as rio
from .anchors import MapResult, SubmapView, build_map
from .config import RunConfig
from .correction import (
    ScalingError,
    StepLog,
    correct_step,
    rectify_assistant_chain,
    rectify_primary_chain,
    scaling_from_intrinsics,
)
from .geometry import DegenerateConfigurationError, Pose, eight_point, mean_pose
from .intrinsics import TestBank
from .metrics import align_points, ate, ate_ratio, cloud_metrics, scale_drift_windows
from .pgo import FactorGraph, OptimizationResult
from .scale import align_submap_to_world, collect_spacings, rectify_poses, scale_factor
from .simulator import (
    ASSISTANT,
    LOOP,
    PRIMARY,
    World,
    generate_world,
    loop_oracle,
    reference_pose,
    synthesize_submap_output,
)
from .submaps import Submap, associate_assistant, batch_keyframes, bridge_frames, build_submap, select_keyframes

log = logging.getLogger(__name__)

STAGES = ("simulate", "backbone", "rectify", "intrinsics", "pgo", "mapping", "evaluate", "export")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, world_path: Optional[Path], cause: BaseException):
        where = f" (replay with world file {world_path})" if world_path else ""
        super().__init__(f"stage '{stage}' failed: {cause}{where}")
        self.stage = stage
        self.world_path = world_path
        self.cause = cause


@dataclass
class MetricReport:
    alignment: str
    ate: float
    ate_ratio: float
    n_keyframes: int
    n_submaps: int
    scale_mean: float = float("nan")
    scale_std: float = float("nan")
    scale_series: np.ndarray = field(default_factory=lambda: np.zeros(0))
    accuracy: float = float("nan")
    completeness: float = float("nan")
    chamfer: float = float("nan")
    n_points: int = 0
    n_anchors: int = 0
    n_loops: int = 0
    pgo_runs: int = 0
    k_global: tuple = ()
    damping: float = 0.0
    runtimes: dict = field(default_factory=dict)

    def rows(self):
        """Metric name/value pairs; runtimes are kept out so the table is
        reproducible byte for byte."""
        return [
            ("alignment", self.alignment),
            ("ate", self.ate),
            ("ate_ratio_percent", self.ate_ratio),
            ("keyframes", self.n_keyframes),
            ("submaps", self.n_submaps),
            ("scale_mean", self.scale_mean),
            ("scale_std", self.scale_std),
            ("accuracy", self.accuracy),
            ("completeness", self.completeness),
            ("chamfer", self.chamfer),
            ("map_points", self.n_points),
            ("anchors", self.n_anchors),
            ("loops", self.n_loops),
            ("pgo_runs", self.pgo_runs),
            ("k_global_fx", self.k_global[0] if self.k_global else float("nan")),
            ("k_global_fy", self.k_global[1] if self.k_global else float("nan")),
            ("damping", self.damping),
        ]


@dataclass
class RunResult:
    report: MetricReport
    keyframes: np.ndarray
    primary: list
    assistant: list
    truth: list
    extrinsic: Optional[Pose]
    submaps: list
    map: Optional[MapResult]
    map_truth: Optional[np.ndarray]
    bank: TestBank
    events: list
    correction_log: list
    intrinsic_series: list
    graph: Optional[FactorGraph] = None


@dataclass
class _Batch:
    index: int
    primary_ids: np.ndarray
    common_ids: np.ndarray
    assistant_ids: np.ndarray
    loop_pairs: list
    output: object
    seconds: float


class Backbone:
    """Produces sub-map bundles in stream order, optionally ahead of the
    consumer on a worker thread."""

    def __init__(self, world: World, cfg: RunConfig):
        self.world = world
        self.cfg = cfg
        pc = cfg.pipeline
        self.keyframes = np.asarray(select_keyframes(world.disparity, pc.tau_flow), dtype=int)
        self.batches = batch_keyframes(self.keyframes, pc.n_max)

    def _make(self, k: int, previous: Optional[np.ndarray], seen: list) -> _Batch:
        w, pc = self.world, self.cfg.pipeline
        t0 = time.perf_counter()
        new = self.batches[k]
        primary, common = bridge_frames(previous, new, pc.n_overlap)
        assistant = associate_assistant(w.times[primary], w.assistant_times, pc.sync)
        loops = []
        for f in new:
            hit = loop_oracle(w, int(f), seen, pc.loop_radius, pc.loop_min_gap)
            if hit is not None:
                loops.append((int(f), hit))
                break
        out = synthesize_submap_output(w, primary, assistant, self.cfg.distortion, k, loops)
        return _Batch(k, primary, common, assistant, loops, out, time.perf_counter() - t0)

    def __iter__(self):
        depth = self.cfg.pipeline.prefetch
        if depth <= 0:
            yield from self._serial()
            return
        q: queue.Queue = queue.Queue(maxsize=depth)
        stop = threading.Event()

        def work():
            try:
                for b in self._serial():
                    while not stop.is_set():
                        try:
                            q.put(b, timeout=0.1)
                            break
                        except queue.Full:
                            continue
                    if stop.is_set():
                        return
                q.put(None)
            except BaseException as exc:  # handed to the consumer
                q.put(exc)

        th = threading.Thread(target=work, daemon=True)
        th.start()
        try:
            while True:
                item = q.get()
                if item is None:
                    break
                if isinstance(item, BaseException):
                    raise item
                yield item
        finally:
            stop.set()
            th.join()

    def _serial(self):
        previous = None
        seen: list = []
        for k in range(len(self.batches)):
            b = self._make(k, previous, seen)
            previous = b.primary_ids
            seen.extend(int(f) for f in self.batches[k])
            yield b


class Estimator:
    """Back-end state for one run."""

    def __init__(self, world: World, cfg: RunConfig):
        self.world = world
        self.cfg = cfg
        self.submaps: list[Submap] = []
        self.bank = TestBank(cfg.bank)
        self.damping = 0.0
        self.world_poses: dict = {}
        self.extrinsic: Optional[Pose] = None
        self.ext_prior: Optional[Pose] = None
        self.reference_spacing: Optional[float] = None
        self.events: list = []
        self.pgo_runs = 0
        self.last_graph: Optional[FactorGraph] = None
        self.correction_log: list = []
        self.intrinsic_series: list = []
        self.timing = defaultdict(float)
        self._proj_cache: dict = {}
        self.stage = "rectify"

    # -- per sub-map rectification --------------------------------------

    def _scalings(self, sm: Submap):
        k_global = self.bank.k_global
        if not self.cfg.run.correct_poses or k_global is None:
            one = ScalingError(1.0, 1.0, 0.0)
            return one, one
        lam = self.damping
        sp = scaling_from_intrinsics(sm.raw.intrinsics, k_global, lam)
        sa = scaling_from_intrinsics(sm.raw.assistant_intrinsics, k_global, lam)
        return sp, ScalingError.mean(sp, sa)

    def _correct(self, sm: Submap, step_log: Optional[list] = None):
        raw = sm.raw
        sp, sj = self._scalings(sm)
        ccfg = self.cfg.correction
        pr, ar, lr = raw.rows(PRIMARY), raw.rows(ASSISTANT), raw.rows(LOOP)
        raw_p = [raw.poses[r] for r in pr]
        t_p = raw.timestamps[pr]
        steps = [raw_p[i - 1].inverse() @ raw_p[i] for i in range(1, len(raw_p))]
        corr_p = [raw_p[0]] + rectify_primary_chain(steps, [sp] * len(steps), raw_p[0], ccfg, step_log)
        raw_a = [raw.poses[r] for r in ar]
        corr_a = rectify_assistant_chain(t_p, raw_p, corr_p, raw.timestamps[ar], raw_a, sj, ccfg, clamp=True)
        corr_l = []
        for (cur, _), r in zip(raw.loop_pairs, lr):
            c = int(np.searchsorted(sm.primary_ids, cur))
            rel = raw_p[c].inverse() @ raw.poses[r]
            corr_l.append((corr_p[c] @ correct_step(rel, sp, ccfg)).with_timestamp(raw.poses[r].timestamp))
        poses = [None] * len(raw.poses)
        for r, p in zip(pr, corr_p):
            poses[r] = p
        for r, p in zip(ar, corr_a):
            poses[r] = p
        for r, p in zip(lr, corr_l):
            poses[r] = p
        return poses

    def _spacing(self, sm: Submap, poses) -> np.ndarray:
        raw = sm.raw
        pr, ar = raw.rows(PRIMARY), raw.rows(ASSISTANT)
        t_p = raw.timestamps[pr]
        period = float(np.median(np.diff(t_p))) if len(t_p) > 1 else np.inf
        return collect_spacings(t_p, [poses[r] for r in pr], raw.timestamps[ar], [poses[r] for r in ar],
                                max_bracket=2.0 * period)

    def _rectify(self, sm: Submap, previous_scale: float, step_log=None):
        poses = self._correct(sm, step_log)
        spacings = self._spacing(sm, poses)
        sm.flagged = not (spacings.size and spacings.mean() > 0)
        sm.spacing = float(spacings.mean()) if not sm.flagged else float("nan")
        if sm.flagged:
            scale = previous_scale
            self.events.append(("degenerate-submap", sm.index))
        elif not self.cfg.run.rectify_scale:
            scale = 1.0
        else:
            if self.reference_spacing is None:
                self.reference_spacing = sm.spacing
            scale = scale_factor(self.reference_spacing, sm.spacing)
        sm.scale = scale
        sm.poses = rectify_poses(poses, scale)
        sm.depth = sm.raw.depth * scale

    def _align(self, sm: Submap):
        f = sm.first_common
        if f is None:
            sm.alignment = Pose.identity()
        else:
            sm.alignment = align_submap_to_world(sm.pose_of(f), self.world_poses[f])
        for fid in sm.new_ids:
            self.world_poses[int(fid)] = (sm.alignment @ sm.pose_of(int(fid))).with_timestamp(
                float(self.world.times[fid]))

    def _extrinsic_prior(self, sm: Submap) -> Optional[Pose]:
        raw = sm.raw
        pr, ar = raw.rows(PRIMARY), raw.rows(ASSISTANT)
        t_p = raw.timestamps[pr]
        prim = [sm.poses[r] for r in pr]
        rels = []
        for r in ar:
            t_a = raw.timestamps[r]
            ref, inside = reference_pose(t_p, prim, t_a)
            if inside:
                rels.append(ref.inverse() @ sm.poses[r])
        return mean_pose(rels) if rels else None

    def rebuild(self):
        """Re-derive every sub-map from its raw bundle and re-chain the world."""
        self.reference_spacing = None
        self.world_poses = {}
        self.correction_log = []
        scale = 1.0
        for sm in self.submaps:
            self._rectify(sm, scale, self.correction_log)
            scale = sm.scale
            self._align(sm)
        if self.submaps:
            self.ext_prior = self._extrinsic_prior(self.submaps[0])
            self.extrinsic = self.ext_prior

    # -- intrinsic search -----------------------------------------------

    def _projections(self, fid: int):
        hit = self._proj_cache.get(fid)
        if hit is None:
            hit = self.world.project(self.world.primary[fid])
            self._proj_cache[fid] = hit
        return hit

    def _group(self, submaps) -> tuple[np.ndarray, np.ndarray]:
        ids = np.concatenate([s.new_ids for s in submaps])
        cfg = self.cfg.bank
        fs, counts = [], []
        for a in range(len(ids)):
            ia, pa = self._projections(int(ids[a]))
            for b in range(a + 1, min(a + 1 + cfg.max_pair_gap, len(ids))):
                ib, pb = self._projections(int(ids[b]))
                _, xa, xb = np.intersect1d(ia, ib, assume_unique=True, return_indices=True)
                if len(xa) < max(cfg.n_feature, 8):
                    continue
                try:
                    fs.append(eight_point(pa[xa], pb[xb]))
                except DegenerateConfigurationError:
                    continue
                counts.append(len(xa))
        self._proj_cache.clear()
        return np.asarray(fs).reshape(-1, 3, 3), np.asarray(counts, dtype=int)

    def _update_bank(self, sm: Submap) -> bool:
        version, lam = self.bank.version, self.damping
        self.bank.propose_candidate(sm.raw.intrinsics)
        period = self.cfg.bank.period
        if (sm.index + 1) % period == 0:
            fs, counts = self._group(self.submaps[-period:])
            added = self.bank.try_add_group(fs, counts)
            self.events.append(("test-group", sm.index, bool(added), int(len(fs))))
        self.damping = self.bank.damping_factor()
        k = self.bank.k_global
        self.intrinsic_series.append((sm.index, sm.raw.intrinsics.fx, sm.raw.intrinsics.fy, k.fx, k.fy,
                                      self.damping))
        changed = self.bank.version != version or self.damping != lam
        if changed and len(self.submaps) > 1:
            self.events.append(("global-update", sm.index, k.fx, k.fy, self.damping))
        return changed and len(self.submaps) > 1

    # -- pose graph -----------------------------------------------------

    def build_graph(self) -> FactorGraph:
        g = FactorGraph(self.cfg.pgo)
        for fid in sorted(self.world_poses):
            g.add_pose(fid, self.world_poses[fid])
        if self.ext_prior is not None:
            g.extrinsic = self.extrinsic
            g.add_extrinsic_prior(self.ext_prior)
        K = self.cfg.pgo.window
        for sm in self.submaps:
            raw = sm.raw
            ids = sm.primary_ids
            loc = [sm.pose_of(int(f)) for f in ids]
            first_new = len(sm.common_ids)
            ar = raw.rows(ASSISTANT)
            t_a = raw.timestamps[ar]
            order = np.argsort(t_a, kind="stable")
            a_times = t_a[order]
            a_poses = [sm.poses[ar[o]] for o in order]
            for b in range(max(first_new, 1), len(ids)):
                for k in range(1, min(K, b) + 1):
                    a = b - k
                    g.add_between("odometry", int(ids[b]), int(ids[a]), loc[a].inverse() @ loc[b],
                                  self.cfg.pgo.odometry)
                    if g.extrinsic is None:
                        continue
                    tb, ta = float(raw.timestamps[raw.row_of(int(ids[b]))]), float(raw.timestamps[raw.row_of(int(ids[a]))])
                    if len(a_times) == 0 or min(ta, tb) < a_times[0] or max(ta, tb) > a_times[-1]:
                        continue
                    ab, _ = reference_pose(a_times, a_poses, tb)
                    aa, _ = reference_pose(a_times, a_poses, ta)
                    g.add_assistant_factor(int(ids[b]), int(ids[a]), aa.inverse() @ ab)
            for cur, hist in raw.loop_pairs:
                if hist in self.world_poses:
                    g.add_loop_factor(cur, hist, sm.pose_of(hist, LOOP).inverse() @ sm.pose_of(cur))
        return g

    def optimize(self, reason: str) -> Optional[OptimizationResult]:
        if not self.cfg.run.optimize or len(self.world_poses) < 2:
            return None
        g = self.build_graph()
        res = g.optimize()
        self.last_graph = g
        self.world_poses = {k: v.with_timestamp(self.world_poses[k].timestamp) for k, v in g.poses.items()}
        self.extrinsic = g.extrinsic
        self.pgo_runs += 1
        self.events.append(("pgo", reason, res.iterations, res.initial_cost, res.final_cost))
        return res

    # -- streaming ------------------------------------------------------

    def add(self, b: _Batch):
        sm = build_submap(b.output, b.primary_ids, b.common_ids, b.assistant_ids)
        if self.submaps:
            self.submaps[-1].next_common_ids = sm.common_ids.copy()
        self.submaps.append(sm)

        t0 = time.perf_counter()
        self.stage = "intrinsics"
        global_update = self._update_bank(sm)
        self.timing["intrinsics"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        self.stage = "rectify"
        if global_update or len(self.submaps) == 1:
            self.rebuild()
        else:
            prev = self.submaps[-2].scale
            self._rectify(sm, prev, self.correction_log)
            self._align(sm)
        self.timing["rectify"] += time.perf_counter() - t0

        reason = "loop" if sm.loop_pairs else ("global-update" if global_update else None)
        if reason:
            t0 = time.perf_counter()
            self.stage = "pgo"
            self.optimize(reason)
            self.timing["pgo"] += time.perf_counter() - t0

    def finish(self):
        t0 = time.perf_counter()
        self.optimize("end-of-stream")
        self.timing["pgo"] += time.perf_counter() - t0

    # -- mapping --------------------------------------------------------

    def views(self):
        k_map = self.bank.k_global
        grid = self.world.config.grid
        owner = {}
        for sm in self.submaps:
            for f in sm.new_ids:
                owner.setdefault(int(f), sm.index)
        views, shared, neighbours = [], {}, {}
        for sm in self.submaps:
            raw = sm.raw
            rows = np.r_[raw.rows(PRIMARY), raw.rows(LOOP)].astype(int)
            c = sm.central_id
            T = self.world_poses[c] @ sm.pose_of(c).inverse()
            views.append(SubmapView(
                index=sm.index,
                frame_ids=raw.frame_ids[rows],
                poses=[sm.poses[r] for r in rows],
                depth=sm.depth[rows],
                confidence=raw.confidence[rows],
                intrinsics=k_map,
                grid=grid,
                owned=np.asarray(sm.new_ids, dtype=int),
                seed_rows=np.arange(len(raw.rows(PRIMARY))),
                world=T.with_timestamp(None),
                center=self.world_poses[c].translation.copy(),
            ))
            nb = []
            if sm.index > 0:
                nb.append(sm.index - 1)
                shared[(sm.index - 1, sm.index)] = shared[(sm.index, sm.index - 1)] = list(map(int, sm.common_ids))
            for _, hist in sm.loop_pairs:
                h = owner.get(int(hist))
                if h is None or h == sm.index or h in nb:
                    continue
                nb.append(h)
                shared[(h, sm.index)] = shared[(sm.index, h)] = [int(hist)]
            neighbours[sm.index] = nb
        return views, shared, neighbours

    def build_map(self) -> MapResult:
        views, shared, neighbours = self.views()
        rng = np.random.default_rng([self.cfg.run.seed, 7])
        return build_map(views, shared, neighbours, self.cfg.mapping, rng)

    def keyframes(self) -> np.ndarray:
        return np.asarray(sorted(self.world_poses), dtype=int)

    def assistant_trajectory(self, keys) -> list:
        if self.extrinsic is None:
            return []
        return [(self.world_poses[int(k)] @ self.extrinsic).with_timestamp(self.world_poses[int(k)].timestamp)
                for k in keys]


def truth_cloud(world: World, frame_ids: np.ndarray, grid_index: np.ndarray) -> np.ndarray:
    """Ground-truth surface points behind the given depth-grid samples."""
    cfg = world.config
    pix = cfg.grid.pixels().reshape(-1, 2)
    out = np.zeros((len(frame_ids), 3))
    for f in np.unique(frame_ids):
        sel = np.flatnonzero(frame_ids == f)
        pose = world.primary[int(f)]
        d, _ = world.render(pose)
        d = d.reshape(-1)[grid_index[sel]]
        out[sel] = pose.transform(cfg.intrinsics.backproject(pix[grid_index[sel]], d))
    return out


def run_pipeline(cfg: RunConfig, out_dir=None, world: Optional[World] = None) -> RunResult:
    """Execute the full pipeline; writes artifacts when ``out_dir`` is set."""
    cfg.pipeline.validate()
    timing: dict = defaultdict(float)
    out = Path(out_dir) if out_dir is not None else None
    world_path = None
    stage = "simulate"
    est = None
    try:
        t0 = time.perf_counter()
        if world is None:
            world = generate_world(cfg.world)
        timing["simulate"] += time.perf_counter() - t0
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            world_path = rio.save_world(world, out / "world")[0]

        stage = "backbone"
        backbone = Backbone(world, cfg)
        est = Estimator(world, cfg)
        for b in backbone:
            timing["backbone"] += b.seconds
            stage = "rectify"
            est.add(b)
            stage = "backbone"
        stage = "pgo"
        est.finish()
        for k, v in est.timing.items():
            timing[k] += v

        stage = "evaluate"
        t0 = time.perf_counter()
        keys = est.keyframes()
        primary = [est.world_poses[int(k)] for k in keys]
        truth = [world.primary[int(k)] for k in keys]
        p_est = np.stack([p.translation for p in primary])
        p_gt = np.stack([p.translation for p in truth])
        alignment = cfg.run.alignment
        a = ate(p_est, p_gt, alignment)
        report = MetricReport(
            alignment=alignment,
            ate=a,
            ate_ratio=ate_ratio(a, p_gt),
            n_keyframes=len(keys),
            n_submaps=len(est.submaps),
            n_loops=sum(len(s.loop_pairs) for s in est.submaps),
            pgo_runs=est.pgo_runs,
            k_global=(est.bank.k_global.fx, est.bank.k_global.fy),
            damping=est.damping,
        )
        if len(keys) >= 3 and keys[-1] - keys[0] + 1 >= cfg.run.scale_window:
            sd = scale_drift_windows(p_est, p_gt, cfg.run.scale_window, cfg.run.scale_stride, keys)
            report.scale_mean, report.scale_std, report.scale_series = sd.mean, sd.std, sd.series
        timing["evaluate"] += time.perf_counter() - t0

        result_map, gt_cloud = None, None
        if cfg.mapping.enabled:
            stage = "mapping"
            t0 = time.perf_counter()
            result_map = est.build_map()
            timing["mapping"] += time.perf_counter() - t0
            stage = "evaluate"
            t0 = time.perf_counter()
            if len(result_map.points):
                gt_cloud = truth_cloud(world, result_map.frame_ids, result_map.grid_index)
                aligned = align_points(result_map.points, p_est, p_gt, alignment)
                cm = cloud_metrics(aligned, gt_cloud)
                report.accuracy, report.completeness, report.chamfer = cm.accuracy, cm.completeness, cm.chamfer
                report.n_points = len(aligned)
            report.n_anchors = len(result_map.store)
            timing["evaluate"] += time.perf_counter() - t0

        report.runtimes = dict(timing)
        result = RunResult(
            report=report,
            keyframes=keys,
            primary=primary,
            assistant=est.assistant_trajectory(keys),
            truth=truth,
            extrinsic=est.extrinsic,
            submaps=est.submaps,
            map=result_map,
            map_truth=gt_cloud,
            bank=est.bank,
            events=est.events,
            correction_log=est.correction_log,
            intrinsic_series=est.intrinsic_series,
            graph=est.last_graph,
        )
        if out is not None:
            stage = "export"
            t0 = time.perf_counter()
            export(result, cfg, out)
            report.runtimes["export"] = time.perf_counter() - t0
            write_timings(report.runtimes, out / "timings.csv")
        return result
    except PipelineError:
        raise
    except Exception as exc:
        if stage == "rectify" and est is not None:
            stage = est.stage
        raise PipelineError(stage, world_path, exc) from exc


def write_timings(runtimes: dict, path):
    rows = [(k, runtimes.get(k, 0.0)) for k in STAGES]
    rio.write_csv(path, ["stage", "seconds"], rows)


def export(result: RunResult, cfg: RunConfig, out: Path):
    from .config import to_ini

    (out / "config.ini").write_text(to_ini(cfg))
    rio.write_trajectory(result.primary, out / "trajectory_primary.tum")
    rio.write_trajectory(result.truth, out / "trajectory_truth.tum")
    if result.assistant:
        rio.write_trajectory(result.assistant, out / "trajectory_assistant.tum")
    rep = result.report
    with open(out / "metrics.csv", "w") as fh:
        fh.write(f"# alignment={rep.alignment}; ate_ratio_percent = ate / ground-truth path length * 100\n")
    with open(out / "metrics.csv", "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in rep.rows():
            w.writerow([k, f"{v:.9g}" if isinstance(v, (float, np.floating)) else v])
    if rep.scale_series.size:
        rio.write_csv(out / "scale_drift.csv", ["window", "normalized_scale"],
                      [(i, float(v)) for i, v in enumerate(rep.scale_series)])
    rio.write_csv(out / "intrinsics.csv", ["submap", "fx_est", "fy_est", "fx_global", "fy_global", "damping"],
                  [tuple(float(x) if i else x for i, x in enumerate(r)) for r in result.intrinsic_series])
    rio.write_csv(out / "corrections.csv", ["step", "theta_norm", "general_branch", "skipped", "damping"],
                  [(i, s.theta_norm, int(s.general_branch), int(s.skipped), s.damping)
                   for i, s in enumerate(result.correction_log) if isinstance(s, StepLog)])
    if result.graph is not None:
        result.graph.dump(out / "pose_graph.txt")
    if not result.bank.empty:
        result.bank.dump_csv(out / "test_bank.csv")
    if result.map is not None:
        rio.write_point_cloud(result.map.points, result.map.confidence, out / "map.xyz")
        rio.write_csv(out / "anchors.csv", ["id", "n_obs", "state", "x", "y", "z"],
                      [(a.id, a.n_obs, "active" if a.active else "deactivated", *map(float, a.position))
                       for a in result.map.store.anchors])
