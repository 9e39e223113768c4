"""Pose-graph optimization over primary poses and the rig extrinsic.

Assistant poses are never variables: every assistant factor is written in
terms of ``T_p * X`` where ``X`` is the primary-to-assistant extrinsic.

Variables are updated on the right, ``T <- T Exp(d)``, with tangent order
``(omega, v)``. A between-residual is ``Log(Z^-1 B^-1 A)`` for a measurement
``Z`` of ``B^-1 A``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import (
    Pose,
    compose,
    invert,
    se3_adjoint,
    se3_exp,
    se3_log,
    se3_right_jacobian_inv,
    stack_poses,
)

ODOMETRY, ASSISTANT_FACTOR, PRIOR, LOOP = "odometry", "assistant", "prior", "loop"
EXTRINSIC = "ext"


@dataclass(frozen=True)
class NoiseModel:
    rotation: float
    translation: float

    def __post_init__(self):
        if not (self.rotation > 0 and self.translation > 0):
            raise ValueError("noise sigmas must be positive")

    @property
    def sqrt_information(self) -> np.ndarray:
        return np.r_[np.full(3, 1.0 / self.rotation), np.full(3, 1.0 / self.translation)]


@dataclass(frozen=True)
class PgoConfig:
    window: int = 3
    odometry: NoiseModel = NoiseModel(0.05, 0.1)
    assistant: NoiseModel = NoiseModel(0.05, 0.1)
    loop: NoiseModel = NoiseModel(0.05, 0.1)
    prior: NoiseModel = NoiseModel(0.01, 0.01)
    huber: float = 1.0
    max_iterations: int = 100
    rel_tol: float = 1e-9
    initial_damping: float = 1e-4


@dataclass
class Factor:
    kind: str
    i: object
    j: object
    measurement: Pose
    noise: NoiseModel


class SingularSystemError(RuntimeError):
    pass


def residual_between(meas: Pose, a: Pose, b: Pose) -> np.ndarray:
    R, t = compose(*invert(b.rotation, b.translation), a.rotation, a.translation)
    R, t = compose(*invert(meas.rotation, meas.translation), R, t)
    return se3_log(R, t)


def _batch_between(ZR, Zt, AR, At, BR, Bt):
    """Residuals and inverse right Jacobians for stacked between-factors."""
    BiR, Bit = invert(BR, Bt)
    DR, Dt = compose(BiR, Bit, AR, At)
    ZiR, Zit = invert(ZR, Zt)
    ER, Et = compose(ZiR, Zit, DR, Dt)
    r = se3_log(ER, Et)
    Jinv = se3_right_jacobian_inv(r)
    # Ad(A^-1 B) = Ad((B^-1 A)^-1)
    adj = se3_adjoint(*invert(DR, Dt))
    return r, Jinv, adj


@dataclass
class FactorGraph:
    config: PgoConfig = field(default_factory=PgoConfig)
    poses: dict = field(default_factory=dict)
    extrinsic: Optional[Pose] = None
    factors: list = field(default_factory=list)
    fixed: Optional[object] = None

    # -- construction ---------------------------------------------------

    def add_pose(self, key, pose: Pose):
        if self.fixed is None:
            self.fixed = key
        self.poses[key] = pose

    def _need(self, *keys):
        for k in keys:
            if k not in self.poses:
                raise KeyError(f"unknown pose variable {k!r}")

    def add_between(self, kind: str, i, j, meas: Pose, noise: NoiseModel):
        """Factor measuring ``T_j^-1 T_i``."""
        self._need(i, j)
        self.factors.append(Factor(kind, i, j, meas, noise))

    def add_primary_odometry(self, keys, poses, window: Optional[int] = None):
        """Factors from every frame to each of its ``window`` predecessors,
        measured from ``poses`` (same order as ``keys``)."""
        window = self.config.window if window is None else window
        for b in range(1, len(keys)):
            for k in range(1, min(window, b) + 1):
                a = b - k
                self.add_between(ODOMETRY, keys[b], keys[a], poses[a].inverse() @ poses[b],
                                 self.config.odometry)

    def add_assistant_factor(self, i, j, meas: Pose):
        """Factor measuring ``(T_j X)^-1 (T_i X)``."""
        if i == j:
            raise ValueError("assistant factor needs two distinct frames")
        self._need(i, j)
        if self.extrinsic is None:
            raise ValueError("set the extrinsic before adding assistant factors")
        self.factors.append(Factor(ASSISTANT_FACTOR, i, j, meas, self.config.assistant))

    def add_extrinsic_prior(self, prior: Pose):
        if self.extrinsic is None:
            self.extrinsic = prior
        self.factors.append(Factor(PRIOR, EXTRINSIC, None, prior, self.config.prior))

    def add_loop_factor(self, current, historical, t_loop: Pose):
        """Loop measurement ``T_hist^-1 T_cur``."""
        self.add_between(LOOP, current, historical, t_loop, self.config.loop)

    def count(self, kind: str) -> int:
        return sum(1 for f in self.factors if f.kind == kind)

    # -- evaluation -----------------------------------------------------

    def _index(self):
        keys = [k for k in self.poses if k != self.fixed]
        col = {k: 6 * n for n, k in enumerate(keys)}
        n = 6 * len(keys)
        if self.extrinsic is not None:
            col[EXTRINSIC] = n
            n += 6
        return keys, col, n

    def _groups(self):
        g: dict = {}
        for f in self.factors:
            g.setdefault("prior" if f.kind == PRIOR else ("ast" if f.kind == ASSISTANT_FACTOR else "btw"), []).append(f)
        return g

    def linearize(self, poses: Optional[dict] = None, extrinsic: Optional[Pose] = None,
                  robust: bool = True, jacobian: bool = True):
        """Whitened residual vector, sparse Jacobian and robust cost.

        Returns ``(r, J, cost)``; Huber weights are folded into ``r`` and
        ``J`` for loop factors.
        """
        poses = self.poses if poses is None else poses
        extrinsic = self.extrinsic if extrinsic is None else extrinsic
        keys, col, n = self._index()
        rows, cols, vals, res = [], [], [], []
        cost = 0.0
        offset = 0

        def emit(r, blocks, sqrt_info, is_loop):
            nonlocal offset, cost
            m = r.shape[0]
            rw = r * sqrt_info
            w = np.ones(m)
            if is_loop is not None and robust:
                e = np.linalg.norm(rw, axis=1)
                big = is_loop & (e > self.config.huber)
                w = np.where(big, np.sqrt(self.config.huber / np.where(big, e, 1.0)), 1.0)
                c = np.where(big, 2 * self.config.huber * e - self.config.huber**2, e**2)
                cost += 0.5 * float(c.sum())
            else:
                cost += 0.5 * float((rw**2).sum())
            rw = rw * w[:, None]
            res.append(rw.reshape(-1))
            if jacobian:
                base = offset + 6 * np.arange(m)
                for key_cols, J in blocks:
                    J = J * (sqrt_info * w[:, None])[:, :, None]
                    ok = key_cols >= 0
                    if not ok.any():
                        continue
                    rr = (base[ok][:, None, None] + np.arange(6)[None, :, None]).repeat(6, axis=2)
                    cc = (key_cols[ok][:, None, None] + np.arange(6)[None, None, :]).repeat(6, axis=1)
                    rows.append(rr.reshape(-1))
                    cols.append(cc.reshape(-1))
                    vals.append(J[ok].reshape(-1))
            offset += 6 * m

        def stack(ks):
            return stack_poses([poses[k] for k in ks])

        def cidx(ks):
            return np.array([col.get(k, -1) for k in ks], dtype=int)

        groups = self._groups()
        for kind in ("btw", "ast", "prior"):
            fs = groups.get(kind)
            if not fs:
                continue
            ZR, Zt = stack_poses([f.measurement for f in fs])
            info = np.stack([f.noise.sqrt_information for f in fs])
            if kind == "prior":
                XR = np.repeat(extrinsic.rotation[None], len(fs), 0)
                Xt = np.repeat(extrinsic.translation[None], len(fs), 0)
                ER, Et = compose(*invert(ZR, Zt), XR, Xt)
                r = se3_log(ER, Et)
                blocks = [(np.full(len(fs), col[EXTRINSIC]), se3_right_jacobian_inv(r))]
                emit(r, blocks if jacobian else [], info, None)
                continue
            AR, At = stack([f.i for f in fs])
            BR, Bt = stack([f.j for f in fs])
            if kind == "ast":
                XR, Xt = extrinsic.rotation, extrinsic.translation
                AR, At = compose(AR, At, XR, Xt)
                BR, Bt = compose(BR, Bt, XR, Xt)
            r, Jinv, adj = _batch_between(ZR, Zt, AR, At, BR, Bt)
            if jacobian:
                dA = Jinv
                dB = -Jinv @ adj
                if kind == "ast":
                    adx = se3_adjoint(*invert(extrinsic.rotation, extrinsic.translation))
                    blocks = [
                        (cidx([f.i for f in fs]), dA @ adx),
                        (cidx([f.j for f in fs]), dB @ adx),
                        (np.full(len(fs), col[EXTRINSIC]), Jinv @ (np.eye(6) - adj)),
                    ]
                else:
                    blocks = [(cidx([f.i for f in fs]), dA), (cidx([f.j for f in fs]), dB)]
            else:
                blocks = []
            loop_mask = np.array([f.kind == LOOP for f in fs]) if kind == "btw" else None
            emit(r, blocks, info, loop_mask)

        r = np.concatenate(res) if res else np.zeros(0)
        J = None
        if jacobian:
            if rows:
                J = sp.csr_matrix(
                    (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                    shape=(offset, n),
                )
            else:
                J = sp.csr_matrix((offset, n))
        return r, J, cost

    def cost(self, poses=None, extrinsic=None) -> float:
        return self.linearize(poses, extrinsic, jacobian=False)[2]

    def gradient(self) -> np.ndarray:
        r, J, _ = self.linearize(robust=False)
        return J.T @ r

    def retract(self, delta: np.ndarray):
        keys, col, _ = self._index()
        new = dict(self.poses)
        if keys:
            d = delta[: 6 * len(keys)].reshape(-1, 6)
            R, t = se3_exp(d)
            PR, Pt = stack_poses([self.poses[k] for k in keys])
            NR, Nt = compose(PR, Pt, R, t)
            for n, k in enumerate(keys):
                new[k] = Pose(NR[n], Nt[n], self.poses[k].timestamp)
        ext = self.extrinsic
        if ext is not None:
            R, t = se3_exp(delta[col[EXTRINSIC]: col[EXTRINSIC] + 6])
            ext = Pose(*compose(ext.rotation, ext.translation, R, t))
        return new, ext

    # -- solver ---------------------------------------------------------

    def optimize(self) -> "OptimizationResult":
        cfg = self.config
        mu = cfg.initial_damping
        r, J, cost = self.linearize()
        history = [cost]
        iterations = 0
        if J.shape[1] == 0:
            return OptimizationResult(cost, cost, 0, history)
        start = cost
        while iterations < cfg.max_iterations:
            g = J.T @ r
            if cost == 0.0 or np.max(np.abs(g)) < 1e-14:
                break
            H = (J.T @ J).tocsc()
            eye = sp.identity(H.shape[0], format="csc")
            accepted = solved = False
            while mu <= 1e6:
                try:
                    delta = spla.spsolve(H + mu * eye, -g)
                except RuntimeError:
                    delta = None
                if delta is None or not np.all(np.isfinite(delta)):
                    mu *= 10.0
                    continue
                solved = True
                poses, ext = self.retract(delta)
                new_cost = self.cost(poses, ext)
                if new_cost <= cost:
                    accepted = True
                    break
                mu *= 10.0
            if not solved:
                raise SingularSystemError("normal equations singular at maximum damping")
            if not accepted:
                break
            iterations += 1
            self.poses, self.extrinsic = poses, ext
            mu = max(mu / 10.0, 1e-9)
            rel = (cost - new_cost) / max(cost, 1e-300)
            cost = new_cost
            history.append(cost)
            if rel < cfg.rel_tol:
                break
            r, J, cost = self.linearize()
        return OptimizationResult(start, cost, iterations, history)

    # -- text dump ------------------------------------------------------

    def dump(self, path):
        """One factor per line: kind, i, j, tx ty tz qx qy qz qw, six sigmas."""
        from scipy.spatial.transform import Rotation

        with open(path, "w") as fh:
            fh.write("# kind i j tx ty tz qx qy qz qw s_rx s_ry s_rz s_tx s_ty s_tz\n")
            for f in self.factors:
                q = Rotation.from_matrix(f.measurement.rotation).as_quat()
                if q[3] < 0:
                    q = -q
                sig = [f.noise.rotation] * 3 + [f.noise.translation] * 3
                vals = list(f.measurement.translation) + list(q) + sig
                fh.write(f"{f.kind} {f.i} {'-' if f.j is None else f.j} "
                         + " ".join(f"{v:.9g}" for v in vals) + "\n")


@dataclass
class OptimizationResult:
    initial_cost: float
    final_cost: float
    iterations: int
    history: list

    @property
    def monotone(self) -> bool:
        return all(b <= a for a, b in zip(self.history, self.history[1:]))
