"""Online search for focal lengths using a bank of fundamental matrices.

A candidate ``K`` turns every stored ``F`` into ``E = K^T F K``; a correct
``K`` makes the two largest singular values equal and the third zero.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import DegenerateConfigurationError, Intrinsics, eight_point


@dataclass(frozen=True)
class BankConfig:
    n_pair: int = 10
    n_feature: int = 10
    n_group: int = 5
    period: int = 5
    # keyframes this far apart in stream order are never paired
    max_pair_gap: int = 12


def singular_value_score(sv: np.ndarray) -> np.ndarray:
    """Score from descending singular values (..., 3)."""
    s1 = sv[..., 0]
    return np.abs(s1 - sv[..., 1]) / s1 + np.abs(sv[..., 2]) / s1


def score(k: Intrinsics, f) -> float:
    E = k.matrix.T @ np.asarray(f, dtype=float) @ k.matrix
    sv = np.linalg.svd(E, compute_uv=False)
    if not sv[0] > 1e-300:
        raise ValueError("essential matrix is numerically zero")
    return float(singular_value_score(sv))


def scores(k: Intrinsics, fs: np.ndarray) -> np.ndarray:
    K = k.matrix
    E = K.T @ np.asarray(fs, dtype=float) @ K
    sv = np.linalg.svd(E, compute_uv=False)
    if np.any(sv[:, 0] <= 1e-300):
        raise ValueError("essential matrix is numerically zero")
    return singular_value_score(sv)


@dataclass
class TestGroup:
    __test__ = False

    fundamentals: np.ndarray
    match_counts: np.ndarray

    def __len__(self):
        return len(self.fundamentals)


@dataclass
class TestBank:
    __test__ = False

    config: BankConfig = field(default_factory=BankConfig)
    groups: deque = field(default_factory=deque)
    candidates: list = field(default_factory=list)
    k_global: Optional[Intrinsics] = None
    version: int = 0

    @property
    def n_total(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def empty(self) -> bool:
        return not self.groups

    def all_fundamentals(self) -> np.ndarray:
        return np.concatenate([g.fundamentals for g in self.groups])

    def bank_score(self, k: Intrinsics) -> float:
        if self.empty:
            raise ValueError("test bank is empty")
        return float(scores(k, self.all_fundamentals()).mean())

    def _record(self, k: Intrinsics):
        if k not in self.candidates:
            self.candidates.append(k)

    def _set_global(self, k: Intrinsics):
        if k != self.k_global:
            self.k_global = k
            self.version += 1

    def _reselect(self):
        """Global argmin over the candidate history; ties keep the incumbent."""
        fs = self.all_fundamentals()
        best_k = self.k_global
        best = float(scores(best_k, fs).mean()) if best_k is not None else np.inf
        for k in self.candidates:
            v = float(scores(k, fs).mean())
            if v < best:
                best, best_k = v, k
        self._set_global(best_k)

    def propose_candidate(self, k_new: Intrinsics) -> Intrinsics:
        self._record(k_new)
        if self.k_global is None:
            self._set_global(k_new)
        elif not self.empty and self.bank_score(k_new) < self.bank_score(self.k_global):
            self._set_global(k_new)
        return self.k_global

    def try_add_group(self, fundamentals: Sequence, match_counts: Sequence[int]) -> bool:
        cfg = self.config
        counts = np.asarray(match_counts, dtype=int)
        keep = counts >= cfg.n_feature
        if int(keep.sum()) < cfg.n_pair:
            return False
        fs = np.asarray(fundamentals, dtype=float)[keep]
        self.groups.append(TestGroup(fs, counts[keep]))
        while len(self.groups) > cfg.n_group:
            self.groups.popleft()
        if self.candidates or self.k_global is not None:
            self._reselect()
        return True

    def damping_factor(self) -> float:
        return damping_factor(self.n_total, self.config)

    def dump_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "index", "fx", "fy", "cx", "cy", "score"])
            for i, g in enumerate(self.groups):
                if self.k_global is not None:
                    w.writerow(["group", i, "", "", "", "", f"{scores(self.k_global, g.fundamentals).mean():.9g}"])
            for i, k in enumerate(self.candidates):
                sc = f"{self.bank_score(k):.9g}" if not self.empty else ""
                w.writerow(["candidate", i, f"{k.fx:.9g}", f"{k.fy:.9g}", f"{k.cx:.9g}", f"{k.cy:.9g}", sc])


def damping_factor(n_total: int, cfg: BankConfig = BankConfig()) -> float:
    """Correction strength from bank density, floored to a multiple of 0.1."""
    n_bar = n_total / cfg.n_group
    ratio = n_bar / (cfg.n_pair * cfg.n_feature)
    # the epsilon keeps exact tenths from falling to the step below
    q = np.floor(ratio * 10.0 + 1e-9) / 10.0
    return float(np.clip(q, 0.0, 1.0))


def estimate_group(pixel_pairs: Iterable[tuple], n_feature: int = 10):
    """Fundamental matrices for the usable pairs among ``(x1, x2)`` matches."""
    fs, counts = [], []
    for x1, x2 in pixel_pairs:
        if len(x1) < max(n_feature, 8):
            continue
        try:
            fs.append(eight_point(x1, x2))
        except DegenerateConfigurationError:
            continue
        counts.append(len(x1))
    return np.asarray(fs).reshape(-1, 3, 3), np.asarray(counts, dtype=int)
