"""Monotone-class duality: nested-set dual for order-monotone kernels.

Only kernels that ignore the middle coordinate are covered; ``p_{ij,m}``
below is ``p[i][.][j][m]``.  The dual state is a chain
``A_1 subset ... subset A_{M-1}``, stored as the *level* of each site: the
smallest ``k`` with ``z`` in ``A_k``.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Any

import numpy as np

from .dual_voter import CLASS_TOL, ClassReport, LineWindow, NoDualError, UnreachableStateError
from .kernel import Kernel
from .lattice import RingConfig
from .rng import RandomStream

__all__ = [
    "CumulantTable",
    "MonotoneDualParams",
    "MonotoneDualState",
    "cumulants",
    "check_monotone_class",
    "solve_monotone_dual",
    "telescoping_residual",
    "monotone_equation_residuals",
    "step_monotone_dual",
    "H_monotone",
    "d_monotone",
]

ACTIVE = "active"
EMPTY = "absorbed-empty"


@dataclass(frozen=True, eq=False)
class CumulantTable:
    """``S[i-1, j-1, k] = sum_{m <= k} p_{ij,m}`` for ``k = 0..M``."""

    S: np.ndarray

    @property
    def M(self) -> int:
        return self.S.shape[0]

    def __call__(self, i: int, j: int, k: int) -> float:
        return float(self.S[i - 1, j - 1, k])


def _middle_free(k: Kernel) -> tuple[np.ndarray, float]:
    """Mean over the middle coordinate and the largest deviation from it."""
    mean = k.table.mean(axis=1)
    spread = float(np.max(np.abs(k.table - mean[:, None, :, :])))
    return mean, spread


def cumulants(k: Kernel) -> CumulantTable:
    p2, _ = _middle_free(k)
    S = np.zeros((k.M, k.M, k.M + 1))
    S[:, :, 1:] = np.cumsum(p2, axis=2)
    S[:, :, k.M] = 1.0
    return CumulantTable(S)


def _second_difference(S: np.ndarray, m: int, n: int, k: int) -> float:
    # 1-based m, n in 1..M-1
    return S[m - 1, n - 1, k] - S[m, n - 1, k] - S[m - 1, n, k] + S[m, n, k]


def check_monotone_class(k: Kernel, tol: float = CLASS_TOL) -> ClassReport:
    """Check middle-coordinate independence, monotonicity, supermodularity and
    ``p_{11,1} > 0``."""
    report = ClassReport("monotone", k.M, True)
    _, spread = _middle_free(k)
    if spread > tol:
        report.constancy_failures.append(f"transition probabilities depend on the middle coordinate (spread {spread:.3g})")
    S = cumulants(k).S
    M = k.M
    for kk in range(1, M):
        for i in range(1, M):
            for j in range(1, M + 1):
                gap = S[i - 1, j - 1, kk] - S[i, j - 1, kk]
                if gap < -tol:
                    report.inequality_failures.append(f"monotonicity: S^{kk}_{{{i},{j}}} < S^{kk}_{{{i + 1},{j}}}")
                gap = S[j - 1, i - 1, kk] - S[j - 1, i, kk]
                if gap < -tol:
                    report.inequality_failures.append(f"monotonicity: S^{kk}_{{{j},{i}}} < S^{kk}_{{{j},{i + 1}}}")
        for m in range(1, M):
            for n in range(1, M):
                if _second_difference(S, m, n, kk) < -tol:
                    report.inequality_failures.append(f"supermodularity fails at k={kk}, (m,n)=({m},{n})")
    if S[0, 0, 1] <= 0.0:
        report.unreachable.append(1)
        report.messages.append("state 1 unreachable: p_{11,1} = 0")
    report.passed = not (report.constancy_failures or report.inequality_failures or report.unreachable)
    report.messages = report.constancy_failures + report.inequality_failures + report.messages
    return report


@dataclass(frozen=True, eq=False)
class MonotoneDualParams:
    """Dual weights and block probabilities, all indexed from 0 by level ``k-1``.

    ``pi_empty[k]``, ``pi_left[k, m]`` (left neighbour enters at level
    ``m+1``), ``pi_right[k, n]`` and ``pi_both[k, m, n]``.
    """

    M: int
    d: np.ndarray
    pi_empty: np.ndarray
    pi_left: np.ndarray
    pi_right: np.ndarray
    pi_both: np.ndarray

    def __post_init__(self) -> None:
        K = self.M - 1
        arrays = {}
        for name, shape in (
            ("d", (K,)),
            ("pi_empty", (K,)),
            ("pi_left", (K, K)),
            ("pi_right", (K, K)),
            ("pi_both", (K, K, K)),
        ):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            if np.any(arr < 0):
                raise ValueError(f"{name} has negative entries")
            arr.setflags(write=False)
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        if np.any(arrays["d"] > 1 + 1e-12):
            raise ValueError("dual weights must lie in [0, 1]")
        sums = self.block_sums()
        if np.any(np.abs(sums - 1.0) > 1e-12):
            raise ValueError(f"block probabilities must sum to 1, got {sums.tolist()}")
        tables = []
        for kk in range(K):
            moves = self.block_distribution(kk + 1)
            cum = np.cumsum([p for p, _ in moves])
            cum[-1] = 1.0
            tables.append((cum, [mv for _, mv in moves]))
        object.__setattr__(self, "_tables", tuple(tables))

    def block_sums(self) -> np.ndarray:
        return self.pi_empty + self.pi_left.sum(axis=1) + self.pi_right.sum(axis=1) + self.pi_both.sum(axis=(1, 2))

    def block_distribution(self, k: int) -> list[tuple[float, tuple[int | None, int | None]]]:
        """Nonzero moves of a point at level ``k``: ``(prob, (left level, right level))``,
        ``None`` meaning that side is not added."""
        K = self.M - 1
        kk = k - 1
        moves: list[tuple[float, tuple[int | None, int | None]]] = []
        if self.pi_empty[kk] > 0:
            moves.append((float(self.pi_empty[kk]), (None, None)))
        for m in range(K):
            if self.pi_left[kk, m] > 0:
                moves.append((float(self.pi_left[kk, m]), (m + 1, None)))
        for n in range(K):
            if self.pi_right[kk, n] > 0:
                moves.append((float(self.pi_right[kk, n]), (None, n + 1)))
        for m in range(K):
            for n in range(K):
                if self.pi_both[kk, m, n] > 0:
                    moves.append((float(self.pi_both[kk, m, n]), (m + 1, n + 1)))
        return moves

    def to_dict(self) -> dict[str, Any]:
        return {
            "class": "monotone",
            "M": self.M,
            "levels": [
                {
                    "k": kk + 1,
                    "d": float(self.d[kk]),
                    "pi_empty": float(self.pi_empty[kk]),
                    "pi_left": self.pi_left[kk].tolist(),
                    "pi_right": self.pi_right[kk].tolist(),
                    "pi_both": self.pi_both[kk].tolist(),
                }
                for kk in range(self.M - 1)
            ],
        }


def solve_monotone_dual(k: Kernel, tol: float = CLASS_TOL) -> MonotoneDualParams:
    """Closed-form monotone-class dual: ``d_k = S^k_{1,1}`` and

    ``pi_k^empty = S^k_{M,M}/d_k``, ``pi^l_{k,m} = (S^k_{m,M} - S^k_{m+1,M})/d_k``,
    ``pi^r_{k,n} = (S^k_{M,n} - S^k_{M,n+1})/d_k`` and
    ``pi_{k,mn} = (S^k_{m,n} - S^k_{m+1,n} - S^k_{m,n+1} + S^k_{m+1,n+1})/d_k``.
    """
    report = check_monotone_class(k, tol)
    if report.unreachable:
        raise UnreachableStateError("state 1 unreachable (p_{11,1} = 0)")
    if not report.passed:
        raise NoDualError("no dual in this class: " + report.messages[0])
    S = cumulants(k).S
    M = k.M
    K = M - 1
    d = np.array([S[0, 0, kk] for kk in range(1, M)])
    pe = np.empty(K)
    pl = np.empty((K, K))
    pr = np.empty((K, K))
    pb = np.empty((K, K, K))
    for kk in range(1, M):
        dk = d[kk - 1]
        pe[kk - 1] = S[M - 1, M - 1, kk] / dk
        for m in range(1, M):
            pl[kk - 1, m - 1] = (S[m - 1, M - 1, kk] - S[m, M - 1, kk]) / dk
            pr[kk - 1, m - 1] = (S[M - 1, m - 1, kk] - S[M - 1, m, kk]) / dk
            for n in range(1, M):
                pb[kk - 1, m - 1, n - 1] = _second_difference(S, m, n, kk) / dk
    # entries within tol below zero passed the class check
    return MonotoneDualParams(M, d, pe, np.maximum(pl, 0), np.maximum(pr, 0), np.maximum(pb, 0))


def telescoping_residual(k: Kernel, params: MonotoneDualParams) -> float:
    """Max over ``i, j, k`` of ``|d_k * [pi^empty + sum_{m>=i} pi^l + sum_{n>=j} pi^r
    + sum_{m>=i, n>=j} pi_{mn}] - S^k_{i,j}|``; the dual equations in cumulant form."""
    S = cumulants(k).S
    M = k.M
    worst = 0.0
    for kk in range(1, M):
        t = kk - 1
        for i in range(1, M + 1):
            for j in range(1, M + 1):
                total = (
                    params.pi_empty[t]
                    + params.pi_left[t, i - 1 :].sum()
                    + params.pi_right[t, j - 1 :].sum()
                    + params.pi_both[t, i - 1 :, j - 1 :].sum()
                )
                worst = max(worst, abs(params.d[t] * total - S[i - 1, j - 1, kk]))
    return worst


def monotone_equation_residuals(k: Kernel, params: MonotoneDualParams) -> float:
    """Direct check of ``P(eta_1(z) <= k | i, j) = d_k * P(B(z) within the sites <= k)``
    by enumerating block moves, for every neighbour pair and level."""
    S = cumulants(k).S
    M = k.M
    worst = 0.0
    for kk in range(1, M):
        moves = params.block_distribution(kk)
        for i in range(1, M + 1):
            for j in range(1, M + 1):
                # left site (state i) must be <= every level it enters at
                ok = sum(p for p, (lv, rv) in moves if (lv is None or i <= lv) and (rv is None or j <= rv))
                worst = max(worst, abs(params.d[kk - 1] * ok - S[i - 1, j - 1, kk]))
    return worst


@dataclass(frozen=True)
class MonotoneDualState:
    """Nested chain stored as ``levels``: sorted ``(site, level)`` pairs."""

    levels: tuple[tuple[int, int], ...]
    M: int
    status: str = ACTIVE

    @classmethod
    def from_levels(cls, levels: Mapping[int, int] | Iterable[tuple[int, int]], M: int, ring: int | None = None) -> "MonotoneDualState":
        items = levels.items() if isinstance(levels, Mapping) else levels
        merged: dict[int, int] = {}
        for z, lv in items:
            lv = int(lv)
            if not 1 <= lv <= M - 1:
                raise ValueError(f"level {lv} outside 1..{M - 1}")
            z = int(z) % ring if ring else int(z)
            merged[z] = min(lv, merged.get(z, lv))
        lv_t = tuple(sorted(merged.items()))
        return cls(lv_t, M, ACTIVE if lv_t else EMPTY)

    @classmethod
    def from_sets(cls, sets: Iterable[Iterable[int]], M: int, ring: int | None = None) -> "MonotoneDualState":
        """Build from ``(A_1, ..., A_{M-1})``; raises unless the chain is nested."""
        sets = [frozenset(int(z) % ring if ring else int(z) for z in s) for s in sets]
        if len(sets) != M - 1:
            raise ValueError(f"expected {M - 1} sets")
        for a, b in zip(sets, sets[1:]):
            if not a <= b:
                raise ValueError("dual sets must be nested A_1 <= ... <= A_{M-1}")
        levels = {}
        for k, s in enumerate(sets, start=1):
            for z in s:
                levels.setdefault(z, k)
        return cls.from_levels(levels, M)

    @classmethod
    def empty(cls, M: int) -> "MonotoneDualState":
        return cls((), M, EMPTY)

    @property
    def absorbed(self) -> bool:
        return self.status != ACTIVE

    @property
    def sets(self) -> tuple[frozenset[int], ...]:
        return tuple(frozenset(z for z, lv in self.levels if lv <= k) for k in range(1, self.M))

    def level_of(self, z: int) -> int | None:
        return dict(self.levels).get(z)


def step_monotone_dual(
    s: MonotoneDualState,
    params: MonotoneDualParams,
    rng: RandomStream,
    step: int = 0,
    ring: int | None = None,
) -> MonotoneDualState:
    """One dual step: each site at level ``k`` draws a block move with
    ``rng.uniform(step, z, sub=k)``; the new chain is the levelwise union."""
    if s.status != ACTIVE:
        return s
    new: dict[int, int] = {}
    for z, lv in s.levels:
        cum, moves = params._tables[lv - 1]
        o = min(int(np.searchsorted(cum, rng.uniform(step, z, sub=lv), side="right")), len(moves) - 1)
        left, right = moves[o]
        for site, level in ((z - 1, left), (z + 1, right)):
            if level is None:
                continue
            if ring:
                site %= ring
            if level < new.get(site, params.M):
                new[site] = level
    lv_t = tuple(sorted(new.items()))
    return MonotoneDualState(lv_t, s.M, ACTIVE if lv_t else EMPTY)


def H_monotone(x: RingConfig | LineWindow, A: MonotoneDualState) -> int:
    """1 iff ``x(z) <= k`` for every ``z`` in ``A_k``."""
    return int(all(x[z] <= lv for z, lv in A.levels))


def d_monotone(A: MonotoneDualState, params: MonotoneDualParams) -> float:
    """``prod_k d_k ** |A_k minus A_{k-1}|``."""
    return math.prod(float(params.d[lv - 1]) for _, lv in A.levels)
