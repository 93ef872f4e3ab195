"""Voter-class duality: coalescing branching dual with one set per opinion.

For every opinion ``m < M`` the probability of becoming ``m`` may depend only
on *where* ``m`` occurs among ``(left, self, right)``.  That gives eight
pattern values per opinion, which fix the dual weight ``d_m`` and the eight
block probabilities of the dual move ``{z} -> B_m(z) subset {z-1, z, z+1}``.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .kernel import Kernel
from .lattice import RingConfig
from .rng import RandomStream

__all__ = [
    "CLASS_TOL",
    "PATTERNS",
    "OUTCOMES",
    "OUTCOME_OFFSETS",
    "NoDualError",
    "UnreachableStateError",
    "ClassReport",
    "VoterDualParams",
    "VoterDualState",
    "LineWindow",
    "check_voter_class",
    "solve_voter_dual",
    "voter_equation_residuals",
    "step_voter_dual",
    "H_voter",
    "d_voter",
]

CLASS_TOL = 1e-9

# position pattern of opinion m in (left, self, right); 'm' = holds m, 'x' = does not
PATTERNS = ("xxx", "mxx", "xmx", "xxm", "mmx", "mxm", "xmm", "mmm")

OUTCOMES = ("empty", "l", "c", "r", "lc", "lr", "cr", "lcr")
OUTCOME_OFFSETS: dict[str, tuple[int, ...]] = {
    "empty": (),
    "l": (-1,),
    "c": (0,),
    "r": (1,),
    "lc": (-1, 0),
    "lr": (-1, 1),
    "cr": (0, 1),
    "lcr": (-1, 0, 1),
}

ACTIVE = "active"
EMPTY = "absorbed-empty"
CONFLICT = "absorbed-conflict"
FROZEN = "frozen"


class NoDualError(ValueError):
    """The kernel has no dual of the requested class."""


class UnreachableStateError(NoDualError):
    """A state can never be entered, so its dual weight would vanish."""


@dataclass
class ClassReport:
    """Outcome of a class check; ``passed`` is the conjunction of all checks."""

    cls: str
    M: int
    passed: bool
    constancy_failures: list[str] = field(default_factory=list)
    inequality_failures: list[str] = field(default_factory=list)
    unreachable: list[int] = field(default_factory=list)
    frozen: list[int] = field(default_factory=list)
    values: dict[int, dict[str, float]] = field(default_factory=dict)
    messages: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "class": self.cls,
            "M": self.M,
            "passed": self.passed,
            "constancy_failures": self.constancy_failures,
            "inequality_failures": self.inequality_failures,
            "unreachable": self.unreachable,
            "frozen": self.frozen,
            "values": {str(m): v for m, v in self.values.items()},
            "messages": self.messages,
        }


def _pattern_values(k: Kernel, m: int) -> dict[str, list[float]]:
    """All entries ``p[i][j][k][m]`` grouped by the position pattern of ``m``."""
    groups: dict[str, list[float]] = {pat: [] for pat in PATTERNS}
    for i, j, l in itertools.product(range(1, k.M + 1), repeat=3):
        pat = "".join("m" if s == m else "x" for s in (i, j, l))
        groups[pat].append(k.prob(i, j, l, m))
    return groups


# (name, lhs terms, rhs terms): sum(lhs) >= sum(rhs) is needed for nonnegative blocks
_INEQUALITIES = (
    ("p_mkk >= p_m", ("mxx",), ("xxx",)),
    ("p_kmk >= p_m", ("xmx",), ("xxx",)),
    ("p_kkm >= p_m", ("xxm",), ("xxx",)),
    ("p_mmk >= p_mkk + p_kmk - p_m", ("mmx", "xxx"), ("mxx", "xmx")),
    ("p_mkm >= p_mkk + p_kkm - p_m", ("mxm", "xxx"), ("mxx", "xxm")),
    ("p_kmm >= p_kmk + p_kkm - p_m", ("xmm", "xxx"), ("xmx", "xxm")),
    (
        "p_mmm + p_mkk + p_kmk + p_kkm >= p_kmm + p_mkm + p_mmk + p_m",
        ("mmm", "mxx", "xmx", "xxm"),
        ("xmm", "mxm", "mmx", "xxx"),
    ),
)


def _is_frozen(v: Mapping[str, float], tol: float) -> bool:
    zero = all(abs(v[p]) <= tol for p in ("xxx", "mxx", "xxm", "mxm"))
    flat = all(abs(v[p] - v["mmm"]) <= tol for p in ("xmx", "mmx", "xmm"))
    return zero and flat


def check_voter_class(k: Kernel, tol: float = CLASS_TOL) -> ClassReport:
    """Check whether ``k`` admits a voter-class dual with state ``M`` as background.

    For each opinion ``m < M``: every pattern class of ``p[., ., ., m]``
    must be constant over the non-``m`` states (within ``tol``), the seven
    block-nonnegativity inequalities must hold, and ``p_mmm,m > 0``.  The
    report also lists the frozen opinions, whose dual sites never move.
    """
    report = ClassReport("voter", k.M, True)
    for m in range(1, k.M):
        groups = _pattern_values(k, m)
        values = {}
        for pat, vals in groups.items():
            spread = max(vals) - min(vals)
            if spread > tol:
                report.constancy_failures.append(f"m={m} pattern {pat}: values vary by {spread:.3g}")
            values[pat] = float(np.mean(vals))
        report.values[m] = values
        for name, lhs, rhs in _INEQUALITIES:
            gap = sum(values[p] for p in lhs) - sum(values[p] for p in rhs)
            if gap < -tol:
                report.inequality_failures.append(f"m={m}: {name} fails by {-gap:.3g}")
        if values["mmm"] <= 0.0:
            report.unreachable.append(m)
            report.messages.append(f"state {m} unreachable: p_mmm,m = 0")
        elif _is_frozen(values, tol):
            report.frozen.append(m)
    report.passed = not (report.constancy_failures or report.inequality_failures or report.unreachable)
    report.messages = report.constancy_failures + report.inequality_failures + report.messages
    return report


@dataclass(frozen=True, eq=False)
class VoterDualParams:
    """Dual weights ``d[m-1]`` and block probabilities ``pi[m-1, o]`` (``o``
    indexes ``OUTCOMES``) for opinions ``m = 1..M-1``."""

    M: int
    d: np.ndarray
    pi: np.ndarray
    frozen: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        d = np.array(self.d, dtype=np.float64)
        pi = np.array(self.pi, dtype=np.float64)
        if d.shape != (self.M - 1,) or pi.shape != (self.M - 1, len(OUTCOMES)):
            raise ValueError("VoterDualParams shape mismatch")
        if np.any(d < 0) or np.any(d > 1 + 1e-12) or np.any(pi < 0):
            raise ValueError("dual weights must lie in [0, 1] and block probabilities be nonnegative")
        if np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError(f"block probabilities must sum to 1, got {pi.sum(axis=1).tolist()}")
        frozen = frozenset(self.frozen) | {m for m in range(1, self.M) if abs(pi[m - 1, 2] - 1.0) <= CLASS_TOL}
        d.setflags(write=False)
        pi.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "frozen", frozen)
        # pruned sampling tables: (cumulative probs, offsets) per opinion
        tables = []
        for row in pi:
            keep = [o for o in range(len(OUTCOMES)) if row[o] > 0.0]
            cum = np.cumsum(row[keep])
            cum[-1] = 1.0
            tables.append((cum, [OUTCOME_OFFSETS[OUTCOMES[o]] for o in keep]))
        object.__setattr__(self, "_tables", tuple(tables))

    def block_distribution(self, m: int) -> list[tuple[float, tuple[int, ...]]]:
        """Nonzero ``(probability, offsets)`` moves of a single point of opinion ``m``."""
        row = self.pi[m - 1]
        return [(float(row[o]), OUTCOME_OFFSETS[name]) for o, name in enumerate(OUTCOMES) if row[o] > 0.0]

    def mean_offspring(self, m: int) -> float:
        row = self.pi[m - 1]
        return float(sum(row[o] * len(OUTCOME_OFFSETS[name]) for o, name in enumerate(OUTCOMES)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "class": "voter",
            "M": self.M,
            "opinions": [
                {"m": m, "d": float(self.d[m - 1]), "pi": {name: float(self.pi[m - 1, o]) for o, name in enumerate(OUTCOMES)}}
                for m in range(1, self.M)
            ],
            "frozen": sorted(self.frozen),
        }


def solve_voter_dual(k: Kernel, tol: float = CLASS_TOL) -> VoterDualParams:
    """Closed-form voter-class dual of ``k``.

    ``d_m = p_mmm,m`` and, writing ``p_m`` for the spontaneous adoption
    probability and ``k != m``::

        pi_empty = p_m / d_m
        pi_l   = (p_mkk - p_m) / d_m            pi_lc  = (p_mmk + p_m - p_mkk - p_kmk) / d_m
        pi_c   = (p_kmk - p_m) / d_m            pi_lr  = (p_mkm + p_m - p_mkk - p_kkm) / d_m
        pi_r   = (p_kkm - p_m) / d_m            pi_cr  = (p_kmm + p_m - p_kmk - p_kkm) / d_m
        pi_lcr = (p_mmm + p_mkk + p_kmk + p_kkm - p_kmm - p_mkm - p_mmk - p_m) / d_m

    Pattern values that vary within ``tol`` are replaced by their mean.

    Raises
    ------
    UnreachableStateError
        If ``p_mmm,m = 0`` for some ``m < M``.
    NoDualError
        If a pattern class is not constant or an inequality fails.
    """
    report = check_voter_class(k, tol)
    if report.unreachable:
        raise UnreachableStateError(f"state {report.unreachable[0]} unreachable (p_mmm,m = 0)")
    if report.constancy_failures:
        raise NoDualError("no dual in this class: " + report.constancy_failures[0])
    if report.inequality_failures:
        raise NoDualError("no dual in this class: " + report.inequality_failures[0])
    d = np.empty(k.M - 1)
    pi = np.empty((k.M - 1, len(OUTCOMES)))
    for m in range(1, k.M):
        v = report.values[m]
        dm = v["mmm"]
        raw = {
            "empty": v["xxx"],
            "l": v["mxx"] - v["xxx"],
            "c": v["xmx"] - v["xxx"],
            "r": v["xxm"] - v["xxx"],
            "lc": v["mmx"] + v["xxx"] - v["mxx"] - v["xmx"],
            "lr": v["mxm"] + v["xxx"] - v["mxx"] - v["xxm"],
            "cr": v["xmm"] + v["xxx"] - v["xmx"] - v["xxm"],
            "lcr": v["mmm"] + v["mxx"] + v["xmx"] + v["xxm"] - v["xmm"] - v["mxm"] - v["mmx"] - v["xxx"],
        }
        d[m - 1] = dm
        if m in report.frozen:
            # snap near-frozen opinions so their sites provably never move
            pi[m - 1] = [1.0 if name == "c" else 0.0 for name in OUTCOMES]
            continue
        # negatives here are within tol of zero (inequalities passed)
        pi[m - 1] = [max(raw[name], 0.0) / dm for name in OUTCOMES]
    return VoterDualParams(k.M, d, pi, frozenset(report.frozen))


def voter_equation_residuals(k: Kernel, params: VoterDualParams) -> np.ndarray:
    """``|p_pattern - d_m * P(B_m(z) within the pattern)|`` for every kernel
    entry ``p[i][j][l][m]``, ``m < M``; shape ``(M, M, M, M-1)``."""
    out = np.empty((k.M, k.M, k.M, k.M - 1))
    for m in range(1, k.M):
        row = params.pi[m - 1]
        for i, j, l in itertools.product(range(1, k.M + 1), repeat=3):
            held = {-1: i == m, 0: j == m, 1: l == m}
            covered = sum(row[o] for o, name in enumerate(OUTCOMES) if all(held[s] for s in OUTCOME_OFFSETS[name]))
            out[i - 1, j - 1, l - 1, m - 1] = abs(k.prob(i, j, l, m) - params.d[m - 1] * covered)
    return out


@dataclass(frozen=True)
class VoterDualState:
    """Tuple of site sets ``sets[m-1] = A_m`` with its absorption status."""

    sets: tuple[frozenset[int], ...]
    status: str = ACTIVE

    @classmethod
    def make(cls, sets: Sequence[Iterable[int]], frozen: Iterable[int] = (), ring: int | None = None) -> "VoterDualState":
        fsets = tuple(frozenset(int(z) % ring if ring else int(z) for z in s) for s in sets)
        return cls(fsets, _status(fsets, frozenset(frozen)))

    @classmethod
    def empty(cls, M: int) -> "VoterDualState":
        return cls(tuple(frozenset() for _ in range(M - 1)), EMPTY)

    @property
    def absorbed(self) -> bool:
        return self.status != ACTIVE

    def sites(self) -> list[int]:
        return sorted(set().union(*self.sets))


def _status(sets: tuple[frozenset[int], ...], frozen: frozenset[int]) -> str:
    seen: set[int] = set()
    total = 0
    for s in sets:
        total += len(s)
        seen |= s
    if len(seen) < total:
        return CONFLICT
    if total == 0:
        return EMPTY
    if all(m in frozen or not s for m, s in enumerate(sets, start=1)):
        return FROZEN
    return ACTIVE


def step_voter_dual(
    s: VoterDualState,
    params: VoterDualParams,
    rng: RandomStream,
    step: int = 0,
    ring: int | None = None,
) -> VoterDualState:
    """Advance the dual one step on the line (``ring=None``) or on ``Z_ring``.

    Each point ``z`` of ``A_m`` is replaced by a block drawn with draw
    ``rng.uniform(step, z, sub=m)``; the new ``A_m`` is the union of blocks.
    Absorbed states are returned unchanged.
    """
    if s.status != ACTIVE:
        return s
    new_sets = []
    for m, A in enumerate(s.sets, start=1):
        cum, offsets = params._tables[m - 1]
        out: set[int] = set()
        for z in A:
            o = int(np.searchsorted(cum, rng.uniform(step, z, sub=m), side="right"))
            for off in offsets[min(o, len(offsets) - 1)]:
                out.add((z + off) % ring if ring else z + off)
        new_sets.append(frozenset(out))
    fsets = tuple(new_sets)
    return VoterDualState(fsets, _status(fsets, params.frozen))


@dataclass(frozen=True)
class LineWindow:
    """Finite window of a configuration on ``Z``: ``cells[z - origin]``."""

    cells: tuple[int, ...]
    origin: int = 0

    def __getitem__(self, z: int) -> int:
        idx = z - self.origin
        if not 0 <= idx < len(self.cells):
            raise IndexError(f"site {z} outside window [{self.origin}, {self.origin + len(self.cells)})")
        return self.cells[idx]


def H_voter(x: RingConfig | LineWindow, A: VoterDualState) -> int:
    """1 iff ``x(z) = m`` for every ``z`` in ``A_m``; 0 on conflict states."""
    if A.status == CONFLICT:
        return 0
    for m, sites in enumerate(A.sets, start=1):
        for z in sites:
            if x[z] != m:
                return 0
    return 1


def d_voter(A: VoterDualState, params: VoterDualParams) -> float:
    """``prod_m d_m ** |A_m|``."""
    return math.prod(float(params.d[m - 1]) ** len(s) for m, s in enumerate(A.sets, start=1))
