"""Ergodicity criteria and dual-based estimates of the equilibrium measure.

The equilibrium probability of the event ``{H(., A) = 1}`` is the chance
that the killed dual chain started at ``A`` reaches the all-empty state
before the cemetery.  The killed chain survives each step from ``y`` with
probability ``d(y)`` and otherwise moves to the cemetery.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

from .dual_monotone import (
    MonotoneDualParams,
    MonotoneDualState,
    check_monotone_class,
    d_monotone,
    step_monotone_dual,
)
from .dual_voter import (
    NoDualError,
    VoterDualParams,
    VoterDualState,
    check_voter_class,
    d_voter,
    solve_voter_dual,
    step_voter_dual,
)
from .kernel import Kernel, KernelError, StateRelabeling, relabel_states
from .lattice import Cylinder, ProductMeasure, empirical_cylinder_prob, simulate
from .rng import STREAM_DEATH, STREAM_DUAL, RandomStream

logger = logging.getLogger(__name__)

__all__ = [
    "ERGODIC",
    "NOT_ERGODIC",
    "UNKNOWN",
    "ErgodicityVerdict",
    "HittingEstimate",
    "CrosscheckBudget",
    "CrosscheckRow",
    "check_corvoter1",
    "check_cordkm",
    "check_corvoter3",
    "check_ergodicity",
    "estimate_equilibrium",
    "dual_state_cylinder",
    "crosscheck_equilibrium",
]

ERGODIC = "ergodic"
NOT_ERGODIC = "not-ergodic"
UNKNOWN = "unknown"


@dataclass
class ErgodicityVerdict:
    verdict: str
    conditions: dict[str, bool] = field(default_factory=dict)
    witness: str = ""
    criterion: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict,
            "criterion": self.criterion,
            "conditions": dict(self.conditions),
            "witness": self.witness,
        }


def check_corvoter1(k: Kernel) -> ErgodicityVerdict:
    """Voter-class criterion with state ``M`` as background.

    Conditions: (i) ``p_{iii,M} > 0`` for all ``i < M``; (ii) two distinct
    opinions with positive spontaneous rate; (iii) some ``m`` with ``p_m > 0``
    and ``p_{mmm,M} > 0``; (iv) a single ``m`` with ``p_m > 0``,
    ``p_{mmm,M} = 0`` whose dual branching bound (mean offspring) is below 1.
    The last is only sufficient for the extinction requirement, so a failure
    there yields ``unknown`` rather than ``not-ergodic``.

    Raises
    ------
    NoDualError
        If ``k`` is not in the voter class.
    """
    report = check_voter_class(k)
    if not report.passed:
        raise NoDualError("voter class check failed: " + "; ".join(report.messages))
    M = k.M
    spont = {m: report.values[m]["xxx"] for m in range(1, M)}
    to_bg = {m: k.prob(m, m, m, M) for m in range(1, M)}
    positive = [m for m in range(1, M) if spont[m] > 0]
    cond = {
        "i": all(to_bg[m] > 0 for m in range(1, M)),
        "ii": len(positive) >= 2,
        "iii": any(to_bg[m] > 0 for m in positive),
    }
    surrogate = False
    witness_iv = ""
    if len(positive) == 1 and to_bg[positive[0]] == 0:
        m = positive[0]
        offspring = solve_voter_dual(k).mean_offspring(m)
        surrogate = offspring < 1
        witness_iv = f"opinion {m}: mean offspring {offspring:.6g}"
    cond["iv_branching_bound"] = surrogate
    necessity_a = not positive and any(to_bg[m] == 0 for m in range(1, M))
    cond["necessity_a_fails"] = necessity_a
    held = [name for name in ("i", "ii", "iii") if cond[name]]
    if held:
        return ErgodicityVerdict(ERGODIC, cond, "conditions " + ", ".join(held), "voter")
    if surrogate:
        return ErgodicityVerdict(ERGODIC, cond, f"condition iv via branching bound ({witness_iv})", "voter")
    if necessity_a:
        j = next(m for m in range(1, M) if to_bg[m] == 0)
        return ErgodicityVerdict(
            NOT_ERGODIC, cond, f"no spontaneous changes and p_{{{j}{j}{j},{M}}} = 0: pure states {M} and {j} are both invariant", "voter"
        )
    witness = "no sufficient condition holds" + (f" ({witness_iv})" if witness_iv else "")
    return ErgodicityVerdict(UNKNOWN, cond, witness, "voter")


def check_cordkm(a0: float, a1: float, a2: float) -> ErgodicityVerdict:
    """Domany-Kinzel criterion; requires ``0 <= a0 <= a1 <= a2 <= 1``."""
    if not 0 <= a0 <= a1 <= a2 <= 1:
        raise KernelError(f"Domany-Kinzel criterion needs 0 <= a0 <= a1 <= a2 <= 1, got {(a0, a1, a2)}")
    cond = {
        "i": a0 + a2 >= 2 * a1 and a2 < 1,
        "ii": a0 + a2 < 2 * a1 and a0 > 0,
        "iii": a0 > 0 and a2 < 1,
        "iv": a0 == 0 and a1 < 0.5 and a2 < 1,
        "v": a0 > 0 and a1 > 0.5 and a2 == 1,
    }
    held = [name for name, ok in cond.items() if ok]
    if held:
        return ErgodicityVerdict(ERGODIC, cond, "conditions " + ", ".join(held), "dk")
    return ErgodicityVerdict(UNKNOWN, cond, "none of conditions i-v holds", "dk")


def check_corvoter3(k: Kernel) -> ErgodicityVerdict:
    """Monotone-class criterion: ergodic if ``p_{11,M} > 0`` (sufficient only)."""
    report = check_monotone_class(k)
    if not report.passed:
        raise NoDualError("monotone class check failed: " + "; ".join(report.messages))
    p11M = float(k.table[0, :, 0, k.M - 1].mean())
    cond = {"p_11M_positive": p11M > 0}
    if p11M > 0:
        return ErgodicityVerdict(ERGODIC, cond, f"p_{{11,{k.M}}} = {p11M:.6g} > 0", "monotone")
    return ErgodicityVerdict(UNKNOWN, cond, f"p_{{11,{k.M}}} = 0", "monotone")


def check_ergodicity(k: Kernel) -> ErgodicityVerdict:
    """Apply every criterion that fits ``k`` and combine the verdicts.

    Domany-Kinzel kernels with ordered parameters use the dedicated
    criterion.  Otherwise the voter criterion is tried with each state in
    turn relabelled as the background ``M`` (ergodicity does not depend on
    the labels), then the monotone criterion.  Any ``ergodic`` verdict wins,
    then any ``not-ergodic`` one.
    """
    if k.family == "dk":
        a = k.params["a"]
        if a[0] <= a[1] <= a[2]:
            return check_cordkm(*a)
    verdicts = []
    for b in range(k.M, 0, -1):
        kb = k if b == k.M else relabel_states(k, StateRelabeling.swap(k.M, b, k.M))
        if check_voter_class(kb).passed:
            v = check_corvoter1(kb)
            if b != k.M:
                v.witness += f" (states {b} and {k.M} swapped)"
            verdicts.append(v)
    if check_monotone_class(k).passed:
        verdicts.append(check_corvoter3(k))
    if not verdicts:
        return ErgodicityVerdict(UNKNOWN, {}, "kernel fits neither dual class", "none")
    for wanted in (ERGODIC, NOT_ERGODIC):
        for v in verdicts:
            if v.verdict == wanted:
                return v
    return verdicts[0]


@dataclass
class HittingEstimate:
    """Monte Carlo estimate of the killed dual hitting the all-empty state.

    ``estimate = successes / (replicas - censored)``.  Replicas stuck in a
    nonempty absorbing state of weight 1 (frozen) count in the denominator
    and are reported in ``frozen``; the limit formula does not cover them.
    """

    estimate: float
    stderr: float
    censored_fraction: float
    replicas: int
    max_steps: int
    successes: int = 0
    failures: int = 0
    frozen: int = 0
    censored: int = 0

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def _dual_ops(params: VoterDualParams | MonotoneDualParams):
    if isinstance(params, VoterDualParams):
        return step_voter_dual, d_voter
    return step_monotone_dual, d_monotone


def estimate_equilibrium(
    params: VoterDualParams | MonotoneDualParams,
    A0: VoterDualState | MonotoneDualState,
    replicas: int = 100_000,
    max_steps: int = 1_000_000,
    seed: int = 0,
    ring: int | None = None,
) -> HittingEstimate:
    """Estimate the equilibrium value of the cylinder encoded by ``A0``.

    Each replica runs the killed dual from ``A0``: while active, it dies with
    probability ``1 - d(current)`` (no draw is spent when ``d = 1``), else it
    takes one dual step.  Reaching the all-empty state is a success; death
    or an absorbing state with ``d < 1`` is a failure; a nonempty absorbing
    state with ``d = 1`` is tallied as frozen; hitting ``max_steps`` is
    censoring.
    """
    if replicas < 1 or max_steps < 1:
        raise ValueError("replicas and max_steps must be >= 1")
    step_fn, d_fn = _dual_ops(params)
    successes = failures = frozen = censored = 0
    for r in range(replicas):
        move = RandomStream(seed, STREAM_DUAL, r)
        death = RandomStream(seed, STREAM_DEATH, r)
        state = A0
        s = 0
        while True:
            if state.status == "absorbed-empty":
                successes += 1
                break
            dval = d_fn(state, params)
            if state.absorbed:
                if dval < 1.0:
                    failures += 1
                else:
                    frozen += 1
                break
            if s >= max_steps:
                censored += 1
                break
            if dval < 1.0 and death.uniform(s, 0) >= dval:
                failures += 1
                break
            state = step_fn(state, params, move, s, ring)
            s += 1
    n = replicas - censored
    est = successes / n if n else float("nan")
    se = math.sqrt(est * (1 - est) / n) if n else float("nan")
    if frozen:
        warnings.warn(f"{frozen} replicas ended in frozen absorbing states; they are not folded into the estimate", stacklevel=2)
    return HittingEstimate(est, se, censored / replicas, replicas, max_steps, successes, failures, frozen, censored)


def dual_state_cylinder(A: VoterDualState | MonotoneDualState) -> Cylinder:
    """The cylinder ``{x : H(x, A) = 1}`` (undefined for conflict states)."""
    if isinstance(A, VoterDualState):
        if A.status == "absorbed-conflict":
            raise ValueError("a conflict state encodes the empty event, not a cylinder")
        return Cylinder(tuple((z, frozenset({m})) for m, s in enumerate(A.sets, start=1) for z in sorted(s)))
    return Cylinder(tuple((z, frozenset(range(1, lv + 1))) for z, lv in A.levels))


@dataclass
class CrosscheckBudget:
    dual_replicas: int = 100_000
    max_steps: int = 1_000_000
    L: int = 200
    steps: int = 10_000
    forward_replicas: int = 1_000
    initial_measures: Sequence[ProductMeasure] | None = None


@dataclass
class CrosscheckRow:
    cylinder: str
    dual: HittingEstimate
    forward: list[tuple[str, float, float]]
    max_z: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "cylinder": self.cylinder,
            "dual_estimate": self.dual.estimate,
            "dual_stderr": self.dual.stderr,
            "censored_fraction": self.dual.censored_fraction,
            "forward": [{"initial": n, "estimate": e, "stderr": s} for n, e, s in self.forward],
            "max_z": self.max_z,
        }


def _z(a: tuple[float, float], b: tuple[float, float]) -> float:
    diff = abs(a[0] - b[0])
    se = math.hypot(a[1], b[1])
    if se == 0:
        return 0.0 if diff == 0 else math.inf
    return diff / se


def _measure_name(mu: ProductMeasure) -> str:
    if mu.probs is None:
        return "uniform"
    if max(mu.probs) == 1.0:
        return f"state:{mu.probs.index(1.0) + 1}"
    return "product" + str(list(mu.probs))


def crosscheck_equilibrium(
    k: Kernel,
    cylinders: Sequence[VoterDualState | MonotoneDualState],
    params: VoterDualParams | MonotoneDualParams,
    budget: CrosscheckBudget | None = None,
    seed: int = 0,
) -> list[CrosscheckRow]:
    """Compare dual-based equilibrium estimates with forward simulation.

    Every cylinder is given as a dual state ``A`` (line coordinates).  The
    forward estimate is computed from two or more initial product measures;
    ``max_z`` is the largest pairwise z-score among all estimators.
    """
    budget = budget or CrosscheckBudget()
    measures = list(budget.initial_measures or (ProductMeasure(k.M), ProductMeasure.delta(k.M, k.M)))
    if len(measures) < 2:
        raise ValueError("need at least two initial measures")
    verdict = check_ergodicity(k)
    if verdict.verdict != ERGODIC:
        warnings.warn(f"ergodicity not established ({verdict.witness}); forward estimates may depend on the start", stacklevel=2)
    samples = [
        (_measure_name(mu), simulate(mu, k, budget.steps, budget.forward_replicas, seed + 1 + i, L=budget.L))
        for i, mu in enumerate(measures)
    ]
    rows = []
    for A in cylinders:
        dual = estimate_equilibrium(params, A, budget.dual_replicas, budget.max_steps, seed)
        cyl = dual_state_cylinder(A)
        forward = [(name, *empirical_cylinder_prob(s, cyl)) for name, s in samples]
        ests = [(dual.estimate, dual.stderr)] + [(e, se) for _, e, se in forward]
        max_z = max((_z(a, b) for a, b in itertools.combinations(ests, 2)), default=0.0)
        rows.append(CrosscheckRow(_describe(A), dual, forward, max_z))
    return rows


def _describe(A: VoterDualState | MonotoneDualState) -> str:
    if isinstance(A, VoterDualState):
        return ";".join(f"A{m}={sorted(s)}" for m, s in enumerate(A.sets, start=1))
    return ";".join(f"z{z}<={lv}" for z, lv in A.levels)
