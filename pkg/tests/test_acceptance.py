"""Acceptance criteria, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary prints one
PASS/FAIL line per criterion.
"""

import time

import numpy as np
import pytest

from pcadual.dual_monotone import MonotoneDualState, solve_monotone_dual, step_monotone_dual, telescoping_residual
from pcadual.dual_voter import OUTCOMES, VoterDualParams, VoterDualState, solve_voter_dual, step_voter_dual
from pcadual.duality_core import build_instance, build_tilde_chain, verify_multi_step, verify_one_step, verify_tilde
from pcadual.ergodicity import CrosscheckBudget, check_ergodicity, crosscheck_equilibrium, estimate_equilibrium
from pcadual.kernel import (
    StateRelabeling,
    competition_kernel,
    convex_g_kernel,
    domany_kinzel_kernel,
    noisy_voter_kernel,
    relabel_states,
)
from pcadual.lattice import ProductMeasure
from pcadual.rng import STREAM_DUAL, RandomStream

DK = domany_kinzel_kernel(0.1, 0.3, 0.6)
COMPETITION = competition_kernel(2, [0.05, 0.05], [0.7], [0.7])
# convex in l, nondecreasing in k, g_2(2) < 1
CONVEX_G = convex_g_kernel(3, [[0.6, 0.35, 0.15, 0.05, 0.0], [0.95, 0.7, 0.45, 0.25, 0.1]])

VOTER_INSTANCES = [(DK, "voter", L) for L in (3, 4, 5)]
MONOTONE_INSTANCES = [(COMPETITION, "monotone", 3), (CONVEX_G, "monotone", 3)]
INSTANCE_IDS = ["dk-L3", "dk-L4", "dk-L5", "competition-L3", "convex_g-L3"]


def criterion(n, title):
    return pytest.mark.criterion(n, title)


@criterion(1, "exact one-step duality, voter class (DK, L=3,4,5)")
@pytest.mark.parametrize("L", [3, 4, 5])
def test_one_step_voter(L):
    t0 = time.perf_counter()
    residual = verify_one_step(build_instance(DK, "voter", L))
    elapsed = time.perf_counter() - t0
    assert residual <= 1e-12
    assert elapsed < 5.0


@criterion(2, "exact one-step duality, monotone class (competition M=2, convex_g M=3)")
@pytest.mark.parametrize("k, cls, L", MONOTONE_INSTANCES, ids=INSTANCE_IDS[3:])
def test_one_step_monotone(k, cls, L):
    assert verify_one_step(build_instance(k, cls, L)) <= 1e-12


@criterion(3, "multi-step identity for s=3")
@pytest.mark.parametrize("k, cls, L", VOTER_INSTANCES + MONOTONE_INSTANCES, ids=INSTANCE_IDS)
def test_multi_step(k, cls, L):
    assert verify_multi_step(build_instance(k, cls, L), 3)[3] <= 1e-10


@criterion(4, "classical duality of the killed chain")
@pytest.mark.parametrize("k, cls, L", VOTER_INSTANCES + MONOTONE_INSTANCES, ids=INSTANCE_IDS)
def test_killed_chain(k, cls, L):
    assert verify_tilde(build_instance(k, cls, L)) <= 1e-12


@criterion(5, "closed-form voter dual of DK(0.1,0.3,0.6)")
def test_closed_form():
    p = solve_voter_dual(DK)
    pi = dict(zip(OUTCOMES, p.pi[0]))
    got = (p.d[0], pi["empty"], pi["l"], pi["r"], pi["lr"])
    for value, expected in zip(got, (0.6, 1 / 6, 1 / 3, 1 / 3, 1 / 6)):
        assert abs(value - expected) <= 1e-15


@criterion(6, "ergodicity verdicts")
@pytest.mark.parametrize(
    "k, verdict",
    [
        (domany_kinzel_kernel(0, 0.4, 0.9), "ergodic"),
        (noisy_voter_kernel(2, [0.1, 0], 0.3, 0.3, 0.3), "ergodic"),
        (noisy_voter_kernel(2, [0, 0.1], 0.3, 0.3, 0.3), "ergodic"),
        (noisy_voter_kernel(3, [0.05, 0, 0], 0.3, 0.35, 0.3), "ergodic"),
        (noisy_voter_kernel(3, [0, 0.05, 0], 0.3, 0.35, 0.3), "ergodic"),
        (noisy_voter_kernel(3, [0, 0, 0.05], 0.3, 0.35, 0.3), "ergodic"),
        (noisy_voter_kernel(3, [0.05, 0.05, 0.0], 0.3, 0.3, 0.3), "ergodic"),
        (noisy_voter_kernel(2, [0, 0], 0.3, 0.4, 0.3), "not-ergodic"),
        (noisy_voter_kernel(3, [0, 0, 0], 0.3, 0.4, 0.3), "not-ergodic"),
        (competition_kernel(2, [0.05, 0.05], [0.7], [0.7]), "ergodic"),
        (competition_kernel(3, [0, 0, 0.1], [0.6, 0.8], [0.6, 0.8]), "ergodic"),
        (domany_kinzel_kernel(0, 0.6, 0.9), "unknown"),
    ],
    ids=[
        "dk-0-0.4-0.9",
        "nv2-q1",
        "nv2-q2",
        "nv3-q1",
        "nv3-q2",
        "nv3-q3",
        "nv3-q12",
        "nv2-noiseless",
        "nv3-noiseless",
        "competition2",
        "competition3",
        "dk-0-0.6-0.9",
    ],
)
def test_ergodicity_verdicts(k, verdict):
    v = check_ergodicity(k)
    assert v.verdict == verdict
    if k.family == "dk" and verdict == "ergodic":
        assert v.conditions["iv"]


@criterion(7, "equilibrium cross-check, dual vs forward (DK(0.1,0.3,0.6))")
def test_equilibrium_crosscheck():
    p = solve_voter_dual(DK)
    budget = CrosscheckBudget(
        dual_replicas=100_000,
        max_steps=1_000_000,
        L=200,
        steps=10_000,
        forward_replicas=1_000,
        initial_measures=[ProductMeasure(2), ProductMeasure.delta(2, 2)],
    )
    (row,) = crosscheck_equilibrium(DK, [VoterDualState.make([{0}])], p, budget, seed=2024)
    print(f"dual {row.dual.estimate:.4f}+-{row.dual.stderr:.4f}; forward {row.forward}; max z {row.max_z:.2f}")
    assert row.dual.censored_fraction <= 0.01
    assert row.max_z <= 3


@criterion(8, "complementarity of original and starred orientations (DK(0.1,0.3,0.6))")
def test_complementarity():
    star = relabel_states(DK, StateRelabeling.swap(2, 1, 2))
    A = VoterDualState.make([{0}])
    ones = estimate_equilibrium(solve_voter_dual(DK), A, 100_000, seed=11)
    zeros = estimate_equilibrium(solve_voter_dual(star), A, 100_000, seed=12)
    assert abs(ones.estimate + zeros.estimate - 1) <= 3 * np.hypot(ones.stderr, zeros.stderr)


@criterion(9, "invariant suites")
@pytest.mark.parametrize("k, cls, L", VOTER_INSTANCES + MONOTONE_INSTANCES, ids=INSTANCE_IDS)
def test_row_stochasticity(k, cls, L):
    inst = build_instance(k, cls, L)
    assert inst.P.row_sum_error() <= 1e-12
    assert inst.Q.row_sum_error() <= 1e-12
    assert build_tilde_chain(inst.Q, inst.d).row_sum_error() <= 1e-12


@criterion(9, "invariant suites")
def test_simplex_sums():
    for k in (DK, noisy_voter_kernel(3, [0.05, 0.05, 0.0], 0.3, 0.3, 0.3), COMPETITION):
        assert np.abs(solve_voter_dual(k).pi.sum(axis=1) - 1).max() <= 1e-12
    for k in (COMPETITION, CONVEX_G, DK):
        assert np.abs(solve_monotone_dual(k).block_sums() - 1).max() <= 1e-12


@criterion(9, "invariant suites")
@pytest.mark.parametrize("k", [COMPETITION, CONVEX_G, competition_kernel(3, [0.05, 0.05, 0.1], [0.6, 0.8], [0.7, 0.9])])
def test_telescoping(k):
    assert telescoping_residual(k, solve_monotone_dual(k)) <= 1e-12


@criterion(9, "invariant suites")
def test_nesting_over_many_steps():
    p = solve_monotone_dual(CONVEX_G)
    start = MonotoneDualState.from_levels({0: 1, 1: 2}, 3)
    s = start
    rng = RandomStream(99, STREAM_DUAL)
    for step in range(100_000):
        s = step_monotone_dual(s, p, rng, step, ring=8)
        a1, a2 = s.sets
        assert a1 <= a2
        if s.absorbed:
            s = start


@criterion(9, "invariant suites")
def test_frozen_sets_do_not_move():
    frozen_only = [0, 0, 1, 0, 0, 0, 0, 0]
    p = VoterDualParams(3, [0.8, 1.0], [frozen_only, frozen_only])
    s = VoterDualState.make([{0, 3}, {1, 7}], p.frozen)
    rng = RandomStream(5, STREAM_DUAL)
    for step in range(1000):
        assert step_voter_dual(s, p, rng, step) == s
    identity = solve_voter_dual(noisy_voter_kernel(3, [0, 0, 0], 0, 1, 0))
    assert identity.frozen == {1, 2}


@criterion(9, "invariant suites")
def test_perturbation_detection():
    p = solve_voter_dual(DK)
    for o in range(len(OUTCOMES)):
        pi = np.array(p.pi)
        pi[0, o] += 0.01
        pi[0] /= pi[0].sum()
        bad = VoterDualParams(2, p.d, pi)
        assert verify_one_step(build_instance(DK, "voter", 5, params=bad)) > 1e-3
