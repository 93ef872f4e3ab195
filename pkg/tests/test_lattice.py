import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcadual.kernel import Kernel, domany_kinzel_kernel, noisy_voter_kernel
from pcadual.lattice import (
    Cylinder,
    ProductMeasure,
    RingConfig,
    SampleSet,
    empirical_cylinder_prob,
    simulate,
    step_ring,
)
from pcadual.rng import STREAM_DYNAMICS, RandomStream


def reference_step(c, k, rng, step):
    """Plain-Python synchronous update using the same per-site draws."""
    L = c.L
    out = []
    for z in range(L):
        row = k.row(c[z - 1], c[z], c[z + 1])
        u = rng.uniform(step, z)
        cdf = np.cumsum(row)
        m = 0
        while m < k.M - 1 and u >= cdf[m]:
            m += 1
        out.append(m + 1)
    return RingConfig(np.array(out), c.M)


def shift_kernel(M):
    # deterministic: copy the left neighbour
    t = np.zeros((M, M, M, M))
    for i, j, k in np.ndindex(M, M, M):
        t[i, j, k, i] = 1.0
    return Kernel(t)


def test_ring_config_validation():
    with pytest.raises(ValueError):
        RingConfig(np.array([1, 2]), 2)
    with pytest.raises(ValueError):
        RingConfig(np.array([1, 2, 3]), 2)
    c = RingConfig(np.array([1, 2, 2]), 2)
    assert c[-1] == 2 and c[3] == 1


def test_identity_kernel_is_a_fixed_point():
    k = noisy_voter_kernel(3, [0, 0, 0], 0, 1, 0)
    c = RingConfig(np.array([1, 3, 2, 2, 1, 3]), 3)
    assert step_ring(c, k, RandomStream(5)) == c


@pytest.mark.parametrize("a, state", [((0, 0, 0), 2), ((1, 1, 1), 1)])
def test_degenerate_dk(a, state):
    c = RingConfig(np.array([1, 2, 1, 1, 2, 2, 1]), 2)
    out = step_ring(c, domany_kinzel_kernel(*a), RandomStream(0))
    assert np.all(out.cells == state)


def test_alphabet_mismatch():
    with pytest.raises(ValueError):
        step_ring(RingConfig.constant(5, 1, 3), domany_kinzel_kernel(0.1, 0.3, 0.6), RandomStream(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 12), st.integers(0, 1000), st.data())
def test_step_matches_reference(L, seed, data):
    k = noisy_voter_kernel(3, [0.05, 0.1, 0.05], 0.3, 0.2, 0.3)
    cells = data.draw(st.lists(st.integers(1, 3), min_size=L, max_size=L))
    c = RingConfig(np.array(cells), 3)
    rng = RandomStream(seed)
    assert step_ring(c, k, rng, step=4) == reference_step(c, k, rng, 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 15), st.data())
def test_update_order_is_irrelevant(L, data):
    k = domany_kinzel_kernel(0.1, 0.3, 0.6)
    cells = data.draw(st.lists(st.integers(1, 2), min_size=L, max_size=L))
    order = data.draw(st.permutations(range(L)))
    c = RingConfig(np.array(cells), 2)
    rng = RandomStream(11)
    assert step_ring(c, k, rng, 2, order=order) == step_ring(c, k, rng, 2)


def test_bad_order_rejected():
    c = RingConfig.constant(4, 1, 2)
    with pytest.raises(ValueError):
        step_ring(c, domany_kinzel_kernel(0.1, 0.3, 0.6), RandomStream(0), order=[0, 0, 1, 2])


def test_simulate_agrees_with_repeated_steps():
    k = noisy_voter_kernel(3, [0.05, 0.1, 0.05], 0.3, 0.2, 0.3)
    init = RingConfig(np.array([1, 2, 3, 1, 2, 3, 3, 1]), 3)
    s = simulate(init, k, steps=7, replicas=3, seed=42, snapshot_every=3)
    for r in range(3):
        c = init
        rng = RandomStream(42, STREAM_DYNAMICS, r)
        for step in range(7):
            c = step_ring(c, k, rng, step)
            if step + 1 == 6:
                assert np.array_equal(s.snapshots[6][r], c.cells)
        assert np.array_equal(s.final[r], c.cells)
    assert sorted(s.snapshots) == [3, 6]


def test_zero_steps_returns_initial_samples():
    k = domany_kinzel_kernel(0.1, 0.3, 0.6)
    s = simulate(ProductMeasure.delta(2, 1), k, 0, 4, seed=1, L=10)
    assert np.all(s.final == 1)
    s = simulate(ProductMeasure(2), k, 0, 200, seed=1, L=50)
    assert abs((s.final == 1).mean() - 0.5) < 0.02


def test_deterministic_composition():
    k = shift_kernel(3)
    cells = np.array([1, 2, 3, 3, 2, 1, 1])
    s = simulate(RingConfig(cells, 3), k, 5, 2, seed=0)
    assert np.array_equal(s.final[0], np.roll(cells, 5))


def test_simulate_is_deterministic_in_seed():
    k = domany_kinzel_kernel(0.1, 0.3, 0.6)
    a = simulate(ProductMeasure(2), k, 50, 8, seed=3, L=30)
    b = simulate(ProductMeasure(2), k, 50, 8, seed=3, L=30)
    c = simulate(ProductMeasure(2), k, 50, 8, seed=4, L=30)
    assert np.array_equal(a.final, b.final)
    assert not np.array_equal(a.final, c.final)


def test_dk_density_settles():
    k = domany_kinzel_kernel(0.1, 0.3, 0.6)
    s = simulate(ProductMeasure(2), k, 2000, 100, seed=9, L=200)
    late = (s.final == 1).mean()
    s2 = simulate(ProductMeasure.delta(2, 2), k, 2000, 100, seed=10, L=200)
    assert abs(late - (s2.final == 1).mean()) < 0.01
    assert 0.1 < late < 0.3


def test_cylinder_validation():
    with pytest.raises(ValueError):
        Cylinder.of([(0, {1}), (0, {2})])
    with pytest.raises(ValueError):
        Cylinder.of({0: set()})
    with pytest.raises(ValueError):
        Cylinder.of({0: {1}, 5: {2}}).reduced(5)


def test_full_value_set_cylinder_is_certain():
    s = simulate(ProductMeasure(3), noisy_voter_kernel(3, [0.1, 0.1, 0.1], 0.2, 0.3, 0.2), 10, 50, seed=0, L=10)
    assert empirical_cylinder_prob(s, Cylinder.of({0: {1, 2, 3}, 4: {1, 2, 3}})) == (1.0, 0.0)
    assert empirical_cylinder_prob(s, Cylinder(())) == (1.0, 0.0)


def test_all_one_dynamics():
    s = simulate(ProductMeasure(2), domany_kinzel_kernel(1, 1, 1), 3, 20, seed=0, L=9)
    assert empirical_cylinder_prob(s, Cylinder.of({0: {1}})) == (1.0, 0.0)


def test_cylinder_estimate_and_stderr():
    final = np.array([[1, 1, 2], [1, 2, 2], [2, 1, 1], [1, 1, 1]])
    s = SampleSet(final, 2, 0, 0)
    est, se = empirical_cylinder_prob(s, Cylinder.of({0: {1}, -2: {1}}))
    assert est == 0.5 and se == pytest.approx(0.25)


def test_csv_export():
    s = SampleSet(np.array([[1, 2, 2]]), 2, 0, 0)
    assert s.to_csv() == "replica,site,state\n0,0,1\n0,1,2\n0,2,2\n"
