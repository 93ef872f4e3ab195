import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcadual.kernel import (
    Kernel,
    KernelError,
    StateRelabeling,
    competition_kernel,
    convex_g_kernel,
    domany_kinzel_kernel,
    kernel_from_spec,
    load_model_spec,
    noisy_voter_kernel,
    relabel_states,
    spec_hash,
    validate_kernel,
)


def test_dk_kernel_is_valid():
    assert validate_kernel(domany_kinzel_kernel(0.1, 0.3, 0.6)).valid


def test_row_summing_to_point_nine_is_named():
    t = np.array(domany_kinzel_kernel(0.1, 0.3, 0.6).table)
    t[1, 0, 1] = [0.5, 0.4]
    report = validate_kernel(t)
    assert not report.valid
    assert report.row_violations == [((2, 1, 2), pytest.approx(0.9))]
    with pytest.raises(KernelError, match=r"p\[2\]\[1\]\[2\]"):
        Kernel(t)


def test_tiny_negative_entry_is_clamped(caplog):
    t = np.array(domany_kinzel_kernel(0.0, 0.3, 0.6).table)
    t[1, 1, 1] = [-1e-15, 1 + 1e-15]
    report = validate_kernel(t)
    assert report.valid and report.clamped
    with caplog.at_level(logging.WARNING):
        k = Kernel(t)
    assert k.clamped and k.prob(2, 2, 2, 1) == 0.0 and k.prob(2, 2, 2, 2) == 1.0


def test_entry_outside_tolerance_is_rejected():
    t = np.array(domany_kinzel_kernel(0.1, 0.3, 0.6).table)
    t[0, 0, 0] = [-1e-6, 1 + 1e-6]
    assert validate_kernel(t).entry_violations


def test_kernel_is_immutable():
    k = domany_kinzel_kernel(0.1, 0.3, 0.6)
    with pytest.raises(ValueError):
        k.table[0, 0, 0, 0] = 0.5


def test_noisy_voter_entries():
    k = noisy_voter_kernel(3, [0.05, 0.05, 0.0], 0.3, 0.3, 0.3)
    assert k.prob(1, 1, 1, 1) == pytest.approx(0.95, abs=1e-15)
    assert k.prob(1, 2, 3, 3) == pytest.approx(0.3, abs=1e-15)


def test_noisy_voter_identity_dynamics():
    k = noisy_voter_kernel(2, [0, 0], 0, 1, 0)
    for i, j, kk, m in np.ndindex(2, 2, 2, 2):
        assert k.table[i, j, kk, m] == (j == m)


def test_noisy_voter_rejects_bad_weights():
    with pytest.raises(KernelError, match="2.4"):
        noisy_voter_kernel(3, [0.5, 0.5, 0.5], 0.3, 0.3, 0.3)


def test_dk_middle_independent_and_state_names():
    k = domany_kinzel_kernel(0.1, 0.3, 0.6)
    # internal state 1 is '1', state 2 is '0'
    for j in (1, 2):
        assert k.prob(1, j, 2, 1) == 0.3
        assert k.prob(1, j, 1, 1) == 0.6
        assert k.prob(2, j, 2, 1) == 0.1


@pytest.mark.parametrize("a, state", [((0, 0, 0), 2), ((1, 1, 1), 1)])
def test_dk_degenerate(a, state):
    k = domany_kinzel_kernel(*a)
    assert np.all(k.table[..., state - 1] == 1.0)


def test_competition_entries():
    k = competition_kernel(2, [0.05, 0.05], [0.7], [0.7])
    assert k.prob(1, 1, 2, 2) == pytest.approx(0.05 + 0.9 * 0.7, abs=1e-15)
    assert k.prob(1, 2, 2, 2) == pytest.approx(0.68, abs=1e-15)


def test_symmetric_neutral_competition():
    k = competition_kernel(2, [0, 0], [0.5], [0.5])
    swapped = relabel_states(k, StateRelabeling.swap(2, 1, 2))
    assert swapped.allclose(k, atol=0)


def test_competition_rejects_weak_alpha():
    with pytest.raises(KernelError):
        competition_kernel(2, [0.05, 0.05], [0.4], [0.7])


def test_convex_g_quadratic_example():
    g1 = [min(max(((4 - l) / 2) ** 2, 0), 1) for l in (2, 3, 4)]
    assert g1 == [1, 0.25, 0]
    k = convex_g_kernel(2, [g1])
    assert np.all(k.table[0, :, 0, 0] == 1.0)


def test_convex_g_constant_one_fixes_state_one():
    k = convex_g_kernel(3, np.ones((2, 5)))
    assert np.all(k.table[..., 0] == 1.0)


def test_convex_g_rejects_concave():
    with pytest.raises(KernelError, match="convex"):
        convex_g_kernel(2, [[0, 0.5, 0]])


def test_relabel_dk_gives_starred_parameters():
    k = domany_kinzel_kernel(0.1, 0.3, 0.6)
    star = relabel_states(k, StateRelabeling.swap(2, 1, 2))
    assert star.allclose(domany_kinzel_kernel(0.4, 0.7, 0.9), atol=1e-15)


def test_relabel_identity_and_involution():
    k = noisy_voter_kernel(3, [0.05, 0.05, 0.0], 0.3, 0.3, 0.3)
    assert relabel_states(k, StateRelabeling((1, 2, 3))) == k
    s = StateRelabeling.swap(3, 1, 3)
    assert relabel_states(relabel_states(k, s), s) == k
    assert s.compose(s) == StateRelabeling((1, 2, 3))


kernels = st.integers(2, 3).flatmap(
    lambda M: st.lists(st.floats(0.01, 1.0), min_size=M**4, max_size=M**4).map(
        lambda v: Kernel(np.array(v).reshape(M, M, M, M) / np.array(v).reshape(M, M, M, M).sum(axis=3, keepdims=True))
    )
)


@settings(max_examples=40, deadline=None)
@given(kernels, st.data())
def test_relabel_preserves_row_sums(k, data):
    perm = data.draw(st.permutations(range(1, k.M + 1)))
    r = relabel_states(k, StateRelabeling(tuple(perm)))
    assert np.abs(r.table.sum(axis=3) - 1).max() <= 1e-12
    assert relabel_states(r, StateRelabeling(tuple(perm)).inverse()).allclose(k, atol=0)


@settings(max_examples=40, deadline=None)
@given(kernels)
def test_random_kernels_are_row_stochastic(k):
    assert np.abs(k.table.sum(axis=3) - 1).max() <= 1e-12


def test_spec_round_trip(tmp_path):
    for spec in (
        {"family": "dk", "a": [0.1, 0.3, 0.6]},
        {"family": "noisy_voter", "M": 3, "q": [0.05, 0.05, 0], "alpha": 0.3, "beta": 0.3, "gamma": 0.3},
        {"family": "competition", "M": 2, "p": [0.05, 0.05], "alpha": [0.7], "beta": [0.7]},
    ):
        k = kernel_from_spec(spec)
        assert kernel_from_spec(k.to_spec()) == k
    raw = kernel_from_spec({"family": "raw", "M": 2, "p": domany_kinzel_kernel(0.1, 0.3, 0.6).table.ravel().tolist()})
    assert raw == domany_kinzel_kernel(0.1, 0.3, 0.6)
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"family": "dk", "a": [0.1, 0.3, 0.6]}))
    assert spec_hash(load_model_spec(str(path))) == spec_hash({"a": [0.1, 0.3, 0.6], "family": "dk"})


def test_malformed_spec_reports_location(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"family": "dk",\n "a": [0.1,, 0.6]}')
    with pytest.raises(KernelError, match=r"bad.json:2:"):
        load_model_spec(str(path))
    with pytest.raises(KernelError, match="unknown model family"):
        kernel_from_spec({"family": "ising"})
    with pytest.raises(KernelError, match="missing field"):
        kernel_from_spec({"family": "noisy_voter", "M": 2})
