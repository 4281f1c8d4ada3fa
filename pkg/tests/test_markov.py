import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agefl.markov import (
    MarkovChain,
    MarkovError,
    cyclic_chain,
    delta_exact,
    delta_spectral_bound,
    entropy,
    marginal_at,
    mutual_information_age,
    reverse_kernel,
    slem,
    t_step_transition,
    tv_distance,
)

from conftest import HOUSEHOLD_Q, VALUES, brute_matrix_power


def uniform_transition(n=4, dist=None):
    return MarkovChain(VALUES[:n], np.full((n, n), 1.0 / n), dist if dist is not None else np.full(n, 1.0 / n))


def tv_by_subsets(p, q):
    n = len(p)
    best = 0.0
    for r in range(n + 1):
        for A in itertools.combinations(range(n), r):
            best = max(best, abs(sum(p[i] for i in A) - sum(q[i] for i in A)))
    return best


def mi_double_sum(dist, P):
    n = len(dist)
    joint = [[dist[x] * P[x][y] for y in range(n)] for x in range(n)]
    px = [sum(joint[x]) for x in range(n)]
    py = [sum(joint[x][y] for x in range(n)) for y in range(n)]
    total = 0.0
    for x in range(n):
        for y in range(n):
            if joint[x][y] > 0:
                total += joint[x][y] * math.log(joint[x][y] / (px[x] * py[y]))
    return total


# -- construction -----------------------------------------------------------

def test_cyclic_rows_match_displayed_matrix():
    assert cyclic_chain(4, 0.1, VALUES).transition[0].tolist() == [0.9, 0.1, 0.0, 0.0]
    assert cyclic_chain(4, 0.6, VALUES).transition[3].tolist() == [0.6, 0.0, 0.0, 0.4]


def test_cyclic_q_zero_is_identity():
    np.testing.assert_array_equal(cyclic_chain(4, 0.0, VALUES).transition, np.eye(4))


@pytest.mark.parametrize("q", [-0.1, 1.5])
def test_cyclic_rejects_bad_q(q):
    with pytest.raises(MarkovError):
        cyclic_chain(4, q, VALUES)


def test_cyclic_rejects_single_state():
    with pytest.raises(MarkovError):
        cyclic_chain(1, 0.5, [1.0])


@pytest.mark.parametrize(
    "kwargs, match",
    [
        (dict(transition=[[0.5, 0.4], [0.5, 0.5]]), "row"),
        (dict(collection_dist=[0.5, 0.6]), "collection"),
        (dict(state_values=[2.0, 1.0]), "increasing"),
    ],
)
def test_chain_validation(kwargs, match):
    base = dict(state_values=[1.0, 2.0], transition=[[0.5, 0.5], [0.5, 0.5]], collection_dist=[0.5, 0.5])
    base.update(kwargs)
    with pytest.raises(MarkovError, match=match):
        MarkovChain(**base)


def test_chain_arrays_are_read_only():
    chain = cyclic_chain(4, 0.3, VALUES)
    with pytest.raises(ValueError):
        chain.transition[0, 0] = 0.0


# -- powers and marginals ----------------------------------------------------

def test_power_zero_and_one():
    chain = cyclic_chain(4, 0.3, VALUES)
    np.testing.assert_array_equal(t_step_transition(chain, 0), np.eye(4))
    np.testing.assert_array_equal(t_step_transition(chain, 1), chain.transition)


def test_two_step_entry_is_q_squared():
    P2 = t_step_transition(cyclic_chain(4, 0.6, VALUES), 2)
    oracle = brute_matrix_power(cyclic_chain(4, 0.6, VALUES).transition, 2)
    assert P2[0, 2] == pytest.approx(oracle[0, 2], abs=1e-15)
    assert P2[0, 2] == pytest.approx(0.36, abs=1e-15)


@pytest.mark.parametrize("q", HOUSEHOLD_Q)
@pytest.mark.parametrize("t", [0, 1, 7, 33, 64])
def test_powers_stay_row_stochastic(q, t):
    P = t_step_transition(cyclic_chain(4, q, VALUES), t)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)


def test_marginal_at_zero_is_collection_dist():
    chain = cyclic_chain(4, 0.1, VALUES, [0.8, 0.2, 0, 0])
    np.testing.assert_array_equal(marginal_at(chain, 0), chain.collection_dist)


def test_marginal_one_step():
    chain = cyclic_chain(4, 0.1, VALUES, [0.8, 0.2, 0, 0])
    oracle = [sum(chain.collection_dist[x] * chain.transition[x, y] for x in range(4)) for y in range(4)]
    np.testing.assert_allclose(marginal_at(chain, 1), oracle, atol=1e-15)
    np.testing.assert_allclose(marginal_at(chain, 1), [0.72, 0.26, 0.02, 0.0], atol=1e-15)


@pytest.mark.parametrize("q", HOUSEHOLD_Q)
def test_marginal_converges_to_stationary(q):
    chain = cyclic_chain(4, q, VALUES, [0.8, 0.2, 0, 0])
    w, V = np.linalg.eig(chain.transition.T)
    v = np.real(V[:, np.argmin(np.abs(w - 1))])
    stationary = v / v.sum()
    np.testing.assert_allclose(marginal_at(chain, 2000), stationary, atol=1e-9)


# -- reverse kernel ------------------------------------------------------------

def test_reverse_of_reversible_chain_with_stationary_base():
    # symmetric birth-death chain, stationary law uniform
    P = np.array([[0.7, 0.3, 0, 0], [0.3, 0.4, 0.3, 0], [0, 0.3, 0.4, 0.3], [0, 0, 0.3, 0.7]])
    chain = MarkovChain(VALUES, P, np.full(4, 0.25))
    for t in (1, 2, 5):
        np.testing.assert_allclose(reverse_kernel(chain, t), t_step_transition(chain, t), atol=1e-12)


def test_reverse_of_uniform_transition_is_uniform():
    R = reverse_kernel(uniform_transition(), 3)
    np.testing.assert_allclose(R, np.full((4, 4), 0.25), atol=1e-15)


def test_reverse_kernel_direct_formula():
    chain = cyclic_chain(4, 0.3, VALUES, [0, 0.1, 0.5, 0.4])
    base = marginal_at(chain, 2)
    R = reverse_kernel(chain, 2, base)
    P2 = brute_matrix_power(chain.transition, 2)
    later = [sum(base[y] * P2[y][x] for y in range(4)) for x in range(4)]
    for x in range(4):
        for y in range(4):
            assert R[x, y] == pytest.approx(base[y] * P2[y][x] / later[x], abs=1e-14)
    np.testing.assert_allclose(R.sum(axis=1), 1.0, atol=1e-10)


def test_reverse_kernel_names_unreachable_state():
    chain = cyclic_chain(4, 0.0, VALUES, [0.5, 0.5, 0, 0])
    with pytest.raises(MarkovError, match="state 2"):
        reverse_kernel(chain, 1)


# -- total variation -----------------------------------------------------------

def test_tv_examples():
    assert tv_distance([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert tv_distance([1, 0], [0, 1]) == 1.0
    assert tv_distance([0.8, 0.2], [0.5, 0.5]) == pytest.approx(tv_by_subsets([0.8, 0.2], [0.5, 0.5]), abs=1e-15)
    assert tv_distance([0.8, 0.2], [0.5, 0.5]) == pytest.approx(0.3, abs=1e-15)


def test_tv_length_mismatch():
    with pytest.raises(ValueError):
        tv_distance([1.0], [0.5, 0.5])


simplex4 = st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4).filter(lambda v: sum(v) > 1e-3).map(
    lambda v: np.array(v) / sum(v)
)


@given(simplex4, simplex4, simplex4)
def test_tv_is_a_metric(p, q, r):
    assert tv_distance(p, q) == tv_distance(q, p)
    assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12
    assert tv_distance(p, q) == pytest.approx(tv_by_subsets(p, q), abs=1e-12)


# -- aging distance -------------------------------------------------------------

@pytest.mark.parametrize("t", [1, 2, 10])
def test_delta_exact_frozen_chain_is_one(t):
    assert delta_exact(cyclic_chain(4, 0.0, VALUES), t) == 1.0


def test_delta_exact_uniform_transition_is_zero():
    assert delta_exact(uniform_transition(), 3) == pytest.approx(0.0, abs=1e-15)


def test_delta_exact_against_pairwise_brute_force():
    chain = cyclic_chain(4, 0.3, VALUES)
    P4 = brute_matrix_power(chain.transition, 4)
    # uniform base: reversed row x is column x of P^4 renormalized
    rows = [[0.25 * P4[y][x] / sum(0.25 * P4[k][x] for k in range(4)) for y in range(4)] for x in range(4)]
    oracle = max(tv_by_subsets(rows[a], rows[b]) for a in range(4) for b in range(4))
    val = delta_exact(chain, 4)
    assert 0.0 < val < 1.0
    assert val == pytest.approx(oracle, abs=1e-12)


def test_delta_exact_needs_positive_age():
    with pytest.raises(MarkovError):
        delta_exact(cyclic_chain(4, 0.3, VALUES), 0)


def test_delta_exact_restricted_support_skips_unreachable_states():
    chain = cyclic_chain(4, 0.1, VALUES, [0.8, 0.2, 0, 0])
    with pytest.raises(MarkovError):
        delta_exact(chain, 1)
    assert 0.0 <= delta_exact(chain, 1, restrict_support=True) <= 1.0


# -- spectral quantities ---------------------------------------------------------

def circulant_slem(q, n=4):
    w = np.exp(2j * np.pi / n)
    return max(abs(1 - q + q * w ** k) for k in range(1, n))


def test_slem_trivial_chains():
    assert slem(uniform_transition()) == pytest.approx(0.0, abs=1e-12)
    assert slem(cyclic_chain(4, 0.0, VALUES)) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("q", HOUSEHOLD_Q)
def test_slem_matches_circulant_eigenvalues(q):
    assert slem(cyclic_chain(4, q, VALUES)) == pytest.approx(circulant_slem(q), abs=1e-10)


def test_slem_q_point_one():
    assert slem(cyclic_chain(4, 0.1, VALUES)) == pytest.approx(math.sqrt(0.82), abs=1e-12)


def test_spectral_bound_at_age_zero_is_one():
    assert delta_spectral_bound(cyclic_chain(4, 0.3, VALUES), 0) == 1.0


def test_spectral_bound_uniform_transition_is_zero():
    assert delta_spectral_bound(uniform_transition(), 2) == pytest.approx(0.0, abs=1e-12)


def test_spectral_bound_example_value():
    expected = min(1.0, math.sqrt(3.0) * circulant_slem(0.6) ** 6)
    got = delta_spectral_bound(cyclic_chain(4, 0.6, VALUES), 6)
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(0.2436, abs=5e-4)


def test_spectral_bound_skips_zero_mass_states():
    # t=1 marginal from [0.8, 0.2, 0, 0] leaves the top state empty
    chain = cyclic_chain(4, 0.1, VALUES, [0.8, 0.2, 0, 0])
    pt = marginal_at(chain, 1)
    expected = min(1.0, max(math.sqrt((1 - p) / p) for p in pt if p > 0) * math.sqrt(0.82))
    assert delta_spectral_bound(chain, 1) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("q", HOUSEHOLD_Q)
def test_spectral_bound_decays(q):
    chain = cyclic_chain(4, q, VALUES)
    assert delta_spectral_bound(chain, 64) < delta_spectral_bound(chain, 1)


@pytest.mark.parametrize("q", HOUSEHOLD_Q)
def test_spectral_bound_dominates_exact(q):
    chain = cyclic_chain(4, q, VALUES)
    for t in range(1, 33):
        exact = delta_exact(chain, t)
        assert 0.0 <= exact <= 1.0
        assert delta_spectral_bound(chain, t) >= exact - 1e-9


# -- mutual information -----------------------------------------------------------

def test_mi_gap_zero_is_entropy():
    chain = cyclic_chain(4, 0.3, VALUES, [0, 0.1, 0.5, 0.4])
    h = -sum(p * math.log(p) for p in (0.1, 0.5, 0.4))
    assert mutual_information_age(chain, 0) == pytest.approx(h, abs=1e-12)
    assert entropy([0, 0.1, 0.5, 0.4]) == pytest.approx(h, abs=1e-15)


def test_mi_uniform_transition_is_zero():
    assert mutual_information_age(uniform_transition(dist=[0.1, 0.2, 0.3, 0.4]), 2) == pytest.approx(0.0, abs=1e-15)


def test_mi_double_sum_oracle():
    chain = cyclic_chain(4, 0.3, VALUES, [0, 0.1, 0.5, 0.4])
    oracle = mi_double_sum(list(chain.collection_dist), brute_matrix_power(chain.transition, 2))
    got = mutual_information_age(chain, 2)
    assert got > 0
    assert got == pytest.approx(oracle, abs=1e-13)


@settings(max_examples=60)
@given(q=st.floats(0.0, 1.0), dist=simplex4)
def test_mi_non_increasing_in_gap(q, dist):
    chain = cyclic_chain(4, q, VALUES, dist)
    vals = [mutual_information_age(chain, g) for g in range(0, 20)]
    assert all(v >= -1e-12 for v in vals)
    for a, b in zip(vals, vals[1:]):
        assert b <= a + 1e-12


@settings(max_examples=60)
@given(q=st.floats(0.0, 1.0), t=st.integers(1, 32))
def test_delta_exact_in_unit_interval(q, t):
    assert 0.0 <= delta_exact(cyclic_chain(4, q, VALUES), t) <= 1.0
