import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpbandits.isotonic import (
    constrained_mle,
    count_active_constraints,
    fit_pava,
    pava_fit_at,
)
from lpbandits.model import ObservationHistory, PreferenceOrdering, is_consistent

from oracles import brute_force_isotonic

identity3 = PreferenceOrdering((0, 1, 2))


def test_fit_pava_examples():
    fit = fit_pava([3, 2, 1], [1, 1, 1], identity3)
    assert np.allclose(fit.fitted, [3, 2, 1])
    assert fit.active_constraints == 0
    assert fit.objective == pytest.approx(0.0)

    fit = fit_pava([1, 3], [1, 1], PreferenceOrdering((0, 1)))
    assert np.allclose(fit.fitted, [2, 2])
    assert fit.active_constraints == 1

    fit = fit_pava([1, 3], [3, 1], PreferenceOrdering((0, 1)))
    assert np.allclose(fit.fitted, [1.5, 1.5])
    assert fit.active_constraints == 1


def test_fit_pava_four_arm_chain_matches_oracle():
    # Oracle-derived: the whole chain pools to its mean, 3.25 (objective 8.75);
    # two of the three pooled pairs have violating raw targets.
    targets, weights, order = [1, 5, 3, 4], [1, 1, 1, 1], (0, 1, 2, 3)
    expected, expected_obj = brute_force_isotonic(targets, weights, order)
    assert np.allclose(expected, [3.25, 3.25, 3.25, 3.25])
    fit = fit_pava(targets, weights, PreferenceOrdering(order))
    assert np.allclose(fit.fitted, expected)
    assert fit.objective == pytest.approx(expected_obj)
    assert fit.active_constraints == 2
    assert count_active_constraints(fit, PreferenceOrdering(order)) == 2


def test_fit_pava_errors():
    with pytest.raises(ValueError):
        fit_pava([1, 2], [0, 0], PreferenceOrdering((0, 1)))
    with pytest.raises(ValueError):
        fit_pava([1, 2], [1, -1], PreferenceOrdering((0, 1)))
    with pytest.raises(ValueError):
        fit_pava([1, 2, 3], [1, 1], PreferenceOrdering((0, 1)))


def test_zero_weight_completion_policy():
    # Chain positions (most->least preferred): arm order 2,0,3,1 with arms 0,3
    # unobserved: both copy the value of the next observed arm down-chain
    # (arm 1); a trailing unobserved arm copies the last observed value.
    order = PreferenceOrdering((2, 0, 3, 1))
    fit = fit_pava([0.0, 1.0, 5.0, 0.0], [0, 2, 1, 0], order)
    assert fit.fitted[2] == pytest.approx(5.0)
    assert fit.fitted[0] == pytest.approx(1.0)
    assert fit.fitted[3] == pytest.approx(1.0)
    assert fit.fitted[1] == pytest.approx(1.0)
    assert is_consistent(fit.fitted, order, tol=1e-9)

    trailing = fit_pava([4.0, 0.0, 0.0], [1, 1, 0], identity3)
    assert trailing.fitted[2] == pytest.approx(trailing.fitted[1])

    leading = fit_pava([0.0, 2.0, 1.0], [0, 1, 1], identity3)
    assert leading.fitted[0] == pytest.approx(2.0)


def test_constrained_mle_examples():
    history = ObservationHistory(2)
    history.record(0, 5.0)
    fit = constrained_mle(history, PreferenceOrdering((0, 1)), 1.0)
    assert fit.fitted[0] == pytest.approx(5.0)
    assert fit.fitted[1] == pytest.approx(5.0)

    history = ObservationHistory(2)
    for r in (1.0, 1.0):
        history.record(0, r)
    history.record(1, 3.0)
    fit = constrained_mle(history, PreferenceOrdering((0, 1)), 1.0)
    expected, _ = brute_force_isotonic([1.0, 3.0], [2.0, 1.0], (0, 1))
    assert np.allclose(fit.fitted, expected)
    assert np.allclose(fit.fitted, [5 / 3, 5 / 3])

    with pytest.raises(ValueError):
        constrained_mle(ObservationHistory(2), PreferenceOrdering((0, 1)), 1.0)


def test_consistent_history_fit_equals_empirical_means():
    history = ObservationHistory(3)
    for arm, r in [(0, 9.0), (1, 5.0), (1, 7.0), (2, 1.0)]:
        history.record(arm, r)
    fit = constrained_mle(history, identity3, 1.0)
    assert np.allclose(fit.fitted, history.empirical_means())
    assert fit.active_constraints == 0


@st.composite
def chains(draw, max_k=6):
    k = draw(st.integers(2, max_k))
    targets = draw(
        st.lists(st.floats(-10, 10, allow_nan=False), min_size=k, max_size=k)
    )
    weights = draw(
        st.lists(st.floats(0.01, 10, allow_nan=False), min_size=k, max_size=k)
    )
    order = draw(st.permutations(list(range(k))))
    return targets, weights, tuple(order)


@given(chains())
@settings(max_examples=200, deadline=None)
def test_pava_matches_brute_force(chain):
    targets, weights, order = chain
    ordering = PreferenceOrdering(order)
    fit = fit_pava(targets, weights, ordering)
    expected, expected_obj = brute_force_isotonic(targets, weights, order)
    assert np.allclose(fit.fitted, expected, atol=1e-8)
    assert fit.objective == pytest.approx(expected_obj, abs=1e-8)
    assert is_consistent(fit.fitted, ordering, tol=1e-9)


@given(chains())
@settings(max_examples=100, deadline=None)
def test_pava_idempotent(chain):
    targets, weights, order = chain
    ordering = PreferenceOrdering(order)
    fit = fit_pava(targets, weights, ordering)
    again = fit_pava(fit.fitted, weights, ordering)
    assert np.allclose(again.fitted, fit.fitted, atol=1e-12)


def test_objective_equivalence_with_likelihood_form():
    # The weighted-square objective and the Gaussian log-likelihood form
    # differ only by a constant in mu, checked at 100 random points.
    rng = np.random.default_rng(7)
    for _ in range(20):
        k = int(rng.integers(2, 6))
        sigma = float(rng.uniform(0.5, 2.0))
        history = ObservationHistory(k)
        for _ in range(int(rng.integers(1, 30))):
            history.record(int(rng.integers(k)), float(rng.normal(0, 3)))
        y = history.empirical_means()
        w = history.weights(sigma)
        diffs = []
        for _ in range(100):
            mu = rng.uniform(-10, 10, size=k)
            iso = float(np.sum(w * (mu - y) ** 2))
            lik = sum(
                (mu[a] ** 2 - 2 * r * mu[a]) / sigma**2 for a, r in history.events
            )
            diffs.append(iso - lik)
        diffs = np.array(diffs)
        scale = max(1.0, float(np.abs(diffs).max()))
        assert (diffs.max() - diffs.min()) / scale < 1e-8


def test_count_active_requires_target_violation():
    # Exact target ties pool without counting as active.
    fit = fit_pava([2.0, 2.0, 1.0], [1, 1, 1], identity3)
    assert fit.active_constraints == 0
    assert count_active_constraints(fit, identity3) == 0


def test_pava_fit_at_matches_full_fit():
    rng = np.random.default_rng(3)
    for _ in range(50):
        k = int(rng.integers(2, 9))
        order = tuple(int(a) for a in rng.permutation(k))
        history = ObservationHistory(k)
        for _ in range(int(rng.integers(1, 40))):
            history.record(int(rng.integers(k)), float(rng.normal(0, 2)))
        pulled = [a for a in range(k) if history.counts[a] > 0]
        fit = constrained_mle(history, PreferenceOrdering(order), 1.0)
        for arm in pulled:
            fast = pava_fit_at(order, history.counts, history.sums, arm)
            assert fast == pytest.approx(fit.fitted[arm], abs=1e-12)


def test_pava_fit_at_requires_observed_arm():
    history = ObservationHistory(3)
    history.record(0, 1.0)
    with pytest.raises(ValueError):
        pava_fit_at((0, 1, 2), history.counts, history.sums, 1)


def test_pava_linear_runtime_shape():
    # Stack PAVA touches each element a bounded number of times: a strictly
    # increasing chain (worst case: everything pools) still runs instantly at
    # k = 200000.
    k = 200_000
    order = PreferenceOrdering(tuple(range(k)))
    targets = np.arange(k, dtype=float)
    weights = np.ones(k)
    fit = fit_pava(targets, weights, order)
    assert np.allclose(fit.fitted, targets.mean())
