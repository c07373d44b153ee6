"""Weighted isotonic regression along a preference ordering.

Solves

    minimize    sum_a w_a (mu_a - y_a)^2
    subject to  mu_{o_1} >= mu_{o_2} >= ... >= mu_{o_k}

with pool-adjacent-violators on the chain (o_1, ..., o_k). With targets equal
to per-arm empirical means and weights n_a / sigma^2 this is the
order-constrained maximum-likelihood estimate of the mean vector, since the
weighted square loss differs from the Gaussian negative log-likelihood only by
a constant.
"""

from dataclasses import dataclass

import numpy as np

from .model import ObservationHistory, PreferenceOrdering

__all__ = ["IsotonicFit", "fit_pava", "constrained_mle", "count_active_constraints", "pava_fit_at"]

DEFAULT_TIE_TOL = 1e-9


@dataclass(frozen=True)
class IsotonicFit:
    """Result of one chain-constrained fit, indexed by arm."""

    fitted: np.ndarray
    active_constraints: int
    objective: float
    targets: np.ndarray
    weights: np.ndarray


def _pava_nonincreasing(values: list, weights: list):
    """Stack-based PAVA for a non-increasing chain; O(len) amortized.

    Returns parallel lists (block value, block weight, index of the last chain
    element in each block).
    """
    vals: list[float] = []
    wts: list[float] = []
    ends: list[int] = []
    for idx in range(len(values)):
        cv = values[idx]
        cw = weights[idx]
        while vals and vals[-1] < cv:
            pv = vals.pop()
            pw = wts.pop()
            ends.pop()
            cv = (pv * pw + cv * cw) / (pw + cw)
            cw = pw + cw
        vals.append(cv)
        wts.append(cw)
        ends.append(idx)
    return vals, wts, ends


def fit_pava(targets, weights, ordering: PreferenceOrdering, tol: float = DEFAULT_TIE_TOL) -> IsotonicFit:
    """Exact minimizer of the weighted square loss under the ordering's chain
    constraints.

    Arms with weight 0 carry no data: their targets are ignored, and after the
    fit they take the value of the nearest positively-weighted arm in the
    less-preferred direction (falling back to the more-preferred side at the
    chain end), which keeps the completed vector consistent and deterministic.
    The objective excludes zero-weight terms.
    """
    k = ordering.k
    targets = np.asarray(targets, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if targets.shape != (k,) or weights.shape != (k,):
        raise ValueError(f"targets/weights must have length k={k}")
    if np.any(weights < 0):
        raise ValueError("weights must be >= 0")
    if not np.any(weights > 0):
        raise ValueError("no data: all weights are zero")

    order = ordering.order
    chain_t = [float(targets[a]) for a in order]
    chain_w = [float(weights[a]) for a in order]
    observed = [j for j in range(k) if chain_w[j] > 0]

    vals, _, ends = _pava_nonincreasing([chain_t[j] for j in observed], [chain_w[j] for j in observed])

    fitted_chain: list = [None] * k
    block = 0
    for sub_idx, j in enumerate(observed):
        while ends[block] < sub_idx:
            block += 1
        fitted_chain[j] = vals[block]

    # Zero-weight completion: copy from the less-preferred side first, then
    # fill any trailing gap from the more-preferred side.
    carry = None
    for j in range(k - 1, -1, -1):
        if chain_w[j] > 0:
            carry = fitted_chain[j]
        elif carry is not None:
            fitted_chain[j] = carry
    carry = None
    for j in range(k):
        if fitted_chain[j] is None:
            fitted_chain[j] = carry
        else:
            carry = fitted_chain[j]

    objective = sum(
        chain_w[j] * (fitted_chain[j] - chain_t[j]) ** 2 for j in observed
    )
    active = _count_active_chain(fitted_chain, chain_t, chain_w, tol)

    fitted = np.empty(k)
    for j, a in enumerate(order):
        fitted[a] = fitted_chain[j]
    return IsotonicFit(
        fitted=fitted,
        active_constraints=active,
        objective=float(objective),
        targets=targets,
        weights=weights,
    )


def constrained_mle(history: ObservationHistory, ordering: PreferenceOrdering, noise_std: float) -> IsotonicFit:
    """Order-constrained MLE of the mean vector from an observation history:
    isotonic regression of the empirical means with weights n_a / sigma^2."""
    if len(history) == 0:
        raise ValueError("history is empty")
    return fit_pava(history.empirical_means(), history.weights(noise_std), ordering)


def _count_active_chain(fitted_chain, chain_t, chain_w, tol) -> int:
    """Adjacent pairs that were pooled AND whose raw targets violate the
    constraint; pairs touching a zero-weight arm never count (no data to
    distort)."""
    n = 0
    for j in range(len(fitted_chain) - 1):
        if chain_w[j] <= 0 or chain_w[j + 1] <= 0:
            continue
        if abs(fitted_chain[j] - fitted_chain[j + 1]) <= tol and chain_t[j] < chain_t[j + 1]:
            n += 1
    return n


def count_active_constraints(fit: IsotonicFit, ordering: PreferenceOrdering, tol: float = DEFAULT_TIE_TOL) -> int:
    """Recount the binding, fit-distorting constraints of a finished fit."""
    order = ordering.order
    fitted_chain = [float(fit.fitted[a]) for a in order]
    chain_t = [float(fit.targets[a]) for a in order]
    chain_w = [float(fit.weights[a]) for a in order]
    return _count_active_chain(fitted_chain, chain_t, chain_w, tol)


def pava_fit_at(order: tuple, counts: list, sums: list, arm: int) -> float:
    """Fitted value at one pulled arm, without building the full fit.

    Equivalent to ``fit_pava(empirical means, counts, ordering).fitted[arm]``
    (the weight scale sigma^2 cancels out of the minimizer). Hot path of the
    posterior-sampling policy: called m times per round.
    """
    vals: list[float] = []
    wts: list[float] = []
    ends: list[int] = []
    sub_idx = -1
    target_idx = -1
    for a in order:
        n = counts[a]
        if n == 0:
            continue
        sub_idx += 1
        if a == arm:
            target_idx = sub_idx
        cv = sums[a] / n
        cw = float(n)
        while vals and vals[-1] < cv:
            pv = vals.pop()
            pw = wts.pop()
            ends.pop()
            cv = (pv * pw + cv * cw) / (pw + cw)
            cw = pw + cw
        vals.append(cv)
        wts.append(cw)
        ends.append(sub_idx)
    if target_idx < 0:
        raise ValueError(f"arm {arm} has no observations")
    for b, end in enumerate(ends):
        if end >= target_idx:
            return vals[b]
    raise AssertionError("unreachable: block cover is exhaustive")
