"""Independent brute-force oracles used to derive and verify expected values.

Everything here is deliberately naive (enumeration, finite differences) and
shares no code with the library paths it checks.
"""

import itertools
import math

import numpy as np


def brute_force_isotonic(targets, weights, order):
    """Exact minimizer of sum_a w_a (mu_a - y_a)^2 subject to non-increasing
    values along ``order``, by enumerating every contiguous block partition of
    the chain and keeping the feasible assignment with the least objective.

    Weights must be strictly positive. Returns (fitted-by-arm list, objective).
    """
    k = len(order)
    y = [float(targets[a]) for a in order]
    w = [float(weights[a]) for a in order]
    if any(wi <= 0 for wi in w):
        raise ValueError("oracle requires strictly positive weights")

    best_chain = None
    best_obj = math.inf
    for mask in range(1 << (k - 1)):
        blocks = []
        start = 0
        for j in range(k - 1):
            if mask >> j & 1:
                blocks.append((start, j + 1))
                start = j + 1
        blocks.append((start, k))

        vals = []
        for s, e in blocks:
            ws = sum(w[s:e])
            vals.append(sum(wi * yi for wi, yi in zip(w[s:e], y[s:e])) / ws)
        # Feasible when block means are non-increasing (tiny slack for float
        # wobble on exact ties; cannot change the optimum beyond ~1 ulp).
        if any(vals[b] < vals[b + 1] - 1e-12 for b in range(len(vals) - 1)):
            continue

        chain = []
        for (s, e), v in zip(blocks, vals):
            chain.extend([v] * (e - s))
        obj = sum(wi * (v - yi) ** 2 for wi, yi, v in zip(w, y, chain))
        if obj < best_obj:
            best_obj = obj
            best_chain = chain

    fitted = [0.0] * k
    for j, a in enumerate(order):
        fitted[a] = best_chain[j]
    return fitted, best_obj


def brute_force_assignment(cost):
    """Minimum-cost perfect matching by enumerating all permutations.

    Returns (column-per-row tuple, total cost via exact fsum).
    """
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    best_perm = None
    best_total = math.inf
    for perm in itertools.permutations(range(n)):
        total = math.fsum(cost[i, perm[i]] for i in range(n))
        if total < best_total:
            best_total = total
            best_perm = perm
    return best_perm, best_total


def brute_force_inversions(events, order):
    """Count preference events contradicting ``order`` by explicit position
    lookups (no rank table)."""
    n = 0
    for arm_a, arm_b, preferred_a in events:
        pos_a = list(order).index(arm_a)
        pos_b = list(order).index(arm_b)
        ordering_prefers_a = pos_a < pos_b
        if ordering_prefers_a != preferred_a:
            n += 1
    return n


def brute_force_kendall_tau(p, q):
    """(concordant - discordant) / npairs by explicit pair enumeration."""
    k = len(p)
    rank_p = {a: j for j, a in enumerate(p)}
    rank_q = {a: j for j, a in enumerate(q)}
    num = 0
    for a in range(k):
        for b in range(a + 1, k):
            sp = rank_p[a] - rank_p[b]
            sq = rank_q[a] - rank_q[b]
            num += 1 if sp * sq > 0 else -1
    return num / (k * (k - 1) / 2)


def numeric_gradient(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g
