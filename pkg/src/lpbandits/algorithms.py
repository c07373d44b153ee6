"""Bandit policies and relative-feedback helpers.

Four policies share one interface (select an arm, then observe the reward):

* ``lpbts``     — posterior sampling over latent states where each state's
                  mean vector is re-estimated every round by order-constrained
                  least squares; only the set of orderings is assumed known.
* ``mts``       — posterior sampling with a fixed, fully known per-state mean
                  table (the oracle latent-model baseline).
* ``ts``        — plain per-arm Gaussian Thompson sampling with known reward
                  variance; oblivious to latent structure.
* ``ts-subset`` — Gaussian Thompson sampling restricted to the arms that are
                  optimal in at least one latent state.

All selection is deterministic given the generator passed in and the observed
(arm, reward) stream. A policy instance is single-writer; run distinct
instances for concurrent simulations.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .isotonic import constrained_mle, pava_fit_at
from .model import LatentPreferenceModel, ObservationHistory, PreferenceOrdering

__all__ = [
    "PosteriorState",
    "Policy",
    "LpbTSPolicy",
    "MTSPolicy",
    "GaussianTSPolicy",
    "SubsetTSPolicy",
    "DuelingEvent",
    "inversion_count",
    "dueling_posterior",
    "pair_consecutive",
    "POLICY_NAMES",
    "make_policy",
]


@dataclass(frozen=True)
class PosteriorState:
    """Normalized log-probabilities over latent states, plus (for the
    order-constrained sampler) the per-state fitted mean vectors."""

    log_probs: np.ndarray
    state_estimates: np.ndarray | None = None


def _log_normalize(log_probs: np.ndarray) -> np.ndarray:
    """Shift log-probabilities so they exponentiate to a distribution."""
    mx = float(np.max(log_probs))
    if not math.isfinite(mx):
        raise ValueError("posterior collapsed: no latent state has positive probability")
    return log_probs - (mx + math.log(float(np.sum(np.exp(log_probs - mx)))))


def _sample_index(rng: np.random.Generator, probs: np.ndarray) -> int:
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1)


class Policy(ABC):
    """Sequential decision rule over k arms."""

    k: int

    @abstractmethod
    def select_action(self, t: int, rng: np.random.Generator, active_set=None) -> int:
        """Choose an arm for round t, restricted to ``active_set`` if given."""

    @abstractmethod
    def observe(self, arm: int, reward: float) -> None:
        """Update internal state with the reward obtained for ``arm``."""


class LpbTSPolicy(Policy):
    """Thompson sampling over latent preference orderings.

    Keeps log-probabilities over the m states. Selection samples a state and
    plays its most-preferred available arm (the very first action, before any
    data, is uniform). After each observation the per-state mean estimates are
    refit by isotonic regression of the empirical means, and each state's
    log-probability is penalized by the squared residual of the new reward
    under that state's fit, then renormalized with log-sum-exp.
    """

    name = "lpbts"

    def __init__(self, model: LatentPreferenceModel, noise_std: float):
        if noise_std <= 0:
            raise ValueError("noise_std must be > 0")
        self.model = model
        self.k = model.k
        self.m = model.m
        self.noise_std = float(noise_std)
        self.history = ObservationHistory(self.k)
        self.log_probs = np.full(self.m, -math.log(self.m))
        self._orders = [o.order for o in model.orderings]
        self._rank_table = np.array([o.ranks for o in model.orderings], dtype=np.int64)
        self._inv_two_var = 1.0 / (2.0 * self.noise_std**2)

    def select_action(self, t, rng, active_set=None):
        if len(self.history) == 0:
            pool = np.arange(self.k) if active_set is None else np.asarray(active_set)
            return int(pool[rng.integers(len(pool))])
        z = _sample_index(rng, np.exp(self.log_probs))
        if active_set is None:
            return self._orders[z][0]
        active = np.asarray(active_set)
        return int(active[np.argmin(self._rank_table[z][active])])

    def observe(self, arm, reward):
        if not math.isfinite(reward):
            raise ValueError(f"non-finite reward {reward!r}")
        self.history.record(arm, reward)
        counts = self.history.counts
        sums = self.history.sums
        fits = np.fromiter(
            (pava_fit_at(order, counts, sums, arm) for order in self._orders),
            dtype=np.float64,
            count=self.m,
        )
        self.log_probs = _log_normalize(
            self.log_probs - (reward - fits) ** 2 * self._inv_two_var
        )

    def state_estimates(self) -> np.ndarray:
        """Current per-state order-constrained mean estimates (m x k)."""
        return np.vstack(
            [constrained_mle(self.history, o, self.noise_std).fitted for o in self.model.orderings]
        )

    def posterior(self) -> PosteriorState:
        estimates = self.state_estimates() if len(self.history) else None
        return PosteriorState(self.log_probs.copy(), estimates)

    def active_constraint_total(self, tol: float = 1e-9) -> int:
        """Binding, fit-distorting constraints summed over all m states."""
        return sum(
            constrained_mle(self.history, o, self.noise_std).active_constraints
            for o in self.model.orderings
        )


class MTSPolicy(Policy):
    """Posterior sampling with an exact per-state mean table."""

    name = "mts"

    def __init__(self, mean_table, noise_std: float):
        if noise_std <= 0:
            raise ValueError("noise_std must be > 0")
        self.mean_table = np.asarray(mean_table, dtype=float)
        if self.mean_table.ndim != 2:
            raise ValueError("mean_table must be m x k")
        self.m, self.k = self.mean_table.shape
        self.noise_std = float(noise_std)
        self.log_probs = np.full(self.m, -math.log(self.m))
        self._best = np.argmax(self.mean_table, axis=1)
        self._inv_two_var = 1.0 / (2.0 * self.noise_std**2)

    def select_action(self, t, rng, active_set=None):
        z = _sample_index(rng, np.exp(self.log_probs))
        if active_set is None:
            return int(self._best[z])
        active = np.asarray(active_set)
        return int(active[np.argmax(self.mean_table[z][active])])

    def observe(self, arm, reward):
        if not math.isfinite(reward):
            raise ValueError(f"non-finite reward {reward!r}")
        self.log_probs = _log_normalize(
            self.log_probs - (reward - self.mean_table[:, arm]) ** 2 * self._inv_two_var
        )

    def posterior(self) -> PosteriorState:
        return PosteriorState(self.log_probs.copy())


class GaussianTSPolicy(Policy):
    """Per-arm conjugate Gaussian Thompson sampling with known variance."""

    name = "ts"

    def __init__(self, k: int, noise_std: float, prior_mean: float = 0.0, prior_var: float = 100.0):
        if noise_std <= 0:
            raise ValueError("noise_std must be > 0")
        if prior_var <= 0:
            raise ValueError("prior_var must be > 0")
        self.k = k
        self.noise_std = float(noise_std)
        self.post_mean = np.full(k, float(prior_mean))
        self.post_var = np.full(k, float(prior_var))

    def select_action(self, t, rng, active_set=None):
        theta = self.post_mean + np.sqrt(self.post_var) * rng.standard_normal(self.k)
        if active_set is None:
            return int(np.argmax(theta))
        active = np.asarray(active_set)
        return int(active[np.argmax(theta[active])])

    def observe(self, arm, reward):
        var = self.noise_std**2
        post = 1.0 / (1.0 / self.post_var[arm] + 1.0 / var)
        self.post_mean[arm] = post * (self.post_mean[arm] / self.post_var[arm] + reward / var)
        self.post_var[arm] = post


class SubsetTSPolicy(Policy):
    """Gaussian Thompson sampling on the subset of arms optimal in at least
    one latent state (the whole action set if every arm is someone's best)."""

    name = "ts-subset"

    def __init__(self, model: LatentPreferenceModel, noise_std: float, prior_mean: float = 0.0, prior_var: float = 100.0):
        self.k = model.k
        self.allowed = np.unique([o.order[0] for o in model.orderings])
        self._inner = GaussianTSPolicy(model.k, noise_std, prior_mean, prior_var)

    def select_action(self, t, rng, active_set=None):
        if active_set is None:
            pool = self.allowed
        else:
            pool = np.intersect1d(self.allowed, np.asarray(active_set))
            if pool.size == 0:
                pool = np.asarray(active_set)
        return self._inner.select_action(t, rng, pool)

    def observe(self, arm, reward):
        self._inner.observe(arm, reward)


@dataclass(frozen=True)
class DuelingEvent:
    """One relative-feedback observation: was arm_a preferred over arm_b?"""

    arm_a: int
    arm_b: int
    preferred_a: bool

    def __post_init__(self):
        if self.arm_a == self.arm_b:
            raise ValueError("dueling event needs two distinct arms")


def inversion_count(events, ordering: PreferenceOrdering) -> int:
    """Number of preference events contradicting the ordering."""
    ranks = ordering.ranks
    return sum(
        1 for e in events if (ranks[e.arm_a] < ranks[e.arm_b]) != e.preferred_a
    )


def dueling_posterior(events, model: LatentPreferenceModel, prior) -> np.ndarray:
    """Per-state probabilities proportional to prior[z] * 2^-inversions(z),
    computed in log space."""
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (model.m,):
        raise ValueError(f"prior must have length m={model.m}")
    if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
        raise ValueError("prior must be a normalized distribution")
    inversions = np.array([inversion_count(events, o) for o in model.orderings], dtype=float)
    with np.errstate(divide="ignore"):
        log_post = np.log(prior) - inversions * math.log(2.0)
    return np.exp(_log_normalize(log_post))


def pair_consecutive(history: ObservationHistory) -> list[DuelingEvent]:
    """Turn an absolute-reward stream into independent dueling events by
    pairing consecutive plays; a trailing unpaired event and same-arm pairs
    are dropped, and reward ties count against the first arm."""
    events = history.events
    out = []
    for i in range(0, len(events) - 1, 2):
        (arm_a, r_a), (arm_b, r_b) = events[i], events[i + 1]
        if arm_a == arm_b:
            continue
        out.append(DuelingEvent(arm_a, arm_b, r_a > r_b))
    return out


POLICY_NAMES = ("lpbts", "mts", "ts", "ts-subset")


def make_policy(
    name: str,
    noise_std: float,
    model: LatentPreferenceModel | None = None,
    mean_table=None,
    prior_mean: float = 0.0,
    prior_var: float = 100.0,
) -> Policy:
    """Build a policy by its harness name."""
    if name == "lpbts":
        if model is None:
            raise ValueError("lpbts needs a latent preference model")
        return LpbTSPolicy(model, noise_std)
    if name == "mts":
        if mean_table is None:
            raise ValueError("mts needs a per-state mean table")
        return MTSPolicy(mean_table, noise_std)
    if name == "ts":
        if model is None and mean_table is None:
            raise ValueError("ts needs the arm count via model or mean_table")
        k = model.k if model is not None else np.asarray(mean_table).shape[1]
        return GaussianTSPolicy(k, noise_std, prior_mean, prior_var)
    if name == "ts-subset":
        if model is None:
            raise ValueError("ts-subset needs a latent preference model")
        return SubsetTSPolicy(model, noise_std, prior_mean, prior_var)
    raise ValueError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")
