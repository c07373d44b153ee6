"""Core domain types: preference orderings, latent models, bandit instances,
and observation histories.

Arm indices are 0-based everywhere. An ordering lists arms from most to least
preferred; a latent model is a set of m distinct orderings over the same k
arms; an instance is a concrete mean vector consistent with one ordering.
"""

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PreferenceOrdering",
    "LatentPreferenceModel",
    "BanditInstance",
    "ObservationHistory",
    "rank_of",
    "is_consistent",
    "best_arm",
]


@dataclass(frozen=True)
class PreferenceOrdering:
    """A permutation of the k arm indices, most-preferred first."""

    order: tuple[int, ...]
    ranks: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        k = len(self.order)
        if k == 0:
            raise ValueError("ordering must be nonempty")
        if sorted(self.order) != list(range(k)):
            raise ValueError(f"order must be a permutation of 0..{k - 1}, got {self.order}")
        ranks = [0] * k
        for j, arm in enumerate(self.order):
            ranks[arm] = j
        object.__setattr__(self, "order", tuple(int(a) for a in self.order))
        object.__setattr__(self, "ranks", tuple(ranks))

    @property
    def k(self) -> int:
        return len(self.order)

    def rank_of(self, arm: int) -> int:
        """Rank of an arm (0 = most preferred); inverse of ``order``."""
        if not 0 <= arm < self.k:
            raise ValueError(f"arm {arm} out of range for k={self.k}")
        return self.ranks[arm]

    def best_arm(self) -> int:
        return self.order[0]


@dataclass(frozen=True)
class LatentPreferenceModel:
    """The set of candidate orderings, one per latent state."""

    orderings: tuple[PreferenceOrdering, ...]

    def __post_init__(self):
        if not self.orderings:
            raise ValueError("model needs at least one ordering")
        object.__setattr__(self, "orderings", tuple(self.orderings))
        k = self.orderings[0].k
        if any(o.k != k for o in self.orderings):
            raise ValueError("all orderings must have the same length")
        seen = set()
        for o in self.orderings:
            if o.order in seen:
                raise ValueError(f"duplicate ordering {o.order}; latent states must be distinct")
            seen.add(o.order)

    @property
    def k(self) -> int:
        return self.orderings[0].k

    @property
    def m(self) -> int:
        return len(self.orderings)

    def to_dict(self) -> dict:
        return {"k": self.k, "m": self.m, "orderings": [list(o.order) for o in self.orderings]}

    @classmethod
    def from_dict(cls, data: dict) -> "LatentPreferenceModel":
        model = cls(tuple(PreferenceOrdering(tuple(o)) for o in data["orderings"]))
        if "k" in data and data["k"] != model.k:
            raise ValueError(f"declared k={data['k']} but orderings have length {model.k}")
        if "m" in data and data["m"] != model.m:
            raise ValueError(f"declared m={data['m']} but found {model.m} orderings")
        return model

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "LatentPreferenceModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class BanditInstance:
    """Ground truth for one problem instance: a latent state, a mean vector
    consistent with that state's ordering, and the reward noise level."""

    latent_state: int
    means: tuple[float, ...]
    noise_std: float

    def __post_init__(self):
        object.__setattr__(self, "means", tuple(float(x) for x in self.means))
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    @property
    def k(self) -> int:
        return len(self.means)

    @property
    def optimal_arm(self) -> int:
        return int(np.argmax(self.means))

    @property
    def optimal_mean(self) -> float:
        return max(self.means)

    def gaps(self) -> np.ndarray:
        """Optimality gap of every arm: best mean minus the arm's mean."""
        means = np.asarray(self.means)
        return means.max() - means

    def to_dict(self) -> dict:
        return {
            "latent_state": self.latent_state,
            "means": list(self.means),
            "noise_std": self.noise_std,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BanditInstance":
        return cls(data["latent_state"], tuple(data["means"]), data["noise_std"])


class ObservationHistory:
    """Mutable record of (arm, reward) events with per-arm sufficient
    statistics. Single writer; counts and sums always match the event list.

    Counts and sums are plain lists: policies index them per element inside
    tight loops, where ndarray scalar access would dominate the cost.
    """

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.events: list[tuple[int, float]] = []
        self.counts: list[int] = [0] * k
        self.sums: list[float] = [0.0] * k

    def __len__(self) -> int:
        return len(self.events)

    def record(self, arm: int, reward: float) -> None:
        if not 0 <= arm < self.k:
            raise ValueError(f"arm {arm} out of range for k={self.k}")
        reward = float(reward)
        self.events.append((arm, reward))
        self.counts[arm] += 1
        self.sums[arm] += reward

    def empirical_means(self) -> np.ndarray:
        """Per-arm mean reward; arms never pulled get 0 (and carry weight 0)."""
        return np.array([s / n if n else 0.0 for n, s in zip(self.counts, self.sums)])

    def weights(self, noise_std: float) -> np.ndarray:
        """Per-arm precision weights: pull count over reward variance."""
        if noise_std <= 0:
            raise ValueError("noise_std must be > 0")
        return np.asarray(self.counts, dtype=np.float64) / (noise_std * noise_std)


def rank_of(ordering: PreferenceOrdering, arm: int) -> int:
    """Rank of ``arm`` in ``ordering`` (0 = most preferred)."""
    return ordering.rank_of(arm)


def is_consistent(means, ordering: PreferenceOrdering, tol: float = 0.0) -> bool:
    """Whether a mean vector respects the ordering: each consecutive pair of
    the ordering satisfies means[more preferred] >= means[less preferred] - tol.
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")
    if len(means) != ordering.k:
        raise ValueError(f"means has length {len(means)}, ordering expects {ordering.k}")
    order = ordering.order
    return all(means[order[j]] >= means[order[j + 1]] - tol for j in range(len(order) - 1))


def best_arm(ordering: PreferenceOrdering) -> int:
    """The most-preferred arm of an ordering."""
    return ordering.best_arm()
