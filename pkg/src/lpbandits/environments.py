"""Reward-generating environments.

Two families:

* synthetic — random distinct orderings; per-instance mean vectors strictly
  decreasing along the state's ordering, with an optional per-instance spread
  of the overall level ("varied scale") that preserves orderings but breaks
  any fixed mean table.
* ratings — mean vectors built from per-state utilities in [0, 1] mapped onto
  the 1..5 rating scale, with an optional per-instance random rating interval
  (again order-preserving), plus per-round active action subsets.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .model import BanditInstance, LatentPreferenceModel, PreferenceOrdering

__all__ = [
    "SyntheticConfig",
    "RatingsConfig",
    "generate_model",
    "generate_instance",
    "sample_reward",
    "ratings_means",
    "rescale_instance",
    "active_action_set",
    "ratings_instance_means",
    "generate_synthetic_ratings",
    "write_ratings_csv",
    "environment_to_dict",
    "environment_from_dict",
]


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic generator.

    The best arm's mean is drawn uniformly from an interval anchored at
    ``base_level + mean_gap * k`` (width 1 at a fixed scale; width
    ``scale_spread * k`` above ``varied_base`` when ``varied_scale``), and each
    subsequent arm along the ordering sits ``mean_gap`` plus a Uniform(0,
    gap_jitter) step below its predecessor.
    """

    k: int = 10
    m: int = 5
    base_level: float = 9.0
    mean_gap: float = 0.2
    gap_jitter: float = 0.05
    varied_base: float = 6.0
    scale_spread: float = 0.4
    noise_std: float = 1.0
    varied_scale: bool = False

    def __post_init__(self):
        if self.k < 1 or self.m < 1:
            raise ValueError("k and m must be >= 1")
        if self.mean_gap <= 0:
            raise ValueError("mean_gap must be > 0")
        if self.gap_jitter < 0 or self.scale_spread < 0:
            raise ValueError("gap_jitter and scale_spread must be >= 0")
        if self.noise_std <= 0:
            raise ValueError("noise_std must be > 0")


@dataclass(frozen=True)
class RatingsConfig:
    """Parameters of the ratings environment.

    ``utilities`` is the m x k matrix of per-state preference strengths in
    [0, 1]; ``min_interval`` is the smallest personal rating span drawn for an
    instance in varied-scale mode. ``rating_noise_std`` defaults to
    sqrt(0.5) at a fixed scale (a variance-0.5 Gaussian around the rating
    mean) and to 0 in varied-scale mode, where the per-instance interval draw
    is the only randomness.
    """

    utilities: np.ndarray
    min_interval: float = 1.5
    rating_noise_std: float | None = None
    varied_scale: bool = False
    active_set_size: int = 300

    def __post_init__(self):
        utilities = np.asarray(self.utilities, dtype=float)
        if utilities.ndim != 2:
            raise ValueError("utilities must be an m x k matrix")
        if np.any(utilities < 0) or np.any(utilities > 1):
            raise ValueError("utilities must lie in [0, 1]")
        object.__setattr__(self, "utilities", utilities)
        if not 0 < self.min_interval < 4:
            raise ValueError("min_interval must lie in (0, 4)")
        if self.active_set_size < 1:
            raise ValueError("active_set_size must be >= 1")

    @property
    def m(self) -> int:
        return self.utilities.shape[0]

    @property
    def k(self) -> int:
        return self.utilities.shape[1]

    def resolved_noise_std(self) -> float:
        if self.rating_noise_std is not None:
            return float(self.rating_noise_std)
        return 0.0 if self.varied_scale else math.sqrt(0.5)


def generate_model(k: int, m: int, rng: np.random.Generator) -> LatentPreferenceModel:
    """m uniformly random, pairwise-distinct orderings of k arms."""
    if k < 1 or m < 1:
        raise ValueError("k and m must be >= 1")
    if m > math.factorial(k):
        raise ValueError(f"cannot draw {m} distinct orderings of {k} arms")
    seen: dict[tuple, None] = {}
    attempts = 0
    max_attempts = 10 * m
    while len(seen) < m:
        if attempts >= max_attempts:
            raise RuntimeError(
                f"gave up after {attempts} draws with {len(seen)}/{m} distinct orderings"
            )
        attempts += 1
        perm = tuple(int(a) for a in rng.permutation(k))
        seen.setdefault(perm, None)
    return LatentPreferenceModel(tuple(PreferenceOrdering(p) for p in seen))


def generate_instance(
    model: LatentPreferenceModel, state: int, config: SyntheticConfig, rng: np.random.Generator
) -> BanditInstance:
    """Draw one instance of the given state: strictly decreasing means along
    the state's ordering."""
    if not 0 <= state < model.m:
        raise ValueError(f"state {state} out of range for m={model.m}")
    order = model.orderings[state].order
    k = model.k
    if config.varied_scale:
        lo = config.varied_base + config.mean_gap * k
        hi = lo + config.scale_spread * k
    else:
        lo = config.base_level + config.mean_gap * k
        hi = lo + 1.0
    means = [0.0] * k
    level = rng.uniform(lo, hi)
    means[order[0]] = level
    for j in range(1, k):
        level = level - config.mean_gap - rng.uniform(0.0, config.gap_jitter)
        means[order[j]] = level
    return BanditInstance(state, tuple(means), config.noise_std)


def sample_reward(instance: BanditInstance, arm: int, rng: np.random.Generator) -> float:
    """One Gaussian reward draw for an arm of an instance."""
    if not 0 <= arm < instance.k:
        raise ValueError(f"arm {arm} out of range for k={instance.k}")
    return float(rng.normal(instance.means[arm], instance.noise_std))


def ratings_means(utilities) -> np.ndarray:
    """Affine map of utilities onto the 1..5 rating scale (min -> 1, max -> 5)."""
    u = np.asarray(utilities, dtype=float)
    lo, hi = float(u.min()), float(u.max())
    if hi <= lo:
        raise ValueError("degenerate utilities: all values equal")
    return 1.0 + 4.0 * (u - lo) / (hi - lo)


def rescale_instance(rating_means, min_interval: float, rng: np.random.Generator) -> np.ndarray:
    """Map rating-scale means affinely onto a per-instance interval
    [lo, hi] in [1, 5] of length at least ``min_interval``."""
    if not 0 < min_interval < 4:
        raise ValueError("min_interval must lie in (0, 4)")
    means = np.asarray(rating_means, dtype=float)
    lo = rng.uniform(1.0, 5.0 - min_interval)
    hi = rng.uniform(lo + min_interval, 5.0)
    return lo + (hi - lo) * (means - 1.0) / 4.0


def ratings_instance_means(config: RatingsConfig, state: int, rng: np.random.Generator) -> np.ndarray:
    """Mean vector for one instance of a ratings environment state."""
    base = ratings_means(config.utilities[state])
    if config.varied_scale:
        return rescale_instance(base, config.min_interval, rng)
    return base


def active_action_set(k_total: int, size: int, rng: np.random.Generator, genres=None) -> np.ndarray:
    """Sample ``size`` distinct arms, stratified round-robin across genre
    labels when given (uniform without replacement otherwise). Returned
    sorted ascending."""
    if size > k_total:
        raise ValueError(f"cannot sample {size} arms out of {k_total}")
    if genres is None:
        return np.sort(rng.choice(k_total, size=size, replace=False))
    if len(genres) != k_total:
        raise ValueError("need one genre label per arm")
    pools: dict = {}
    for arm, label in enumerate(genres):
        pools.setdefault(label, []).append(arm)
    shuffled = {
        label: [pools[label][i] for i in rng.permutation(len(pools[label]))]
        for label in sorted(pools)
    }
    chosen: list[int] = []
    while len(chosen) < size:
        for label in sorted(shuffled):
            if shuffled[label]:
                chosen.append(shuffled[label].pop())
                if len(chosen) == size:
                    break
    return np.sort(np.asarray(chosen, dtype=np.int64))


def generate_synthetic_ratings(
    k: int,
    m: int,
    n_users: int,
    ratings_per_user: int,
    rng: np.random.Generator,
    noise_std: float = 0.4,
):
    """Synthetic ratings log in the MovieLens CSV shape, for ingestion and
    recovery tests.

    Users are assigned latent groups round-robin; each rates a random subset
    of movies at that group's rating mean plus noise, rounded to half-star
    steps. Ids are deliberately sparse to exercise the dense remapping.
    Returns (rows, utilities, user_states).
    """
    if ratings_per_user > k:
        raise ValueError("ratings_per_user cannot exceed the movie count")
    utilities = rng.uniform(size=(m, k))
    means = np.vstack([ratings_means(u) for u in utilities])
    rows = []
    states = []
    timestamp = 1_000_000_000
    for user in range(n_users):
        z = user % m
        states.append(z)
        movies = np.sort(rng.choice(k, size=ratings_per_user, replace=False))
        for movie in movies:
            raw = means[z, movie] + noise_std * rng.standard_normal()
            rating = min(5.0, max(0.5, round(raw * 2.0) / 2.0))
            rows.append((100 * (user + 1), 10 * (int(movie) + 1), rating, timestamp))
            timestamp += 1
    return rows, utilities, states


def write_ratings_csv(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("userId,movieId,rating,timestamp\n")
        for user_id, movie_id, rating, timestamp in rows:
            fh.write(f"{user_id},{movie_id},{rating:g},{timestamp}\n")


def environment_to_dict(model: LatentPreferenceModel, instances, config, seed) -> dict:
    """JSON-ready snapshot of a generated environment (model, every instance's
    means and noise, the generator config, and the seed), enough to replay a
    run bit-exactly."""
    from dataclasses import asdict

    cfg = asdict(config)
    for key, value in cfg.items():
        if isinstance(value, np.ndarray):
            cfg[key] = value.tolist()
    return {
        "seed": seed,
        "config": cfg,
        "model": model.to_dict(),
        "instances": [inst.to_dict() for inst in instances],
    }


def environment_from_dict(data: dict):
    """Inverse of environment_to_dict; returns (model, instances, config dict)."""
    model = LatentPreferenceModel.from_dict(data["model"])
    instances = [BanditInstance.from_dict(d) for d in data["instances"]]
    return model, instances, data["config"]
