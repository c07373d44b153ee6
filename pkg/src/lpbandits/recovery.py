"""Offline recovery of the latent preference-ordering model from logged
absolute rewards, and its evaluation.

Two-stage pipeline: cluster instances on their (zero-imputed) reward vectors,
then fit a sum-zero logistic pairwise-comparison model per cluster and sort
the sigmoid-squashed utilities. Evaluation matches recovered orderings to the
truth with an exact assignment solver over 1 - Kendall-tau costs.
"""

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import pandas as pd

from .model import LatentPreferenceModel, PreferenceOrdering

__all__ = [
    "ComparisonTable",
    "ClusterAssignment",
    "BTMFit",
    "RecoveryResult",
    "extract_comparisons",
    "kmeans_zero_impute",
    "btm_log_likelihood",
    "btm_gradient",
    "fit_btm",
    "recover_orderings",
    "kendall_tau",
    "min_cost_assignment",
    "matching_error",
    "collision_probability",
    "RatingsDataset",
    "ingest_ratings_csv",
    "split_users",
    "synthetic_recovery_logs",
    "save_recovery",
]


@dataclass(frozen=True)
class ComparisonTable:
    """Pairwise win counts and exposure counts between k items."""

    wins: np.ndarray
    exposures: np.ndarray

    def __post_init__(self):
        wins = np.asarray(self.wins, dtype=np.int64)
        exposures = np.asarray(self.exposures, dtype=np.int64)
        if wins.ndim != 2 or wins.shape[0] != wins.shape[1] or wins.shape != exposures.shape:
            raise ValueError("wins and exposures must be equal square matrices")
        if np.any(np.diag(wins)) or np.any(np.diag(exposures)):
            raise ValueError("diagonal must be zero")
        if np.any(wins < 0) or np.any(wins > exposures):
            raise ValueError("need 0 <= wins <= exposures")
        object.__setattr__(self, "wins", wins)
        object.__setattr__(self, "exposures", exposures)

    @property
    def k(self) -> int:
        return self.wins.shape[0]

    @property
    def is_empty(self) -> bool:
        return int(self.exposures.sum()) == 0

    @classmethod
    def zeros(cls, k: int) -> "ComparisonTable":
        return cls(np.zeros((k, k), dtype=np.int64), np.zeros((k, k), dtype=np.int64))


def _accumulate_comparisons(wins: np.ndarray, exposures: np.ndarray, rewards: dict) -> None:
    """Add one instance's pairwise outcomes in place. Ties expose both
    directions without a win."""
    arms = sorted(rewards)
    if len(arms) < 2:
        return
    vals = np.array([rewards[a] for a in arms])
    sub = np.ix_(arms, arms)
    off_diag = 1 - np.eye(len(arms), dtype=np.int64)
    exposures[sub] += off_diag
    wins[sub] += (vals[:, None] > vals[None, :]).astype(np.int64)


def extract_comparisons(rewards: dict, k: int) -> ComparisonTable:
    """Pairwise comparison table of a single instance's (partial) rewards."""
    wins = np.zeros((k, k), dtype=np.int64)
    exposures = np.zeros((k, k), dtype=np.int64)
    _accumulate_comparisons(wins, exposures, rewards)
    return ComparisonTable(wins, exposures)


@dataclass(frozen=True)
class ClusterAssignment:
    """Result of clustering instances: per-instance labels and the member-mean
    centroids."""

    labels: np.ndarray
    centroids: np.ndarray
    inertia: float


def _dist2(X: np.ndarray, centers: np.ndarray, x_norms: np.ndarray) -> np.ndarray:
    d2 = x_norms[:, None] - 2.0 * X @ centers.T + (centers * centers).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0)


def _kmeans_pp_init(X, m, rng, x_norms):
    n = X.shape[0]
    centers = np.empty((m, X.shape[1]))
    centers[0] = X[int(rng.integers(n))]
    d2 = _dist2(X, centers[:1], x_norms)[:, 0]
    for c in range(1, m):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            u = rng.random()
            idx = min(int(np.searchsorted(np.cumsum(d2 / total), u, side="right")), n - 1)
        centers[c] = X[idx]
        d2 = np.minimum(d2, _dist2(X, centers[c : c + 1], x_norms)[:, 0])
    return centers


def kmeans_zero_impute(reward_maps, m: int, k: int, rng: np.random.Generator, n_init: int = 10, max_iter: int = 300) -> ClusterAssignment:
    """Lloyd's k-means on zero-imputed reward vectors, ++-seeded, run to an
    assignment fixpoint (or max_iter); empty clusters are reseeded to the
    point farthest from its centroid. Best of n_init restarts by inertia."""
    n = len(reward_maps)
    if n < m:
        raise ValueError(f"need at least m={m} instances, got {n}")
    X = np.zeros((n, k))
    for i, rewards in enumerate(reward_maps):
        for arm, value in rewards.items():
            X[i, arm] = value
    x_norms = (X * X).sum(axis=1)

    best_labels = None
    best_inertia = math.inf
    for _ in range(max(1, n_init)):
        centers = _kmeans_pp_init(X, m, rng, x_norms)
        labels = None
        for _ in range(max_iter):
            d2 = _dist2(X, centers, x_norms)
            new_labels = d2.argmin(axis=1)
            point_d2 = d2[np.arange(n), new_labels]
            reseeded = False
            counts = np.bincount(new_labels, minlength=m)
            for c in np.flatnonzero(counts == 0):
                p = int(point_d2.argmax())
                centers[c] = X[p]
                new_labels[p] = c
                point_d2[p] = 0.0
                reseeded = True
            if not reseeded and labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(m):
                members = X[labels == c]
                if len(members):
                    centers[c] = members.mean(axis=0)
        centroids = np.vstack([X[labels == c].mean(axis=0) for c in range(m)])
        inertia = float(((X - centroids[labels]) ** 2).sum())
        if inertia < best_inertia:
            best_inertia = inertia
            best_labels = labels.copy()
            best_centroids = centroids

    return ClusterAssignment(best_labels, best_centroids, best_inertia)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def btm_log_likelihood(beta, table: ComparisonTable, l2_penalty: float = 0.0) -> float:
    """Pairwise logistic log-likelihood (both (i,j) and (j,i) terms, as the
    double sum runs over ordered pairs) minus an optional L2 penalty."""
    beta = np.asarray(beta, dtype=float)
    diff = beta[:, None] - beta[None, :]
    log_sig = -np.logaddexp(0.0, -diff)
    wins = table.wins.astype(float)
    losses = table.exposures.astype(float) - wins
    ll = float(np.sum(wins * log_sig) + np.sum(losses * log_sig.T))
    return ll - l2_penalty * float(beta @ beta)


def btm_gradient(beta, table: ComparisonTable, l2_penalty: float = 0.0) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    sig = _sigmoid(beta[:, None] - beta[None, :])
    g_mat = table.wins - table.exposures * sig
    return g_mat.sum(axis=1) - g_mat.sum(axis=0) - 2.0 * l2_penalty * beta


@dataclass(frozen=True)
class BTMFit:
    """Sum-zero utilities of a pairwise-comparison fit, their sigmoid squash,
    and the induced ordering (ties broken toward the lower item index)."""

    beta: np.ndarray
    beta_sigmoid: np.ndarray
    ordering: PreferenceOrdering
    converged: bool
    n_iter: int


def fit_btm(table: ComparisonTable, tol: float = 1e-8, max_iter: int = 1000, l2_penalty: float = 1e-4) -> BTMFit:
    """Maximize the (L2-penalized) pairwise logistic likelihood subject to
    sum(beta) = 0, by damped Newton ascent with mean-centering of every
    iterate. Converged when the gradient infinity-norm drops to ``tol``.

    The penalty (default 1e-4) keeps the optimum finite when an item wins or
    loses everything, which happens routinely at small sample sizes.
    """
    if table.is_empty:
        raise ValueError("no comparisons")
    k = table.k
    expo_sym = (table.exposures + table.exposures.T).astype(float)
    beta = np.zeros(k)
    obj = btm_log_likelihood(beta, table, l2_penalty)
    converged = False
    n_iter = 0
    for _ in range(max_iter):
        grad = btm_gradient(beta, table, l2_penalty)
        if float(np.max(np.abs(grad))) <= tol:
            converged = True
            break
        n_iter += 1
        sig = _sigmoid(beta[:, None] - beta[None, :])
        curv = expo_sym * sig * (1.0 - sig)
        neg_hess = np.diag(curv.sum(axis=1)) - curv
        neg_hess[np.diag_indices(k)] += 2.0 * l2_penalty + 1e-10
        direction = np.linalg.solve(neg_hess, grad)
        slope = float(grad @ direction)
        step = 1.0
        while True:
            candidate = beta + step * direction
            candidate -= candidate.mean()
            cand_obj = btm_log_likelihood(candidate, table, l2_penalty)
            if cand_obj >= obj + 1e-4 * step * slope or step < 1e-12:
                break
            step *= 0.5
        beta, obj = candidate, cand_obj
    beta_sigmoid = _sigmoid(beta)
    order = tuple(int(a) for a in np.argsort(-beta_sigmoid, kind="stable"))
    return BTMFit(beta, beta_sigmoid, PreferenceOrdering(order), converged, n_iter)


@dataclass(frozen=True)
class RecoveryResult:
    model: LatentPreferenceModel
    utilities: np.ndarray
    assignment: ClusterAssignment
    fits: tuple[BTMFit, ...]
    fallback_clusters: tuple[int, ...]


def recover_orderings(
    reward_maps,
    m: int,
    rng: np.random.Generator,
    k: int | None = None,
    n_init: int = 10,
    tol: float = 1e-8,
    max_iter: int = 1000,
    l2_penalty: float = 1e-4,
) -> RecoveryResult:
    """Two-stage recovery: cluster instances, then fit per-cluster pairwise
    utilities and sort them. Clusters without any comparisons fall back to the
    all-data fit and are flagged."""
    n = len(reward_maps)
    if n < m:
        raise ValueError(f"need at least m={m} instances, got {n}")
    if k is None:
        k = 1 + max(max(rewards) for rewards in reward_maps if rewards)

    assignment = kmeans_zero_impute(reward_maps, m, k, rng, n_init=n_init)

    wins = np.zeros((m, k, k), dtype=np.int64)
    exposures = np.zeros((m, k, k), dtype=np.int64)
    for label, rewards in zip(assignment.labels, reward_maps):
        _accumulate_comparisons(wins[label], exposures[label], rewards)

    global_fit = None
    fits = []
    fallback = []
    for z in range(m):
        table = ComparisonTable(wins[z], exposures[z])
        if table.is_empty:
            if global_fit is None:
                global_table = ComparisonTable(wins.sum(axis=0), exposures.sum(axis=0))
                global_fit = fit_btm(global_table, tol=tol, max_iter=max_iter, l2_penalty=l2_penalty)
            fits.append(global_fit)
            fallback.append(z)
        else:
            fits.append(fit_btm(table, tol=tol, max_iter=max_iter, l2_penalty=l2_penalty))

    utilities = np.vstack([fit.beta_sigmoid for fit in fits])
    try:
        model = LatentPreferenceModel(tuple(fit.ordering for fit in fits))
    except ValueError as err:
        raise ValueError(f"recovery produced duplicate orderings: {err}") from err
    return RecoveryResult(model, utilities, assignment, tuple(fits), tuple(fallback))


def _as_order(p) -> tuple:
    if isinstance(p, PreferenceOrdering):
        return p.order
    return tuple(int(a) for a in p)


def kendall_tau(p, q) -> float:
    """Kendall rank correlation of two orderings over the same k items:
    (concordant - discordant) / (k choose 2)."""
    p = _as_order(p)
    q = _as_order(q)
    k = len(p)
    if k < 2:
        raise ValueError("need at least two items")
    if len(q) != k:
        raise ValueError("orderings must have equal length")
    if sorted(p) != list(range(k)) or sorted(q) != list(range(k)):
        raise ValueError("orderings must be permutations of 0..k-1")
    rank_p = np.empty(k, dtype=np.int64)
    rank_p[list(p)] = np.arange(k)
    rank_q = np.empty(k, dtype=np.int64)
    rank_q[list(q)] = np.arange(k)
    sign_p = np.sign(rank_p[:, None] - rank_p[None, :])
    sign_q = np.sign(rank_q[:, None] - rank_q[None, :])
    upper = np.triu_indices(k, 1)
    return float((sign_p[upper] * sign_q[upper]).sum() / (k * (k - 1) // 2))


def min_cost_assignment(cost) -> np.ndarray:
    """Exact minimum-cost assignment on a square matrix by augmenting paths
    with potentials (O(n^3)). Returns the column matched to each row."""
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("cost matrix must be square")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix must be finite")
    n = c.shape[0]
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    matched_row = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        matched_row[0] = i
        j0 = 0
        minv = [math.inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = matched_row[j0]
            delta = math.inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = c[i0 - 1][j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[matched_row[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if matched_row[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            matched_row[j0] = matched_row[j1]
            j0 = j1
    result = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        result[matched_row[j] - 1] = j - 1
    return result


def matching_error(true_orderings, recovered_orderings) -> float:
    """Mean (1 - Kendall tau) between true and recovered orderings after the
    optimal one-to-one matching of state labels."""
    if isinstance(true_orderings, LatentPreferenceModel):
        true_orderings = true_orderings.orderings
    if isinstance(recovered_orderings, LatentPreferenceModel):
        recovered_orderings = recovered_orderings.orderings
    true_orderings = [_as_order(p) for p in true_orderings]
    recovered_orderings = [_as_order(p) for p in recovered_orderings]
    m = len(true_orderings)
    if m != len(recovered_orderings):
        raise ValueError("need equally many true and recovered orderings")
    cost = np.array(
        [[1.0 - kendall_tau(t, r) for r in recovered_orderings] for t in true_orderings]
    )
    cols = min_cost_assignment(cost)
    return float(math.fsum(cost[i, cols[i]] for i in range(m)) / m)


def collision_probability(k: int) -> tuple[Fraction, float]:
    """Probability that two distinct uniformly random orderings of k items
    differ in exactly two positions: C(k,2) / (k! - 1), exact and as float."""
    if k < 2:
        raise ValueError("k must be >= 2")
    exact = Fraction(math.comb(k, 2), math.factorial(k) - 1)
    return exact, float(exact)


@dataclass(frozen=True)
class RatingsDataset:
    """Dense-indexed view of a ratings file: one reward map per user, plus the
    original sparse ids (users in instance order, movies in arm order)."""

    reward_maps: tuple
    user_ids: tuple
    movie_ids: tuple

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def k(self) -> int:
        return len(self.movie_ids)

    def id_map(self) -> dict:
        return {"users": list(self.user_ids), "movies": list(self.movie_ids)}


def ingest_ratings_csv(path, min_movie_ratings: int = 200, min_user_ratings: int = 200) -> RatingsDataset:
    """Load a MovieLens-shaped CSV (userId,movieId,rating,timestamp), drop
    movies with too few ratings and then users with too few ratings of the
    surviving movies, and remap the sparse ids to dense indices. Duplicate
    (user, movie) ratings are averaged."""
    df = pd.read_csv(path)
    for col in ("userId", "movieId", "rating"):
        if col not in df.columns:
            raise ValueError(f"ratings file is missing column {col!r}")
    movie_counts = df["movieId"].value_counts()
    df = df[df["movieId"].isin(movie_counts[movie_counts >= min_movie_ratings].index)]
    user_counts = df["userId"].value_counts()
    df = df[df["userId"].isin(user_counts[user_counts >= min_user_ratings].index)]
    if df.empty:
        raise ValueError("no ratings survive the filters")

    movie_ids = sorted(df["movieId"].unique().tolist())
    user_ids = sorted(df["userId"].unique().tolist())
    arm_of = {mid: i for i, mid in enumerate(movie_ids)}

    means = df.groupby(["userId", "movieId"])["rating"].mean()
    maps: dict = {uid: {} for uid in user_ids}
    for (uid, mid), rating in means.items():
        maps[uid][arm_of[mid]] = float(rating)
    return RatingsDataset(
        tuple(maps[uid] for uid in user_ids), tuple(user_ids), tuple(movie_ids)
    )


def split_users(dataset: RatingsDataset, ratio: float, rng: np.random.Generator):
    """Seeded random split of users into two datasets; the first receives
    round(ratio * n) users."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    n = dataset.n_users
    perm = rng.permutation(n)
    n_first = int(round(ratio * n))
    first = sorted(int(i) for i in perm[:n_first])
    second = sorted(int(i) for i in perm[n_first:])

    def take(indices):
        return RatingsDataset(
            tuple(dataset.reward_maps[i] for i in indices),
            tuple(dataset.user_ids[i] for i in indices),
            dataset.movie_ids,
        )

    return take(first), take(second)


def synthetic_recovery_logs(model, config, n_instances: int, pulls_per_instance: int, rng: np.random.Generator):
    """Logged data for recovery experiments: per instance, uniform arm pulls
    reduced to per-arm empirical means. Returns (reward maps, true states)."""
    from .environments import generate_instance

    maps = []
    states = []
    k = model.k
    for i in range(n_instances):
        z = i % model.m
        instance = generate_instance(model, z, config, rng)
        arms = rng.integers(k, size=pulls_per_instance)
        noise = rng.standard_normal(pulls_per_instance)
        sums = np.zeros(k)
        counts = np.zeros(k, dtype=np.int64)
        means = np.asarray(instance.means)
        np.add.at(sums, arms, means[arms] + config.noise_std * noise)
        np.add.at(counts, arms, 1)
        maps.append(
            {int(a): float(sums[a] / counts[a]) for a in np.flatnonzero(counts)}
        )
        states.append(z)
    return maps, states


def save_recovery(result: RecoveryResult, outdir, dataset: RatingsDataset | None = None, truth=None) -> dict:
    """Write model.json, beta.json, optional id_map.json, and a report with
    cluster sizes, convergence/fallback flags, and the matching error when a
    truth model is supplied. Returns the report dict."""
    import os

    os.makedirs(outdir, exist_ok=True)
    result.model.save(os.path.join(outdir, "model.json"))
    with open(os.path.join(outdir, "beta.json"), "w") as fh:
        json.dump(
            {"m": result.model.m, "k": result.model.k, "beta": result.utilities.tolist()},
            fh,
            indent=2,
        )
        fh.write("\n")
    if dataset is not None:
        with open(os.path.join(outdir, "id_map.json"), "w") as fh:
            json.dump(dataset.id_map(), fh, indent=2)
            fh.write("\n")
    report = {
        "n_instances": int(len(result.assignment.labels)),
        "cluster_sizes": np.bincount(result.assignment.labels, minlength=result.model.m).tolist(),
        "converged": [fit.converged for fit in result.fits],
        "iterations": [fit.n_iter for fit in result.fits],
        "fallback_clusters": list(result.fallback_clusters),
        "inertia": result.assignment.inertia,
    }
    if truth is not None:
        report["matching_error"] = matching_error(truth, result.model)
    with open(os.path.join(outdir, "recovery_report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return report
