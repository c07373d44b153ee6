"""Experiment runner: seeded instance simulations, parameter sweeps,
aggregation, and machine-readable outputs.

Every random stream is derived by hashing (base seed, sweep index, role,
state, instance), so results are byte-identical regardless of how many
workers execute the runs, and adding a policy to a config never perturbs the
streams of the others. ``LPB_THREADS`` caps parallel instance execution.
"""

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .algorithms import POLICY_NAMES, make_policy
from .environments import (
    RatingsConfig,
    SyntheticConfig,
    active_action_set,
    environment_to_dict,
    generate_instance,
    generate_model,
    ratings_instance_means,
    ratings_means,
)
from .model import BanditInstance, LatentPreferenceModel, PreferenceOrdering

__all__ = [
    "ExperimentConfig",
    "RunRecord",
    "SweepResult",
    "derive_seed",
    "run_instance",
    "run_sweep",
    "standardized_ratings",
    "write_outputs",
    "reaggregate",
]

SWEEP_VARIABLES = ("none", "k", "m", "delta", "sigma")


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of labels (hash-based, so streams for
    different roles never collide or shift when unrelated parts change)."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a sweep: environment, policies, horizon,
    instance counts, seeding, and the swept variable."""

    env: str = "synthetic"
    policies: tuple = POLICY_NAMES
    horizon: int = 200
    instances_per_state: int = 50
    base_seed: int = 0
    sweep: str = "none"
    sweep_values: tuple = ()
    tie_states_to_arms: bool = False
    # synthetic environment
    k: int = 10
    m: int = 5
    base_level: float = 9.0
    mean_gap: float = 0.2
    gap_jitter: float = 0.05
    varied_base: float = 6.0
    scale_spread: float = 0.4
    noise_std: float = 1.0
    varied_scale: bool = False
    # ratings environment
    utilities: np.ndarray | None = None
    orderings: tuple | None = None
    min_interval: float = 1.5
    rating_noise_std: float | None = None
    active_set_size: int = 300
    # policy priors / assumed noise
    prior_mean: float = 0.0
    prior_var: float = 100.0
    policy_noise_std: float | None = None

    def __post_init__(self):
        if self.env not in ("synthetic", "ratings"):
            raise ValueError(f"unknown environment {self.env!r}")
        if self.horizon < 1 or self.instances_per_state < 1:
            raise ValueError("horizon and instances_per_state must be >= 1")
        if self.sweep not in SWEEP_VARIABLES:
            raise ValueError(f"sweep must be one of {SWEEP_VARIABLES}")
        if self.sweep != "none" and not self.sweep_values:
            raise ValueError("sweep requires sweep_values")
        if self.env == "ratings" and self.sweep != "none":
            raise ValueError("the ratings environment does not support sweeps")
        if self.env == "ratings" and self.utilities is None:
            raise ValueError("ratings environment needs utilities")
        self.policies = tuple(self.policies)
        for name in self.policies:
            if name not in POLICY_NAMES:
                raise ValueError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")
        if self.utilities is not None:
            self.utilities = np.asarray(self.utilities, dtype=float)

    def to_dict(self) -> dict:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, np.ndarray):
                data[key] = value.tolist()
            elif isinstance(value, tuple):
                data[key] = [list(v) if isinstance(v, tuple) else v for v in value]
        return data


@dataclass
class RunRecord:
    """Per-round trace of one policy on one instance, plus final summaries."""

    arms: np.ndarray
    rewards: np.ndarray
    instant_regret: np.ndarray
    cum_regret: np.ndarray
    final_average_regret: float
    active_constraints: int | None = None


def run_instance(policy, means, noise_std, horizon, seed, active_sets=None) -> RunRecord:
    """Play ``horizon`` rounds of a fresh policy against a fixed mean vector.

    Instant regret is the expected shortfall (best available mean minus the
    played arm's mean), so the cumulative curve is monotone. Reward noise is
    drawn once per round independent of the chosen arm, which keeps reward
    streams aligned between runs that differ only in policy behavior.
    """
    means = np.asarray(means, dtype=float)
    if policy.k != len(means):
        raise ValueError(f"policy expects {policy.k} arms, environment has {len(means)}")
    policy_rng, reward_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2)
    )
    best_full = float(means.max())
    arms = np.empty(horizon, dtype=np.int64)
    rewards = np.empty(horizon)
    instant = np.empty(horizon)
    for t in range(horizon):
        active = None if active_sets is None else active_sets[t]
        arm = policy.select_action(t, policy_rng, active)
        if not 0 <= arm < len(means):
            raise ValueError(f"policy selected invalid arm {arm}")
        reward = float(means[arm] + noise_std * reward_rng.standard_normal())
        policy.observe(arm, reward)
        arms[t] = arm
        rewards[t] = reward
        best = best_full if active is None else float(means[active].max())
        instant[t] = best - means[arm]
    cum = np.cumsum(instant)
    counter = getattr(policy, "active_constraint_total", None)
    return RunRecord(
        arms=arms,
        rewards=rewards,
        instant_regret=instant,
        cum_regret=cum,
        final_average_regret=float(cum[-1]) / horizon,
        active_constraints=int(counter()) if counter is not None else None,
    )


def standardized_ratings(record: RunRecord) -> np.ndarray:
    """Per-round z-scored rewards of one run (population std over the run's
    own rewards); a constant stream maps to zeros."""
    rewards = record.rewards
    std = float(rewards.std())
    if std == 0.0:
        return np.zeros_like(rewards)
    return (rewards - rewards.mean()) / std


def _synthetic_config(config: ExperimentConfig, value) -> SyntheticConfig:
    k, m = config.k, config.m
    gap, sigma = config.mean_gap, config.noise_std
    if config.sweep == "k":
        k = int(value)
        if config.tie_states_to_arms:
            m = int(value)
    elif config.sweep == "m":
        m = int(value)
    elif config.sweep == "delta":
        gap = float(value)
    elif config.sweep == "sigma":
        sigma = float(value)
    return SyntheticConfig(
        k=k,
        m=m,
        base_level=config.base_level,
        mean_gap=gap,
        gap_jitter=config.gap_jitter,
        varied_base=config.varied_base,
        scale_spread=config.scale_spread,
        noise_std=sigma,
        varied_scale=config.varied_scale,
    )


def expected_mean_table(model: LatentPreferenceModel, syn: SyntheticConfig) -> np.ndarray:
    """The fixed per-state mean table handed to the oracle sampler: expected
    means of the fixed-scale generator (regardless of varied_scale, which is
    exactly what makes the oracle misspecified there)."""
    top = syn.base_level + syn.mean_gap * model.k + 0.5
    step = syn.mean_gap + syn.gap_jitter / 2.0
    table = np.empty((model.m, model.k))
    for z, ordering in enumerate(model.orderings):
        for j, arm in enumerate(ordering.order):
            table[z, arm] = top - j * step
    return table


def _build_synthetic_env(config: ExperimentConfig, si: int, value):
    """One independent environment replicate (ordering model + oracle table)
    per instance column, so sweep statistics average over the model draw
    instead of riding one draw's luck; instance (z, i) uses replicate i."""
    syn = _synthetic_config(config, value)
    models = []
    mean_tables = []
    for i in range(config.instances_per_state):
        rng = np.random.default_rng(derive_seed(config.base_seed, si, "model", i))
        model = generate_model(syn.k, syn.m, rng)
        models.append(model)
        mean_tables.append(expected_mean_table(model, syn))
    instances = {}
    for z in range(syn.m):
        for i in range(config.instances_per_state):
            rng = np.random.default_rng(derive_seed(config.base_seed, si, "instance", z, i))
            instances[(z, i)] = generate_instance(models[i], z, syn, rng)
    snapshot = {
        "seed": config.base_seed,
        "config": environment_to_dict(models[0], [], syn, config.base_seed)["config"],
        "models": [model.to_dict() for model in models],
        "instances": [
            dict(instances[key].to_dict(), replicate=key[1]) for key in sorted(instances)
        ],
    }
    return {
        "per_instance_model": {
            (z, i): (tuple(o.order for o in models[i].orderings), mean_tables[i])
            for (z, i) in instances
        },
        "noise_std": syn.noise_std,
        "policy_noise_std": config.policy_noise_std or syn.noise_std,
        "instances": instances,
        "active_sets": {},
        "snapshot": snapshot,
    }


def _build_ratings_env(config: ExperimentConfig, si: int, value):
    ratings = RatingsConfig(
        utilities=config.utilities,
        min_interval=config.min_interval,
        rating_noise_std=config.rating_noise_std,
        varied_scale=config.varied_scale,
        active_set_size=config.active_set_size,
    )
    if config.orderings is not None:
        orderings = tuple(tuple(int(a) for a in o) for o in config.orderings)
    else:
        orderings = tuple(
            tuple(int(a) for a in np.argsort(-row, kind="stable")) for row in ratings.utilities
        )
    mean_table = np.vstack([ratings_means(row) for row in ratings.utilities])
    noise = ratings.resolved_noise_std()
    policy_noise = config.policy_noise_std or (noise if noise > 0 else math.sqrt(0.5))

    instances = {}
    active_sets = {}
    size = min(ratings.active_set_size, ratings.k)
    for i in range(config.instances_per_state):
        z = i % ratings.m
        rng = np.random.default_rng(derive_seed(config.base_seed, si, "instance", i))
        means = ratings_instance_means(ratings, z, rng)
        instances[(z, i)] = BanditInstance(z, tuple(means), noise)
        if size < ratings.k:
            a_rng = np.random.default_rng(derive_seed(config.base_seed, si, "active", i))
            active_sets[(z, i)] = [
                active_action_set(ratings.k, size, a_rng) for _ in range(config.horizon)
            ]
    snapshot = {
        "seed": config.base_seed,
        "config": {
            "utilities": ratings.utilities.tolist(),
            "min_interval": ratings.min_interval,
            "rating_noise_std": noise,
            "varied_scale": ratings.varied_scale,
            "active_set_size": ratings.active_set_size,
        },
        "model": {"k": ratings.k, "m": ratings.m, "orderings": [list(o) for o in orderings]},
        "instances": [instances[key].to_dict() for key in sorted(instances)],
    }
    return {
        "per_instance_model": {key: (orderings, mean_table) for key in instances},
        "noise_std": noise,
        "policy_noise_std": policy_noise,
        "instances": instances,
        "active_sets": active_sets,
        "snapshot": snapshot,
    }


def _execute_batch(payload):
    out = []
    model_cache: dict = {}
    for i, means, seed, active_sets, orderings, mean_table in payload["instances"]:
        model = model_cache.get(orderings)
        if model is None:
            model = LatentPreferenceModel(tuple(PreferenceOrdering(o) for o in orderings))
            model_cache[orderings] = model
        policy = make_policy(
            payload["policy"],
            payload["policy_noise_std"],
            model=model,
            mean_table=mean_table,
            prior_mean=payload["prior_mean"],
            prior_var=payload["prior_var"],
        )
        record = run_instance(
            policy, means, payload["noise_std"], payload["horizon"], seed, active_sets
        )
        out.append((payload["key_prefix"] + (i,), record))
    return out


def _worker_count(n_tasks: int) -> int:
    env = os.environ.get("LPB_THREADS")
    workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(workers, n_tasks))


@dataclass
class SweepResult:
    """All per-instance records of a sweep, keyed by
    (sweep index, policy, state, instance)."""

    config: ExperimentConfig
    sweep_values: tuple
    records: dict = field(default_factory=dict)
    env_snapshots: list = field(default_factory=list)

    def keys_for(self, si: int, policy: str):
        return sorted(k for k in self.records if k[0] == si and k[1] == policy)

    def stack(self, si: int, policy: str, attr: str) -> np.ndarray:
        return np.vstack(
            [getattr(self.records[k], attr) for k in self.keys_for(si, policy)]
        )

    def final_cum_regrets(self, si: int, policy: str) -> np.ndarray:
        return np.array(
            [self.records[k].cum_regret[-1] for k in self.keys_for(si, policy)]
        )

    def final_average_regrets(self, si: int, policy: str) -> np.ndarray:
        return np.array(
            [self.records[k].final_average_regret for k in self.keys_for(si, policy)]
        )

    def cum_curve_stats(self, si: int, policy: str):
        curves = self.stack(si, policy, "cum_regret")
        return curves.mean(axis=0), _std(curves, axis=0)

    def active_constraint_values(self, si: int, policy: str) -> np.ndarray | None:
        values = [self.records[k].active_constraints for k in self.keys_for(si, policy)]
        if any(v is None for v in values):
            return None
        return np.array(values, dtype=float)

    def standardized_stats(self, si: int, policy: str):
        curves = np.vstack(
            [standardized_ratings(self.records[k]) for k in self.keys_for(si, policy)]
        )
        n = curves.shape[0]
        sem = _std(curves, axis=0) / math.sqrt(n) if n > 1 else np.zeros(curves.shape[1])
        return curves.mean(axis=0), sem


def _std(values: np.ndarray, axis=None):
    """Sample standard deviation (ddof=1); zero when only one sample."""
    n = values.shape[axis] if axis is not None else values.size
    if n < 2:
        return np.zeros(values.shape[1 - axis]) if values.ndim == 2 else 0.0
    return values.std(axis=axis, ddof=1)


def run_sweep(config: ExperimentConfig) -> SweepResult:
    """Run every (sweep value x policy x state x instance) combination and
    collect the records. Execution order never affects results."""
    values = config.sweep_values if config.sweep != "none" else (None,)
    result = SweepResult(config=config, sweep_values=tuple(values))

    payloads = []
    for si, value in enumerate(values):
        if config.env == "synthetic":
            env = _build_synthetic_env(config, si, value)
        else:
            env = _build_ratings_env(config, si, value)
        result.env_snapshots.append(env["snapshot"])
        by_state: dict[int, list] = {}
        for z, i in sorted(env["instances"]):
            by_state.setdefault(z, []).append(i)
        for policy in config.policies:
            for z, instance_ids in sorted(by_state.items()):
                payloads.append(
                    {
                        "key_prefix": (si, policy, z),
                        "policy": policy,
                        "noise_std": env["noise_std"],
                        "policy_noise_std": env["policy_noise_std"],
                        "prior_mean": config.prior_mean,
                        "prior_var": config.prior_var,
                        "horizon": config.horizon,
                        "instances": [
                            (
                                i,
                                np.asarray(env["instances"][(z, i)].means),
                                derive_seed(config.base_seed, si, policy, z, i),
                                env["active_sets"].get((z, i)),
                                env["per_instance_model"][(z, i)][0],
                                env["per_instance_model"][(z, i)][1],
                            )
                            for i in instance_ids
                        ],
                    }
                )

    workers = _worker_count(len(payloads))
    if workers == 1:
        batches = [_execute_batch(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(_execute_batch, payloads))
    for batch in batches:
        for key, record in batch:
            result.records[key] = record
    return result


def _fmt(x) -> str:
    return f"{float(x):.12g}"


def _sweep_label(value) -> str:
    return "" if value is None else _fmt(value)


def write_outputs(result: SweepResult, outdir, command: str = "library") -> None:
    """Write runs.csv, summary.csv, active_constraints.csv (when the
    order-constrained sampler ran), ratings_summary.csv (ratings runs),
    environment.json, and manifest.json. Floats carry 12 significant digits;
    rows are fully ordered, so output bytes are reproducible."""
    os.makedirs(outdir, exist_ok=True)
    config = result.config

    with open(os.path.join(outdir, "runs.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "sweep_value",
                "policy",
                "state",
                "instance",
                "round",
                "arm",
                "reward",
                "instant_regret",
                "cum_regret",
            ]
        )
        for key in sorted(result.records):
            si, policy, z, i = key
            record = result.records[key]
            label = _sweep_label(result.sweep_values[si])
            for t in range(len(record.arms)):
                writer.writerow(
                    [
                        label,
                        policy,
                        z,
                        i,
                        t + 1,
                        int(record.arms[t]),
                        _fmt(record.rewards[t]),
                        _fmt(record.instant_regret[t]),
                        _fmt(record.cum_regret[t]),
                    ]
                )

    with open(os.path.join(outdir, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sweep_value", "policy", "round", "mean_cum_regret", "std_cum_regret"])
        for si in range(len(result.sweep_values)):
            label = _sweep_label(result.sweep_values[si])
            for policy in config.policies:
                mean, std = result.cum_curve_stats(si, policy)
                for t in range(len(mean)):
                    writer.writerow([label, policy, t + 1, _fmt(mean[t]), _fmt(std[t])])

    active_rows = []
    for si in range(len(result.sweep_values)):
        for policy in config.policies:
            values = result.active_constraint_values(si, policy)
            if values is None:
                continue
            std = _std(values) if values.size > 1 else 0.0
            active_rows.append(
                [_sweep_label(result.sweep_values[si]), policy, _fmt(values.mean()), _fmt(std)]
            )
    if active_rows:
        with open(os.path.join(outdir, "active_constraints.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["sweep_value", "policy", "mean_active_constraints", "std_active_constraints"]
            )
            writer.writerows(active_rows)

    if config.env == "ratings":
        with open(os.path.join(outdir, "ratings_summary.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["sweep_value", "policy", "round", "mean_standardized_rating", "sem_standardized_rating"]
            )
            for si in range(len(result.sweep_values)):
                label = _sweep_label(result.sweep_values[si])
                for policy in config.policies:
                    mean, sem = result.standardized_stats(si, policy)
                    for t in range(len(mean)):
                        writer.writerow([label, policy, t + 1, _fmt(mean[t]), _fmt(sem[t])])

    with open(os.path.join(outdir, "environment.json"), "w") as fh:
        json.dump(result.env_snapshots, fh, indent=2, sort_keys=True)
        fh.write("\n")

    manifest = {
        "command": command,
        "code_version": __version__,
        "config": config.to_dict(),
        "sweep_values": [None if v is None else float(v) for v in result.sweep_values],
        "n_records": len(result.records),
        "csv_float_format": ".12g",
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def reaggregate(outdir, check: bool = False, tolerance: float = 1e-10):
    """Recompute summary.csv from the per-instance runs.csv.

    With ``check`` the recomputed values are compared against the persisted
    summary (relative tolerance with an absolute floor of 1); otherwise
    summary.csv is rewritten. Returns the list of mismatch descriptions
    (empty when consistent)."""
    runs_path = os.path.join(outdir, "runs.csv")
    groups: dict = {}
    group_order = []
    with open(runs_path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            gkey = (row["sweep_value"], row["policy"])
            if gkey not in groups:
                groups[gkey] = {}
                group_order.append(gkey)
            per_round = groups[gkey].setdefault(int(row["round"]), [])
            per_round.append(float(row["cum_regret"]))

    rows = []
    for gkey in group_order:
        label, policy = gkey
        for t in sorted(groups[gkey]):
            values = np.array(groups[gkey][t])
            std = float(values.std(ddof=1)) if values.size > 1 else 0.0
            rows.append([label, policy, t, _fmt(values.mean()), _fmt(std)])

    summary_path = os.path.join(outdir, "summary.csv")
    if not check:
        with open(summary_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["sweep_value", "policy", "round", "mean_cum_regret", "std_cum_regret"])
            writer.writerows(rows)
        return []

    mismatches = []
    with open(summary_path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        persisted = list(reader)
    if len(persisted) != len(rows):
        return [f"row count differs: persisted {len(persisted)} vs recomputed {len(rows)}"]
    for old, new in zip(persisted, rows):
        if old[:3] != [str(x) for x in new[:3]]:
            mismatches.append(f"row key differs: {old[:3]} vs {new[:3]}")
            continue
        for col, (a, b) in zip(("mean", "std"), zip(old[3:], new[3:])):
            a, b = float(a), float(b)
            if abs(a - b) > tolerance * max(1.0, abs(a), abs(b)):
                mismatches.append(f"{old[:3]} {col}: persisted {a} vs recomputed {b}")
    return mismatches
