"""Command-line benchmark harness.

Subcommands: synth-run (single synthetic config), sweep (parameter grids),
ratings-run (ratings environment from a beta/model JSON or a raw ratings CSV),
recover (offline ordering recovery from a ratings CSV), collision-prob, and
report (re-aggregate persisted per-instance CSVs).

A YAML config file can prefill any experiment option; explicit flags win.
"""

import argparse
import json
import os
import sys

import numpy as np
import yaml

from .harness import ExperimentConfig, reaggregate, run_sweep, write_outputs
from .model import LatentPreferenceModel
from .recovery import (
    collision_probability,
    ingest_ratings_csv,
    recover_orderings,
    save_recovery,
    split_users,
)

CONFIG_FIELDS = {
    "policies",
    "horizon",
    "instances_per_state",
    "base_seed",
    "sweep",
    "sweep_values",
    "tie_states_to_arms",
    "k",
    "m",
    "base_level",
    "mean_gap",
    "gap_jitter",
    "varied_base",
    "scale_spread",
    "noise_std",
    "varied_scale",
    "min_interval",
    "rating_noise_std",
    "active_set_size",
    "prior_mean",
    "prior_var",
    "policy_noise_std",
}


def _load_config_file(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    unknown = set(data) - CONFIG_FIELDS
    if unknown:
        raise SystemExit(f"unknown config keys: {sorted(unknown)}")
    return data


def _parse_policies(text):
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _parse_values(text):
    return tuple(float(v) for v in text.split(","))


def _add_common_experiment_flags(parser):
    parser.add_argument("--config", help="YAML file prefilling experiment options")
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--policies", type=_parse_policies, default=None)
    parser.add_argument("--horizon", "-T", type=int, default=None)
    parser.add_argument("--instances", "-N", type=int, default=None, dest="instances_per_state")
    parser.add_argument("--seed", type=int, default=None, dest="base_seed")
    parser.add_argument("--prior-mean", type=float, default=None, dest="prior_mean")
    parser.add_argument("--prior-var", type=float, default=None, dest="prior_var")
    parser.add_argument(
        "--policy-noise-std", type=float, default=None, dest="policy_noise_std",
        help="reward std assumed by the policies (defaults to the environment's)",
    )


def _add_synthetic_flags(parser):
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument("--m", type=int, default=None)
    parser.add_argument("--delta", type=float, default=None, dest="mean_gap")
    parser.add_argument("--gap-jitter", type=float, default=None, dest="gap_jitter")
    parser.add_argument("--base-level", type=float, default=None, dest="base_level")
    parser.add_argument("--varied-base", type=float, default=None, dest="varied_base")
    parser.add_argument("--scale-spread", type=float, default=None, dest="scale_spread")
    parser.add_argument("--sigma", type=float, default=None, dest="noise_std")
    parser.add_argument(
        "--varied-scale", action=argparse.BooleanOptionalAction, default=None, dest="varied_scale"
    )


def _merge_config(args, extra=None) -> ExperimentConfig:
    data = {}
    if getattr(args, "config", None):
        data.update(_load_config_file(args.config))
    for field in CONFIG_FIELDS:
        value = getattr(args, field, None)
        if value is not None:
            data[field] = value
    if extra:
        data.update(extra)
    return ExperimentConfig(**data)


def _print_final_table(result):
    print("final (round T) cumulative regret, mean +- std over instances:")
    for si, value in enumerate(result.sweep_values):
        prefix = "" if value is None else f"{result.config.sweep}={value:g}  "
        for policy in result.config.policies:
            final = result.final_cum_regrets(si, policy)
            avg = result.final_average_regrets(si, policy)
            std = final.std(ddof=1) if final.size > 1 else 0.0
            print(
                f"  {prefix}{policy:10s} cum {final.mean():8.3f} +- {std:7.3f}"
                f"   avg {avg.mean():.4f}"
            )


def _cmd_synth_run(args):
    config = _merge_config(args, extra={"env": "synthetic", "sweep": "none", "sweep_values": ()})
    result = run_sweep(config)
    write_outputs(result, args.out, command="synth-run")
    _print_final_table(result)
    print(f"outputs written to {args.out}")


def _cmd_sweep(args):
    extra = {"env": "synthetic"}
    if args.sweep_var is not None:
        extra["sweep"] = args.sweep_var
    if args.values is not None:
        extra["sweep_values"] = args.values
    if args.tie_m_k is not None:
        extra["tie_states_to_arms"] = args.tie_m_k
    config = _merge_config(args, extra=extra)
    result = run_sweep(config)
    write_outputs(result, args.out, command="sweep")
    _print_final_table(result)
    print(f"outputs written to {args.out}")


def _load_beta(path):
    with open(path) as fh:
        data = json.load(fh)
    utilities = np.asarray(data["beta"], dtype=float)
    if utilities.ndim != 2:
        raise SystemExit("beta.json must hold an m x k matrix under 'beta'")
    return utilities


def _cmd_ratings_run(args):
    if (args.beta is None) == (args.csv is None):
        raise SystemExit("ratings-run needs exactly one of --beta or --csv")
    orderings = None
    if args.csv is not None:
        if args.m is None:
            raise SystemExit("--csv ingestion needs --m (number of latent states)")
        dataset = ingest_ratings_csv(
            args.csv,
            min_movie_ratings=args.min_movie_ratings,
            min_user_ratings=args.min_user_ratings,
        )
        rng = np.random.default_rng(args.base_seed or 0)
        recovery = recover_orderings(
            list(dataset.reward_maps), args.m, rng, k=dataset.k, l2_penalty=args.l2
        )
        save_recovery(recovery, os.path.join(args.out, "recovered"), dataset=dataset)
        utilities = recovery.utilities
        orderings = tuple(o.order for o in recovery.model.orderings)
        print(f"recovered {args.m} orderings from {dataset.n_users} users / {dataset.k} movies")
    else:
        utilities = _load_beta(args.beta)
    if args.model is not None:
        orderings = tuple(tuple(o) for o in LatentPreferenceModel.load(args.model).to_dict()["orderings"])
    extra = {
        "env": "ratings",
        "sweep": "none",
        "sweep_values": (),
        "utilities": utilities,
        "orderings": orderings,
    }
    config = _merge_config(args, extra=extra)
    result = run_sweep(config)
    write_outputs(result, args.out, command="ratings-run")
    _print_final_table(result)
    print(f"outputs written to {args.out}")


def _cmd_recover(args):
    dataset = ingest_ratings_csv(
        args.csv,
        min_movie_ratings=args.min_movie_ratings,
        min_user_ratings=args.min_user_ratings,
    )
    rng = np.random.default_rng(args.seed)
    if args.train_ratio < 1.0:
        dataset, _ = split_users(dataset, args.train_ratio, rng)
    result = recover_orderings(
        list(dataset.reward_maps),
        args.m,
        rng,
        k=dataset.k,
        n_init=args.kmeans_restarts,
        tol=args.tol,
        max_iter=args.max_iter,
        l2_penalty=args.l2,
    )
    truth = LatentPreferenceModel.load(args.truth) if args.truth else None
    report = save_recovery(result, args.out, dataset=dataset, truth=truth)
    print(f"recovered model for m={args.m} written to {args.out}")
    print(f"cluster sizes: {report['cluster_sizes']}, converged: {report['converged']}")
    if "matching_error" in report:
        print(f"matching error vs truth: {report['matching_error']:.4f}")


def _cmd_collision_prob(args):
    exact, value = collision_probability(args.k)
    print(f"C({args.k},2) / ({args.k}! - 1) = {exact.numerator}/{exact.denominator} "
          f"= {value:.6g}")


def _cmd_report(args):
    mismatches = reaggregate(args.dir, check=args.check)
    if args.check:
        if mismatches:
            print("summary.csv does NOT match runs.csv:")
            for line in mismatches[:20]:
                print(f"  {line}")
            raise SystemExit(1)
        print("summary.csv matches runs.csv")
    else:
        print(f"summary.csv rewritten from {os.path.join(args.dir, 'runs.csv')}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpb", description="latent preference bandit benchmark harness"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-run", help="single synthetic configuration")
    _add_common_experiment_flags(p)
    _add_synthetic_flags(p)
    p.set_defaults(func=_cmd_synth_run)

    p = sub.add_parser("sweep", help="synthetic parameter sweep")
    _add_common_experiment_flags(p)
    _add_synthetic_flags(p)
    p.add_argument("--sweep", choices=("k", "m", "delta", "sigma"), default=None, dest="sweep_var")
    p.add_argument("--values", type=_parse_values, default=None)
    p.add_argument(
        "--tie-m-k", action=argparse.BooleanOptionalAction, default=None, dest="tie_m_k",
        help="set m equal to k at every sweep value (k sweeps only)",
    )
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("ratings-run", help="ratings environment run")
    _add_common_experiment_flags(p)
    p.add_argument("--beta", help="beta.json with per-state utilities")
    p.add_argument("--csv", help="ratings CSV to ingest and recover a model from")
    p.add_argument("--model", help="model.json overriding the orderings")
    p.add_argument("--m", type=int, default=None, help="latent states for --csv recovery")
    p.add_argument("--users", type=int, default=None, dest="instances_per_state")
    p.add_argument("--zeta", type=float, default=None, dest="min_interval")
    p.add_argument("--rating-noise-std", type=float, default=None, dest="rating_noise_std")
    p.add_argument("--active-set-size", type=int, default=None, dest="active_set_size")
    p.add_argument(
        "--varied-scale", action=argparse.BooleanOptionalAction, default=None, dest="varied_scale"
    )
    p.add_argument("--min-movie-ratings", type=int, default=200)
    p.add_argument("--min-user-ratings", type=int, default=200)
    p.add_argument("--l2", type=float, default=1e-4)
    p.set_defaults(func=_cmd_ratings_run)

    p = sub.add_parser("recover", help="offline ordering recovery from a ratings CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--out", default="recovered")
    p.add_argument("--min-movie-ratings", type=int, default=200)
    p.add_argument("--min-user-ratings", type=int, default=200)
    p.add_argument("--train-ratio", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth", help="model.json with ground-truth orderings")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--kmeans-restarts", type=int, default=10)
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("collision-prob", help="chance of near-identical orderings")
    p.add_argument("--k", type=int, required=True)
    p.set_defaults(func=_cmd_collision_prob)

    p = sub.add_parser("report", help="re-aggregate persisted per-instance CSVs")
    p.add_argument("--dir", required=True)
    p.add_argument("--check", action="store_true", help="verify instead of rewriting")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
