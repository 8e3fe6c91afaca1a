"""Command-line front end.

Subcommands: ``prepare`` (parse raw dumps into a versioned cache),
``train`` (fit models per cold-start split), ``coldstart`` (codes for new
user records), ``eval`` (Accuracy@k with baselines), ``grid`` (balance
parameter sweeps), ``bench`` (scaling measurements).  Every output file
embeds the config echo and a format version; writes are atomic.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .coldstart import generate_user_codes
from .config import RunConfig, load_config
from .datasets import (
    Dataset,
    SplitSpec,
    load_bookcrossing,
    load_dataset_cache,
    load_movielens,
    save_dataset_cache,
    split_cold_start,
)
from .encoders import prepare_views
from .errors import ConfigError, HashcfError
from .evaluate import (
    PositiveRule,
    accuracy_at_k,
    accuracy_for_ranker,
    baseline_popularity,
    baseline_random,
    bench_scaling,
    mean_report,
    positive_rule_for,
    write_accuracy_csv,
    write_bench_csv,
    write_json_report,
    atomic_write_text,
)
from .model_io import load_model, save_model
from .solver import train as train_model

WORKERS_ENV = "HASHCF_WORKERS"


def _fingerprint(paths: dict) -> dict:
    out = {}
    for key, p in sorted(paths.items()):
        st = os.stat(p)
        out[key] = {"path": str(p), "size": st.st_size, "mtime_ns": st.st_mtime_ns}
    return out


def _load_raw(config: RunConfig) -> Dataset:
    paths = config.data_paths
    missing = [k for k in _required_paths(config.dataset_name) if k not in paths]
    if missing:
        raise ConfigError(f"dataset paths missing from config: {missing}")
    if config.dataset_name == "movielens-1m":
        return load_movielens(paths["ratings"], paths["users"], paths["movies"])
    return load_bookcrossing(paths["ratings"], paths["users"], paths["books"])


def _required_paths(name: str) -> tuple:
    return ("ratings", "users", "movies") if name == "movielens-1m" else (
        "ratings", "users", "books")


def cmd_prepare(config: RunConfig) -> dict:
    """Parse the raw dump into the versioned cache; skip when inputs are
    unchanged.  Also writes full-data feature blocks for inspection."""
    cache = config.cache_path()
    stats_path = cache.with_suffix(".stats.json")
    required = _required_paths(config.dataset_name)
    missing = [k for k in required if k not in config.data_paths]
    if missing:
        raise ConfigError(f"dataset paths missing from config: {missing}")
    fingerprint = _fingerprint({k: config.data_paths[k] for k in required})
    if cache.exists() and stats_path.exists():
        try:
            old = json.loads(stats_path.read_text())
        except json.JSONDecodeError:
            old = {}
        if old.get("inputs") == fingerprint:
            old["cache_hit"] = True
            return old

    dataset = _load_raw(config)
    cache.parent.mkdir(parents=True, exist_ok=True)
    save_dataset_cache(dataset, cache)

    views, encoders = prepare_views(
        dataset, target_dim=config.interaction_dim, normalize=config.normalize_views
    )
    np.savez_compressed(
        cache.with_suffix(".views.npz"),
        format_version=np.int64(1),
        demographics=views[0],
        interaction=views[1],
        encoder_provenance=np.str_(json.dumps(encoders.to_dict(), sort_keys=True)),
    )

    stats = dataset.stats()
    stats["inputs"] = fingerprint
    stats["cache_hit"] = False
    write_json_report(stats_path, stats, config_echo=config.echo())
    return stats


def _load_cache(config: RunConfig) -> Dataset:
    cache = config.cache_path()
    if not cache.exists():
        raise ConfigError(f"no prepared cache at {cache}; run `prepare` first")
    return load_dataset_cache(cache)


def _run_dir(config: RunConfig) -> Path:
    path = Path(config.output_dir) / "run"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _model_path(config: RunConfig, split: int) -> Path:
    return _run_dir(config) / f"model_split{split}.hcf"


def train_one_split(config: RunConfig, dataset: Dataset, split: int):
    """Split, encode, and fit one model; returns (model, records)."""
    spec = SplitSpec(config.cold_fraction, seed=config.split_seed(split))
    train_ds, _ = split_cold_start(dataset, spec)
    views, encoders = prepare_views(
        train_ds, target_dim=config.interaction_dim, normalize=config.normalize_views
    )
    records = []
    model = train_model(
        train_ds,
        views,
        config.hyper_for_split(split),
        progress_sink=records.append,
        encoders=encoders,
    )
    return model, records


def cmd_train(config: RunConfig, split_index: int | None = None) -> list:
    dataset = _load_cache(config)
    splits = [split_index] if split_index is not None else list(range(config.repeats))
    out = []
    for split in splits:
        model, records = train_one_split(config, dataset, split)
        path = _model_path(config, split)
        save_model(model, path)
        lines = [
            "# format_version: 1",
            f"# config: {json.dumps(config.echo(), sort_keys=True)}",
            "iteration,objective,seconds,constraint_gap",
        ]
        lines += [
            f"{r.iteration},{r.objective:.10g},{r.seconds:.6g},{r.constraint_gap:.10g}"
            for r in records
        ]
        log_path = _run_dir(config) / f"train_log_split{split}.csv"
        atomic_write_text(log_path, "\n".join(lines) + "\n")
        out.append(path)
    return out


def _positive_rule(config: RunConfig) -> PositiveRule:
    rule = positive_rule_for(config.dataset_name)
    threshold = config.positive_threshold
    implicit = config.count_implicit
    return PositiveRule(
        threshold=rule.threshold if threshold is None else float(threshold),
        count_implicit=rule.count_implicit if implicit is None else bool(implicit),
    )


def cold_user_codes(model, test_ds: Dataset):
    """Batch codes for a cold split: demographic view from the stored
    encoders, interaction view absent (all-zero)."""
    encoders = model.encoders
    demo = encoders.demo.transform(test_ds)
    inter = np.zeros((encoders.interaction.dim, test_ds.n_users))
    if encoders.normalized:
        from .encoders import l2_normalize_columns

        demo = l2_normalize_columns(demo)
    return generate_user_codes(model, [demo, inter])


def eval_one_split(config: RunConfig, dataset: Dataset, split: int):
    """Reports (model, random, popularity) for one split."""
    path = _model_path(config, split)
    if not path.exists():
        raise ConfigError(f"missing model {path}; run `train` first")
    model = load_model(path)
    spec = SplitSpec(config.cold_fraction, seed=config.split_seed(split))
    train_ds, test_ds = split_cold_start(dataset, spec)
    rule = _positive_rule(config)
    codes = cold_user_codes(model, test_ds)
    report = accuracy_at_k(model, codes, test_ds, config.ks, rule)
    rand = accuracy_for_ranker(
        baseline_random(config.baseline_seed(), test_ds.n_items),
        test_ds, config.ks, rule, method="random",
    )
    pop = accuracy_for_ranker(
        baseline_popularity(train_ds), test_ds, config.ks, rule, method="popularity"
    )
    return report, rand, pop


def cmd_eval(config: RunConfig) -> list:
    dataset = _load_cache(config)
    run = _run_dir(config)
    by_method = {"hashcf": [], "random": [], "popularity": []}
    out = []
    for split in range(config.repeats):
        reports = eval_one_split(config, dataset, split)
        for rep in reports:
            by_method[rep.method].append(rep)
        path = run / f"eval_split{split}.csv"
        write_accuracy_csv(path, list(reports), config.echo())
        write_json_report(
            run / f"eval_split{split}.json",
            {"reports": [rep.to_dict() for rep in reports]},
            config_echo=config.echo(),
        )
        out.append(path)
    means = [mean_report(reps, method=method) for method, reps in by_method.items()]
    mean_path = run / "eval_mean.csv"
    write_accuracy_csv(mean_path, means, config.echo())
    write_json_report(
        run / "eval_mean.json",
        {"reports": [rep.to_dict() for rep in means]},
        config_echo=config.echo(),
    )
    out.append(mean_path)
    return out


def cmd_coldstart(config: RunConfig, model_path, users_path) -> list:
    """Codes for structured user records (JSON lines).

    Each record holds the demographic schema of the training dataset and
    optionally ``"items"``: external ids of rated items, resolved against
    the prepared cache for their side info.
    """
    model = load_model(model_path)
    dataset = _load_cache(config)
    from .coldstart import encode_new_user

    batches = []
    with open(users_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{users_path}:{lineno}: bad JSON: {exc}") from exc
            items = record.pop("items", None)
            history = None
            if items:
                side = []
                for item in items:
                    if item in dataset.item_side:
                        side.append(dataset.item_side[item])
                    elif isinstance(item, str) and item.isdigit() and int(item) in dataset.item_side:
                        side.append(dataset.item_side[int(item)])
                history = side
            batches.append(encode_new_user(model, record, history))

    codes = np.hstack([b.B_u for b in batches]) if batches else np.empty((model.r, 0))
    packed = np.packbits((codes.T > 0).astype(np.uint8), axis=1, bitorder="little")
    run = _run_dir(config)
    np.savez_compressed(
        run / "coldstart_codes.npz",
        format_version=np.int64(1),
        r=np.int64(model.r),
        packed_rows=packed,
        zero_projection=np.array([bool(b.zero_projection[0]) for b in batches]),
    )
    text = "\n".join(
        " ".join(f"{int(v):+d}" for v in codes[:, i]) for i in range(codes.shape[1])
    )
    atomic_write_text(run / "coldstart_codes.txt", text + ("\n" if text else ""))
    return [run / "coldstart_codes.npz", run / "coldstart_codes.txt"]


def _grid_points(config: RunConfig) -> list:
    alphas = config.grid_alpha or [config.hyper.alpha]
    betas = config.grid_beta or [config.hyper.beta]
    gammas = config.grid_gamma or [config.hyper.gamma]
    seen = []
    for point in itertools.product(alphas, betas, gammas):
        if point not in seen:
            seen.append(point)
    return seen


def _grid_cell(args):
    config_path, overrides, point = args
    config = load_config(config_path, overrides)
    alpha, beta, gamma = point
    d = config.hyper.to_dict()
    d.update({"alpha": alpha, "beta": beta, "gamma": gamma})
    from .solver import Hyperparams

    config.hyper = Hyperparams.from_dict(d)
    dataset = _load_cache(config)
    model, _ = train_one_split(config, dataset, split=0)
    spec = SplitSpec(config.cold_fraction, seed=config.split_seed(0))
    _, test_ds = split_cold_start(dataset, spec)
    codes = cold_user_codes(model, test_ds)
    report = accuracy_at_k(model, codes, test_ds, config.ks, _positive_rule(config))
    return point, report.accuracy_at_k


def cmd_grid(config: RunConfig, config_path=None, overrides=None) -> Path:
    points = _grid_points(config)
    if not points:
        raise ConfigError("empty grid")
    workers = int(os.environ.get(WORKERS_ENV, "1"))
    jobs = [(config_path, dict(overrides or {}), p) for p in points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_grid_cell, jobs))
    else:
        results = [_grid_cell(job) for job in jobs]

    ks = config.ks
    lines = [
        "# format_version: 1",
        f"# config: {json.dumps(config.echo(), sort_keys=True)}",
        "alpha,beta,gamma," + ",".join(f"accuracy_at_{k}" for k in ks),
    ]
    for (alpha, beta, gamma), acc in results:
        lines.append(
            f"{alpha:.10g},{beta:.10g},{gamma:.10g},"
            + ",".join(f"{acc[k]:.10g}" for k in ks)
        )
    path = _run_dir(config) / "grid.csv"
    atomic_write_text(path, "\n".join(lines) + "\n")
    return path


def cmd_bench(config: RunConfig) -> Path:
    dataset = _load_cache(config)
    d = config.hyper.to_dict()
    d["o"] = config.bench_svd_rank
    from .solver import Hyperparams

    records = bench_scaling(
        dataset,
        code_lengths=config.bench_code_lengths,
        fractions=config.bench_fractions,
        fixed_r=config.bench_fixed_r,
        base_hyper=Hyperparams.from_dict(d),
        target_dim=config.bench_target_dim,
        warmup=config.bench_warmup,
        timed=config.bench_timed,
        seed=config.hyper.seed,
    )
    path = _run_dir(config) / "bench.csv"
    write_bench_csv(path, records, config.echo())
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hashcf",
        description="Multi-view binary hash codes for cold-start recommendation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in [
        ("prepare", "parse raw dumps into the versioned cache"),
        ("train", "fit one model per cold-start split"),
        ("coldstart", "hash codes for new user records"),
        ("eval", "Accuracy@k per split, with baselines"),
        ("grid", "balance-parameter sweep"),
        ("bench", "per-iteration timing sweeps"),
    ]:
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--dataset", type=str, default=None,
                       choices=["movielens-1m", "bookcrossing"])
        p.add_argument("--bits", type=int, default=None, help="code length r")
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--beta", type=float, default=None)
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--lambda", dest="lam", type=float, default=None)
        p.add_argument("--rank-budget", type=int, default=None)
        p.add_argument("--svd-rank", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=str, default=None, help="output directory")
        if name == "train":
            p.add_argument("--split-index", type=int, default=None)
        if name == "coldstart":
            p.add_argument("--model", type=str, required=True)
            p.add_argument("--users", type=str, required=True,
                           help="JSON-lines user records")
    return parser


def _overrides_from(args) -> dict:
    return {
        "dataset": args.dataset,
        "r": args.bits,
        "alpha": args.alpha,
        "beta": args.beta,
        "gamma": args.gamma,
        "lambda": args.lam,
        "rank_budget": args.rank_budget,
        "o": args.svd_rank,
        "seed": args.seed,
        "out": args.out,
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = _overrides_from(args)
    try:
        config = load_config(args.config, overrides)
        if args.command == "prepare":
            stats = cmd_prepare(config)
            print(json.dumps({k: stats[k] for k in
                              ("name", "users", "items", "ratings", "sparsity_pct", "cache_hit")}))
        elif args.command == "train":
            for path in cmd_train(config, split_index=args.split_index):
                print(path)
        elif args.command == "coldstart":
            for path in cmd_coldstart(config, args.model, args.users):
                print(path)
        elif args.command == "eval":
            for path in cmd_eval(config):
                print(path)
        elif args.command == "grid":
            print(cmd_grid(config, config_path=args.config, overrides=overrides))
        elif args.command == "bench":
            print(cmd_bench(config))
    except HashcfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
