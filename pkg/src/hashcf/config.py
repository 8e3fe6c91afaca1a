"""Run configuration: JSON file plus command-line overrides.

Precedence is flags > file > defaults.  Unknown keys anywhere in the file
are rejected before any compute.  All randomness in a run flows from the
single configured seed through named streams, so each component (splits,
solver init, baselines) is independently reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .solver import Hyperparams

CONFIG_VERSION = 1

DEFAULT_KS = [2, 4, 6, 8, 10, 12, 14, 16, 18, 20]
GRID_RANGE = [1e-6, 1e-4, 1e-1, 1.0, 10.0, 1e3, 1e6]


def stream_seed(seed: int, name: str) -> int:
    """Deterministic child seed for a named randomness stream."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def _take(d: dict, allowed: dict, where: str) -> dict:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    merged = dict(allowed)
    merged.update(d)
    return merged


@dataclass
class RunConfig:
    dataset_name: str = "movielens-1m"
    data_paths: dict = field(default_factory=dict)
    output_dir: str = "out"
    hyper: Hyperparams = field(default_factory=Hyperparams)
    cold_fraction: float = 0.2
    repeats: int = 5
    ks: list = field(default_factory=lambda: list(DEFAULT_KS))
    positive_threshold: float | None = None
    count_implicit: bool | None = None
    interaction_dim: int = 128
    normalize_views: bool = True
    grid_alpha: list = field(default_factory=list)
    grid_beta: list = field(default_factory=list)
    grid_gamma: list = field(default_factory=list)
    bench_code_lengths: list = field(default_factory=lambda: [8, 16, 32, 64, 128])
    bench_fractions: list = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    bench_fixed_r: int = 32
    bench_warmup: int = 2
    bench_timed: int = 5
    bench_target_dim: int = 16
    bench_svd_rank: int | None = 16

    def validate(self) -> "RunConfig":
        if not (0.0 < self.cold_fraction < 1.0):
            raise ConfigError(f"cold_fraction={self.cold_fraction} outside (0, 1)")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if not self.ks or any(k < 1 for k in self.ks):
            raise ConfigError("ks must be positive")
        if self.interaction_dim < 1:
            raise ConfigError("interaction_dim must be >= 1")
        if self.dataset_name not in ("movielens-1m", "bookcrossing"):
            raise ConfigError(f"unknown dataset {self.dataset_name!r}")
        return self

    # named randomness streams
    def split_seed(self, index: int) -> int:
        return stream_seed(self.hyper.seed, f"split:{index}")

    def init_seed(self, index: int) -> int:
        return stream_seed(self.hyper.seed, f"init:{index}")

    def baseline_seed(self) -> int:
        return stream_seed(self.hyper.seed, "baselines")

    def hyper_for_split(self, index: int) -> Hyperparams:
        d = self.hyper.to_dict()
        d["seed"] = self.init_seed(index)
        return Hyperparams.from_dict(d)

    def echo(self) -> dict:
        return {
            "config_version": CONFIG_VERSION,
            "dataset": self.dataset_name,
            "hyper": self.hyper.to_dict(),
            "cold_fraction": self.cold_fraction,
            "repeats": self.repeats,
            "ks": self.ks,
            "positive_threshold": self.positive_threshold,
            "count_implicit": self.count_implicit,
            "interaction_dim": self.interaction_dim,
            "normalize_views": self.normalize_views,
        }

    def cache_path(self) -> Path:
        return Path(self.output_dir) / "cache" / f"{self.dataset_name}.npz"


_HYPER_DEFAULTS = {
    "alpha": 1e3,
    "beta": 10.0,
    "gamma": 1.0,
    "lambda": 1.0,
    "r": 32,
    "rank_budget": None,
    "o": None,
    "max_iters": 50,
    "tol": 1e-4,
    "seed": 0,
}


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a validated RunConfig from an optional JSON file and a flat
    dict of command-line overrides."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must hold a JSON object")

    top = _take(
        doc,
        {
            "dataset": {},
            "output_dir": "out",
            "hyper": {},
            "split": {},
            "eval": {},
            "features": {},
            "grid": {},
            "bench": {},
        },
        "config",
    )
    dataset = _take(
        top["dataset"] if isinstance(top["dataset"], dict) else {"name": top["dataset"]},
        {"name": "movielens-1m", "ratings": None, "users": None, "movies": None, "books": None},
        "dataset",
    )
    hyper_d = _take(top["hyper"], dict(_HYPER_DEFAULTS), "hyper")
    split = _take(top["split"], {"cold_fraction": 0.2, "repeats": 5}, "split")
    eval_d = _take(
        top["eval"],
        {"ks": list(DEFAULT_KS), "positive_threshold": None, "count_implicit": None},
        "eval",
    )
    features = _take(
        top["features"], {"interaction_dim": 128, "normalize": True}, "features"
    )
    grid = _take(top["grid"], {"alpha": [], "beta": [], "gamma": []}, "grid")
    for axis in ("alpha", "beta", "gamma"):
        if grid[axis] == "full":
            grid[axis] = list(GRID_RANGE)
    bench = _take(
        top["bench"],
        {
            "code_lengths": [8, 16, 32, 64, 128],
            "fractions": [0.25, 0.5, 0.75, 1.0],
            "fixed_r": 32,
            "warmup": 2,
            "timed": 5,
            "target_dim": 16,
            "svd_rank": 16,
        },
        "bench",
    )

    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    for key in ("alpha", "beta", "gamma", "lambda", "r", "rank_budget", "o",
                "max_iters", "tol", "seed"):
        if overrides.get(key) is not None:
            hyper_d[key] = overrides.pop(key)
    if overrides.get("dataset") is not None:
        dataset["name"] = overrides.pop("dataset")
    output_dir = overrides.pop("out", None) or top["output_dir"]
    if overrides.get("cold_fraction") is not None:
        split["cold_fraction"] = overrides.pop("cold_fraction")
    overrides.pop("cold_fraction", None)
    if overrides:
        raise ConfigError(f"unhandled overrides: {sorted(overrides)}")

    paths = {k: dataset[k] for k in ("ratings", "users", "movies", "books") if dataset[k]}
    try:
        hyper = Hyperparams.from_dict(hyper_d)
    except Exception as exc:
        raise ConfigError(f"bad hyperparameters: {exc}") from exc

    return RunConfig(
        dataset_name=dataset["name"],
        data_paths=paths,
        output_dir=str(output_dir),
        hyper=hyper,
        cold_fraction=float(split["cold_fraction"]),
        repeats=int(split["repeats"]),
        ks=[int(k) for k in eval_d["ks"]],
        positive_threshold=eval_d["positive_threshold"],
        count_implicit=eval_d["count_implicit"],
        interaction_dim=int(features["interaction_dim"]),
        normalize_views=bool(features["normalize"]),
        grid_alpha=list(grid["alpha"]),
        grid_beta=list(grid["beta"]),
        grid_gamma=list(grid["gamma"]),
        bench_code_lengths=[int(r) for r in bench["code_lengths"]],
        bench_fractions=[float(f) for f in bench["fractions"]],
        bench_fixed_r=int(bench["fixed_r"]),
        bench_warmup=int(bench["warmup"]),
        bench_timed=int(bench["timed"]),
        bench_target_dim=int(bench["target_dim"]),
        bench_svd_rank=bench["svd_rank"],
    ).validate()
