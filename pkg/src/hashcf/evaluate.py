"""Hamming-space retrieval metrics, sanity baselines, and benchmarks.

Scoring runs on bit-packed codes with a popcount table; the agreement
b.d equals r minus twice the Hamming distance, so rankings match float
inner products exactly (integer arithmetic, no tolerance).
"""

from __future__ import annotations

import json
import resource
import time
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset, subsample_users
from .encoders import prepare_views
from .errors import ParameterError
from .solver import Hyperparams, TrainedModel, train

REPORT_FORMAT_VERSION = 1

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def pack_codes(codes) -> np.ndarray:
    """Pack +/-1 codes (r x n, +1 -> bit 1) into per-column byte rows
    (n x ceil(r/8), little-endian bit order).  A bare vector packs as a
    single code."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim == 1:
        codes = codes[:, None]
    return np.packbits((codes.T > 0).astype(np.uint8), axis=1, bitorder="little")


def packed_agreements(packed_b: np.ndarray, packed_D: np.ndarray, r: int) -> np.ndarray:
    """Integer inner products b.d_j from packed rows via popcount."""
    dist = _POPCOUNT[np.bitwise_xor(packed_b[None, :], packed_D)].sum(axis=1)
    return r - 2 * dist


def hamming_score(b, d) -> float:
    """Similarity in [0, 1]: 1/2 + b.d / (2r), computed over packed bits."""
    b = np.asarray(b, dtype=np.float64).ravel()
    d = np.asarray(d, dtype=np.float64).ravel()
    if b.shape != d.shape:
        raise ParameterError(f"code lengths differ: {b.shape[0]} vs {d.shape[0]}")
    r = b.shape[0]
    agree = packed_agreements(pack_codes(b)[0], pack_codes(d), r)[0]
    return 0.5 + agree / (2.0 * r)


def rank_items(b, D, exclude=()) -> np.ndarray:
    """All items ordered by descending Hamming similarity to ``b``; ties
    break on ascending item index; ``exclude`` drops from the ranking."""
    b = np.asarray(b, dtype=np.float64).ravel()
    r, m = D.shape
    scores = packed_agreements(pack_codes(b)[0], pack_codes(D), r)
    if len(exclude):
        scores = scores.copy()
        scores[np.fromiter(exclude, dtype=np.int64)] = -r - 1
    order = np.argsort(-scores, kind="stable")
    if len(exclude):
        order = order[: m - len(set(exclude))]
    return order


def top_k_items(b, D, k: int, exclude=()) -> np.ndarray:
    """The k items with the highest Hamming similarity to ``b``."""
    m = D.shape[1]
    if k > m - len(set(exclude)):
        raise ParameterError(f"k={k} exceeds {m - len(set(exclude))} rankable items")
    return rank_items(b, D, exclude)[:k]


@dataclass(frozen=True)
class PositiveRule:
    """Which test ratings count as relevant.

    ``threshold`` keeps explicit ratings at or above it; ``count_implicit``
    additionally keeps implicit-feedback entries (stored rating 0).
    """

    threshold: float
    count_implicit: bool = False

    def matches(self, values: np.ndarray) -> np.ndarray:
        mask = values >= self.threshold
        if self.count_implicit:
            mask = mask | (values == 0.0)
        return mask

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "count_implicit": self.count_implicit}


def positive_rule_for(dataset_name: str) -> PositiveRule:
    """Default relevance rules: MovieLens >= 4; BookCrossing explicit >= 7
    with implicit feedback counted as positive."""
    if dataset_name.startswith("bookcrossing"):
        return PositiveRule(threshold=7.0, count_implicit=True)
    return PositiveRule(threshold=4.0)


@dataclass
class EvalReport:
    accuracy_at_k: dict
    hits: dict
    n_test_cases: int
    per_split: list = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)
    method: str = "hashcf"

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "method": self.method,
            "accuracy_at_k": {str(k): v for k, v in self.accuracy_at_k.items()},
            "hits": {str(k): v for k, v in self.hits.items()},
            "n_test_cases": self.n_test_cases,
            "per_split": self.per_split,
            "config_echo": self.config_echo,
        }


def _hits_for_rankings(rankings, positives_by_user, ks):
    hits = dict.fromkeys(ks, 0)
    n_cases = 0
    for u, positives in positives_by_user.items():
        if len(positives) == 0:
            continue
        order = rankings(u)
        pos_rank = {int(i): rank for rank, i in enumerate(order.tolist())}
        n_cases += len(positives)
        for item in positives:
            rank = pos_rank.get(int(item))
            if rank is None:
                continue
            for k in ks:
                if rank < k:
                    hits[k] += 1
    return hits, n_cases


def _positives(test: Dataset, rule: PositiveRule) -> dict:
    mask = rule.matches(test.ratings.values)
    users = test.ratings.user_idx[mask]
    items = test.ratings.item_idx[mask]
    by_user = {}
    for u, i in zip(users.tolist(), items.tolist()):
        by_user.setdefault(u, []).append(i)
    return by_user


def accuracy_at_k(
    model: TrainedModel,
    coldcodes,
    test: Dataset,
    ks,
    positive_rule: PositiveRule,
    exclude_map=None,
    method: str = "hashcf",
) -> EvalReport:
    """Hit-rate report over the positive test cases.

    ``coldcodes`` holds one +/-1 column per test user (a ColdStartBatch or
    a bare r x n_u matrix).  ``exclude_map`` lists already-rated items to
    drop per user; cold users have none.
    """
    B_u = getattr(coldcodes, "B_u", coldcodes)
    if B_u.shape[1] != test.n_users:
        raise ParameterError("test users without codes")
    by_user = _positives(test, positive_rule)
    if not by_user:
        raise ParameterError("no positive test cases under the rule")
    packed_D = pack_codes(model.D)
    packed_B = pack_codes(B_u)
    r, m = model.D.shape

    def rankings(u):
        scores = packed_agreements(packed_B[u], packed_D, r)
        if exclude_map and len(exclude_map.get(u, ())):
            scores = scores.copy()
            scores[np.fromiter(exclude_map[u], dtype=np.int64)] = -r - 1
        return np.argsort(-scores, kind="stable")

    hits, n_cases = _hits_for_rankings(rankings, by_user, ks)
    return EvalReport(
        accuracy_at_k={k: hits[k] / n_cases for k in ks},
        hits=hits,
        n_test_cases=n_cases,
        config_echo={"positive_rule": positive_rule.to_dict(), "ks": list(ks)},
        method=method,
    )


def accuracy_for_ranker(
    ranker, test: Dataset, ks, positive_rule: PositiveRule, method: str
) -> EvalReport:
    """Same report for an arbitrary ranker: a callable user -> item order."""
    by_user = _positives(test, positive_rule)
    if not by_user:
        raise ParameterError("no positive test cases under the rule")
    hits, n_cases = _hits_for_rankings(ranker, by_user, ks)
    return EvalReport(
        accuracy_at_k={k: hits[k] / n_cases for k in ks},
        hits=hits,
        n_test_cases=n_cases,
        config_echo={"positive_rule": positive_rule.to_dict(), "ks": list(ks)},
        method=method,
    )


def baseline_random(seed: int, n_items: int):
    """Seeded per-user random permutation ranker."""

    def ranker(u):
        return np.random.default_rng([seed, u]).permutation(n_items)

    return ranker


def baseline_popularity(train: Dataset):
    """Items by descending training rating count, ties by index;
    user-independent."""
    counts = np.bincount(train.ratings.item_idx, minlength=train.n_items)
    order = np.lexsort((np.arange(train.n_items), -counts))

    def ranker(u):
        return order

    return ranker


@dataclass
class BenchRecord:
    code_length: int
    train_size_fraction: float
    seconds_per_iteration: float
    peak_rss_estimate: int

    def to_dict(self) -> dict:
        return {
            "code_length": self.code_length,
            "train_size_fraction": self.train_size_fraction,
            "seconds_per_iteration": self.seconds_per_iteration,
            "peak_rss_estimate": self.peak_rss_estimate,
        }


def _timed_training(dataset, views, hyper, warmup, timed):
    seconds = []

    def sink(rec):
        if rec.iteration > warmup:
            seconds.append(rec.seconds)

    train(dataset, views, hyper.resolved(dataset.n_users, dataset.n_items), progress_sink=sink)
    if len(seconds) < timed:
        raise ParameterError("training stopped before the timed iterations")
    return float(np.mean(seconds))


def bench_scaling(
    dataset: Dataset,
    code_lengths=(8, 16, 32, 64, 128),
    fractions=(0.25, 0.5, 0.75, 1.0),
    fixed_r: int = 32,
    base_hyper: Hyperparams | None = None,
    target_dim: int = 16,
    warmup: int = 2,
    timed: int = 5,
    seed: int = 0,
) -> list[BenchRecord]:
    """Per-iteration wall time over a code-length sweep at full data and a
    user-fraction sweep at a fixed code length.

    Each measurement averages ``timed`` iterations after ``warmup``
    warm-up iterations.  ``peak_rss_estimate`` snapshots the process
    high-water mark (bytes) after the run.
    """
    base = base_hyper or Hyperparams()
    records = []
    views_full, _ = prepare_views(dataset, target_dim=target_dim)
    for r in code_lengths:
        hyper = _bench_hyper(base, r, warmup + timed)
        secs = _timed_training(dataset, views_full, hyper, warmup, timed)
        records.append(BenchRecord(r, 1.0, secs, _peak_rss_bytes()))
    for fraction in fractions:
        sub = subsample_users(dataset, fraction, seed=seed)
        views, _ = prepare_views(sub, target_dim=target_dim)
        hyper = _bench_hyper(base, fixed_r, warmup + timed)
        secs = _timed_training(sub, views, hyper, warmup, timed)
        records.append(BenchRecord(fixed_r, fraction, secs, _peak_rss_bytes()))
    return records


def _bench_hyper(base: Hyperparams, r: int, iters: int) -> Hyperparams:
    d = base.to_dict()
    d.update({"r": r, "max_iters": iters, "tol": 1e-30})
    return Hyperparams.from_dict(d)


def _peak_rss_bytes() -> int:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def write_json_report(path, payload: dict, config_echo: dict | None = None) -> None:
    doc = {"format_version": REPORT_FORMAT_VERSION}
    if config_echo is not None:
        doc["config_echo"] = config_echo
    doc.update(payload)
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_accuracy_csv(path, reports: list[EvalReport], config_echo: dict) -> None:
    """Plot-ready rows: k, accuracy, split, method.  Header comments carry
    the format version and config echo."""
    lines = [
        f"# format_version: {REPORT_FORMAT_VERSION}",
        f"# config: {json.dumps(config_echo, sort_keys=True)}",
        "k,accuracy,split,method",
    ]
    for split, report in enumerate(reports):
        for k in sorted(report.accuracy_at_k):
            lines.append(f"{k},{report.accuracy_at_k[k]:.10g},{split},{report.method}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_bench_csv(path, records: list[BenchRecord], config_echo: dict) -> None:
    lines = [
        f"# format_version: {REPORT_FORMAT_VERSION}",
        f"# config: {json.dumps(config_echo, sort_keys=True)}",
        "code_length,train_size_fraction,seconds_per_iteration,peak_rss_estimate",
    ]
    for rec in records:
        lines.append(
            f"{rec.code_length},{rec.train_size_fraction},"
            f"{rec.seconds_per_iteration:.10g},{rec.peak_rss_estimate}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def atomic_write_text(path, text: str) -> None:
    import os
    import tempfile

    dirname = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def mean_report(reports: list[EvalReport], method: str = "hashcf") -> EvalReport:
    """Arithmetic mean of accuracy across split reports."""
    if not reports:
        raise ParameterError("no reports to average")
    ks = sorted(reports[0].accuracy_at_k)
    acc = {k: float(np.mean([rep.accuracy_at_k[k] for rep in reports])) for k in ks}
    hits = {k: int(sum(rep.hits[k] for rep in reports)) for k in ks}
    return EvalReport(
        accuracy_at_k=acc,
        hits=hits,
        n_test_cases=sum(rep.n_test_cases for rep in reports),
        per_split=[rep.to_dict() for rep in reports],
        config_echo=reports[0].config_echo,
        method=method,
    )
