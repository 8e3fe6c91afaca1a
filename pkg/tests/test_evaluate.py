"""Hamming scoring, ranking, hit rates, and baselines against brute-force
float oracles."""

import json

import numpy as np
import pytest

from hashcf.datasets import Dataset, RatingMatrix
from hashcf.errors import ParameterError
from hashcf.evaluate import (
    EvalReport,
    PositiveRule,
    accuracy_at_k,
    accuracy_for_ranker,
    baseline_popularity,
    baseline_random,
    hamming_score,
    mean_report,
    pack_codes,
    packed_agreements,
    positive_rule_for,
    rank_items,
    top_k_items,
    write_accuracy_csv,
    write_bench_csv,
    write_json_report,
    mean_report,
)
from hashcf.solver import Hyperparams, TrainedModel, sign_pm

from _synth import make_dataset


def random_codes(rng, r, n):
    return sign_pm(rng.standard_normal((r, n)))


def model_with_items(D):
    r = D.shape[0]
    return TrainedModel(W=[np.eye(r)], D=D, R=np.eye(r), B=np.ones((r, 1)),
                        hyper=Hyperparams(r=r, o=1))


class TestHammingScore:
    def test_identical_codes(self):
        b = np.array([1, -1, 1, 1, -1, 1, -1, -1], dtype=float)
        assert hamming_score(b, b) == 1.0

    def test_opposite_codes(self):
        b = np.array([1, -1, 1, 1], dtype=float)
        assert hamming_score(b, -b) == 0.0

    def test_orthogonal_codes(self):
        b = np.array([1, 1, -1, -1], dtype=float)
        d = np.array([1, -1, 1, -1], dtype=float)
        assert hamming_score(b, d) == 0.5

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            hamming_score(np.ones(4), np.ones(5))

    def test_complement_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            r = int(rng.integers(1, 40))
            b, d = random_codes(rng, r, 2).T
            assert hamming_score(b, d) + hamming_score(b, -d) == pytest.approx(1.0)

    def test_packed_equals_float_on_10k_pairs(self):
        rng = np.random.default_rng(1)
        r = 19  # not a byte multiple: padding must not leak
        B = random_codes(rng, r, 10_000)
        D = random_codes(rng, r, 10_000)
        packed_b = pack_codes(B)
        packed_d = pack_codes(D)
        for i in range(0, 10_000, 997):
            agree = packed_agreements(packed_b[i], packed_d[i : i + 1], r)[0]
            assert agree == int(B[:, i] @ D[:, i])
        # vectorized full check
        agrees = np.array(
            [packed_agreements(packed_b[i], packed_d[i : i + 1], r)[0] for i in range(10_000)]
        )
        np.testing.assert_array_equal(agrees, np.einsum("ri,ri->i", B, D).astype(int))


class TestTopK:
    def test_item_equal_to_query_ranks_first(self):
        rng = np.random.default_rng(2)
        D = random_codes(rng, 8, 20)
        b = D[:, 7].copy()
        top = top_k_items(b, D, k=1)
        assert hamming_score(b, D[:, top[0]]) == 1.0

    def test_k_equals_m_is_permutation(self):
        rng = np.random.default_rng(3)
        D = random_codes(rng, 6, 15)
        order = top_k_items(D[:, 0], D, k=15)
        assert sorted(order.tolist()) == list(range(15))

    def test_matches_bruteforce_float_ranking(self):
        rng = np.random.default_rng(4)
        D = random_codes(rng, 10, 64)
        b = random_codes(rng, 10, 1)[:, 0]
        ours = rank_items(b, D)
        scores = b @ D
        oracle = sorted(range(64), key=lambda j: (-scores[j], j))
        assert ours.tolist() == oracle

    def test_exclusion(self):
        rng = np.random.default_rng(5)
        D = random_codes(rng, 8, 10)
        b = D[:, 3].copy()
        top = top_k_items(b, D, k=3, exclude={3})
        assert 3 not in top.tolist()

    def test_k_too_large(self):
        rng = np.random.default_rng(6)
        D = random_codes(rng, 4, 5)
        with pytest.raises(ParameterError):
            top_k_items(D[:, 0], D, k=5, exclude={0})

    def test_ranking_by_score_equals_ranking_by_agreement(self):
        rng = np.random.default_rng(7)
        r = 12
        B = random_codes(rng, r, 100)
        D = random_codes(rng, r, 100)
        packed_d = pack_codes(D)
        for i in range(100):
            agree = packed_agreements(pack_codes(B[:, i])[0], packed_d, r)
            scores = np.array([hamming_score(B[:, i], D[:, j]) for j in range(100)])
            assert np.array_equal(np.argsort(-agree, kind="stable"),
                                  np.argsort(-scores, kind="stable"))


def tiny_test_dataset(positives):
    """Dataset whose ratings mark the given (user, item) pairs rating 5."""
    n = max(u for u, _ in positives) + 1
    m = 8
    ratings = RatingMatrix(
        shape=(n, m),
        user_idx=np.array([u for u, _ in positives]),
        item_idx=np.array([i for _, i in positives]),
        values=np.full(len(positives), 5.0),
        scale=(1.0, 5.0),
    )
    return Dataset(name="movielens-toy", user_ids=list(range(n)),
                   item_ids=list(range(m)), ratings=ratings)


class TestAccuracyAtK:
    def test_quarter_hit_rate(self):
        # 4 positive cases; codes place exactly one of them in top-1
        r = 4
        D = np.ones((r, 8))
        D[:, 0] = [1, 1, 1, 1]
        D[:, 1:] = -1
        D[0, 1] = 1
        test = tiny_test_dataset([(0, 0), (1, 1), (2, 2), (3, 3)])
        B_u = np.ones((r, 4))
        model = model_with_items(D)
        report = accuracy_at_k(model, B_u, test, ks=[1], positive_rule=PositiveRule(4.0))
        assert report.n_test_cases == 4
        assert report.accuracy_at_k[1] == 0.25

    def test_full_ranking_always_hits(self):
        rng = np.random.default_rng(8)
        D = random_codes(rng, 6, 8)
        test = tiny_test_dataset([(0, 2), (1, 5), (2, 7)])
        B_u = random_codes(rng, 6, 3)
        report = accuracy_at_k(model_with_items(D), B_u, test, ks=[8],
                               positive_rule=PositiveRule(4.0))
        assert report.accuracy_at_k[8] == 1.0

    def test_hand_enumerated_fixture(self):
        # five users, one positive each; construct codes so users 0-2 rank
        # their positive first and users 3-4 rank it last
        rng = np.random.default_rng(9)
        r = 8
        D = random_codes(rng, r, 8)
        positives = [(u, u) for u in range(5)]
        B_u = np.empty((r, 5))
        for u in range(3):
            B_u[:, u] = D[:, u]
        for u in (3, 4):
            B_u[:, u] = -D[:, u]
        test = tiny_test_dataset(positives)
        report = accuracy_at_k(model_with_items(D), B_u, test, ks=[1, 8],
                               positive_rule=PositiveRule(4.0))
        assert report.hits[1] == 3
        assert report.accuracy_at_k[1] == 3 / 5
        assert report.accuracy_at_k[8] == 1.0

    def test_monotone_in_k(self):
        rng = np.random.default_rng(10)
        D = random_codes(rng, 8, 8)
        test = tiny_test_dataset([(u, int(i)) for u, i in enumerate(rng.integers(0, 8, 6))])
        B_u = random_codes(rng, 8, 6)
        ks = [1, 2, 4, 6, 8]
        report = accuracy_at_k(model_with_items(D), B_u, test, ks=ks,
                               positive_rule=PositiveRule(4.0))
        accs = [report.accuracy_at_k[k] for k in ks]
        assert all(a <= b for a, b in zip(accs, accs[1:]))

    def test_exclusion_of_train_items(self):
        rng = np.random.default_rng(11)
        D = random_codes(rng, 8, 8)
        test = tiny_test_dataset([(0, 1)])
        B_u = D[:, 3:4].copy()  # item 3 would rank first
        rep_plain = accuracy_at_k(model_with_items(D), B_u, test, ks=[1],
                                  positive_rule=PositiveRule(4.0))
        rep_excl = accuracy_at_k(model_with_items(D), B_u, test, ks=[1],
                                 positive_rule=PositiveRule(4.0),
                                 exclude_map={0: [3]})
        assert rep_excl.accuracy_at_k[1] >= rep_plain.accuracy_at_k[1]

    def test_empty_positives_rejected(self):
        rng = np.random.default_rng(12)
        D = random_codes(rng, 4, 8)
        test = tiny_test_dataset([(0, 0)])
        with pytest.raises(ParameterError):
            accuracy_at_k(model_with_items(D), np.ones((4, 1)), test, ks=[1],
                          positive_rule=PositiveRule(9.0))


class TestPositiveRules:
    def test_movielens_default(self):
        rule = positive_rule_for("movielens-1m")
        np.testing.assert_array_equal(
            rule.matches(np.array([3.0, 4.0, 5.0])), [False, True, True]
        )

    def test_bookcrossing_counts_implicit(self):
        rule = positive_rule_for("bookcrossing")
        np.testing.assert_array_equal(
            rule.matches(np.array([0.0, 3.0, 7.0, 10.0])), [True, False, True, True]
        )


class TestBaselines:
    def test_random_close_to_k_over_m(self):
        rng = np.random.default_rng(13)
        m, k, n_users = 50, 5, 200
        test = tiny_test_dataset([(u, int(rng.integers(0, 8))) for u in range(n_users)])
        # widen the item space: rebuild with m items
        test.item_ids = list(range(m))
        test.ratings.shape = (n_users, m)
        ranker = baseline_random(seed=0, n_items=m)
        report = accuracy_for_ranker(ranker, test, ks=[k], positive_rule=PositiveRule(4.0),
                                     method="random")
        p = k / m
        sigma = (p * (1 - p) / n_users) ** 0.5
        assert abs(report.accuracy_at_k[k] - p) < 3 * sigma

    def test_random_deterministic_per_user(self):
        ranker = baseline_random(seed=3, n_items=10)
        np.testing.assert_array_equal(ranker(4), ranker(4))
        assert not np.array_equal(ranker(4), ranker(5))

    def test_popularity_user_independent_and_ordered(self):
        ds = make_dataset(n_users=10, n_items=6, seed=14)
        ranker = baseline_popularity(ds)
        np.testing.assert_array_equal(ranker(0), ranker(7))
        counts = np.bincount(ds.ratings.item_idx, minlength=6)
        order = ranker(0)
        assert all(counts[order[i]] >= counts[order[i + 1]] for i in range(5))

    def test_popularity_empty_train_is_index_order(self):
        ds = tiny_test_dataset([(0, 0)])
        ds.ratings = RatingMatrix(shape=(1, 8), user_idx=[], item_idx=[], values=[],
                                  scale=(1.0, 5.0))
        ranker = baseline_popularity(ds)
        np.testing.assert_array_equal(ranker(0), np.arange(8))


class TestBenchScaling:
    def test_repeated_runs_vary_under_20_percent(self):
        from threadpoolctl import threadpool_limits

        from hashcf.evaluate import bench_scaling
        from hashcf.solver import Hyperparams

        rng = np.random.default_rng(3)
        n, m = 5000, 1200
        triples = []
        for u in range(n):
            for it in rng.choice(m, size=30, replace=False).tolist():
                triples.append((u, it, float(rng.integers(1, 6))))
        ds = make_dataset(n_users=n, n_items=m, triples=triples, seed=2)

        def one():
            with threadpool_limits(limits=1):
                recs = bench_scaling(
                    ds, code_lengths=[32], fractions=[], fixed_r=32,
                    base_hyper=Hyperparams(o=8), target_dim=8,
                    warmup=2, timed=20, seed=0,
                )
            assert recs[0].seconds_per_iteration > 0
            assert recs[0].peak_rss_estimate > 0
            return recs[0].seconds_per_iteration

        vals = np.array([one() for _ in range(4)])
        assert np.std(vals) < 0.2 * np.mean(vals)


class TestReports:
    def test_mean_report(self):
        reports = [
            EvalReport(accuracy_at_k={2: 0.5}, hits={2: 1}, n_test_cases=2),
            EvalReport(accuracy_at_k={2: 0.7}, hits={2: 7}, n_test_cases=10),
        ]
        mean = mean_report(reports)
        assert mean.accuracy_at_k[2] == pytest.approx(0.6)
        assert mean.hits[2] == 8
        assert len(mean.per_split) == 2

    def test_csv_round_trip(self, tmp_path):
        report = EvalReport(accuracy_at_k={1: 0.25, 2: 0.5}, hits={1: 1, 2: 2},
                            n_test_cases=4)
        path = tmp_path / "acc.csv"
        write_accuracy_csv(path, [report], {"seed": 0})
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# format_version:")
        assert json.loads(lines[1].split("# config: ")[1]) == {"seed": 0}
        assert lines[2] == "k,accuracy,split,method"
        assert lines[3] == "1,0.25,0,hashcf"

    def test_json_report(self, tmp_path):
        path = tmp_path / "report.json"
        write_json_report(path, {"value": 1}, config_echo={"alpha": 2.0})
        doc = json.loads(path.read_text())
        assert doc["format_version"] == 1
        assert doc["config_echo"] == {"alpha": 2.0}
        assert not list(tmp_path.glob("*.tmp"))

    def test_bench_csv(self, tmp_path):
        from hashcf.evaluate import BenchRecord

        path = tmp_path / "bench.csv"
        write_bench_csv(path, [BenchRecord(8, 1.0, 0.5, 1024)], {})
        lines = path.read_text().splitlines()
        assert lines[-1] == "8,1.0,0.5,1024"
