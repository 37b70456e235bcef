import math

import numpy as np
import pytest

from otseq.fewshot import (
    Episode,
    EpisodeError,
    class_mean_distance,
    episode_accuracy,
    episode_loss,
    evaluate_benchmark,
    predict,
    predict_proba,
    query_loss,
    summarize,
)
from otseq.seqdist import agg_distance


def seq(v):
    """One-segment sequence whose only coordinate encodes an id."""
    return np.array([[float(v)]])


def scripted(table):
    """Stub metric reading distances from ``table[(support_id, query_id)]``."""
    return lambda s, q: table[(s[0, 0], q[0, 0])]


def label_metric(s, q):
    # support and query ids share the integer part when they share a class
    return 0.0 if int(s[0, 0]) == int(q[0, 0]) else 1.0


def toy_episode(n_way=3, k_shot=1, q=1):
    support = [(seq(c + 0.1 * k), c) for c in range(n_way) for k in range(k_shot)]
    query = [(seq(c + 0.5 + 0.01 * j), c) for c in range(n_way) for j in range(q)]
    return Episode(support=support, query=query, n_way=n_way, k_shot=k_shot, q_per_class=q)


class TestEpisode:
    def test_classes_in_first_appearance_order(self):
        ep = Episode(support=[(seq(1), "b"), (seq(2), "a")], query=[(seq(3), "a")], n_way=2, k_shot=1, q_per_class=1)
        assert ep.classes == ["b", "a"]

    def test_wrong_shot_count(self):
        with pytest.raises(EpisodeError):
            Episode(support=[(seq(1), 0), (seq(2), 0), (seq(3), 1)], query=[], n_way=2, k_shot=2, q_per_class=0)

    def test_unknown_query_label(self):
        with pytest.raises(EpisodeError):
            Episode(support=[(seq(1), 0), (seq(2), 1)], query=[(seq(3), 7)], n_way=2, k_shot=1, q_per_class=1)

    def test_wrong_way(self):
        with pytest.raises(EpisodeError):
            Episode(support=[(seq(1), 0), (seq(2), 1)], query=[], n_way=3, k_shot=1, q_per_class=0)


class TestClassMeanDistance:
    def test_one_shot_equals_pair_distance(self):
        ep = toy_episode(n_way=2)
        metric = scripted({(0.0, 9.0): 1.25, (1.0, 9.0): 4.0})
        np.testing.assert_array_equal(class_mean_distance(seq(9), ep, metric), [1.25, 4.0])

    def test_scripted_two_shot_means(self):
        ep = Episode(
            support=[(seq(1), 0), (seq(2), 0), (seq(3), 1), (seq(4), 1)],
            query=[(seq(9), 0)], n_way=2, k_shot=2, q_per_class=1,
        )
        metric = scripted({(1.0, 9.0): 1.0, (2.0, 9.0): 3.0, (3.0, 9.0): 2.0, (4.0, 9.0): 2.0})
        np.testing.assert_array_equal(class_mean_distance(seq(9), ep, metric), [2.0, 2.0])

    def test_identical_query_contributes_zero(self):
        rng = np.random.default_rng(0)
        a, b, c = (rng.standard_normal((3, 2)) for _ in range(3))
        ep = Episode(support=[(a, 0), (b, 0), (c, 1), (c + 1, 1)], query=[], n_way=2, k_shot=2, q_per_class=0)
        d = class_mean_distance(a, ep, agg_distance)
        assert d[0] == pytest.approx(agg_distance(b, a) / 2, abs=1e-15)


class TestProbabilities:
    def test_symmetric(self):
        np.testing.assert_allclose(predict_proba([2.5, 2.5]), [0.5, 0.5], rtol=1e-15)

    def test_ln3(self):
        np.testing.assert_allclose(predict_proba([0.0, math.log(3)]), [0.75, 0.25], rtol=1e-14)

    def test_shift_invariance(self):
        d = np.array([0.3, 1.7, 0.9])
        np.testing.assert_allclose(predict_proba(d + 123.4), predict_proba(d), atol=1e-12)

    def test_huge_distances_stay_finite(self):
        p = predict_proba([1e6, 0.0, 2e6])
        assert np.all(np.isfinite(p)) and p[1] == 1.0


class TestLoss:
    def test_ln3_loss(self):
        # the class at distance 0 is the true class; -ln 0.75
        assert query_loss([0.0, math.log(3)], 0) == pytest.approx(-math.log(0.75), rel=1e-14)
        assert -math.log(0.75) == pytest.approx(0.2877, abs=1e-4)

    def test_equidistant_five_way(self):
        assert query_loss([2.0] * 5, 3) == pytest.approx(math.log(5), rel=1e-14)

    def test_near_certain_query(self):
        ep = toy_episode(n_way=3)
        assert episode_loss(ep, lambda s, q: 0.0 if int(s[0, 0]) == int(q[0, 0]) else 1e6) == pytest.approx(0.0, abs=1e-12)

    def test_episode_loss_sums_queries(self):
        ep = toy_episode(n_way=5, q=2)
        assert episode_loss(ep, lambda s, q: 1.0) == pytest.approx(10 * math.log(5), rel=1e-14)


class TestPredict:
    def test_argmin(self):
        ep = toy_episode(n_way=3)
        rec = predict(seq(1.5), 1, ep, label_metric)
        assert rec.predicted_label == 1 and rec.correct
        assert int(np.argmax(rec.probabilities)) == int(np.argmin(rec.per_class_mean_distance))

    def test_tie_goes_to_first_class(self):
        ep = toy_episode(n_way=3)
        assert predict(seq(9), 2, ep, lambda s, q: 1.0).predicted_label == 0


class TestBenchmark:
    def test_perfect_metric(self):
        eps = [toy_episode(n_way=4, k_shot=2, q=3) for _ in range(5)]
        rep = evaluate_benchmark(eps, label_metric)
        assert rep.mean_accuracy == 1.0 and rep.ci95_halfwidth == 0.0 and rep.episode_count == 5

    def test_two_episode_ci(self):
        rep = summarize([1.0, 0.0])
        assert rep.mean_accuracy == 0.5
        assert rep.ci95_halfwidth == pytest.approx(1.96 * math.sqrt(0.5) / math.sqrt(2), abs=1e-12)
        assert rep.ci95_halfwidth == pytest.approx(0.98, abs=1e-12)

    def test_ci_formula(self):
        acc = np.random.default_rng(1).random(37)
        rep = summarize(acc)
        assert rep.ci95_halfwidth == pytest.approx(1.96 * np.std(acc, ddof=1) / math.sqrt(37), abs=1e-12)

    def test_random_guess_near_chance(self):
        rng = np.random.default_rng(2)
        eps = [toy_episode(n_way=5) for _ in range(1000)]
        rep = evaluate_benchmark(eps, lambda s, q: rng.random())
        assert abs(rep.mean_accuracy - 0.2) <= 0.05

    def test_threads_preserve_order(self):
        eps = []
        for i in range(20):
            # the first i % 3 queries carry the wrong class
            ep = toy_episode(n_way=3, q=1)
            query = [(x, (y + 1) % 3 if j < i % 3 else y) for j, (x, y) in enumerate(ep.query)]
            eps.append(Episode(support=ep.support, query=query, n_way=3, k_shot=1, q_per_class=1))
        rep1 = evaluate_benchmark(eps, label_metric, workers=4)
        rep2 = evaluate_benchmark(eps, label_metric)
        assert rep1 == rep2
        assert rep2.per_episode_accuracies[:3] == [1.0, 2 / 3, 1 / 3]

    def test_metric_swap_keeps_bookkeeping(self):
        eps = [toy_episode(n_way=3, q=2) for _ in range(4)]
        a = evaluate_benchmark(eps, label_metric, {"metric": "a"})
        b = evaluate_benchmark(eps, lambda s, q: 1.0, {"metric": "a"})
        assert a.episode_count == b.episode_count and a.config_snapshot == b.config_snapshot
        assert len(a.per_episode_accuracies) == len(b.per_episode_accuracies) == 4

    def test_episode_accuracy_fraction(self):
        ep = toy_episode(n_way=2, q=2)
        # always predicts class 0
        assert episode_accuracy(ep, lambda s, q: s[0, 0]) == 0.5

    def test_empty_stream(self):
        with pytest.raises(EpisodeError):
            evaluate_benchmark([], label_metric)
