import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rocod.dataset import Dataset
from rocod.detector import ScoreReport
from rocod.evaluation import (
    LabeledRanking,
    MetricReport,
    default_top_n,
    evaluate,
    kth_neighbor_distances,
    knn_distance_baseline,
    ndcg_at_n,
    prc_auc,
    precision_at_n,
)


def _lr(order, outliers):
    return LabeledRanking(np.asarray(order), frozenset(outliers))


def _oracle_ap(hits):
    """Average precision by explicit walk over the ranked list."""
    found, total = 0, 0.0
    for pos, h in enumerate(hits, start=1):
        if h:
            found += 1
            total += found / pos
    return total / sum(hits)


class TestPrecision:
    def test_hand_count(self):
        # objects 0 and 1 of the outliers {0, 1, 2} in the top 4
        lr = _lr([5, 0, 7, 1, 2, 3, 4, 6, 8, 9], {0, 1, 2})
        assert precision_at_n(lr, 4) == 0.5

    def test_extremes(self):
        assert precision_at_n(_lr([1, 0, 2], {0, 1}), 2) == 1.0
        assert precision_at_n(_lr([2, 0, 1], {0, 1}), 1) == 0.0

    def test_range(self):
        for n in (0, 4):
            with pytest.raises(ValueError):
                precision_at_n(_lr([0, 1, 2], {0}), n)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 60), st.data())
    def test_full_depth_equals_base_rate(self, n, data):
        order = data.draw(st.permutations(range(n)))
        outliers = data.draw(st.sets(st.integers(0, n - 1), min_size=1))
        assert precision_at_n(_lr(order, outliers), n) == pytest.approx(len(outliers) / n)


class TestNdcg:
    def test_position_one_only(self):
        assert ndcg_at_n(_lr([0, 1, 2], {0}), 2) == 0.5

    def test_position_two_only(self):
        assert ndcg_at_n(_lr([1, 0, 2], {0}), 2) == 0.5

    def test_all_outliers(self):
        assert ndcg_at_n(_lr([0, 1, 2, 3], {0, 1, 2}), 3) == 1.0

    def test_none(self):
        assert ndcg_at_n(_lr([3, 0, 1, 2], {0}), 1) == 0.0

    def test_formula_oracle(self):
        rng = np.random.default_rng(0)
        order = rng.permutation(50)
        outliers = set(rng.choice(50, 8, replace=False).tolist())
        hits = [int(i in outliers) for i in order[:20]]
        dcg = hits[0] + sum(hits[i - 1] / math.log2(i) for i in range(2, 21))
        idcg = 1 + sum(1 / math.log2(i) for i in range(2, 21))
        assert ndcg_at_n(_lr(order, outliers), 20) == pytest.approx(dcg / idcg, rel=1e-14)


class TestPrcAuc:
    def test_perfect(self):
        assert prc_auc(_lr([2, 0, 1, 3], {2, 0})) == 1.0

    @pytest.mark.parametrize("k", [1, 2, 5, 10])
    def test_single_outlier_at_k(self, k):
        order = list(range(10))
        assert prc_auc(_lr(order, {order[k - 1]})) == pytest.approx(1 / k)

    def test_needs_outliers(self):
        with pytest.raises(ValueError):
            prc_auc(_lr([0, 1], set()))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 40), st.data())
    def test_matches_walk_oracle(self, n, data):
        order = data.draw(st.permutations(range(n)))
        outliers = data.draw(st.sets(st.integers(0, n - 1), min_size=1))
        lr = _lr(order, outliers)
        assert prc_auc(lr) == pytest.approx(_oracle_ap([i in outliers for i in order]), rel=1e-12)

    def test_reversed_is_minimum(self):
        n, m = 8, 3
        worst = min(_oracle_ap([i in combo for i in range(n)])
                    for combo in itertools.combinations(range(n), m))
        reversed_order = list(range(n))[::-1]
        assert prc_auc(_lr(reversed_order, {0, 1, 2})) == pytest.approx(worst)

    def test_random_ranking_band(self):
        rng = np.random.default_rng(1)
        n = 5000
        outliers = set(range(50))
        aucs = [prc_auc(_lr(rng.permutation(n), outliers)) for _ in range(20)]
        assert 0.001 <= np.mean(aucs) <= 0.05
        assert all(0.001 <= a <= 0.05 for a in aucs)


class TestLabeledRanking:
    def test_requires_permutation(self):
        with pytest.raises(ValueError):
            _lr([0, 0, 1], {0})

    def test_outliers_in_range(self):
        with pytest.raises(ValueError):
            _lr([0, 1], {2})

    def test_from_report(self):
        lr = LabeledRanking.from_report(ScoreReport.from_scores([0.1, 0.9, 0.5]), [1])
        np.testing.assert_array_equal(lr.order, [1, 2, 0])
        np.testing.assert_array_equal(lr.hits(), [True, False, False])

    def test_order_preserving_transform(self):
        scores = np.random.default_rng(2).random(30)
        a = LabeledRanking.from_report(ScoreReport.from_scores(scores), [1, 5, 9])
        b = LabeledRanking.from_report(ScoreReport.from_scores(np.exp(3 * scores) + 2), [1, 5, 9])
        assert evaluate(a, (10,)) == evaluate(b, (10,))


def test_perfect_report():
    lr = _lr([3, 4, 0, 1, 2], {3, 4})
    rep = evaluate(lr, (2,))
    assert rep.prc_auc == rep.precision_at[2] == rep.ndcg_at[2] == 1.0


def test_metric_report_outputs(tmp_path):
    rep = MetricReport(0.5, {100: 0.25}, {100: 0.75})
    rep.write_json(tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text()) == {
        "prc_auc": 0.5, "precision_at": {"100": 0.25}, "ndcg_at": {"100": 0.75},
    }
    rep.write_csv_row(tmp_path / "m.csv", "Synthetic", "ROCOD", 100)
    rep.write_csv_row(tmp_path / "m.csv", "Houses", "ROCOD", 100, append=True)
    assert (tmp_path / "m.csv").read_text().splitlines() == [
        "dataset,method,prc_auc,p@100,ndcg@100",
        "Synthetic,ROCOD,0.5,0.25,0.75",
        "Houses,ROCOD,0.5,0.25,0.75",
    ]


def test_evaluate_clamps_n():
    rep = evaluate(_lr([0, 1, 2], {0}), (100,))
    assert rep.precision_at == {3: pytest.approx(1 / 3)}


def test_default_top_n():
    assert default_top_n(500) == 100
    assert default_top_n(10) == 40
    assert default_top_n(10, 25) == 25


class TestKnn:
    def _sort_oracle(self, z, k):
        d = np.sqrt(((z[:, None, :] - z[None, :, :]) ** 2).sum(-1))
        return np.sort(d, axis=1)[:, k]

    def test_duplicate_gives_zero(self):
        z = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [3.0, 0.0]])
        d = kth_neighbor_distances(z, 1)
        assert d[1] == d[2] == 0.0

    def test_far_point_scores_highest(self):
        rng = np.random.default_rng(3)
        z = np.vstack([rng.normal(0, 0.01, (50, 3)), [[5.0, 5.0, 5.0]]])
        ds = Dataset(x=z[:, :2], y=z[:, 2:])
        assert knn_distance_baseline(ds, 5).order[0] == 50

    @pytest.mark.parametrize("method", ["brute", "kdtree"])
    def test_matches_sort_oracle(self, method):
        z = np.random.default_rng(4).random((200, 4))
        np.testing.assert_array_equal(kth_neighbor_distances(z, 5, method), self._sort_oracle(z, 5))

    def test_kdtree_equals_brute(self):
        z = np.random.default_rng(5).random((3000, 6))
        np.testing.assert_array_equal(
            kth_neighbor_distances(z, 30, "kdtree"), kth_neighbor_distances(z, 30, "brute")
        )

    def test_bad_k(self):
        z = np.zeros((5, 2))
        for k in (0, 5):
            with pytest.raises(ValueError):
                kth_neighbor_distances(z, k)
        with pytest.raises(ValueError):
            kth_neighbor_distances(np.random.default_rng(0).random((5, 2)), 2, "ball")
