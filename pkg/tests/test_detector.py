import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rocod.dataset import Dataset
from rocod.detector import (
    ScoreReport,
    attribute_weights,
    ensemble,
    neighbor_weights,
    r_squared,
    rank_order,
    score,
    top_n,
)
from rocod.global_model import fit_global
from rocod.local_model import LocalExpectation, NeighborTable, find_neighbors, local_expected

from .toy import sparse_context_toy


def _table(counts, b=1):
    counts = np.asarray(counts, dtype=np.int64)
    return NeighborTable(counts=counts, sums=np.zeros((counts.size, b)), alpha=0.5, mode="exact")


def _local(values, counts):
    values = np.asarray(values, dtype=float)
    defined = np.asarray(counts) > 0
    values = np.where(defined[:, None], values, np.nan)
    return LocalExpectation(values=values, defined=defined)


class TestNeighborWeights:
    def test_square_root_ratio(self):
        np.testing.assert_allclose(neighbor_weights([4, 16, 0, 1]), [0.5, 1.0, 0.0, 0.25])

    def test_no_neighbors_anywhere(self):
        np.testing.assert_array_equal(neighbor_weights([0, 0, 0]), 0.0)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.int64, st.integers(1, 50), elements=st.integers(0, 10**6)))
    def test_range_and_monotone(self, counts):
        lam = neighbor_weights(counts)
        assert np.all((lam >= 0) & (lam <= 1))
        order = np.argsort(counts, kind="stable")
        assert np.all(np.diff(lam[order]) >= 0)
        if counts.max() > 0:
            assert lam[np.argmax(counts)] == 1.0


class TestEnsemble:
    def setup_method(self):
        self.ds = Dataset(x=np.zeros((3, 1)) + [[0.1], [0.5], [0.9]], y=np.zeros((3, 2)))
        self.psi = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        self.phi = np.array([[9.0, 9.0], [0.0, 4.0], [5.0, 5.0]])

    def test_blend(self):
        counts = [0, 4, 16]
        ee = ensemble(self.ds, _local(self.phi, counts), self.psi, _table(counts, 2))
        np.testing.assert_array_equal(ee.lam, [0.0, 0.5, 1.0])
        np.testing.assert_array_equal(ee.y_hat[0], self.psi[0])
        np.testing.assert_allclose(ee.y_hat[1], [1.0, 3.0])
        np.testing.assert_array_equal(ee.y_hat[2], self.phi[2])

    def test_all_isolated_is_pure_global(self):
        counts = [0, 0, 0]
        ee = ensemble(self.ds, _local(self.phi, counts), self.psi, _table(counts, 2))
        np.testing.assert_array_equal(ee.y_hat, self.psi)
        assert not np.isnan(ee.y_hat).any()

    def test_ablations(self):
        counts = [0, 4, 16]
        loc = ensemble(self.ds, _local(self.phi, counts), self.psi, _table(counts, 2), weighting="local")
        np.testing.assert_array_equal(loc.y_hat, [[1, 1], [0, 4], [5, 5]])
        glob = ensemble(self.ds, _local(self.phi, counts), self.psi, _table(counts, 2), weighting="global")
        np.testing.assert_array_equal(glob.y_hat, self.psi)
        with pytest.raises(ValueError):
            ensemble(self.ds, _local(self.phi, counts), self.psi, _table(counts, 2), weighting="mix")

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ensemble(self.ds, _local(self.phi, [1, 1, 1]), self.psi[:, :1], _table([1, 1, 1], 2))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**16))
    def test_convexity(self, seed):
        rng = np.random.default_rng(seed)
        n = 30
        ds = Dataset(x=rng.random((n, 2)), y=rng.random((n, 3)))
        counts = rng.integers(0, 20, n)
        phi, psi = rng.random((n, 3)), rng.random((n, 3))
        ee = ensemble(ds, _local(phi, counts), psi, _table(counts, 3))
        d = counts > 0
        lo, hi = np.minimum(phi, psi), np.maximum(phi, psi)
        assert np.all(ee.y_hat[d] >= lo[d] - 1e-15) and np.all(ee.y_hat[d] <= hi[d] + 1e-15)
        np.testing.assert_array_equal(ee.y_hat[~d], psi[~d])


class TestWeights:
    def test_perfect(self):
        y = np.array([[0.0], [1.0], [2.0]])
        np.testing.assert_array_equal(r_squared(y, y), [1.0])

    def test_mean_predictor(self):
        y = np.array([[0.0], [1.0], [2.0]])
        assert r_squared(y, np.full_like(y, 1.0))[0] == pytest.approx(0.0, abs=1e-15)

    def test_negative_clamped(self):
        y = np.array([[-1.0], [0.0], [1.0]])
        ds = Dataset(x=np.ones((3, 1)), y=y)
        counts = [0, 0, 0]
        ee = ensemble(ds, _local(np.zeros((3, 1)), counts), -y, _table(counts))
        aw = attribute_weights(ds, ee)
        assert aw.r2[0] == pytest.approx(-3.0)
        assert aw.weights[0] == 0.0

    def test_constant_attribute(self):
        y = np.column_stack([np.full(4, 0.3), np.arange(4.0)])
        ds = Dataset(x=np.ones((4, 1)), y=y)
        ee = ensemble(ds, _local(np.zeros((4, 2)), [0] * 4), y.copy(), _table([0] * 4, 2))
        aw = attribute_weights(ds, ee)
        assert np.isnan(aw.r2[0])
        np.testing.assert_array_equal(aw.weights, [0.0, 1.0])

    def test_formula_oracle(self):
        rng = np.random.default_rng(3)
        y, y_hat = rng.random((40, 3)), rng.random((40, 3))
        for j in range(3):
            ss_res = sum((a - b) ** 2 for a, b in zip(y[:, j], y_hat[:, j]))
            m = sum(y[:, j]) / 40
            ss_tot = sum((a - m) ** 2 for a in y[:, j])
            assert r_squared(y, y_hat)[j] == pytest.approx(1 - ss_res / ss_tot, rel=1e-12)


def _scored(y, y_hat, w, variant="diagonal"):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    ds = Dataset(x=np.ones((y.shape[0], 1)), y=y)
    counts = np.zeros(y.shape[0], dtype=np.int64)
    ee = ensemble(ds, _local(np.zeros_like(y), counts), np.atleast_2d(y_hat), _table(counts, y.shape[1]))
    return score(ds, ee, np.asarray(w, dtype=float), variant)


class TestScore:
    def test_zero_residual(self):
        assert _scored([[0.4, 0.2]], [[0.4, 0.2]], [1, 1]).scores[0] == 0.0

    def test_unweighted_is_l2(self):
        rep = _scored([[3.0, 4.0]], [[0.0, 0.0]], [1, 1])
        assert rep.scores[0] == pytest.approx(5.0)

    def test_zero_weight_ignored(self):
        assert _scored([[0.3, 9.9]], [[0.0, 0.0]], [1, 0]).scores[0] == pytest.approx(0.3)

    def test_scalar_variant(self):
        rep = _scored([[0.3, -0.3]], [[0.0, 0.0]], [1, 1], variant="scalar")
        assert rep.scores[0] == pytest.approx(0.0)
        assert _scored([[0.3, -0.3]], [[0.0, 0.0]], [1, 1]).scores[0] == pytest.approx(0.3 * np.sqrt(2))
        with pytest.raises(ValueError):
            _scored([[0.0]], [[0.0]], [1], variant="cubic")

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**16), st.just(0.0) | st.floats(1e-6, 100))
    def test_homogeneity_and_nullity(self, seed, c):
        rng = np.random.default_rng(seed)
        resid = rng.standard_normal((25, 3))
        w = rng.random(3)
        w[1] = 0.0
        base = _scored(resid, np.zeros_like(resid), w)
        scaled = _scored(c * resid, np.zeros_like(resid), w)
        np.testing.assert_allclose(scaled.scores, c * base.scores, rtol=1e-12, atol=1e-300)
        if c > 0:
            np.testing.assert_array_equal(scaled.order, base.order)
        noisy = resid.copy()
        noisy[:, 1] = rng.standard_normal(25) * 1e3
        np.testing.assert_array_equal(_scored(noisy, np.zeros_like(noisy), w).scores, base.scores)


class TestRanking:
    def test_tie_break_by_index(self):
        rep = ScoreReport.from_scores([0.9, 0.1, 0.9])
        np.testing.assert_array_equal(top_n(rep, 2), [0, 2])
        np.testing.assert_array_equal(rep.ranks, [1, 3, 2])

    def test_top_n_bounds(self):
        rep = ScoreReport.from_scores([0.5, 0.2, 0.7])
        np.testing.assert_array_equal(top_n(rep, 3), [2, 0, 1])
        np.testing.assert_array_equal(top_n(rep, 1), [2])
        for n in (0, 4):
            with pytest.raises(ValueError):
                top_n(rep, n)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(1, 40), elements=st.sampled_from([0.0, 0.5, 1.0, 2.0])))
    def test_ranks_are_permutation(self, scores):
        rep = ScoreReport.from_scores(scores)
        assert sorted(rep.ranks.tolist()) == list(range(1, scores.size + 1))
        ordered = scores[rep.order]
        assert np.all(np.diff(ordered) <= 0)
        for a, b in zip(rep.order[:-1], rep.order[1:]):
            if scores[a] == scores[b]:
                assert a < b
        np.testing.assert_array_equal(rank_order(scores), rep.order)

    def test_csv_round_trip(self, tmp_path):
        rep = ScoreReport.from_scores([0.25, 0.75, 0.25, 0.1])
        rep.write_csv(tmp_path / "s.csv", n=2)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "index,score,rank,is_flagged_top_n"
        assert lines[1:] == ["0,0.25,2,1", "1,0.75,1,1", "2,0.25,3,0", "3,0.1,4,0"]
        back = ScoreReport.read_csv(tmp_path / "s.csv")
        np.testing.assert_array_equal(back.scores, rep.scores)
        np.testing.assert_array_equal(back.order, rep.order)


def test_end_to_end_components():
    rng = np.random.default_rng(0)
    x = rng.random((300, 3))
    y = np.column_stack([x[:, 0] + 0.01 * rng.standard_normal(300), rng.random(300)])
    ds = Dataset(x=x, y=y)
    nt = find_neighbors(ds, 0.99, mode="exact")
    ee = ensemble(ds, local_expected(ds, nt), fit_global(ds, "linear"), nt)
    aw = attribute_weights(ds, ee)
    assert aw.weights[0] > 0.8 and aw.weights[1] < 0.2
    rep = score(ds, ee, aw)
    assert np.all(rep.scores >= 0)
    assert rep.summary()["neighbor_count_max"] == int(nt.counts.max())


def test_sparse_context_points_rank_below_off_trend_points():
    from rocod.pipeline import detect

    toy = sparse_context_toy()
    ranks = detect(toy.dataset).report.ranks
    a, b, c, d = (ranks[toy.points[k]] for k in "ABCD")
    assert max(c, d) < min(a, b)
