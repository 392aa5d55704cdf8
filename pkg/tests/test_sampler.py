import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import er_graph, path_graph, star_graph
from sdgnn.errors import DataError
from sdgnn.graph_store import Graph, normalized_adjacency
from sdgnn.sampler import WalkConfig, build_theta0, estimate_row, sampling_probs, warm_up_phi
from sdgnn.store import SparseWeightStore
from sdgnn.transform import TransformParams, data_loss_grad, gd_step, with_l2

MODES = ("proportional_to_weight", "variance_optimal")


def _dense_estimate(na, z, cfg):
    ids, w = estimate_row(na, z, cfg)
    row = np.zeros(na.graph.num_nodes)
    row[ids] = w
    return row


def triangle():
    return Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])


class TestWalkConfig:
    @pytest.mark.parametrize("kw", [dict(hops=0, budgets=()), dict(hops=2, budgets=(3,)),
                                    dict(hops=1, budgets=(0,)), dict(hops=1, budgets=(1,), prob_mode="x")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            WalkConfig(**kw)


class TestSamplingProbs:
    @pytest.mark.parametrize("mode", MODES)
    def test_regular_graph_is_uniform(self, mode):
        g = Graph.from_edges(6, [(i, (i + 1) % 6) for i in range(6)])
        np.testing.assert_allclose(sampling_probs(normalized_adjacency(g), 2, mode), [0.5, 0.5])

    @pytest.mark.parametrize("mode", MODES)
    def test_path_middle(self, path3, mode):
        np.testing.assert_allclose(sampling_probs(normalized_adjacency(path3), 1, mode), [0.5, 0.5])

    @pytest.mark.parametrize("mode", MODES)
    def test_leaf_has_one_neighbour(self, mode):
        np.testing.assert_array_equal(sampling_probs(normalized_adjacency(star_graph(4)), 3, mode), [1.0])

    def test_variance_optimal_weights_by_row_norm(self):
        na = normalized_adjacency(path_graph(4))
        nbrs, w = na.row(1)
        expect = w * na.row_norms[nbrs]
        np.testing.assert_allclose(sampling_probs(na, 1, "variance_optimal"), expect / expect.sum())

    def test_isolated(self):
        na = normalized_adjacency(Graph.from_edges(3, [(0, 1)]))
        with pytest.raises(DataError):
            sampling_probs(na, 2, "variance_optimal")


class TestEstimateRow:
    def test_single_neighbour_is_exact(self):
        na = normalized_adjacency(star_graph(3))
        for seed in range(5):
            ids, w = estimate_row(na, 2, WalkConfig(1, (1,), seed=seed))
            np.testing.assert_array_equal(ids, [0])
            np.testing.assert_allclose(w, [1 / np.sqrt(3)], rtol=1e-15)

    def test_large_budget_converges(self, path3):
        na = normalized_adjacency(path3)
        ids, w = estimate_row(na, 1, WalkConfig(1, (10000,), "proportional_to_weight", seed=0))
        row = dict(zip(ids.tolist(), w.tolist()))
        assert abs(row[0] - 1 / np.sqrt(2)) < 0.05 / np.sqrt(2)

    def test_deterministic(self):
        na = normalized_adjacency(er_graph(20, 0.2, seed=1))
        cfg = WalkConfig(2, (3, 2), seed=7)
        a, b = estimate_row(na, 4, cfg), estimate_row(na, 4, cfg)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_ids_sorted_and_weights_positive(self):
        na = normalized_adjacency(er_graph(20, 0.2, seed=1))
        ids, w = estimate_row(na, 0, WalkConfig(2, (4, 4), seed=3))
        assert np.all(np.diff(ids) > 0) and np.all(w > 0)

    @pytest.mark.parametrize("mode", MODES)
    def test_triangle_two_hop_mean(self, mode):
        na = normalized_adjacency(triangle())
        exact = na.dense_power(2)[0]
        runs = np.array([_dense_estimate(na, 0, WalkConfig(2, (1, 1), mode, seed=s))
                         for s in range(1000, 1200)])
        se = runs.std(axis=0, ddof=1) / np.sqrt(len(runs))
        assert np.all(np.abs(runs.mean(axis=0) - exact) <= 3 * se + 1e-12)

    @settings(max_examples=8, deadline=None)
    @given(seed=st.integers(0, 1000), hops=st.integers(1, 2), mode=st.sampled_from(MODES))
    def test_unbiased(self, seed, hops, mode):
        g = er_graph(12, 0.35, seed=seed)
        na = normalized_adjacency(g)
        z = int(np.argmax(g.degrees))
        exact = na.dense_power(hops)[z]
        cfg = lambda s: WalkConfig(hops, (2,) * hops, mode, seed=s)
        runs = np.array([_dense_estimate(na, z, cfg(s)) for s in range(400)])
        se = runs.std(axis=0, ddof=1) / np.sqrt(len(runs))
        assert np.all(np.abs(runs.mean(axis=0) - exact) <= 4.5 * se + 1e-12)


class TestBuildTheta0:
    def test_one_hop_rows_with_full_budget_cover_neighbours(self, path3):
        na = normalized_adjacency(path3)
        store = build_theta0(na, WalkConfig(1, (1,)))
        np.testing.assert_array_equal(store.get(0)[0], [1])
        np.testing.assert_allclose(store.get(0)[1], [1 / np.sqrt(2)])

    def test_deterministic(self):
        na = normalized_adjacency(er_graph(30, 0.15, seed=2))
        cfg = WalkConfig(2, (4, 4), seed=11)
        assert build_theta0(na, cfg) == build_theta0(na, cfg)

    def test_truncation_keeps_largest_and_mass(self):
        na = normalized_adjacency(er_graph(30, 0.3, seed=4))
        cfg = WalkConfig(2, (6, 6), seed=0)
        full = build_theta0(na, cfg)
        cut = build_theta0(na, cfg, max_active=3)
        for z in range(30):
            ids, w = full.get(z)
            cids, cw = cut.get(z)
            assert cids.size == min(3, ids.size)
            if ids.size:
                assert cw.sum() == pytest.approx(w.sum())
                order = np.lexsort((ids, -w))[:3]
                np.testing.assert_array_equal(cids, np.sort(ids[order]))

    def test_subset_and_isolated(self):
        g = Graph.from_edges(4, [(0, 1), (1, 2)])
        store = build_theta0(normalized_adjacency(g), WalkConfig(1, (2,)), nodes=[1, 3])
        assert store.is_decomposed(1) and not store.is_decomposed(0)
        assert store.nnz(3) == 0


class TestWarmUp:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.g = er_graph(20, 0.25, seed=3)
        self.na = normalized_adjacency(self.g)
        self.X = rng.normal(size=(20, 4))
        self.omega = rng.normal(size=(20, 3))
        self.theta0 = build_theta0(self.na, WalkConfig(1, (4,), seed=1))
        self.p0 = TransformParams.init([4, 6, 3], seed=2)

    def _loss(self, p, theta):
        items = [(theta.ids[z], theta.weights[z], self.omega[z]) for z in range(20) if theta.nnz(z)]
        loss, gw, gb = data_loss_grad(p, items, self.X)
        return with_l2(p, loss, gw, gb, 1e-4).loss

    def test_zero_steps(self):
        p = warm_up_phi(self.p0, self.X, self.omega, self.theta0, 0, 1e-3, 1e-4)
        np.testing.assert_array_equal(p.flat(), self.p0.flat())

    def test_loss_non_increasing(self):
        p, losses = self.p0, [self._loss(self.p0, self.theta0)]
        for _ in range(10):
            p = warm_up_phi(p, self.X, self.omega, self.theta0, 1, 1e-3, 1e-4)
            losses.append(self._loss(p, self.theta0))
        assert np.all(np.diff(losses) <= 0)

    def test_identity_theta_is_mlp_regression(self):
        ident = SparseWeightStore.identity(20)
        got = warm_up_phi(self.p0, self.X, self.omega, ident, 3, 1e-3, 1e-4)

        def grad_fn(p):
            items = [([z], [1.0], self.omega[z]) for z in range(20)]
            loss, gw, gb = data_loss_grad(p, items, self.X)
            return with_l2(p, loss, gw, gb, 1e-4)
        want = gd_step(self.p0, grad_fn, 1e-3, 3)
        np.testing.assert_allclose(got.flat(), want.flat(), rtol=0, atol=1e-14)
