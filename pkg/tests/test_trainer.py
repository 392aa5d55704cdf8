import numpy as np
import pytest

from conftest import er_graph
from sdgnn.candidates import CandidateConfig, build_all
from sdgnn.errors import DataError, TrainingAborted
from sdgnn.store import SparseWeightStore
from sdgnn.targets import SageParams, sage_forward
from sdgnn.trainer import (Schedule, TrainConfig, equalize, fit, fit_multi, objective,
                           objective_dense, objective_multi, reconstruct)
from sdgnn.transform import TransformParams, forward_matrix


def _data_term(params, store, X, omega):
    r = reconstruct(params, store, X) - omega
    return 0.5 * float(np.sum(r * r))


@pytest.fixture(scope="module")
def small():
    g = er_graph(30, 0.15, seed=0)
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 6))
    omega = sage_forward(g, X, SageParams.init([6, 4, 4], seed=2))
    return g, X, omega


def _cfg(**kw):
    base = dict(lambda1=0.05, lambda2=1e-4, max_active=6, batch_size=10, outer_iters=6,
                phi_steps=3, lr=1e-3, candidate_cfg=CandidateConfig(k1=1))
    base.update(kw)
    return TrainConfig(**base)


class TestSchedule:
    def test_formula(self):
        s = Schedule(start=10, every=3, by=2, floor=4)
        assert [s.at(t) for t in range(0, 13, 3)] == [10, 8, 6, 4, 4]
        assert s.at(2) == 10

    @pytest.mark.parametrize("args", [(0, 1, 1), (5, 0, 1), (5, 1, -1), (5, 1, 1, 0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            Schedule(*args)

    def test_effective_cap(self):
        assert _cfg().effective_max_active(100) == 6
        assert _cfg(schedule=Schedule(6, 2, 1, 2)).effective_max_active(4) == 4


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(lambda1=-1), dict(max_active=0), dict(lr=-1.0),
                                    dict(train_subset_fraction=0.0), dict(warmup_steps=5)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            _cfg(**kw)


class TestObjective:
    def test_zero_theta_zero_weights(self, small):
        g, X, omega = small
        p = TransformParams.linear(np.zeros((6, 4)))
        val = objective(g, X, omega, p, SparseWeightStore.zeros(30), 0.3, 0.7)
        assert val == 0.5 * np.sum(omega ** 2)

    def test_perfect_fit(self, small):
        g, X, _ = small
        p = TransformParams.identity(6)
        assert objective(g, X, X, p, SparseWeightStore.identity(30), 0.0, 0.0) == 0.0

    def test_identity_theta_is_mlp_distillation(self, small):
        g, X, omega = small
        p = TransformParams.init([6, 5, 4], seed=3)
        phi = forward_matrix(p, X)
        expected = 0.5 * float(np.sum((phi - omega) * (phi - omega))) + 0.2 * 30 + 0.01 * p.weight_sq_norm()
        assert objective(g, X, omega, p, SparseWeightStore.identity(30), 0.2, 0.01) == expected

    @pytest.mark.parametrize("seed", range(4))
    def test_sparse_matches_dense(self, seed):
        g = er_graph(20, 0.2, seed=seed)
        rng = np.random.default_rng(seed)
        X, omega = rng.normal(size=(20, 5)), rng.normal(size=(20, 3))
        p = TransformParams.init([5, 4, 3], "tanh", seed=seed)
        store = SparseWeightStore(20)
        for z in range(20):
            k = rng.integers(0, 5)
            store.set(z, rng.choice(20, size=k, replace=False), rng.uniform(0.1, 2.0, k))
        a = objective(g, X, omega, p, store, 0.1, 0.01)
        b = objective_dense(X, omega, p, store, 0.1, 0.01)
        assert abs(a - b) <= 1e-9 * max(1.0, abs(b))

    def test_duplicated_snapshot_doubles_data_term(self, small):
        g, X, omega = small
        p, store, _ = fit(g, X, omega, _cfg())
        single = objective_multi([(X, omega)], p, store, 0.0, 0.0)
        assert objective_multi([(X, omega), (X, omega)], p, store, 0.0, 0.0) == 2 * single

    def test_node_count_mismatch(self, small):
        g, X, omega = small
        with pytest.raises(DataError):
            objective(g, X[:5], omega[:5], TransformParams.identity(6), SparseWeightStore(5), 0, 0)


class TestEqualize:
    def test_mass_rule(self):
        s = SparseWeightStore.from_dense(np.array([[0.5], [0.0], [1.5]]).repeat(3, axis=1))
        out = equalize(s)
        np.testing.assert_array_equal(out.to_dense()[:, 0], [1.0, 0.0, 1.0])

    def test_unit_rule(self):
        s = SparseWeightStore(1)
        s.set(0, [0], [4.0])
        assert equalize(s, "unit").get(0)[1].tolist() == [1.0]

    def test_single_and_empty_and_missing(self):
        s = SparseWeightStore(3)
        s.set(0, [2], [0.7])
        s.set(1, [], [])
        out = equalize(s)
        assert out.get(0)[1].tolist() == [0.7]
        assert out.nnz(1) == 0 and not out.is_decomposed(2)

    def test_learned_weights_fit_at_least_as_well(self, small):
        g, X, omega = small
        p, store, _ = fit(g, X, omega, _cfg(max_active=64))
        eq = equalize(store)
        assert store.l1() == pytest.approx(eq.l1())
        assert _data_term(p, eq, X, omega) >= _data_term(p, store, X, omega) - 1e-9


class TestFit:
    def test_identity_representation(self):
        g = er_graph(30, 0.1, seed=5)
        X = np.random.default_rng(0).normal(size=(30, 16))
        cfg = _cfg(lambda1=0.0, lambda2=0.0, max_active=8, outer_iters=5)
        p, store, report = fit(g, X, X, cfg, init_params=TransformParams.identity(16))
        assert _data_term(p, store, X, X) <= 1e-6
        assert report.final_mean_nnz <= 2

    def test_zero_iterations(self, small):
        g, X, omega = small
        init = TransformParams.init([6, 4, 4], seed=9)
        p, store, report = fit(g, X, omega, _cfg(outer_iters=0), init_params=init)
        np.testing.assert_array_equal(p.flat(), init.flat())
        assert report.objectives == []
        assert all(store.is_decomposed(z) and store.nnz(z) <= 6 for z in range(30))
        assert store.nnz_array().sum() > 0

    def test_supports_inside_candidates_and_capped(self, small):
        g, X, omega = small
        cands = build_all(g, CandidateConfig(k1=2))
        _, store, _ = fit(g, X, omega, _cfg(candidate_cfg=CandidateConfig(k1=2), max_active=3))
        for z in range(30):
            ids, w = store.get(z)
            assert ids.size <= 3 and np.all(w > 0)
            assert np.all(np.isin(ids, cands[z].members))

    def test_schedule_caps_final_support(self, small):
        g, X, omega = small
        cfg = _cfg(candidate_cfg=CandidateConfig(k1=2), max_active=8, outer_iters=6,
                   schedule=Schedule(8, 2, 3, floor=2), lambda1=1e-4)
        _, store, _ = fit(g, X, omega, cfg)
        assert store.nnz_array().max() <= 2

    def test_deterministic(self, small):
        g, X, omega = small
        runs = [fit(g, X, omega, _cfg(seed=4)) for _ in range(2)]
        assert runs[0][2].objectives == runs[1][2].objectives
        assert runs[0][1] == runs[1][1]
        np.testing.assert_array_equal(runs[0][0].flat(), runs[1][0].flat())

    def test_theta_phase_never_worsens_a_node(self, small):
        g, X, omega = small
        _, _, report = fit(g, X, omega, _cfg(max_active=64, outer_iters=10))
        assert report.n_theta_solves == 10 * 10 + 30
        assert report.worst_theta_increase <= 1e-9

    def test_report_lines(self, small):
        g, X, omega = small
        _, _, report = fit(g, X, omega, _cfg(outer_iters=2))
        lines = list(report.lines())
        assert len(lines) == 2 and lines[0].startswith("iter=1 obj=")
        assert "phase_theta_ms=" in lines[1] and "phase_phi_ms=" in lines[1]
        assert np.isfinite(report.final_objective)

    def test_subset_training_still_finalizes_all(self, small):
        g, X, omega = small
        _, store, _ = fit(g, X, omega, _cfg(train_subset_fraction=0.3))
        assert all(store.is_decomposed(z) for z in range(30))

    def test_warm_up_runs(self, small):
        g, X, omega = small
        _, _, report = fit(g, X, omega, _cfg(warmup_hops=1, warmup_steps=5))
        assert np.isfinite(report.final_objective)

    def test_divergence_aborts_with_last_good_state(self, small):
        g, X, omega = small
        with pytest.raises(TrainingAborted) as info:
            fit(g, X, omega * 1e3, _cfg(lr=10.0, outer_iters=20))
        exc = info.value
        assert np.all(np.isfinite(exc.params.flat()))
        assert all(np.isfinite(v) for v in exc.report.objectives)

    def test_bad_init_dims(self, small):
        g, X, omega = small
        with pytest.raises(DataError):
            fit(g, X, omega, _cfg(), init_params=TransformParams.identity(6))


class TestFitMulti:
    def test_one_snapshot_matches_fit(self, small):
        g, X, omega = small
        a = fit(g, X, omega, _cfg(seed=2))
        b = fit_multi(g, [(X, omega)], _cfg(seed=2))
        assert a[2].objectives == b[2].objectives
        assert a[1] == b[1]

    def test_identity_snapshots(self):
        g = er_graph(30, 0.1, seed=6)
        rng = np.random.default_rng(2)
        snaps = [(H, H) for H in rng.normal(size=(2, 30, 16))]
        cfg = _cfg(lambda1=0.0, lambda2=0.0, max_active=8, outer_iters=4)
        p, store, report = fit_multi(g, snaps, cfg, init_params=TransformParams.identity(16))
        assert report.final_objective <= 1e-6

    def test_shape_mismatch(self, small):
        g, X, omega = small
        with pytest.raises(DataError):
            fit_multi(g, [(X, omega), (X[:, :3], omega)], _cfg())
        with pytest.raises(DataError):
            fit_multi(g, [], _cfg())
