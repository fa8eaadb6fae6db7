"""Stack engines and the regularized alternating solver."""

import numpy as np
import pytest

from ttident import (
    build_dictionary,
    equation_tt,
    fput_ground_truth,
    fput_rhs,
    make_basis,
    to_single_tt,
    tt_to_dense,
)
from ttident.als import (
    SolverConfig,
    als_solve,
    balanced_random_model,
    random_selection_model,
    restarted_als,
    scale_to_data,
)
from ttident.models import Dataset, SelectionModel, evaluate_model
from ttident.stacks import SelectionStacks, SystemStacks
from ttident.tt import TensorTrain


def fput_setup(d=4, m=300, seed=0, beta=0.7):
    leg = make_basis("legendre", 4)
    truth = fput_ground_truth(d, beta, 0.0, leg)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (m, d))
    y = fput_rhs(x, beta, 0.0)
    return leg, truth, Dataset(x, y), build_dictionary(x, leg)


class TestStackConsistency:
    def test_incremental_matches_rebuild_selection(self):
        leg, truth, data, psi = fput_setup(d=5, m=120, seed=1)
        rng = np.random.default_rng(2)
        model = random_selection_model(truth.types, 4, 3, rng)
        engine = SelectionStacks(model, psi, data.Y)
        # a mixed but cache-consistent sweep schedule with gauge moves
        for k in range(4):
            engine.shift_gauge_right(k)
            engine.push_left(k)
        for k in (4, 3):
            engine.push_right(k)
        for k in (3, 2):
            core, _ = engine.solve_site(k, 0.1)
            engine.set_core(k, core)
            engine.shift_gauge_left(k)
            engine.push_right(k)
        engine.push_left(0)
        engine.push_left(1)
        # compare the caches that are valid for the next solve at site 2
        snap_left = [engine.left[k].copy() for k in (1, 2)]
        snap_right = [engine.right[k].copy() for k in (2, 3)]
        engine.rebuild()
        for k, snap in zip((1, 2), snap_left):
            assert np.linalg.norm(engine.left[k] - snap) <= 1e-10 * np.linalg.norm(snap)
        for k, snap in zip((2, 3), snap_right):
            assert np.linalg.norm(engine.right[k] - snap) <= 1e-10 * np.linalg.norm(snap)

    def test_incremental_matches_rebuild_system(self):
        leg, truth, data, psi = fput_setup(d=4, m=100, seed=3)
        rng = np.random.default_rng(4)
        cores = [rng.standard_normal(s) for s in [(1, 4, 3), (3, 4, 3), (3, 4, 3), (3, 4, 4)]]
        engine = SystemStacks(TensorTrain(cores), psi, data.Y)
        for k in range(3):
            engine.shift_gauge_right(k)
            engine.push_left(k)
        snap = engine.left[3].copy()
        engine.rebuild()
        assert np.linalg.norm(engine.left[3] - snap) <= 1e-10 * np.linalg.norm(snap)

    def test_predictions_match_evaluate(self):
        leg, truth, data, psi = fput_setup(d=4, m=80, seed=5)
        engine = SelectionStacks(truth, psi, data.Y)
        for k in range(3):
            engine.push_left(k)
        pred = engine.predictions()
        assert np.allclose(pred, evaluate_model(truth, psi), atol=1e-10)
        assert np.allclose(pred, data.Y, atol=1e-10)


class TestGradient:
    def test_gram_gradient_matches_finite_differences(self):
        # gradient of 0.5 ||f - y||^2 in a core is G^T(G a - y); compare
        # against central differences of the loss
        leg, truth, data, psi = fput_setup(d=4, m=60, seed=6)
        rng = np.random.default_rng(7)
        model = random_selection_model(truth.types, 4, 2, rng)
        engine = SelectionStacks(model, psi, data.Y)
        for k in range(3):
            engine.push_left(k)
        k = 2
        grams, rhs = engine.local_system(k)
        stack = engine.stacks[k]

        def loss(s):
            trial = SelectionModel(
                [s if i == k else st for i, st in enumerate(engine.stacks)],
                engine.types,
            )
            r = evaluate_model(trial, psi) - data.Y
            return 0.5 * float(np.sum(r * r))

        n = stack.shape[0]
        for q in range(n):
            if grams[q] is None:
                continue
            a = stack[q].reshape(-1)
            grad = grams[q] @ a - rhs[q]
            idx = rng.choice(a.size, size=5, replace=False)
            for i in idx:
                h = 1e-5
                sp = stack.copy()
                sp[q].reshape(-1)[i] += h
                sm = stack.copy()
                sm[q].reshape(-1)[i] -= h
                fd = (loss(sp) - loss(sm)) / (2 * h)
                assert fd == pytest.approx(grad[i], rel=1e-4, abs=1e-6)


class TestLocalSolve:
    def test_ridge_dominance_shrinks_core(self):
        leg, truth, data, psi = fput_setup(d=3, m=100, seed=8)
        engine = SelectionStacks(truth, psi, data.Y)
        engine.push_left(0)
        core, _ = engine.solve_site(1, 1e12)
        _, rhs = engine.local_system(1)
        bound = max(np.linalg.norm(v) for v in rhs if v is not None) / 1e12
        assert np.linalg.norm(core) <= 1e-6 or np.linalg.norm(core) <= 10 * bound

    def test_interpolation_fixed_point(self):
        leg, truth, data, psi = fput_setup(d=4, m=200, seed=9)
        engine = SelectionStacks(truth, psi, data.Y)
        for k in range(3):
            engine.push_left(k)
        core, resid_sq = engine.solve_site(2, 0.0)
        # the quadratic-form residual cancels to round-off at the data scale
        assert np.sqrt(resid_sq) <= 1e-5 * np.linalg.norm(data.Y)
        pred_before = engine.predictions()
        engine.set_core(2, core)
        engine.rebuild()
        assert np.allclose(engine.predictions(), pred_before, atol=1e-7)

    def test_full_rank_matches_dense_least_squares(self):
        # single-train format with identity wrappers: the local problem at
        # the middle site spans the whole p^3-column dictionary
        rng = np.random.default_rng(10)
        leg = make_basis("legendre", 3)
        d, p, m = 3, 3, 200
        x = rng.uniform(-1, 1, (m, d))
        y = rng.standard_normal((m, d))
        psi = build_dictionary(x, leg)
        cores = [
            np.eye(p).reshape(1, p, p),
            rng.standard_normal((p, p, p * d)),
            np.eye(p * d).reshape(p * d, p, d),
        ]
        engine = SystemStacks(TensorTrain(cores), psi, y)
        engine.push_left(0)
        core, resid_sq = engine.solve_site(1, 0.0)
        # dense oracle
        full = psi.matrices[0]
        for k in range(1, d):
            full = np.einsum("ji,jk->jik", full, psi.matrices[k]).reshape(m, -1)
        sol, res, *_ = np.linalg.lstsq(full, y, rcond=None)
        dense_resid = np.linalg.norm(full @ sol - y)
        assert np.sqrt(resid_sq) == pytest.approx(dense_resid, rel=1e-8)


class TestAlsSolve:
    def test_stays_at_truth(self):
        leg, truth, data, psi = fput_setup(d=4, m=400, seed=11)
        cfg = SolverConfig(max_sweeps=3, lambda0=0.0, lambda_schedule="divide10")
        model, trace = als_solve(truth, data, psi, cfg, truth=truth)
        assert trace.last().rel_error < 1e-8

    def test_lambda_zero_monotone_micro_residuals(self):
        leg, truth, data, psi = fput_setup(d=4, m=500, seed=12)
        rng = np.random.default_rng(13)
        model0 = scale_to_data(random_selection_model(truth.types, 4, 4, rng), psi, data.Y)
        cfg = SolverConfig(max_sweeps=4, lambda0=0.0)
        model, trace = als_solve(model0, data, psi, cfg, truth=truth, record_microsteps=True)
        micro = np.array(trace.micro_residuals)
        assert np.all(micro[1:] <= micro[:-1] + 1e-9 * micro[0])

    def test_recovers_small_chain(self):
        leg, truth, data, psi = fput_setup(d=4, m=800, seed=14)
        rng = np.random.default_rng(15)
        model0 = scale_to_data(random_selection_model(truth.types, 4, 4, rng), psi, data.Y)
        cfg = SolverConfig(max_sweeps=20)
        model, trace = als_solve(model0, data, psi, cfg, truth=truth)
        assert trace.last().rel_error < 1e-6

    def test_full_rank_train_converges_to_least_squares(self):
        # with unrestricted ranks the train spans the whole space, so the
        # final residual must match the dense optimum
        rng = np.random.default_rng(16)
        leg = make_basis("legendre", 3)
        d, p, m = 3, 3, 200
        x = rng.uniform(-1, 1, (m, d))
        y = fput_rhs(x, 0.7, 0.0)[:, :d] + 0.05 * rng.standard_normal((m, d))
        psi = build_dictionary(x, leg)
        data = Dataset(x, y)
        cores = [
            rng.standard_normal((1, p, p)),
            rng.standard_normal((p, p, p * p)),
            rng.standard_normal((p * p, p, d)),
        ]
        cfg = SolverConfig(max_sweeps=40, lambda0=0.0)
        model, trace = als_solve(TensorTrain(cores), data, psi, cfg)
        full = psi.matrices[0]
        for k in range(1, d):
            full = np.einsum("ji,jk->jik", full, psi.matrices[k]).reshape(m, -1)
        sol, *_ = np.linalg.lstsq(full, y, rcond=None)
        dense_resid = np.linalg.norm(full @ sol - y)
        assert trace.last().residual == pytest.approx(dense_resid, rel=1e-6)
        # recovered coefficients match the unique least-squares solution
        recovered = np.stack(
            [tt_to_dense(equation_tt(model, l)).reshape(-1) for l in range(d)], axis=1
        )
        assert np.linalg.norm(recovered - sol) <= 1e-6 * np.linalg.norm(sol)


class TestRestartedAls:
    def test_zero_restarts_when_easy(self):
        leg, truth, data, psi = fput_setup(d=4, m=1500, seed=17)
        cfg = SolverConfig(sweeps_per_attempt=25, max_restarts=2, seed=5)
        model, restarts, trace = restarted_als(data, psi, cfg, truth)
        assert restarts == 0
        assert trace.last().rel_error < 1e-6

    def test_reports_cap_on_failure(self):
        # starve the solver: almost no data and a single sweep per attempt
        leg, truth, data, psi = fput_setup(d=4, m=12, seed=18)
        cfg = SolverConfig(sweeps_per_attempt=1, max_restarts=2, seed=6)
        model, restarts, trace = restarted_als(data, psi, cfg, truth)
        assert restarts == 2
        assert trace.last().rel_error >= 1e-6


class TestConfigValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            SolverConfig(max_sweeps=0)
        with pytest.raises(ValueError):
            SolverConfig(omega_min=1.0)
        with pytest.raises(ValueError):
            SolverConfig(c_sigma=1.5)
        with pytest.raises(ValueError):
            SolverConfig(lambda_schedule="geometric")
