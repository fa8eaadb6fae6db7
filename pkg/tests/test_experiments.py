"""Experiment harness: sampling, seeding, grids, CSV determinism."""

import csv
import numpy as np
import pytest

from ttident.experiments import (
    ExperimentConfig,
    SystemSpec,
    build_system,
    load_config,
    rate_fraction,
    recovery_rates,
    run_experiment,
    run_trial,
    sample_dataset,
    trial_seed_sequence,
)
from ttident.als import SolverConfig
from ttident.basis import make_basis
from ttident.models import fput_rhs
from ttident.serialize import load_dataset, save_dataset


class TestSampling:
    def test_noiseless_values_exact(self):
        rng = np.random.default_rng(0)
        data = sample_dataset(lambda x: fput_rhs(x, 0.7, 0.0), 5, 40, rng)
        assert np.array_equal(data.Y, fput_rhs(data.X, 0.7, 0.0))

    def test_deterministic_in_seed(self):
        a = sample_dataset(lambda x: fput_rhs(x, 0.7, 0.0), 4, 30, np.random.default_rng(5))
        b = sample_dataset(lambda x: fput_rhs(x, 0.7, 0.0), 4, 30, np.random.default_rng(5))
        assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)

    def test_uniform_law_statistics(self):
        # mean of U[-1, 1] entries: |mean| <= 3 sd(mean) = 3 (2/sqrt(12)) / sqrt(n)
        rng = np.random.default_rng(7)
        d, m = 4, 10**5
        data = sample_dataset(lambda x: np.zeros_like(x), d, m, rng)
        bound = 3.0 * (2.0 / np.sqrt(12.0)) / np.sqrt(m * d)
        assert abs(float(np.mean(data.X))) <= bound
        assert data.X.min() >= -1.0 and data.X.max() <= 1.0

    def test_noise_level(self):
        rng = np.random.default_rng(8)
        data = sample_dataset(lambda x: np.zeros_like(x), 3, 20000, rng, sigma=0.5)
        assert np.std(data.Y) == pytest.approx(0.5, rel=0.05)


class TestSeeding:
    def test_trial_seed_depends_only_on_cell(self):
        a = trial_seed_sequence(42, 6, 1000, 3)
        b = trial_seed_sequence(42, 6, 1000, 3)
        assert np.array_equal(
            np.random.default_rng(a).integers(2**63, size=4),
            np.random.default_rng(b).integers(2**63, size=4),
        )
        c = trial_seed_sequence(42, 6, 1000, 4)
        assert not np.array_equal(
            np.random.default_rng(a.spawn(1)[0]).integers(2**63, size=4),
            np.random.default_rng(c.spawn(1)[0]).integers(2**63, size=4),
        )

    def test_system_draw_per_trial(self):
        spec = SystemSpec(kind="random", nnz=5)
        basis = make_basis("legendre", 4)
        rng1 = np.random.default_rng(trial_seed_sequence(0, 4, 100, 0))
        rng2 = np.random.default_rng(trial_seed_sequence(0, 4, 100, 1))
        t1, _ = build_system(spec, 4, basis, rng1)
        t2, _ = build_system(spec, 4, basis, rng2)
        same = all(
            a.shape == b.shape and np.allclose(a, b)
            for a, b in zip(t1.stacks, t2.stacks)
        )
        assert not same


def tiny_config(tmp_path, **overrides):
    defaults = dict(
        system=SystemSpec(kind="fput", beta=0.7, mfield=0.0),
        model_format="selection",
        solver="als",
        solver_config=SolverConfig(max_sweeps=4),
        d_grid=[3],
        m_grid=[200, 300],
        trials=2,
        master_seed=11,
        out_path=str(tmp_path / "rows.csv"),
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


class TestRunExperiment:
    def test_row_count_and_columns(self, tmp_path):
        cfg = tiny_config(tmp_path)
        rows = run_experiment(cfg)
        assert len(rows) == len(cfg.d_grid) * len(cfg.m_grid) * cfg.trials
        with open(cfg.out_path) as fh:
            reader = csv.DictReader(fh)
            parsed = list(reader)
        assert reader.fieldnames == [
            "system", "format", "solver", "d", "m", "trial", "seed", "success",
            "relative_error", "iterations_used", "restarts_used", "final_ranks",
            "wall_seconds",
        ]
        assert len(parsed) == len(rows)
        rates_path = str(tmp_path / "rows_rates.csv")
        with open(rates_path) as fh:
            assert fh.readline().startswith("d,m,successes")

    def test_rerun_determinism_modulo_timing(self, tmp_path):
        cfg1 = tiny_config(tmp_path, out_path=str(tmp_path / "a.csv"))
        cfg2 = tiny_config(tmp_path, out_path=str(tmp_path / "b.csv"))
        rows1 = run_experiment(cfg1)
        rows2 = run_experiment(cfg2)
        for r1, r2 in zip(rows1, rows2):
            r1 = {k: v for k, v in r1.items() if k != "wall_seconds"}
            r2 = {k: v for k, v in r2.items() if k != "wall_seconds"}
            assert r1 == r2

    def test_grid_order_invariance(self, tmp_path):
        cfg1 = tiny_config(tmp_path, m_grid=[200, 300], out_path=str(tmp_path / "c.csv"))
        cfg2 = tiny_config(tmp_path, m_grid=[300, 200], out_path=str(tmp_path / "d.csv"))
        rows1 = {(r["d"], r["m"], r["trial"]): r["relative_error"] for r in run_experiment(cfg1)}
        rows2 = {(r["d"], r["m"], r["trial"]): r["relative_error"] for r in run_experiment(cfg2)}
        assert rows1 == rows2

    def test_parallel_matches_serial(self, tmp_path):
        cfg1 = tiny_config(tmp_path, jobs=1, out_path=str(tmp_path / "e.csv"))
        cfg2 = tiny_config(tmp_path, jobs=2, out_path=str(tmp_path / "f.csv"))
        rows1 = run_experiment(cfg1)
        rows2 = run_experiment(cfg2)
        for r1, r2 in zip(rows1, rows2):
            assert r1["relative_error"] == r2["relative_error"]

    def test_success_flag_matches_threshold(self, tmp_path):
        cfg = tiny_config(tmp_path, out_path=str(tmp_path / "g.csv"))
        rows = run_experiment(cfg)
        for row in rows:
            err = float(row["relative_error"])
            assert row["success"] == int(err < cfg.solver_config.success_threshold)

    def test_recovery_rate_aggregation(self):
        rows = [
            {"d": 3, "m": 100, "success": 1},
            {"d": 3, "m": 100, "success": 0},
            {"d": 3, "m": 200, "success": 1},
        ]
        rates = recovery_rates(rows)
        assert rates[(3, 100)] == (1, 2)
        assert rate_fraction(rates, 3, 200) == 1


class TestConfigFile:
    def test_yaml_roundtrip(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text(
            "system: {kind: fput, beta: 0.7, mfield: 0.0}\n"
            "solver: als\n"
            "model_format: selection\n"
            "d_grid: [4]\n"
            "m_grid: [500]\n"
            "trials: 3\n"
            "master_seed: 9\n"
            "solver_config: {max_sweeps: 7, lambda_schedule: residual}\n"
        )
        cfg = load_config(path)
        assert cfg.system.kind == "fput"
        assert cfg.solver_config.max_sweeps == 7
        assert cfg.solver_config.lambda_schedule == "residual"
        assert cfg.trials == 3

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("trials: 3\nnot_a_key: 1\n")
        with pytest.raises(ValueError, match="unknown config keys"):
            load_config(path)

    def test_parse_error_reported(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("trials: [unterminated\n")
        with pytest.raises(ValueError, match="config parse error"):
            load_config(path)

    def test_salsa_requires_single_tt(self):
        with pytest.raises(ValueError, match="single-tt"):
            ExperimentConfig(solver="salsa", model_format="selection")


class TestDatasetFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, (10, 3))
        y = rng.standard_normal((10, 3))
        path = tmp_path / "data.txt"
        save_dataset(path, x, y, seed=5, sigma=0.1)
        x2, y2, meta = load_dataset(path)
        assert np.array_equal(x, x2) and np.array_equal(y, y2)
        assert meta["m"] == "10" and meta["d"] == "3" and meta["seed"] == "5"
