"""Experiment harness: dataset sampling, recovery grids, CSV output.

Seeding: every trial's entropy derives from
``numpy.random.SeedSequence((master_seed, d, m, trial))`` and is split into
independent streams for the system draw, the data draw, and the solver
initialization, so a trial's result depends only on (master seed, d, m,
trial) and never on grid order or worker scheduling.  The generator behind
every stream is numpy's default PCG64.  Wall-clock columns are excluded from
the determinism contract.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
import yaml

from .als import SolverConfig, als_solve, random_selection_model, restarted_als, scale_to_data
from .basis import Basis, build_dictionary, make_basis
from .models import (
    Dataset,
    SelectionModel,
    fput_ground_truth,
    fput_rhs,
    local_system_model,
    local_system_rhs,
    model_relative_error,
    random_local_system,
    to_single_tt,
)
from .salsa import salsa_solve

RESULT_COLUMNS = [
    "system",
    "format",
    "solver",
    "d",
    "m",
    "trial",
    "seed",
    "success",
    "relative_error",
    "iterations_used",
    "restarts_used",
    "final_ranks",
    "wall_seconds",
]


@dataclass
class SystemSpec:
    """Ground-truth family: the anharmonic chain or a random local system."""

    kind: str = "fput"  # "fput" | "random"
    beta: float | list = 0.7
    mfield: float | list = 0.0
    nnz: int = 20
    s1: int = 1
    s2: int = 1

    def __post_init__(self):
        if self.kind not in ("fput", "random"):
            raise ValueError(f"unknown system kind {self.kind!r}")


@dataclass
class ExperimentConfig:
    system: SystemSpec = field(default_factory=SystemSpec)
    model_format: str = "selection"  # "selection" | "single-tt"
    solver: str = "als"  # "als" | "restarted-als" | "salsa"
    solver_config: SolverConfig = field(default_factory=SolverConfig)
    d_grid: list = field(default_factory=lambda: [6])
    m_grid: list = field(default_factory=lambda: [1000, 2000, 3000])
    trials: int = 10
    master_seed: int = 0
    basis_kind: str = "legendre"
    basis_size: int = 4
    noise: float = 0.0
    rank: int = 4
    jobs: int = 1
    out_path: str = "results.csv"

    def __post_init__(self):
        if not self.d_grid or not self.m_grid:
            raise ValueError("grids must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.model_format not in ("selection", "single-tt"):
            raise ValueError(f"unknown model format {self.model_format!r}")
        if self.solver not in ("als", "restarted-als", "salsa"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.solver == "salsa" and self.model_format != "single-tt":
            raise ValueError(
                "rank adaptation is only supported on the single-tt format "
                "(the selection tensor has unit-rank null directions)"
            )

    def basis(self) -> Basis:
        return make_basis(self.basis_kind, self.basis_size)


def _as_solver_overrides(mapping: dict) -> SolverConfig:
    return SolverConfig(**mapping)


def load_config(path) -> ExperimentConfig:
    """Parse a YAML experiment file; every solver default is overridable."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ValueError(f"config parse error in {path}: {exc}") from exc
    known = {
        "system",
        "model_format",
        "solver",
        "solver_config",
        "d_grid",
        "m_grid",
        "trials",
        "master_seed",
        "basis_kind",
        "basis_size",
        "noise",
        "rank",
        "jobs",
        "out_path",
    }
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(raw)
    if "system" in kwargs:
        kwargs["system"] = SystemSpec(**kwargs["system"])
    if "solver_config" in kwargs:
        kwargs["solver_config"] = _as_solver_overrides(kwargs["solver_config"])
    return ExperimentConfig(**kwargs)


def trial_seed_sequence(master_seed: int, d: int, m: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((master_seed, d, m, trial))


def build_system(spec: SystemSpec, d: int, basis: Basis, rng: np.random.Generator):
    """Instantiate the ground truth; returns (SelectionModel, rhs callable)."""
    if spec.kind == "fput":
        truth = fput_ground_truth(d, spec.beta, spec.mfield, basis)
        rhs = lambda x: fput_rhs(x, spec.beta, spec.mfield)  # noqa: E731
        return truth, rhs
    system = random_local_system(
        d, spec.nnz, seed=int(rng.integers(2**63)), basis=basis, s1=spec.s1, s2=spec.s2
    )
    return local_system_model(system), lambda x: local_system_rhs(system, x)


def sample_dataset(rhs, d: int, m: int, rng: np.random.Generator, sigma: float = 0.0) -> Dataset:
    """States i.i.d. uniform on [-1, 1]^d; Y = f(X) plus optional Gaussian noise."""
    x = rng.uniform(-1.0, 1.0, (m, d))
    y = rhs(x)
    if sigma > 0.0:
        y = y + sigma * rng.standard_normal(y.shape)
    return Dataset(x, y, sigma=sigma)


def run_trial(cfg: ExperimentConfig, d: int, m: int, trial: int) -> dict:
    """One independent recovery run; pure function of (cfg, d, m, trial)."""
    basis = cfg.basis()
    seq = trial_seed_sequence(cfg.master_seed, d, m, trial)
    rng_system, rng_data, rng_init = [np.random.default_rng(s) for s in seq.spawn(3)]
    truth, rhs = build_system(cfg.system, d, basis, rng_system)
    data = sample_dataset(rhs, d, m, rng_data, cfg.noise)
    psi = build_dictionary(data.X, basis)
    scfg = replace(cfg.solver_config, seed=int(rng_init.integers(2**31)))

    tic = time.perf_counter()
    restarts = 0
    if cfg.solver == "salsa":
        truth_tt = to_single_tt(truth)
        model, ranks, trace = salsa_solve(data, psi, scfg, truth=truth_tt)
        err = trace.last().rel_error
        final_ranks = ranks
    elif cfg.solver == "restarted-als":
        model, restarts, trace = restarted_als(data, psi, scfg, truth, rank=cfg.rank)
        err = trace.last().rel_error
        final_ranks = trace.last().ranks
    else:
        model0 = random_selection_model(truth.types, basis.size, cfg.rank, rng_init)
        model0 = scale_to_data(model0, psi, data.Y)
        model, trace = als_solve(model0, data, psi, scfg, truth=truth)
        err = trace.last().rel_error
        final_ranks = trace.last().ranks
    wall = time.perf_counter() - tic

    return {
        "system": cfg.system.kind,
        "format": cfg.model_format,
        "solver": cfg.solver,
        "d": d,
        "m": m,
        "trial": trial,
        "seed": f"{cfg.master_seed}-{d}-{m}-{trial}",
        "success": int(err < cfg.solver_config.success_threshold),
        "relative_error": repr(float(err)),
        "iterations_used": len(trace.rows),
        "restarts_used": restarts,
        "final_ranks": "|".join(str(r) for r in final_ranks),
        "wall_seconds": repr(float(wall)),
    }


def _trial_star(args):
    return run_trial(*args)


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Execute the full (d, m, trial) grid and write the result CSV.

    Also writes an aggregated recovery-rate table next to the result file
    (suffix ``_rates.csv``) with exact k/n fractions per cell.  Returns the
    result rows sorted by (d, m, trial).
    """
    tasks = [
        (cfg, d, m, t)
        for d in cfg.d_grid
        for m in cfg.m_grid
        for t in range(cfg.trials)
    ]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_trial_star, tasks, chunksize=1))
    else:
        rows = [run_trial(*t) for t in tasks]
    rows.sort(key=lambda r: (r["d"], r["m"], r["trial"]))

    out = cfg.out_path
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    rates = recovery_rates(rows)
    stem, ext = os.path.splitext(out)
    with open(f"{stem}_rates{ext or '.csv'}", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d", "m", "successes", "trials", "rate"])
        for (d, m), (k, n) in sorted(rates.items()):
            writer.writerow([d, m, k, n, f"{k}/{n}"])
    return rows


def recovery_rates(rows: list[dict]) -> dict:
    """Per-(d, m) success counts as exact fractions."""
    cells: dict = {}
    for row in rows:
        key = (int(row["d"]), int(row["m"]))
        k, n = cells.get(key, (0, 0))
        cells[key] = (k + int(row["success"]), n + 1)
    return cells


def rate_fraction(rates: dict, d: int, m: int) -> Fraction:
    k, n = rates[(d, m)]
    return Fraction(k, n)
