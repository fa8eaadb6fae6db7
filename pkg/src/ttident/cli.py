"""Command-line harness.

Subcommands:
  generate    sample a dataset from a ground-truth system and write it out
  recover     run one recovery and print the per-sweep trace
  experiment  run a (d, m, trial) grid from a YAML config and emit CSV
  check-ranks audit the rank theory on generated systems
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .als import SolverConfig, als_solve, random_selection_model, restarted_als, scale_to_data
from .basis import build_dictionary
from .experiments import (
    ExperimentConfig,
    SystemSpec,
    build_system,
    load_config,
    recovery_rates,
    run_experiment,
    sample_dataset,
    trial_seed_sequence,
)
from .models import Dataset, model_relative_error, to_single_tt
from .ranks import run_rank_audit
from .salsa import salsa_solve
from .serialize import load_dataset, save_dataset, save_model


def _add_common(parser):
    parser.add_argument("--config", help="YAML experiment config file")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--jobs", type=int, help="parallel trial workers")
    parser.add_argument("--out", help="output path override")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if getattr(args, "jobs", None) is not None:
        cfg = replace(cfg, jobs=args.jobs)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, out_path=args.out)
    return cfg


def cmd_generate(args) -> int:
    cfg = _load(args)
    d = args.d or cfg.d_grid[0]
    m = args.m or cfg.m_grid[0]
    seq = trial_seed_sequence(cfg.master_seed, d, m, 0)
    rng_system, rng_data, _ = [np.random.default_rng(s) for s in seq.spawn(3)]
    truth, rhs = build_system(cfg.system, d, cfg.basis(), rng_system)
    data = sample_dataset(rhs, d, m, rng_data, cfg.noise)
    out = cfg.out_path if args.out is None else args.out
    save_dataset(out, data.X, data.Y, cfg.master_seed, cfg.noise)
    if args.truth_out:
        save_model(args.truth_out, truth, cfg.basis_kind)
    print(f"wrote {m} x {d} dataset to {out}")
    return 0


def cmd_recover(args) -> int:
    cfg = _load(args)
    basis = cfg.basis()
    if args.data:
        x, y, _meta = load_dataset(args.data)
        d, m = x.shape[1], x.shape[0]
        seq = trial_seed_sequence(cfg.master_seed, d, m, 0)
        rng_system, _, rng_init = [np.random.default_rng(s) for s in seq.spawn(3)]
        truth, _rhs = build_system(cfg.system, d, basis, rng_system)
        data = Dataset(x, y)
    else:
        d = args.d or cfg.d_grid[0]
        m = args.m or cfg.m_grid[0]
        seq = trial_seed_sequence(cfg.master_seed, d, m, 0)
        rng_system, rng_data, rng_init = [np.random.default_rng(s) for s in seq.spawn(3)]
        truth, rhs = build_system(cfg.system, d, basis, rng_system)
        data = sample_dataset(rhs, d, m, rng_data, cfg.noise)
    psi = build_dictionary(data.X, basis)
    scfg = replace(cfg.solver_config, seed=int(rng_init.integers(2**31)))

    if cfg.solver == "salsa":
        model, ranks, trace = salsa_solve(data, psi, scfg, truth=to_single_tt(truth))
    elif cfg.solver == "restarted-als":
        model, restarts, trace = restarted_als(data, psi, scfg, truth, rank=cfg.rank)
        print(f"restarts used: {restarts}")
    else:
        rng = np.random.default_rng(scfg.seed)
        model0 = random_selection_model(truth.types, basis.size, cfg.rank, rng)
        model0 = scale_to_data(model0, psi, data.Y)
        model, trace = als_solve(model0, data, psi, scfg, truth=truth)

    print("sweep  residual      reg          epsilon      ranks                rel_error")
    for row in trace.rows:
        eps = f"{row.epsilon:.3e}" if row.epsilon is not None else "-"
        rel = f"{row.rel_error:.3e}" if row.rel_error is not None else "-"
        ranks_s = ",".join(str(r) for r in row.ranks)
        print(f"{row.sweep:5d}  {row.residual:.5e}  {row.reg_weight:.3e}  {eps:>11s}  {ranks_s:<19s}  {rel}")
    print(f"final relative error: {trace.last().rel_error:.3e}")
    if args.model_out:
        save_model(args.model_out, model, cfg.basis_kind)
    if args.trace_out:
        trace.to_csv(args.trace_out)
    return 0


def cmd_experiment(args) -> int:
    cfg = _load(args)
    rows = run_experiment(cfg)
    rates = recovery_rates(rows)
    print("d      m      recovered")
    for (d, m), (k, n) in sorted(rates.items()):
        print(f"{d:<6d} {m:<6d} {k}/{n}")
    print(f"rows written to {cfg.out_path}")
    return 0


def cmd_check_ranks(args) -> int:
    results = run_rank_audit(instances=args.instances, seed=args.seed or 0)
    failures = 0
    for res in results:
        if not res.passed or args.verbose:
            print(res.line())
        failures += not res.passed
    print(f"{len(results) - failures}/{len(results)} rank checks passed")
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ttident",
        description="Recover governing equations with tensor-train coefficient models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write a sampled dataset file")
    _add_common(p_gen)
    p_gen.add_argument("--d", type=int, help="number of variables")
    p_gen.add_argument("--m", type=int, help="number of observations")
    p_gen.add_argument("--truth-out", help="also store the ground-truth model")
    p_gen.set_defaults(func=cmd_generate)

    p_rec = sub.add_parser("recover", help="single recovery run with trace output")
    _add_common(p_rec)
    p_rec.add_argument("--d", type=int)
    p_rec.add_argument("--m", type=int)
    p_rec.add_argument("--data", help="read observations from a dataset file")
    p_rec.add_argument("--model-out", help="store the recovered model")
    p_rec.add_argument("--trace-out", help="store the per-sweep trace as CSV")
    p_rec.set_defaults(func=cmd_recover)

    p_exp = sub.add_parser("experiment", help="run a recovery-rate grid")
    _add_common(p_exp)
    p_exp.set_defaults(func=cmd_experiment)

    p_chk = sub.add_parser("check-ranks", help="audit rank theory on generated systems")
    p_chk.add_argument("--instances", type=int, default=100)
    p_chk.add_argument("--seed", type=int)
    p_chk.add_argument("--verbose", action="store_true")
    p_chk.set_defaults(func=cmd_check_ranks)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
