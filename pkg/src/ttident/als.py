"""Regularized alternating least squares over the system formats.

One iteration sweeps left-to-right and then right-to-left through all cores
(two half-sweeps).  After every iteration the ridge weight follows one of two
schedules:

* ``divide10``: lambda <- lambda / 10 (the plain protocol),
* ``residual``: lambda <- min(0.1 ||f - y||^2 / (||y|| ||A||), lambda / 4),
  balancing the data term against the norm penalty; ``A`` is the most
  recently updated core.  The restarted driver uses this schedule.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import DictionaryStack
from .models import Dataset, SelectionModel, evaluate_model, model_relative_error
from .stacks import SelectionStacks, SystemStacks
from .tt import TensorTrain


@dataclass
class SolverConfig:
    max_sweeps: int = 15
    lambda0: float = 1.0
    lambda_schedule: str = "divide10"  # "divide10" | "residual"
    success_threshold: float = 1e-6
    residual_tol: float = 0.0  # relative-residual early stop; 0 disables
    # stabilized rank-adaptive block
    omega_start: float = 1.0
    eps_start: float = 0.2
    r_min: int = 2
    s_min: float = 0.2
    omega_min: float = 1.05
    c_sigma: float = 0.01
    r_start: int = 1
    # restart block
    max_restarts: int = 5
    sweeps_per_attempt: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.max_sweeps < 1 or self.sweeps_per_attempt < 1:
            raise ValueError("sweep counts must be positive")
        if self.lambda0 < 0 or self.success_threshold <= 0:
            raise ValueError("lambda0 must be >= 0 and success_threshold > 0")
        if self.lambda_schedule not in ("divide10", "residual"):
            raise ValueError(f"unknown lambda schedule {self.lambda_schedule!r}")
        if self.omega_min <= 1.0:
            raise ValueError("omega_min must exceed 1")
        if not 0.0 < self.c_sigma < 1.0:
            raise ValueError("c_sigma must lie in (0, 1)")
        if min(self.omega_start, self.eps_start, self.s_min) <= 0:
            raise ValueError("stabilization parameters must be positive")
        if self.r_min < 1 or self.r_start < 1 or self.max_restarts < 0:
            raise ValueError("invalid rank or restart bounds")


@dataclass
class TraceRow:
    sweep: int
    residual: float
    reg_weight: float  # lambda for ALS, omega for the stabilized solver
    epsilon: float | None
    ranks: tuple[int, ...]
    seconds: float
    rel_error: float | None = None


@dataclass
class SolveTrace:
    rows: list[TraceRow] = field(default_factory=list)
    micro_residuals: list[float] = field(default_factory=list)
    diverged: bool = False

    def last(self) -> TraceRow:
        return self.rows[-1]

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("sweep,residual,lambda_or_omega,epsilon,ranks,seconds\n")
            for row in self.rows:
                eps = "" if row.epsilon is None else repr(row.epsilon)
                ranks = "|".join(str(r) for r in row.ranks)
                fh.write(
                    f"{row.sweep},{row.residual!r},{row.reg_weight!r},"
                    f"{eps},{ranks},{row.seconds!r}\n"
                )


def _make_engine(model, psi: DictionaryStack, values: np.ndarray):
    if isinstance(model, SelectionModel):
        return SelectionStacks(model, psi, values)
    if isinstance(model, TensorTrain):
        return SystemStacks(model, psi, values)
    raise TypeError(f"unsupported model type {type(model)!r}")


def _engine_model(engine):
    return engine.model() if isinstance(engine, SelectionStacks) else engine.train()


def _engine_ranks(engine) -> tuple[int, ...]:
    if isinstance(engine, SelectionStacks):
        return tuple(s.shape[3] for s in engine.stacks[:-1])
    return tuple(c.shape[2] for c in engine.cores[:-1])


def _core_norm(core: np.ndarray) -> float:
    return float(np.linalg.norm(core))


def als_solve(
    model0,
    data: Dataset,
    psi: DictionaryStack,
    cfg: SolverConfig,
    truth=None,
    record_microsteps: bool = False,
):
    """Fixed-rank regularized ALS.  Returns (model, SolveTrace).

    When ``truth`` is given the relative coefficient error is traced per
    sweep and the loop exits early once it beats ``cfg.success_threshold``.
    """
    engine = _make_engine(model0, psi, data.Y)
    d = psi.n_variables
    lam = cfg.lambda0
    trace = SolveTrace()
    values_norm = float(np.linalg.norm(data.Y))
    last_core_norm = 1.0
    resid_sq = None
    for sweep in range(1, cfg.max_sweeps + 1):
        tic = time.perf_counter()
        for k in range(d):
            core, resid_sq = engine.solve_site(k, lam)
            engine.set_core(k, core)
            if record_microsteps:
                trace.micro_residuals.append(np.sqrt(resid_sq))
            if k < d - 1:
                engine.shift_gauge_right(k)
                engine.push_left(k)
        # the right-to-left pass starts below the last site: re-solving it
        # immediately would reproduce the same core
        for k in range(d - 1, -1, -1):
            if k < d - 1:
                core, resid_sq = engine.solve_site(k, lam)
                engine.set_core(k, core)
                if record_microsteps:
                    trace.micro_residuals.append(np.sqrt(resid_sq))
                last_core_norm = _core_norm(core)
            if k > 0:
                engine.shift_gauge_left(k)
                engine.push_right(k)
        residual = float(np.sqrt(resid_sq))
        rel = None
        if truth is not None:
            rel = model_relative_error(_engine_model(engine), truth)
        trace.rows.append(
            TraceRow(
                sweep,
                residual,
                lam,
                None,
                _engine_ranks(engine),
                time.perf_counter() - tic,
                rel,
            )
        )
        if rel is not None and rel < cfg.success_threshold:
            break
        if cfg.residual_tol > 0 and values_norm > 0 and residual / values_norm < cfg.residual_tol:
            break
        if cfg.lambda_schedule == "divide10":
            lam = lam / 10.0
        else:
            lam = min(
                0.1 * residual**2 / max(values_norm * last_core_norm, 1e-300),
                lam / 4.0,
            )
    return _engine_model(engine), trace


def random_selection_model(
    types: np.ndarray,
    basis_size: int,
    rank: int,
    rng: np.random.Generator,
) -> SelectionModel:
    """Gaussian-initialized selection model with uniform interior ranks."""
    d = types.shape[0]
    n = int(types.max()) + 1
    stacks = []
    for k in range(d):
        r_prev = 1 if k == 0 else rank
        r_next = 1 if k == d - 1 else rank
        stacks.append(rng.standard_normal((n, r_prev, basis_size, r_next)))
    return SelectionModel(stacks, types)


def balanced_random_model(
    types: np.ndarray,
    basis_size: int,
    rank: int,
    rng: np.random.Generator,
    psi: DictionaryStack,
    values: np.ndarray,
) -> SelectionModel:
    """Random init whose per-equation images match the data scale.

    A raw Gaussian init has per-equation images whose norms spread
    lognormally with the chain length (products of independent random
    transfer matrices), which starves deep-interior equations during the
    first strongly regularized sweeps and can collapse their chains to exact
    zero - a fixed point of the alternating solves.  Two countermeasures:
    the stacks are gauged left-orthonormal (transfer spectra bounded by 1),
    and each equation's image is rescaled to its data norm through a type
    slice that only this equation selects (its window slices).
    """
    model = random_selection_model(types, basis_size, rank, rng)
    stacks = [s.copy() for s in model.stacks]
    d = len(stacks)
    for k in range(d - 1):
        n, a, p, b = stacks[k].shape
        q, r = np.linalg.qr(stacks[k].reshape(n * a * p, b))
        stacks[k] = q.reshape(n, a, p, q.shape[1])
        stacks[k + 1] = np.einsum("xz,qzpy->qxpy", r, stacks[k + 1])
    model = SelectionModel(stacks, types.copy())

    image = evaluate_model(model, psi)
    image_norms = np.linalg.norm(image, axis=0)
    target_norms = np.linalg.norm(values, axis=0)
    # exclusive handle: the diagonal window type appears in exactly one
    # equation's column per site, so scaling it rescales only that equation
    own_type = {}
    for l in range(d):
        for k in range(d):
            q = types[k, l]
            if q > 0 and np.count_nonzero(types[k] == q) == 1:
                own_type[l] = (k, q)
                break
    for l, (k, q) in own_type.items():
        if image_norms[l] > 0 and target_norms[l] > 0:
            model.stacks[k][q] *= target_norms[l] / image_norms[l]
    return model


def scale_to_data(model, psi: DictionaryStack, values: np.ndarray):
    """Rescale a model so its forward image matches the data norm."""
    image = evaluate_model(model, psi)
    norm = float(np.linalg.norm(image))
    target = float(np.linalg.norm(values))
    if norm == 0.0 or target == 0.0:
        return model
    factor = target / norm
    if isinstance(model, SelectionModel):
        return model.scale(factor)
    cores = [c.copy() for c in model.cores]
    cores[0] = cores[0] * factor
    return TensorTrain(cores)


def restarted_als(
    data: Dataset,
    psi: DictionaryStack,
    cfg: SolverConfig,
    truth: SelectionModel,
    rank: int = 4,
):
    """Restarted regularized ALS in the selection format.

    Runs up to ``cfg.max_restarts + 1`` attempts of
    ``cfg.sweeps_per_attempt`` sweeps from fresh random initializations
    (selection maps taken from the ground truth, as the activation pattern is
    assumed known) until the relative error beats the success threshold.
    Returns (model, restarts_used, trace); a full failure reports
    ``cfg.max_restarts`` restarts and the best attempt's model.
    """
    attempt_cfg = replace(
        cfg, max_sweeps=cfg.sweeps_per_attempt, lambda_schedule="residual"
    )
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.max_restarts + 1)
    best = None
    best_err = np.inf
    best_trace = None
    for attempt in range(cfg.max_restarts + 1):
        rng = np.random.default_rng(seeds[attempt])
        model0 = balanced_random_model(
            truth.types, psi.basis_size, rank, rng, psi, data.Y
        )
        model0 = scale_to_data(model0, psi, data.Y)
        model, trace = als_solve(model0, data, psi, attempt_cfg, truth=truth)
        err = trace.last().rel_error
        if err < cfg.success_threshold:
            return model, attempt, trace
        if err < best_err:
            best, best_err, best_trace = model, err, trace
    return best, cfg.max_restarts, best_trace
