"""Stabilized, rank-adaptive alternating least squares on the single-train format.

The train keeps ``r_min`` padding slots per interior bond: the stored rank
r_k counts the singular values above the activity threshold epsilon, while
the core arrays carry r_k + r_min bond slots during the solves.  Each local
problem augments the data term with singular-value-scaled penalties

    omega^2 ( || Sigma_{L,eps}^{-1} N ||^2 + || N Sigma_{R,eps}^{-1} ||^2 ),

where Sigma_L / Sigma_R hold the train's singular values at the bonds next
to the active site and values below epsilon are floored at epsilon before
inversion.  After every sweep the per-bond ranks are re-counted; freshly
opened slots receive singular values of size c * epsilon backed by random
directions orthonormalized against the kept ones, and surplus inactive slots
are discarded at random.  omega and epsilon then follow the relative
residual R: omega <- min(sqrt(R), omega / omega_min), epsilon <- s_min * R.

The residual driving the schedule is relative, ||f - y|| / ||y||: the
published starting values (omega = 1, epsilon = 0.2) match a unit-normalized
initial residual, and an absolute residual would make epsilon scale with the
data size, suppressing all rank growth.
"""

from __future__ import annotations

import time

import numpy as np

from .als import SolveTrace, SolverConfig, TraceRow
from .basis import DictionaryStack
from .models import Dataset, model_relative_error
from .stacks import SystemStacks
from .tt import TensorTrain, tt_orthogonalize


def salsa_micro_decompose(theta: TensorTrain, site: int):
    """Split a train around ``site`` (0-based) into orthogonal side tensors.

    Returns ``(left_cores, sigma_left, center, sigma_right, right_cores)``
    where the left cores are left-isometric, the right cores right-isometric,
    sigma_left / sigma_right are the singular values of the unfoldings that
    split before and after the site, and recombining
    ``left * diag(sigma_left) * center * diag(sigma_right) * right``
    reproduces the train.  Both stated groupings are singular value
    decompositions of the respective unfoldings.
    """
    d = theta.order
    if not 0 <= site < d:
        raise ValueError(f"site {site} out of range")
    work = tt_orthogonalize(theta, site + 1)
    cores = work.cores
    c = cores[site]
    a, p, b = c.shape
    u1, s1, _ = np.linalg.svd(c.reshape(a, p * b), full_matrices=False)
    _, s2, v2t = np.linalg.svd(c.reshape(a * p, b), full_matrices=False)
    left = [core.copy() for core in cores[:site]]
    right = [core.copy() for core in cores[site + 1 :]]
    # rotations are absorbed into the neighbors; at a chain boundary there
    # is no neighbor, so the stored gauge is kept there (the singular values
    # are still exact, only their coordinate alignment is dropped)
    if left:
        left[-1] = np.tensordot(left[-1], u1, axes=(2, 0))
    else:
        u1 = np.eye(a)
    if right:
        right[0] = np.tensordot(v2t, right[0], axes=(1, 0))
    else:
        if s2.size != b:
            raise ValueError(
                "boundary decomposition needs the last bond no wider than "
                "the core rows"
            )
        v2t = np.eye(b)
    rotated = np.einsum("ax,aib,by->xiy", u1, c, v2t.T)
    inv_l = np.where(s1 > 0, 1.0 / np.where(s1 > 0, s1, 1.0), 0.0)
    inv_r = np.where(s2 > 0, 1.0 / np.where(s2 > 0, s2, 1.0), 0.0)
    center = inv_l[:, None, None] * rotated * inv_r[None, None, :]
    return left, s1, center, s2, right


def _penalty_matrix(basis_vectors: np.ndarray, sigmas: np.ndarray, eps: float) -> np.ndarray:
    floored = np.maximum(sigmas, eps)
    return (basis_vectors / floored**2) @ basis_vectors.T


def salsa_local_solve(
    decomposition,
    psi: DictionaryStack,
    values: np.ndarray,
    omega: float,
    eps: float,
) -> np.ndarray:
    """Solve one stabilized local problem given a micro-decomposition.

    The unknown is the center core in the orthonormal-side gauge (the
    singular-value factors stay absorbed in it); the returned core minimizes
    the data misfit plus the omega^2-weighted inverse-singular-value
    penalties.  With omega = 0 this reduces to the plain local least-squares
    update.
    """
    left_cores, sigma_l, center, sigma_r, right_cores = decomposition
    values = np.asarray(values, dtype=float)
    core = sigma_l[:, None, None] * center * sigma_r[None, None, :]
    cores = list(left_cores) + [core] + list(right_cores)
    engine = SystemStacks(TensorTrain(cores), psi, values)
    site = len(left_cores)
    for k in range(site):
        engine.push_left(k)
    a, p, b = core.shape
    if omega > 0.0:
        w_l = np.diag(1.0 / np.maximum(sigma_l, eps) ** 2)
        w_r = np.diag(1.0 / np.maximum(sigma_r, eps) ** 2)
        penalty = omega**2 * (
            np.kron(w_l, np.eye(p * b)) + np.kron(np.eye(a * p), w_r)
        )
        new_core, _ = engine.solve_site(site, 0.0, penalty=penalty)
    else:
        new_core, _ = engine.solve_site(site, 0.0)
    return new_core


def _orthonormal_extension(base: np.ndarray, count: int, rng: np.random.Generator):
    """Random rows orthonormal to the rows of ``base`` (and each other)."""
    dim = base.shape[1]
    out = np.empty((count, dim))
    have = base
    for i in range(count):
        vec = rng.standard_normal(dim)
        for _ in range(2):
            vec -= have.T @ (have @ vec)
            norm = np.linalg.norm(vec)
            if norm < 1e-8:
                vec = rng.standard_normal(dim)
                continue
            vec /= norm
        out[i] = vec
        have = np.vstack([have, vec])
    return out


def _theoretical_max(engine: SystemStacks, k: int) -> int:
    p = engine.psi.basis_size
    left = 1
    for i in range(k + 1):
        left *= engine.cores[i].shape[1]
        if left > 10**9:
            break
    right = engine.n_eq
    for i in range(k + 1, engine.d):
        right *= engine.cores[i].shape[1]
        if right > 10**9:
            break
    return min(left, right)


def _adapt_bond(engine: SystemStacks, k: int, eps: float, r_min: int, c_sigma: float,
                rng: np.random.Generator) -> int:
    """Re-count and resize bond k with the orthogonality center at site k.

    Returns the stored (active) rank.  The core at k becomes left-isometric
    and the center moves to k+1.
    """
    a, p, b = engine.cores[k].shape
    u, s, vt = np.linalg.svd(engine.cores[k].reshape(a * p, b), full_matrices=False)
    active = max(1, int(np.sum(s > eps)))
    target = min(active + r_min, a * p, _theoretical_max(engine, k))
    next_unfold = engine.cores[k + 1].reshape(b, -1)
    base = vt @ next_unfold  # orthonormal rows while site k+1 is right-isometric
    current = s.size
    if target <= current:
        keep = np.arange(active)
        pool = np.arange(active, current)
        extra = target - active
        if extra > 0:
            chosen = rng.choice(pool.size, size=extra, replace=False)
            keep = np.concatenate([keep, pool[np.sort(chosen)]])
        new_left = u[:, keep]
        new_right = s[keep, None] * base[keep]
    else:
        grow = target - current
        fresh = _orthonormal_extension(base, grow, rng)
        new_left = np.hstack([u, _orthonormal_extension(u.T, grow, rng).T])
        new_right = np.vstack([s[:, None] * base, (c_sigma * eps) * fresh])
    engine.cores[k] = new_left.reshape(a, p, target)
    engine.cores[k + 1] = new_right.reshape((target,) + engine.cores[k + 1].shape[1:])
    engine.left_valid = min(engine.left_valid, k)
    engine.right_valid = max(engine.right_valid, k + 2)
    return active


def random_system_tt(
    d: int, p: int, n_eq: int, bond: int, rng: np.random.Generator
) -> TensorTrain:
    cores = []
    for k in range(d):
        a = 1 if k == 0 else bond
        b = n_eq if k == d - 1 else bond
        cores.append(rng.standard_normal((a, p, b)))
    return TensorTrain(cores)


def salsa_solve(
    data: Dataset,
    psi: DictionaryStack,
    cfg: SolverConfig,
    truth=None,
):
    """Rank-adaptive recovery of a single train with an equation leg.

    Returns (train, stored ranks, SolveTrace).  Stops early when the
    relative residual beats ``cfg.residual_tol``, the relative error against
    ``truth`` beats the success threshold, or the residual exceeds 1000x its
    initial value (divergence guard, flagged on the trace).
    """
    m, d = data.Y.shape
    p = psi.basis_size
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    train = random_system_tt(d, p, d, cfg.r_start + cfg.r_min, rng)
    engine = SystemStacks(tt_orthogonalize(train, 1), psi, data.Y)
    # scale so the initial image matches the data norm
    b0 = np.einsum("ji,xiy->jy", psi.matrices[0], engine.cores[0])
    yhat = np.einsum("jy,jyl->jl", b0, engine.right[1])
    scale = np.linalg.norm(data.Y) / max(np.linalg.norm(yhat), 1e-300)
    engine.cores[0] = engine.cores[0] * scale

    values_norm = float(np.linalg.norm(data.Y))
    omega = cfg.omega_start
    eps = cfg.eps_start
    ranks = [cfg.r_start] * (d - 1)
    trace = SolveTrace()
    initial_rel = None

    def solve_at(k: int) -> float:
        c = engine.cores[k]
        a, pp, b = c.shape
        u1, s1, _ = np.linalg.svd(c.reshape(a, pp * b), full_matrices=False)
        _, s2, v2t = np.linalg.svd(c.reshape(a * pp, b), full_matrices=False)
        w_l = _penalty_matrix(u1, s1, eps)
        w_r = _penalty_matrix(v2t.T, s2, eps)
        penalty = omega**2 * (
            np.kron(w_l, np.eye(pp * b)) + np.kron(np.eye(a * pp), w_r)
        )
        core, resid_sq = engine.solve_site(k, 0.0, penalty=penalty)
        engine.set_core(k, core)
        return resid_sq

    for sweep in range(1, cfg.max_sweeps + 1):
        tic = time.perf_counter()
        for k in range(d):
            solve_at(k)
            if k < d - 1:
                engine.shift_gauge_right(k)
                engine.push_left(k)
        for k in range(d - 1, -1, -1):
            if k < d - 1:
                solve_at(k)
            if k > 0:
                engine.shift_gauge_left(k)
                engine.push_right(k)
        # adaptation pass: center sits at site 0 and moves right bond by bond
        for k in range(d - 1):
            ranks[k] = _adapt_bond(engine, k, eps, cfg.r_min, cfg.c_sigma, rng)
        # restore the center to site 0, refreshing the right stacks
        for k in range(d - 1, 0, -1):
            engine.shift_gauge_left(k)
            engine.push_right(k)
        b0 = np.einsum("ji,xiy->jy", psi.matrices[0], engine.cores[0])
        pred = np.einsum("jy,jyl->jl", b0, engine.right[1])
        residual = float(np.linalg.norm(pred - data.Y))
        rel_resid = residual / values_norm if values_norm > 0 else residual
        rel = None
        if truth is not None:
            rel = model_relative_error(engine.train(), truth)
        trace.rows.append(
            TraceRow(sweep, residual, omega, eps, tuple(ranks),
                     time.perf_counter() - tic, rel)
        )
        if initial_rel is None:
            initial_rel = rel_resid
        if rel is not None and rel < cfg.success_threshold:
            break
        if cfg.residual_tol > 0 and rel_resid < cfg.residual_tol:
            break
        if rel_resid > 1e3 * max(initial_rel, 1.0):
            trace.diverged = True
            break
        omega = min(np.sqrt(rel_resid), omega / cfg.omega_min)
        # keep the activity threshold strictly positive so the inverse
        # singular-value penalties stay finite at exact fits
        eps = max(cfg.s_min * rel_resid, 1e-150)
    return engine.train(), tuple(ranks), trace
