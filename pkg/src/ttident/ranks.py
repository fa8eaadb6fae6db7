"""Audits of the predicted tensor-train ranks of structured systems.

Each check builds a ground-truth system, computes numerical ranks with a
dense SVD oracle (rank tolerance 1e-10 relative to the largest singular
value), and compares against the applicable bound:

* local-window systems: per-equation CP/TT rank bounds, reproduction by a
  selection model with n = s1+s2+2 types, and the single-train bound
  r_k <= k - s2 + 1 + N (s1 + s2);
* nearest-neighbor quadratic-form functions: ranks bounded by the basis size;
* the anharmonic chain: interior selection ranks all 4, per-equation ranks
  4 exactly at the two window bonds, and the single-train rank profile
  (4, 4+k, ..., d).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import make_basis
from .models import (
    LocalSystem,
    equation_tt,
    fput_ground_truth,
    local_system_model,
    model_relative_error,
    random_local_system,
    to_single_tt,
)
from .tt import tt_to_dense, unfolding_ranks

RANK_TOL = 1e-10


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _dense_equation(model, l: int) -> np.ndarray:
    return tt_to_dense(equation_tt(model, l))


def check_local_system(system: LocalSystem) -> list[CheckResult]:
    """Theorem-suite checks (i)-(iv) for one local-window system instance."""
    d, s1, s2 = system.d, system.s1, system.s2
    model = local_system_model(system)
    results = []

    bound_n = max(int(np.count_nonzero(c)) for c in system.coeffs)

    ok_profile = True
    detail = ""
    for l in range(d):
        theta = _dense_equation(model, l)
        ranks = unfolding_ranks(theta, RANK_TOL)
        for k, r in enumerate(ranks):
            inside = l - s1 <= k < l + s2
            limit = bound_n if inside else 1
            if r > limit:
                ok_profile = False
                detail = f"equation {l}: rank {r} at bond {k} exceeds {limit}"
    results.append(
        CheckResult(
            "per-equation rank profile (<= N inside the window, 1 outside)",
            ok_profile,
            detail or f"N = {bound_n}, all {d} equations conform",
        )
    )

    n_expected = s1 + s2 + 2
    ok_sel = model.n_types == n_expected and max(model.ranks) <= bound_n
    results.append(
        CheckResult(
            "selection model with n = s1+s2+2 and ranks <= N",
            ok_sel,
            f"n = {model.n_types}, max rank {max(model.ranks)}, N = {bound_n}",
        )
    )

    single = to_single_tt(model)
    err = model_relative_error(single, model)
    ok_single = err < 1e-10
    detail = f"reproduction error {err:.1e}"
    for k, r in enumerate(single.ranks):
        limit = (k + 1) - s2 + 1 + bound_n * (s1 + s2)
        if r > limit:
            ok_single = False
            detail = f"single-train rank {r} at bond {k} exceeds {limit}"
    results.append(
        CheckResult(
            "single-train ranks <= k - s2 + 1 + N(s1+s2)",
            ok_single,
            detail,
        )
    )
    return results


def check_quadratic_forms(d: int, p: int, seed: int) -> CheckResult:
    """Nearest-neighbor quadratic forms of low-degree monomials: ranks <= p.

    Builds theta = sum_l sum_{i+j < p} a(i,j,l) e_i^(l) e_j^(l+1) (monomial
    dictionary) and verifies the dense-oracle ranks.
    """
    rng = np.random.default_rng(seed)
    theta = np.zeros((p,) * d)
    for l in range(d - 1):
        for i in range(p):
            for j in range(p - i):
                idx = [0] * d
                idx[l] = i
                idx[l + 1] = j
                theta[tuple(idx)] += rng.uniform(-1.0, 1.0)
    ranks = unfolding_ranks(theta, RANK_TOL)
    ok = all(r <= p for r in ranks)
    return CheckResult(
        f"quadratic-form function ranks <= p (d={d}, p={p})",
        ok,
        f"ranks {ranks}",
    )


def check_fput(d: int, beta: float = 0.7) -> list[CheckResult]:
    """Chain-model rank identities for beta != 0, no mean field."""
    basis = make_basis("monomial", 4)
    model = fput_ground_truth(d, beta, 0.0, basis)
    results = []

    ok = all(r == 4 for r in model.ranks)
    results.append(
        CheckResult(
            f"selection-format interior ranks all 4 (d={d})",
            ok,
            f"ranks {model.ranks}",
        )
    )

    ok = True
    detail = ""
    for l in range(d):
        ranks = unfolding_ranks(_dense_equation(model, l), RANK_TOL)
        for k, r in enumerate(ranks):
            expected = 4 if k in (l - 1, l) else 1
            if r != expected:
                ok = False
                detail = f"equation {l}: ranks {ranks}"
    results.append(
        CheckResult(
            f"per-equation ranks 4 at bonds l-1, l and 1 elsewhere (d={d})",
            ok,
            detail or "all equations conform",
        )
    )

    single = to_single_tt(model)
    # bond k (0-based) separates sites 1..k+1 from the rest: rank 4 at the
    # first bond, 4 + (k+1) at interior bonds, d on the boundary leg
    expected = tuple(4 if k == 0 else 4 + (k + 1) for k in range(d - 1))
    ok = single.ranks == expected and single.boundary_dim == d
    results.append(
        CheckResult(
            f"single-train rank profile (d={d})",
            ok,
            f"got {single.ranks} + boundary {single.boundary_dim}, expected {expected} + {d}",
        )
    )
    return results


def run_rank_audit(
    instances: int = 100,
    d_values=(4, 5, 6, 7, 8),
    ranges=((1, 1), (2, 1)),
    nnz: int = 6,
    seed: int = 0,
) -> list[CheckResult]:
    """The full randomized audit; returns one result line per check."""
    rng = np.random.default_rng(seed)
    basis = make_basis("legendre", 4)
    results: list[CheckResult] = []
    for i in range(instances):
        s1, s2 = ranges[i % len(ranges)]
        d = int(d_values[i % len(d_values)])
        system = random_local_system(
            d, nnz, seed=int(rng.integers(2**63)), basis=basis, s1=s1, s2=s2
        )
        for res in check_local_system(system):
            res.name = f"[instance {i}, d={d}, range=({s1},{s2})] {res.name}"
            results.append(res)
    for d in (3, 4, 5, 6):
        results.append(check_quadratic_forms(d, 4, seed=int(rng.integers(2**63))))
        results.append(check_quadratic_forms(d, 3, seed=int(rng.integers(2**63))))
    for d in (3, 4, 5, 6):
        results.extend(check_fput(d))
    return results
