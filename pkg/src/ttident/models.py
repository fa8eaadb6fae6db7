"""Tensor-network models for whole systems of governing equations.

Three hypothesis formats are supported:

* per-equation tensor trains (a special case of the selection format with one
  activation type per equation),
* the selection format: per-site stacks of activation-indexed cores combined
  with 0/1 selection maps that pick, for every (variable, equation) pair, the
  activation type of that variable in that equation,
* a single tensor train whose right boundary leg carries the equation index.

Ground-truth generators cover the Fermi-Pasta-Ulam-Tsingou chain (with
per-site cubic couplings and optional mean-field terms) and randomized
local-interaction systems with a fixed window and sparse random coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import Basis, DictionaryStack, basis_change_matrix, make_basis
from .tt import (
    TensorTrain,
    TTError,
    tt_add,
    tt_from_dense,
    tt_inner,
    tt_norm,
    tt_round,
    tt_scale,
)


class ModelError(ValueError):
    pass


@dataclass
class Dataset:
    """Observation pairs: states X (m x d) and derivative values Y (m x d)."""

    X: np.ndarray
    Y: np.ndarray
    seed: int | None = None
    sigma: float = 0.0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.shape != self.Y.shape or self.X.ndim != 2:
            raise ModelError("X and Y must be matching m x d matrices")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ModelError("dataset contains non-finite entries")

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


# ---------------------------------------------------------------------------
# selection format
# ---------------------------------------------------------------------------


@dataclass
class SelectionModel:
    """Per-site stacks of activation-indexed cores plus selection maps.

    ``stacks[k]`` has shape ``(n, r_{k-1}, p, r_k)``: one order-3 core per
    activation type.  ``types[k, l]`` gives the activation type (0-based) of
    variable k in equation l; the equivalent 0/1 selection matrices S^k are
    exposed by :meth:`selection_maps`.
    """

    stacks: list[np.ndarray]
    types: np.ndarray

    def __post_init__(self):
        self.types = np.asarray(self.types, dtype=int)
        d = len(self.stacks)
        if self.types.shape != (d, d):
            raise ModelError(f"types must be {d} x {d}, got {self.types.shape}")
        n = self.stacks[0].shape[0]
        if self.stacks[0].shape[1] != 1 or self.stacks[-1].shape[3] != 1:
            raise ModelError("boundary bond dimensions must be 1")
        for k, stack in enumerate(self.stacks):
            if stack.ndim != 4 or stack.shape[0] != n:
                raise ModelError(f"stack {k} malformed: shape {stack.shape}")
            if k and stack.shape[1] != self.stacks[k - 1].shape[3]:
                raise ModelError(f"bond mismatch between sites {k - 1} and {k}")
        if self.types.min() < 0 or self.types.max() >= n:
            raise ModelError("activation type out of range")

    @property
    def n_types(self) -> int:
        return self.stacks[0].shape[0]

    @property
    def n_variables(self) -> int:
        return len(self.stacks)

    @property
    def basis_size(self) -> int:
        return self.stacks[0].shape[2]

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(stack.shape[3] for stack in self.stacks[:-1])

    def selection_maps(self) -> list[np.ndarray]:
        """The 0/1 matrices S^k with S^k[q, l] = 1 iff types[k, l] == q."""
        d = self.n_variables
        maps = []
        for k in range(d):
            s = np.zeros((self.n_types, d))
            s[self.types[k], np.arange(d)] = 1.0
            maps.append(s)
        return maps

    def scale(self, alpha: float) -> "SelectionModel":
        stacks = [s.copy() for s in self.stacks]
        stacks[0] = stacks[0] * alpha
        return SelectionModel(stacks, self.types.copy())


def build_selection_maps(d: int, s1: int, s2: int) -> np.ndarray:
    """Activation types of the canonical local-window selection tensor.

    Equation l activates the sites l-s1 .. l+s2 (clipped to the chain) with
    types 1 .. s1+s2+1 in window order; all other sites are inactive (type
    0).  The number of types is n = s1 + s2 + 2.
    """
    if s1 < 0 or s2 < 0:
        raise ModelError("interaction range must be nonnegative")
    types = np.zeros((d, d), dtype=int)
    for l in range(d):
        for k in range(max(0, l - s1), min(d, l + s2 + 1)):
            types[k, l] = k - (l - s1) + 1
    return types


def selection_tensor_entries(types: np.ndarray) -> list[np.ndarray]:
    """One-hot selection matrices for a types table (S^k, shape n x d)."""
    d = types.shape[0]
    n = int(types.max()) + 1
    maps = []
    for k in range(d):
        s = np.zeros((n, d))
        s[types[k], np.arange(d)] = 1.0
        maps.append(s)
    return maps


def independent_model(trains: list[TensorTrain]) -> SelectionModel:
    """Wrap d independent per-equation trains as a selection model (n = d).

    This is the fully uncoupled format: equation l selects its own stack
    slice at every site, so the selection maps are identity matrices.
    """
    d = len(trains)
    p = trains[0].mode_dims[0]
    for t in trains:
        if t.order != d or t.boundary_dim != 1:
            raise ModelError("need d scalar-valued trains over d variables")
    stacks = []
    for k in range(d):
        r_prev = max(t.cores[k].shape[0] for t in trains)
        r_next = max(t.cores[k].shape[2] for t in trains)
        stack = np.zeros((d, r_prev, p, r_next))
        for l, t in enumerate(trains):
            c = t.cores[k]
            stack[l, : c.shape[0], :, : c.shape[2]] = c
        stacks.append(stack)
    types = np.tile(np.arange(d), (d, 1))
    return SelectionModel(stacks, types)


# ---------------------------------------------------------------------------
# FPUT ground truth
# ---------------------------------------------------------------------------


def fput_rhs(x: np.ndarray, beta, mfield) -> np.ndarray:
    """Right-hand side of the anharmonic nearest-neighbor chain.

    f_l(x) = (x_{l+1} - 2 x_l + x_{l-1}) + beta_l (x_{l+1} - x_l)^3
             - beta_l (x_l - x_{l-1})^3 + sum_j m_j x_j,
    with the fixed-end convention x_0 = x_{d+1} = 0.  Accepts a single state
    (d,) or a batch (m, d).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = x[None, :] if single else x
    m, d = xs.shape
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (d,))
    mfield = np.broadcast_to(np.asarray(mfield, dtype=float), (d,))
    xp = np.zeros((m, d + 2))
    xp[:, 1:-1] = xs
    fwd = xp[:, 2:] - xp[:, 1:-1]
    bwd = xp[:, 1:-1] - xp[:, :-2]
    y = fwd - bwd + beta * (fwd**3 - bwd**3) + (xs @ mfield)[:, None]
    return y[0] if single else y


def _fput_monomial_stacks(d: int, beta: np.ndarray, mfield: np.ndarray) -> list[np.ndarray]:
    """Explicit rank-4 selection-format cores in the monomial basis.

    Channel conventions on every shared bond: slot 0 carries the constant
    prefix / the pending mean-field sum, slot 1 the completed function.  The
    window cores of an equation additionally use slots 0..3 internally.  For
    equations with beta_l = 0 a dedicated linear window layout is used (the
    generic one requires dividing by beta_l).
    """
    p = 4
    u = np.eye(p)
    stacks = []
    for k in range(d):
        r_prev = 1 if k == 0 else 4
        r_next = 1 if k == d - 1 else 4
        stack = np.zeros((4, r_prev, p, r_next))

        # type 0: inactive site (|k - l| > 1)
        ina = np.zeros((4, p, 4))
        ina[0, :, 0] = u[0]
        ina[0, :, 1] = mfield[k] * u[1]
        ina[1, :, 1] = u[0]

        # type 1: left neighbor (k = l - 1, equation l = k + 1)
        left = np.zeros((4, p, 4))
        if k + 1 < d:
            b = beta[k + 1]
            if b != 0.0:
                for j in range(4):
                    left[0, :, j] = u[j]
                left[1, :, 3] = u[0] / b
            else:
                left[0, :, 0] = u[0]
                left[0, :, 1] = u[1]
                left[1, :, 2] = u[0]

        # type 2: the equation's own site (k = l)
        diag = np.zeros((4, p, 4))
        b = beta[k]
        m_prev = mfield[k - 1] if k > 0 else 0.0
        m_next = mfield[k + 1] if k + 1 < d else 0.0
        if b != 0.0:
            diag[0, :, 0] = (-2.0 + mfield[k]) * u[1] - 2.0 * b * u[3]
            diag[0, :, 1] = (1.0 + m_next) * u[0] + 3.0 * b * u[2]
            diag[0, :, 2] = -3.0 * b * u[1]
            diag[0, :, 3] = b * u[0]
            diag[1, :, 0] = (1.0 + m_prev) * u[0] + 3.0 * b * u[2]
            diag[2, :, 0] = -3.0 * b * u[1]
            diag[3, :, 0] = b * u[0]
        else:
            diag[0, :, 0] = (-2.0 + mfield[k]) * u[1]
            diag[0, :, 1] = (1.0 + m_next) * u[0]
            diag[0, :, 2] = u[0]
            diag[1, :, 0] = (1.0 + m_prev) * u[0]
            diag[2, :, 0] = u[0]

        # type 3: right neighbor (k = l + 1, equation l = k - 1)
        right = np.zeros((4, p, 4))
        if k > 0:
            b = beta[k - 1]
            if b != 0.0:
                right[3, :, 0] = u[0] / b
                for j in range(4):
                    right[j, :, 1] = u[j]
            else:
                right[2, :, 0] = u[0]
                right[0, :, 1] = u[0]
                right[1, :, 1] = u[1]

        full = np.stack([ina, left, diag, right])
        if k == 0:
            stack[:] = full[:, :1, :, :]          # only the constant-prefix row
        elif k == d - 1:
            # terminate with each type's completed-function column; the
            # pending channel has no later site left, so it contributes only
            # the inactive core's own mean-field placement
            last = np.zeros((4, 4, p, 1))
            last[0] = full[0][:, :, 1:2]
            last[2] = full[2][:, :, 0:1]
            last[3] = full[3][:, :, 1:2]
            stack[:] = last
        else:
            stack[:] = full
        stacks.append(stack)
    return stacks


def fput_ground_truth(d: int, beta, mfield, basis: Basis) -> SelectionModel:
    """Exact selection-format representation of the chain's coefficient tensors.

    Cores are constructed in the monomial basis {1, x, x^2, x^3} and converted
    to ``basis`` afterwards; all interior bond dimensions equal 4 and there
    are n = 4 activation types.
    """
    if d < 2:
        raise ModelError("need at least two variables")
    if basis.size != 4:
        raise ModelError("the chain ground truth requires a basis of size 4")
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (d,)).copy()
    mfield = np.broadcast_to(np.asarray(mfield, dtype=float), (d,)).copy()
    stacks = _fput_monomial_stacks(d, beta, mfield)
    mono = make_basis("monomial", 4)
    conv = basis_change_matrix(mono, basis)
    stacks = [np.einsum("ij,qxjy->qxiy", conv, s) for s in stacks]
    return SelectionModel(stacks, build_selection_maps(d, 1, 1))


# ---------------------------------------------------------------------------
# randomized local-interaction systems
# ---------------------------------------------------------------------------


@dataclass
class LocalSystem:
    """Sparse random coefficients on a sliding (s1, s2) window.

    ``coeffs[l]`` is the dense window tensor of equation l over the full
    (unclipped) window sites l-s1 .. l+s2; out-of-range variables are fixed
    at 0, so clipping amounts to contracting the basis evaluation at 0 into
    the out-of-range legs.
    """

    d: int
    s1: int
    s2: int
    coeffs: list[np.ndarray]
    basis: Basis
    nnz: int
    seed: int | None = None

    @property
    def window(self) -> int:
        return self.s1 + self.s2 + 1

    def clipped_coeff(self, l: int) -> np.ndarray:
        """Window tensor of equation l with out-of-range legs contracted."""
        psi0 = self.basis.evaluate(0.0)
        c = self.coeffs[l]
        for _ in range(max(0, self.s1 - l)):
            c = np.tensordot(psi0, c, axes=(0, 0))
        for _ in range(max(0, l + self.s2 - (self.d - 1))):
            c = np.tensordot(c, psi0, axes=(c.ndim - 1, 0))
        return c


def random_local_system(
    d: int,
    nnz: int,
    seed: int,
    basis: Basis,
    s1: int = 1,
    s2: int = 1,
) -> LocalSystem:
    """Draw a system with ``nnz`` nonzero window coefficients per equation.

    Supports are drawn uniformly without replacement over the full window
    index set; values are i.i.d. uniform on [-1, 1].  Deterministic in seed.
    """
    p = basis.size
    window = s1 + s2 + 1
    total = p**window
    if not 0 < nnz <= total:
        raise ModelError(f"nnz must lie in 1..{total}")
    rng = np.random.default_rng(seed)
    coeffs = []
    for _ in range(d):
        flat = np.zeros(total)
        support = rng.choice(total, size=nnz, replace=False)
        flat[support] = rng.uniform(-1.0, 1.0, size=nnz)
        coeffs.append(flat.reshape((p,) * window))
    return LocalSystem(d, s1, s2, coeffs, basis, nnz, seed)


def local_system_rhs(system: LocalSystem, x: np.ndarray) -> np.ndarray:
    """Evaluate all equations of a local system at states x (m, d)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = x[None, :] if single else x
    m, d = xs.shape
    if d != system.d:
        raise ModelError("state dimension mismatch")
    xp = np.zeros((m, d + system.s1 + system.s2))
    xp[:, system.s1 : system.s1 + d] = xs
    values = system.basis.evaluate(xp)  # (m, d+s1+s2, p)
    y = np.empty((m, d))
    for l in range(d):
        out = values[:, l, :] @ system.coeffs[l].reshape(system.basis.size, -1)
        for w in range(1, system.window):
            out = np.einsum(
                "jpr,jp->jr",
                out.reshape(m, system.basis.size, -1),
                values[:, l + w, :],
            )
        y[:, l] = out[:, 0]
    return y[0] if single else y


def local_system_model(system: LocalSystem) -> SelectionModel:
    """Selection-format representation with n = s1+s2+2 activation types.

    Each equation's clipped window tensor is decomposed by TT-SVD (ranks are
    bounded by the number of nonzero window coefficients) and the resulting
    cores are placed at the window's activation types; inactive sites pass a
    constant through slot 0.
    """
    d, s1, s2 = system.d, system.s1, system.s2
    p = system.basis.size
    types = build_selection_maps(d, s1, s2)
    n = s1 + s2 + 2
    const = system.basis.constant_vector()

    window_tts: list[TensorTrain] = []
    starts: list[int] = []
    for l in range(d):
        c = system.clipped_coeff(l)
        starts.append(max(0, l - s1))
        window_tts.append(tt_from_dense(c, rel_tol=0.0))

    bonds = np.ones(d - 1, dtype=int)
    for l in range(d):
        a = starts[l]
        for i, r in enumerate(window_tts[l].ranks):
            bonds[a + i] = max(bonds[a + i], r)

    stacks = []
    for k in range(d):
        r_prev = 1 if k == 0 else int(bonds[k - 1])
        r_next = 1 if k == d - 1 else int(bonds[k])
        stack = np.zeros((n, r_prev, p, r_next))
        stack[0, 0, :, 0] = const
        for q in range(1, n):
            l = k + s1 - (q - 1)
            if not 0 <= l < d:
                continue
            a = starts[l]
            core = window_tts[l].cores[k - a]
            stack[q, : core.shape[0], :, : core.shape[2]] = core
        stacks.append(stack)
    return SelectionModel(stacks, types)


# ---------------------------------------------------------------------------
# cross-format extraction, evaluation, and error metrics
# ---------------------------------------------------------------------------


def equation_tt(model, l: int) -> TensorTrain:
    """Scalar-valued train of equation l (0-based) of a system model."""
    if isinstance(model, SelectionModel):
        if not 0 <= l < model.n_variables:
            raise ModelError(f"equation index {l} out of range")
        cores = [
            np.ascontiguousarray(stack[model.types[k, l]])
            for k, stack in enumerate(model.stacks)
        ]
        return TensorTrain(cores)
    if isinstance(model, TensorTrain):
        if not 0 <= l < model.boundary_dim:
            raise ModelError(f"equation index {l} out of range")
        cores = [c.copy() for c in model.cores]
        cores[-1] = np.ascontiguousarray(cores[-1][:, :, l : l + 1])
        return TensorTrain(cores)
    raise ModelError(f"unsupported model type {type(model)!r}")


def system_size(model) -> int:
    if isinstance(model, SelectionModel):
        return model.n_variables
    if isinstance(model, TensorTrain):
        return model.boundary_dim
    raise ModelError(f"unsupported model type {type(model)!r}")


def to_single_tt(model: SelectionModel, rel_tol: float = 1e-12) -> TensorTrain:
    """Contract the selection structure into one train with an equation leg.

    The per-equation trains are summed with their boundary unit vectors and
    re-compressed by SVD at ``rel_tol``; the represented system is unchanged
    up to that tolerance.
    """
    d = model.n_variables
    total = None
    for l in range(d):
        eq = equation_tt(model, l)
        cores = [c.copy() for c in eq.cores]
        last = np.zeros(cores[-1].shape[:2] + (d,))
        last[:, :, l] = cores[-1][:, :, 0]
        cores[-1] = last
        term = TensorTrain(cores)
        total = term if total is None else tt_add(total, term)
        max_bond = max((c.shape[2] for c in total.cores[:-1]), default=1)
        if max_bond * model.basis_size * max_bond > 10**8:
            raise ModelError("intermediate bond dimensions exceed the memory guard")
    return tt_round(total, rel_tol)


def model_relative_error(estimate, truth) -> float:
    """Relative Frobenius deviation over the whole system.

    sqrt(sum_l ||est_l - true_l||^2) / sqrt(sum_l ||true_l||^2), computed
    through per-equation train extraction and train contractions only (no
    dense materialization).  ||est_l - true_l|| is evaluated by
    canonicalizing the difference train, which avoids the sqrt(eps)
    cancellation floor of the Gram expansion <a,a> - 2<a,b> + <b,b>; tiny
    negative round-off is clamped to zero.
    """
    d = system_size(truth)
    if system_size(estimate) != d:
        raise ModelError("system sizes differ")
    num = 0.0
    den = 0.0
    for l in range(d):
        a = equation_tt(estimate, l)
        b = equation_tt(truth, l)
        num += tt_norm(tt_add(a, tt_scale(b, -1.0))) ** 2
        den += tt_inner(b, b)
    if den <= 0.0:
        raise ModelError("truth has zero norm")
    return float(np.sqrt(max(num, 0.0) / den))


def evaluate_tt(train: TensorTrain, psi: DictionaryStack) -> np.ndarray:
    """Evaluate the represented function(s) at all samples: (m, r_d) array."""
    if train.order != psi.n_variables or train.mode_dims[0] != psi.basis_size:
        raise ModelError("dictionary does not match the train")
    m = psi.n_samples
    acc = np.ones((m, 1))
    for k, core in enumerate(train.cores):
        b = np.tensordot(psi.matrices[k], core, axes=(1, 1))
        acc = np.matmul(acc[:, None, :], b)[:, 0, :]
    return acc


def evaluate_model(model, psi: DictionaryStack) -> np.ndarray:
    """Forward map: Y[j, l] = f_l(x^j) for a system model.

    Uses left-to-right stack contraction (never materializes the full product
    dictionary).
    """
    if isinstance(model, TensorTrain):
        return evaluate_tt(model, psi)
    if not isinstance(model, SelectionModel):
        raise ModelError(f"unsupported model type {type(model)!r}")
    d = model.n_variables
    if psi.n_variables != d or psi.basis_size != model.basis_size:
        raise ModelError("dictionary does not match the model")
    m = psi.n_samples
    acc = np.ones((m, d, 1))
    for k, stack in enumerate(model.stacks):
        b = np.tensordot(psi.matrices[k], stack, axes=(1, 2))
        bsel = b[:, model.types[k]]
        acc = np.matmul(acc[:, :, None, :], bsel)[:, :, 0, :]
    return acc[:, :, 0]
