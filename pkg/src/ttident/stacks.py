"""Incremental stack engines for alternating local solves.

A stack engine caches the partial contractions of dictionary matrices, cores,
and (for the selection format) selection maps on both sides of a site, so a
local normal-equations operator can be assembled in O(m d (p r^2 n)^2) and a
stack update in O(m d p r^2 n).

Conventions (0-based sites):
  left[k]  = contraction of sites 0..k-1, entering site k from the left;
  right[k] = contraction of sites k..d-1, entering site k-1 from the right.
``left[0]`` and ``right[d]`` are boundary stubs.  The solver controls the
sweep order and calls ``push_left`` / ``push_right`` after updating a core;
``left_valid`` / ``right_valid`` record how far the caches are trustworthy.
"""

from __future__ import annotations

import numpy as np

from .basis import DictionaryStack
from .models import SelectionModel
from .tt import TensorTrain


def _chunks(m: int, size: int = 2048):
    for start in range(0, m, size):
        yield slice(start, min(start + size, m))


class SelectionStacks:
    """Stack engine for the selection format.

    Stacks carry the equation index: left[k] and right[k] have shape
    (m, d, bond).  The local unknown at site k is the whole activation stack
    with r_{k-1} * p * n * r_k entries; its normal-equations operator is
    block-diagonal over activation types because every (sample, equation)
    row touches exactly one type.
    """

    def __init__(self, model: SelectionModel, psi: DictionaryStack, values: np.ndarray):
        if psi.n_variables != model.n_variables or psi.basis_size != model.basis_size:
            raise ValueError("dictionary does not match the model")
        self.stacks = [s.copy() for s in model.stacks]
        self.types = model.types.copy()
        self.psi = psi
        self.values = np.asarray(values, dtype=float)
        self.d = model.n_variables
        self.m = psi.n_samples
        self.values_sq = float(np.sum(self.values**2))
        self.left: list = [None] * (self.d + 1)
        self.right: list = [None] * (self.d + 1)
        self.left[0] = np.ones((self.m, self.d, 1))
        self.right[self.d] = np.ones((self.m, self.d, 1))
        self.left_valid = 0
        self.right_valid = self.d
        for k in range(self.d - 1, 0, -1):
            self.push_right(k)

    def model(self) -> SelectionModel:
        return SelectionModel([s.copy() for s in self.stacks], self.types.copy())

    def _site_matrices(self, k: int) -> np.ndarray:
        """Per-sample transfer matrices with the equation's type selected."""
        b = np.tensordot(self.psi.matrices[k], self.stacks[k], axes=(1, 2))
        return b[:, self.types[k]]

    def push_left(self, k: int):
        """Recompute left[k+1] from left[k] and the current core at site k."""
        bsel = self._site_matrices(k)
        self.left[k + 1] = np.matmul(self.left[k][:, :, None, :], bsel)[:, :, 0, :]
        self.left_valid = max(self.left_valid, k + 1)

    def push_right(self, k: int):
        """Recompute right[k] from right[k+1] and the current core at site k."""
        bsel = self._site_matrices(k)
        self.right[k] = np.matmul(bsel, self.right[k + 1][:, :, :, None])[:, :, :, 0]
        self.right_valid = min(self.right_valid, k)

    def set_core(self, k: int, stack: np.ndarray):
        if stack.shape != self.stacks[k].shape:
            raise ValueError("core shape changed")
        self.stacks[k] = stack
        self.left_valid = min(self.left_valid, k)
        self.right_valid = max(self.right_valid, k + 1)

    def local_system(self, k: int):
        """Assemble the type-blocked normal equations at site k.

        Returns (gram_blocks, rhs_blocks) where block q acts on the
        flattened (r_prev, p, r_next) core of activation type q; types
        selected by no equation get ``None`` entries.

        The Gram matrix separates over the sample index: the (left x right)
        interface factor and the dictionary factor are accumulated as two
        tall matrices whose product assembles the full operator, so all heavy
        lifting is dense matrix multiplication.
        """
        n, a, p, b = self.stacks[k].shape
        left = self.left[k]
        right = self.right[k + 1]
        psi_k = self.psi.matrices[k]
        m, ab = self.m, a * b
        t1 = (left[:, :, :, None] * right[:, :, None, :]).reshape(m, self.d, ab)
        z = (psi_k[:, :, None] * psi_k[:, None, :]).reshape(m, p * p)
        gram_blocks: list = []
        rhs_blocks: list = []
        for q in range(n):
            cols = np.flatnonzero(self.types[k] == q)
            if cols.size == 0:
                gram_blocks.append(None)
                rhs_blocks.append(None)
                continue
            tq = t1[:, cols, :]
            if cols.size == 1:
                tq1 = tq[:, 0, :]
                w = (tq1[:, :, None] * tq1[:, None, :]).reshape(m, ab * ab)
                u = self.values[:, cols] * tq1
            else:
                w = np.matmul(tq.transpose(0, 2, 1), tq).reshape(m, ab * ab)
                u = np.matmul(self.values[:, None, cols], tq)[:, 0, :]
            cmat = w.T @ z
            g = cmat.reshape(a, b, a, b, p, p)
            g = g.transpose(0, 4, 1, 2, 5, 3).reshape(a * p * b, a * p * b)
            gram_blocks.append(g)
            v = (u.T @ psi_k).reshape(a, b, p).transpose(0, 2, 1).reshape(-1)
            rhs_blocks.append(v)
        return gram_blocks, rhs_blocks

    def solve_site(self, k: int, lam: float):
        """Minimize the ridge-regularized local objective at site k.

        Returns (new stack, squared residual at the new stack).  The ridge
        weight is floored at the Gram matrix's round-off scale so that a
        decaying schedule cannot drive the solve singular (the selection
        format has an exact gauge null space).  With ``lam == 0`` the
        minimum-norm least-squares solution is used; a rank-deficient system
        is reported on ``last_solve_rank_deficient`` (callers wanting a
        unique solution must supply lam > 0).
        """
        n, a, p, b = self.stacks[k].shape
        grams, rhs = self.local_system(k)
        new = np.empty((n, a, p, b))
        resid_sq = self.values_sq
        self.last_solve_rank_deficient = False
        for q in range(n):
            g, v = grams[q], rhs[q]
            if g is None:
                new[q] = 0.0
                continue
            if lam > 0.0:
                eff = max(lam, 1e-14 * float(np.trace(g)) / g.shape[0])
                sol = np.linalg.solve(g + eff * np.eye(g.shape[0]), v)
            else:
                sol, _, rank, _ = np.linalg.lstsq(g, v, rcond=None)
                if rank < g.shape[0]:
                    self.last_solve_rank_deficient = True
            resid_sq += float(sol @ g @ sol - 2.0 * sol @ v)
            new[q] = sol.reshape(a, p, b)
        return new, max(resid_sq, 0.0)

    def shift_gauge_right(self, k: int):
        """Orthonormalize the bond k -> k+1 (QR over the stacked types).

        The represented system is unchanged: the triangular factor is
        absorbed into the next site's stack for every activation type.
        """
        n, a, p, b = self.stacks[k].shape
        q, r = np.linalg.qr(self.stacks[k].reshape(n * a * p, b))
        self.stacks[k] = q.reshape(n, a, p, q.shape[1])
        self.stacks[k + 1] = np.einsum("xz,qzpy->qxpy", r, self.stacks[k + 1])
        self.left_valid = min(self.left_valid, k)
        self.right_valid = max(self.right_valid, k + 2)

    def shift_gauge_left(self, k: int):
        """Orthonormalize the bond k-1 -> k from the right (LQ)."""
        n, a, p, b = self.stacks[k].shape
        q, r = np.linalg.qr(self.stacks[k].transpose(1, 0, 2, 3).reshape(a, n * p * b).T)
        self.stacks[k] = q.T.reshape(q.shape[1], n, p, b).transpose(1, 0, 2, 3)
        self.stacks[k - 1] = np.einsum("qxpy,zy->qxpz", self.stacks[k - 1], r)
        self.left_valid = min(self.left_valid, k - 1)
        self.right_valid = max(self.right_valid, k + 1)

    def rebuild(self):
        """From-scratch recomputation of every stack (consistency oracle)."""
        self.left[0] = np.ones((self.m, self.d, 1))
        self.right[self.d] = np.ones((self.m, self.d, 1))
        for k in range(self.d - 1):
            self.push_left(k)
        for k in range(self.d - 1, 0, -1):
            self.push_right(k)
        self.left_valid = self.d - 1
        self.right_valid = 1

    def predictions(self) -> np.ndarray:
        bsel = self._site_matrices(self.d - 1)
        out = np.einsum("jlx,jlxy->jly", self.left[self.d - 1], bsel)
        return out[:, :, 0]


class SystemStacks:
    """Stack engine for the single-train format with an equation leg.

    left[k] has shape (m, bond); right[k] has shape (m, bond, d) and carries
    the equation leg from the right boundary.
    """

    def __init__(self, train: TensorTrain, psi: DictionaryStack, values: np.ndarray):
        if psi.n_variables != train.order or psi.basis_size != train.mode_dims[0]:
            raise ValueError("dictionary does not match the train")
        self.cores = [c.copy() for c in train.cores]
        self.psi = psi
        self.values = np.asarray(values, dtype=float)
        self.d = train.order
        self.n_eq = train.boundary_dim
        self.m = psi.n_samples
        self.values_sq = float(np.sum(self.values**2))
        self.left: list = [None] * (self.d + 1)
        self.right: list = [None] * (self.d + 1)
        self.left[0] = np.ones((self.m, 1))
        self.right[self.d] = np.broadcast_to(
            np.eye(self.n_eq), (self.m, self.n_eq, self.n_eq)
        )
        self.left_valid = 0
        self.right_valid = self.d
        for k in range(self.d - 1, 0, -1):
            self.push_right(k)

    def train(self) -> TensorTrain:
        return TensorTrain([c.copy() for c in self.cores])

    def _site_matrices(self, k: int) -> np.ndarray:
        return np.tensordot(self.psi.matrices[k], self.cores[k], axes=(1, 1))

    def push_left(self, k: int):
        b = self._site_matrices(k)
        self.left[k + 1] = np.matmul(self.left[k][:, None, :], b)[:, 0, :]
        self.left_valid = max(self.left_valid, k + 1)

    def push_right(self, k: int):
        self.right[k] = np.matmul(self._site_matrices(k), self.right[k + 1])
        self.right_valid = min(self.right_valid, k)

    def set_core(self, k: int, core: np.ndarray):
        self.cores[k] = core
        self.left_valid = min(self.left_valid, k)
        self.right_valid = max(self.right_valid, k + 1)

    def local_system(self, k: int):
        """Normal equations for the core at site k: (gram, rhs)."""
        a, p, b = self.cores[k].shape
        left = self.left[k]
        right = self.right[k + 1]
        psi_k = self.psi.matrices[k]
        gram = np.zeros((a * a * p * p, b * b))
        rhs = np.zeros((a * p, b))
        for sl in _chunks(self.m, 4096):
            lz = (left[sl][:, :, None] * psi_k[sl][:, None, :]).reshape(-1, a * p)
            pz = (lz[:, :, None] * lz[:, None, :]).reshape(-1, a * p * a * p)
            qmat = np.matmul(right[sl], right[sl].transpose(0, 2, 1)).reshape(-1, b * b)
            gram += pz.T @ qmat
            ry = np.matmul(right[sl], self.values[sl][:, :, None])[:, :, 0]
            rhs += lz.T @ ry
        gram = gram.reshape(a, p, a, p, b, b)
        gram = gram.transpose(0, 1, 4, 2, 3, 5).reshape(a * p * b, a * p * b)
        return gram, rhs.reshape(-1)

    def solve_site(self, k: int, lam: float = 0.0, penalty: np.ndarray | None = None):
        """Solve the local system with a ridge term and/or a custom penalty.

        ``penalty`` is a symmetric PSD matrix added to the Gram matrix (used
        for the stabilized singular-value-scaled regularizer).  Returns
        (new core, squared residual at the new core).
        """
        a, p, b = self.cores[k].shape
        gram, rhs = self.local_system(k)
        self.last_solve_rank_deficient = False
        if penalty is None and lam == 0.0:
            sol, _, rank, _ = np.linalg.lstsq(gram, rhs, rcond=None)
            if rank < gram.shape[0]:
                self.last_solve_rank_deficient = True
        else:
            op = gram
            if penalty is not None:
                op = op + penalty
            if lam > 0.0:
                eff = max(lam, 1e-14 * float(np.trace(gram)) / gram.shape[0])
                op = op + eff * np.eye(op.shape[0])
            sol = np.linalg.solve(op, rhs)
        resid_sq = self.values_sq + float(sol @ gram @ sol - 2.0 * sol @ rhs)
        return sol.reshape(a, p, b), max(resid_sq, 0.0)

    def shift_gauge_right(self, k: int):
        """QR-orthonormalize core k, absorbing the factor into site k+1."""
        a, p, b = self.cores[k].shape
        q, r = np.linalg.qr(self.cores[k].reshape(a * p, b))
        self.cores[k] = q.reshape(a, p, q.shape[1])
        self.cores[k + 1] = np.tensordot(r, self.cores[k + 1], axes=(1, 0))
        self.left_valid = min(self.left_valid, k)
        self.right_valid = max(self.right_valid, k + 2)

    def shift_gauge_left(self, k: int):
        """LQ-orthonormalize core k, absorbing the factor into site k-1."""
        a, p, b = self.cores[k].shape
        q, r = np.linalg.qr(self.cores[k].reshape(a, p * b).T)
        self.cores[k] = q.T.reshape(q.shape[1], p, b)
        self.cores[k - 1] = np.tensordot(self.cores[k - 1], r.T, axes=(2, 0))
        self.left_valid = min(self.left_valid, k - 1)
        self.right_valid = max(self.right_valid, k + 1)

    def rebuild(self):
        self.left[0] = np.ones((self.m, 1))
        self.right[self.d] = np.broadcast_to(
            np.eye(self.n_eq), (self.m, self.n_eq, self.n_eq)
        )
        for k in range(self.d - 1):
            self.push_left(k)
        for k in range(self.d - 1, 0, -1):
            self.push_right(k)
        self.left_valid = self.d - 1
        self.right_valid = 1

    def predictions(self) -> np.ndarray:
        return np.einsum("jx,jxl->jl", self.left[self.d - 1], self.right[self.d - 1])
