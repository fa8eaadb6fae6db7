"""Tensor-train arithmetic on dense numpy tensors.

A tensor train (TT) is a chain of order-3 cores ``G[k]`` with shape
``(r_{k-1}, p_k, r_k)``.  The left boundary dimension is always 1.  The right
boundary dimension ``r_d`` is 1 for scalar-valued tensors and may be larger
when the last leg carries a physical output index (e.g. an equation index for
a whole system of functions).  Contracting all cores along their shared bond
indices reproduces the represented dense tensor of shape
``(p_1, ..., p_d)`` -- with a trailing axis of size ``r_d`` when ``r_d > 1``.

Dense tensors are plain ``numpy.ndarray`` objects in C (row-major) order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Singular values at or below this fraction of the largest singular value are
# treated as numerical zeros during rank-revealing factorizations.
NUMERICAL_ZERO = 1e-13

# Refuse to materialize dense tensors with more entries than this.
DENSE_GUARD = 10**8


class TTError(ValueError):
    """Raised for malformed tensor trains or invalid TT operations."""


@dataclass
class TensorTrain:
    """A tensor train: list of order-3 cores plus an orthogonality marker.

    ``center`` marks the canonical form: cores strictly left of ``center``
    (1-based site index) are left-isometric and cores strictly right of it are
    right-isometric.  ``center is None`` means no canonical form is claimed.

    Instances are treated as immutable values; operations return new trains.
    """

    cores: list[np.ndarray]
    center: int | None = field(default=None)

    def __post_init__(self):
        self.validate()

    # -- structure ---------------------------------------------------------

    def validate(self):
        if not self.cores:
            raise TTError("tensor train needs at least one core")
        for k, core in enumerate(self.cores):
            if core.ndim != 3:
                raise TTError(f"core {k} has order {core.ndim}, expected 3")
            if not np.all(np.isfinite(core)):
                raise TTError(f"core {k} contains non-finite entries")
        if self.cores[0].shape[0] != 1:
            raise TTError("left boundary dimension must be 1")
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[2] != self.cores[k + 1].shape[0]:
                raise TTError(
                    f"bond mismatch between cores {k} and {k + 1}: "
                    f"{self.cores[k].shape[2]} != {self.cores[k + 1].shape[0]}"
                )

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def mode_dims(self) -> tuple[int, ...]:
        return tuple(core.shape[1] for core in self.cores)

    @property
    def boundary_dim(self) -> int:
        """Right boundary dimension r_d (1 for scalar-valued tensors)."""
        return self.cores[-1].shape[2]

    @property
    def ranks(self) -> tuple[int, ...]:
        """Interior bond dimensions (r_1, ..., r_{d-1})."""
        return tuple(core.shape[2] for core in self.cores[:-1])

    def param_count(self) -> int:
        return sum(core.size for core in self.cores)

    def manifold_dim(self) -> int:
        """Dimension of the fixed-rank TT manifold for the current ranks.

        Equals the stored parameter count minus one gauge factor r_k^2 per
        interior bond; always <= param_count().
        """
        return self.param_count() - sum(r * r for r in self.ranks)

    def copy(self) -> "TensorTrain":
        return TensorTrain([c.copy() for c in self.cores], center=self.center)

    def norm(self) -> float:
        return float(np.sqrt(max(tt_inner(self, self), 0.0)))


def _check_same_shape(a: TensorTrain, b: TensorTrain):
    if a.mode_dims != b.mode_dims or a.boundary_dim != b.boundary_dim:
        raise TTError(
            f"shape mismatch: modes {a.mode_dims} (r_d={a.boundary_dim}) vs "
            f"{b.mode_dims} (r_d={b.boundary_dim})"
        )


def tt_from_dense(
    tensor: np.ndarray, rel_tol: float = 0.0, boundary_dim: int = 1
) -> TensorTrain:
    """Decompose a dense tensor into TT form by a left-to-right SVD sweep.

    Singular values sigma_i <= rel_tol * sigma_max are discarded, where
    sigma_max is the largest singular value over all split unfoldings of the
    input (a global, scale-invariant criterion).  ``rel_tol = 0`` keeps
    everything above the numerical-zero floor, so the returned bond
    dimensions are the numerical separation ranks of the splits.

    With ``boundary_dim = q > 1`` the trailing axis of ``tensor`` is treated
    as the right boundary leg instead of a physical mode.
    """
    arr = np.asarray(tensor, dtype=float)
    if arr.size == 0:
        raise TTError("cannot decompose an empty tensor")
    if rel_tol < 0:
        raise TTError("rel_tol must be nonnegative")
    if boundary_dim < 1:
        raise TTError("boundary_dim must be positive")
    if boundary_dim > 1 and arr.shape[-1] != boundary_dim:
        raise TTError("trailing axis does not match requested boundary_dim")
    modes = arr.shape if boundary_dim == 1 else arr.shape[:-1]
    if len(modes) == 0:
        raise TTError("tensor must have at least one physical mode")
    d = len(modes)

    norm = np.linalg.norm(arr)
    if norm == 0.0:
        cores = []
        r_prev = 1
        for k in range(d):
            r_next = boundary_dim if k == d - 1 else 1
            cores.append(np.zeros((r_prev, modes[k], r_next)))
            r_prev = r_next
        return TensorTrain(cores)

    # Global reference: largest singular value over every split unfolding.
    sigma_max = 0.0
    flat = arr.reshape(int(np.prod(modes)), boundary_dim)
    left = 1
    for k in range(d - 1):
        left *= modes[k]
        mat = flat.reshape(left, -1)
        sigma_max = max(sigma_max, np.linalg.svd(mat, compute_uv=False)[0])
    if d == 1:
        sigma_max = norm
    threshold = max(rel_tol, NUMERICAL_ZERO) * sigma_max

    cores: list[np.ndarray] = []
    r_prev = 1
    rest = arr.reshape(-1)
    for k in range(d - 1):
        mat = rest.reshape(r_prev * modes[k], -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        rank = max(1, int(np.sum(s > threshold)))
        cores.append(u[:, :rank].reshape(r_prev, modes[k], rank))
        rest = (s[:rank, None] * vt[:rank]).reshape(-1)
        r_prev = rank
    cores.append(rest.reshape(r_prev, modes[-1], boundary_dim))
    return TensorTrain(cores, center=d)


def tt_to_dense(a: TensorTrain) -> np.ndarray:
    """Contract all cores into a dense tensor.

    Result shape is ``mode_dims`` for scalar-valued trains and
    ``mode_dims + (r_d,)`` when the boundary dimension exceeds 1.  Refuses to
    allocate more than DENSE_GUARD entries.
    """
    total = int(np.prod([c.shape[1] for c in a.cores], dtype=object)) * a.boundary_dim
    if total > DENSE_GUARD:
        raise TTError(f"dense result would hold {total} entries (guard: {DENSE_GUARD})")
    out = a.cores[0].reshape(a.cores[0].shape[1], a.cores[0].shape[2])
    for core in a.cores[1:]:
        out = np.tensordot(out, core, axes=([out.ndim - 1], [0]))
    if a.boundary_dim == 1:
        return out.reshape(a.mode_dims)
    return out.reshape(a.mode_dims + (a.boundary_dim,))


def tt_inner(a: TensorTrain, b: TensorTrain) -> float:
    """Frobenius inner product <a, b> by zipper contraction."""
    _check_same_shape(a, b)
    env = np.ones((1, 1))
    for ca, cb in zip(a.cores, b.cores):
        # env[x, y] carries the contraction of all processed cores.
        env = np.einsum("xy,xiu,yiv->uv", env, ca, cb, optimize=True)
    return float(np.trace(env))


def tt_scale(a: TensorTrain, alpha: float) -> TensorTrain:
    cores = [c.copy() for c in a.cores]
    cores[0] = cores[0] * alpha
    return TensorTrain(cores, center=a.center)


def tt_add(a: TensorTrain, b: TensorTrain) -> TensorTrain:
    """Exact sum via block-diagonal core concatenation; ranks add."""
    _check_same_shape(a, b)
    d = a.order
    if d == 1:
        return TensorTrain([a.cores[0] + b.cores[0]])
    cores = []
    for k, (ca, cb) in enumerate(zip(a.cores, b.cores)):
        ra0, p, ra1 = ca.shape
        rb0, _, rb1 = cb.shape
        if k == 0:
            cores.append(np.concatenate([ca, cb], axis=2))
        elif k == d - 1:
            cores.append(np.concatenate([ca, cb], axis=0))
        else:
            block = np.zeros((ra0 + rb0, p, ra1 + rb1))
            block[:ra0, :, :ra1] = ca
            block[ra0:, :, ra1:] = cb
            cores.append(block)
    return TensorTrain(cores)


def tt_orthogonalize(a: TensorTrain, site: int) -> TensorTrain:
    """Return an equivalent train with the orthogonality center at ``site``.

    Cores left of ``site`` become left-isometric, cores right of it
    right-isometric; the represented tensor is unchanged up to round-off.
    ``site`` is 1-based.
    """
    d = a.order
    if not 1 <= site <= d:
        raise TTError(f"site {site} out of range 1..{d}")
    cores = [c.copy() for c in a.cores]
    for k in range(site - 1):
        r0, p, r1 = cores[k].shape
        q, r = np.linalg.qr(cores[k].reshape(r0 * p, r1))
        cores[k] = q.reshape(r0, p, q.shape[1])
        cores[k + 1] = np.tensordot(r, cores[k + 1], axes=(1, 0))
    for k in range(d - 1, site - 1, -1):
        r0, p, r1 = cores[k].shape
        q, r = np.linalg.qr(cores[k].reshape(r0, p * r1).T)
        cores[k] = q.T.reshape(q.shape[1], p, r1)
        cores[k - 1] = np.tensordot(cores[k - 1], r.T, axes=(2, 0))
    return TensorTrain(cores, center=site)


def tt_round(a: TensorTrain, rel_tol: float = NUMERICAL_ZERO) -> TensorTrain:
    """Re-compress a train by SVD truncation (per-split relative criterion).

    Discards singular values sigma_i <= rel_tol * sigma_1 at each split after
    bringing the train into right-canonical form, so the split spectra match
    the represented tensor's unfolding spectra.
    """
    work = tt_orthogonalize(a, 1)
    cores = work.cores
    d = work.order
    for k in range(d - 1):
        r0, p, r1 = cores[k].shape
        u, s, vt = np.linalg.svd(cores[k].reshape(r0 * p, r1), full_matrices=False)
        cutoff = max(rel_tol, NUMERICAL_ZERO) * (s[0] if s.size else 0.0)
        rank = max(1, int(np.sum(s > cutoff)))
        cores[k] = u[:, :rank].reshape(r0, p, rank)
        carry = s[:rank, None] * vt[:rank]
        cores[k + 1] = np.tensordot(carry, cores[k + 1], axes=(1, 0))
    return TensorTrain(cores, center=d)


def change_physical_basis(a: TensorTrain, mats: list[np.ndarray]) -> TensorTrain:
    """Apply invertible matrices M_k to each core's physical index.

    ``new_core[x, i, y] = sum_j M_k[i, j] core[x, j, y]``; ranks are
    unchanged.  Used to convert coefficient cores between univariate bases
    (the represented function is unchanged when the basis transforms
    contragrediently).
    """
    if len(mats) != a.order:
        raise TTError("need one transformation matrix per core")
    cores = []
    for core, mat in zip(a.cores, mats):
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (core.shape[1], core.shape[1]):
            raise TTError(f"matrix shape {mat.shape} does not fit mode {core.shape[1]}")
        if np.linalg.cond(mat) > 1e12:
            raise TTError("basis transformation is numerically singular")
        cores.append(np.einsum("ij,xjy->xiy", mat, core))
    return TensorTrain(cores)


def tt_norm(a: TensorTrain) -> float:
    """Frobenius norm via canonicalization.

    Unlike ``sqrt(tt_inner(a, a))`` this has absolute (not relative) rounding
    error, so norms of near-cancelling differences are resolved far below the
    sqrt(machine epsilon) floor of the Gram formula.
    """
    ortho = tt_orthogonalize(a, 1)
    return float(np.linalg.norm(ortho.cores[0]))


def tt_outer_unit(vectors: list[np.ndarray]) -> TensorTrain:
    """Rank-one train representing the outer product of the given vectors."""
    cores = [np.asarray(v, dtype=float).reshape(1, -1, 1) for v in vectors]
    return TensorTrain(cores, center=1)


def unfolding_ranks(tensor: np.ndarray, tol_factor: float = 1e-10) -> tuple[int, ...]:
    """Numerical ranks of the sequential split unfoldings of a dense tensor.

    Independent oracle for TT ranks: rank of the (p_1...p_k) x (rest)
    matricization at tolerance ``tol_factor * sigma_max`` for each split.
    """
    arr = np.asarray(tensor, dtype=float)
    sigmas = []
    left = 1
    flat = arr.reshape(-1)
    for k in range(arr.ndim - 1):
        left *= arr.shape[k]
        sigmas.append(np.linalg.svd(flat.reshape(left, -1), compute_uv=False))
    sigma_max = max((s[0] for s in sigmas if s.size), default=0.0)
    if sigma_max == 0.0:
        return tuple(1 for _ in sigmas)
    return tuple(max(1, int(np.sum(s > tol_factor * sigma_max))) for s in sigmas)
