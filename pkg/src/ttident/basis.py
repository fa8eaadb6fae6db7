"""Univariate polynomial bases and dictionary matrices.

A basis holds the first ``size`` functions psi_1, ..., psi_size as rows of a
lower-triangular coefficient table in the monomial basis (ascending powers).
psi_1 is always the constant function 1.  Supported kinds:

* ``monomial``: 1, x, x^2, ...
* ``legendre``: the L2([-1, 1])-orthogonal Legendre polynomials
  1, x, (3x^2-1)/2, (5x^3-3x)/2, extendable past degree 3 by the three-term
  recurrence when explicitly requested.

The dictionary stack collects the univariate dictionary matrices
``Psi^k[j, i] = psi_i(X[j, k])`` whose row-wise Hadamard products form the
full product-dictionary measurement map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class Basis:
    kind: str
    size: int
    # coeffs[i, j] = coefficient of x^j in psi_{i+1}; lower triangular.
    coeffs: np.ndarray

    def evaluate(self, x) -> np.ndarray:
        """Evaluate all basis functions at x; appends an axis of length size.

        Uses Horner's rule on each coefficient row.
        """
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape + (self.size,))
        for i in range(self.size):
            row = self.coeffs[i]
            acc = np.full_like(x, row[-1])
            for c in row[-2::-1]:
                acc = acc * x + c
            out[..., i] = acc
        return out

    def constant_vector(self) -> np.ndarray:
        """Coefficient vector (in this basis) of the constant function 1."""
        vec = np.zeros(self.size)
        vec[0] = 1.0 / self.coeffs[0, 0]
        return vec


def _legendre_coeffs(size: int) -> np.ndarray:
    coeffs = np.zeros((size, size))
    coeffs[0, 0] = 1.0
    if size > 1:
        coeffs[1, 1] = 1.0
    # (n+1) P_{n+1}(x) = (2n+1) x P_n(x) - n P_{n-1}(x)
    for n in range(1, size - 1):
        coeffs[n + 1, 1:] += (2 * n + 1) * coeffs[n, :-1]
        coeffs[n + 1, :] -= n * coeffs[n - 1, :]
        coeffs[n + 1, :] /= n + 1
    return coeffs


def make_basis(kind: str, size: int, allow_extension: bool = False) -> Basis:
    """Construct a univariate basis of the given kind and size."""
    if size < 1:
        raise BasisError("basis size must be positive")
    if kind == "monomial":
        return Basis(kind, size, np.eye(size))
    if kind == "legendre":
        if size > 4 and not allow_extension:
            raise BasisError(
                "legendre basis is tabulated up to size 4; "
                "pass allow_extension=True for the recurrence extension"
            )
        return Basis(kind, size, _legendre_coeffs(size))
    raise BasisError(f"unsupported basis kind: {kind!r}")


@dataclass(frozen=True)
class DictionaryStack:
    """Univariate dictionary matrices Psi^k, one m x p matrix per variable."""

    matrices: list[np.ndarray]

    @property
    def n_samples(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def n_variables(self) -> int:
        return len(self.matrices)

    @property
    def basis_size(self) -> int:
        return self.matrices[0].shape[1]


def build_dictionary(states: np.ndarray, basis: Basis) -> DictionaryStack:
    """Evaluate the basis on every state coordinate: Psi^k[j, i] = psi_i(X[j, k])."""
    states = np.asarray(states, dtype=float)
    if states.ndim != 2:
        raise BasisError("states must be an m x d matrix")
    if not np.all(np.isfinite(states)):
        raise BasisError("states contain non-finite entries")
    values = basis.evaluate(states)  # (m, d, p)
    return DictionaryStack([np.ascontiguousarray(values[:, k, :]) for k in range(states.shape[1])])


def basis_change_matrix(from_basis: Basis, to_basis: Basis) -> np.ndarray:
    """Matrix M with to-coefficients = M @ from-coefficients.

    Both bases must span the same polynomial space (equal size, nonsingular
    triangular tables).
    """
    if from_basis.size != to_basis.size:
        raise BasisError("bases must have equal size")
    for b in (from_basis, to_basis):
        if np.any(np.abs(np.diag(b.coeffs)) < 1e-300):
            raise BasisError("degenerate basis does not span the polynomial space")
    # c_mono = C^T c_b for either basis, so M = (C_to^T)^{-1} C_from^T.
    return np.linalg.solve(to_basis.coeffs.T, from_basis.coeffs.T)
