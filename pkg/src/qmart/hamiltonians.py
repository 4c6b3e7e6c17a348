"""Banded generators, diagonal similarity transforms and pseudo-Hermiticity checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ._validation import check_samples, check_same_grid, check_scalar
from .numerics import Grid, MetricWeight, derivative_matrix

__all__ = [
    "PotentialSpec",
    "HamiltonianOperator",
    "build_gaussian_hamiltonian",
    "build_transformed_hamiltonian",
    "similarity_transform",
    "check_pseudo_hermitian",
    "build_bs_hamiltonian",
    "metric_from_weight",
]

HERMITIAN = "hermitian"
PSEUDO_HERMITIAN = "pseudo_hermitian"
UNCHECKED = "unchecked"
_TAGS = (HERMITIAN, PSEUDO_HERMITIAN, UNCHECKED)


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """The potential ``C`` (units 1/time): a constant, or samples on a grid."""

    kind: str
    value: object
    grid: Optional[Grid] = None

    def __post_init__(self):
        if self.kind == "constant":
            object.__setattr__(self, "value", check_scalar(self.value, "potential"))
        elif self.kind == "tabulated":
            if self.grid is None:
                raise ValueError("a tabulated potential needs its grid")
            samples = check_samples(self.value, self.grid.n, "potential")
            samples.setflags(write=False)
            object.__setattr__(self, "value", samples)
        else:
            raise ValueError(f"unknown potential kind {self.kind!r}")

    @classmethod
    def constant(cls, c):
        return cls("constant", c)

    @classmethod
    def tabulated(cls, grid, samples):
        return cls("tabulated", np.asarray(samples, dtype=float), grid)

    @property
    def is_constant(self):
        return self.kind == "constant"

    def samples(self, grid):
        if self.kind == "constant":
            return np.full(grid.n, self.value)
        if grid != self.grid:
            raise ValueError(f"potential tabulated on {self.grid}, requested on {grid}")
        return np.array(self.value)

    def __call__(self, x):
        """Evaluate at arbitrary points; NaN outside a tabulated grid."""
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape, self.value)
        return np.interp(x, self.grid.nodes, self.value, left=np.nan, right=np.nan)


@dataclass(frozen=True, eq=False)
class HamiltonianOperator:
    """Sparse banded matrix of a generator together with its symmetry metadata.

    ``coordinate`` is ``"x"`` (log-price) or ``"S"`` (price). For the
    ``pseudo_hermitian`` tag, ``metric`` holds the weight the operator is
    pseudo-Hermitian with respect to, when known.
    """

    grid: Grid
    matrix: sp.csr_matrix
    coordinate: str = "x"
    symmetry: str = UNCHECKED
    metric: Optional[MetricWeight] = None

    def __post_init__(self):
        matrix = sp.csr_matrix(self.matrix)
        n = self.grid.n
        if matrix.shape != (n, n):
            raise ValueError(f"matrix shape {matrix.shape} does not match grid size {n}")
        if not np.all(np.isfinite(matrix.data)):
            raise ValueError("operator matrix has nonfinite entries")
        if self.coordinate not in ("x", "S"):
            raise ValueError(f"coordinate must be 'x' or 'S', got {self.coordinate!r}")
        if self.symmetry not in _TAGS:
            raise ValueError(f"symmetry must be one of {_TAGS}, got {self.symmetry!r}")
        object.__setattr__(self, "matrix", matrix)
        if self.bandwidth > 2:
            raise ValueError(f"bandwidth {self.bandwidth} exceeds the pentadiagonal limit")
        if self.symmetry == HERMITIAN and (matrix - matrix.conj().T).count_nonzero():
            raise ValueError("operator tagged hermitian is not equal to its adjoint")

    @property
    def bandwidth(self):
        coo = self.matrix.tocoo()
        if coo.nnz == 0:
            return 0
        return int(np.max(np.abs(coo.row - coo.col)))

    def apply(self, values):
        return self.matrix @ np.asarray(values)

    def dense(self):
        return self.matrix.toarray()


def _laplacian_part(grid, sigma):
    return (-0.5 * sigma**2) * derivative_matrix(grid, 2)


def build_gaussian_hamiltonian(grid, sigma, c):
    """Hermitian ``H = -sigma^2/2 d2/dx2 + C(x)`` in log-price coordinates."""
    sigma = check_scalar(sigma, "sigma", min_val=0.0, strict=True)
    if not isinstance(c, PotentialSpec):
        c = PotentialSpec.constant(c)
    matrix = _laplacian_part(grid, sigma) + sp.diags(c.samples(grid))
    return HamiltonianOperator(grid, matrix, "x", HERMITIAN)


def build_transformed_hamiltonian(grid, sigma, c):
    """Direct stencil of ``-sigma^2/2 d2 + sigma^2/2 d + (C - sigma^2/8)``.

    This discretizes the analytic form of ``rho^-1 H rho`` for
    ``rho = exp(-x/2)``; it agrees with :func:`similarity_transform` to
    O(h^2) but is only approximately pseudo-Hermitian.
    """
    sigma = check_scalar(sigma, "sigma", min_val=0.0, strict=True)
    if not isinstance(c, PotentialSpec):
        c = PotentialSpec.constant(c)
    matrix = (
        _laplacian_part(grid, sigma)
        + (0.5 * sigma**2) * derivative_matrix(grid, 1)
        + sp.diags(c.samples(grid) - sigma**2 / 8.0)
    )
    return HamiltonianOperator(grid, matrix, "x", UNCHECKED)


def similarity_transform(h, metric):
    """Return ``K = rho^-1 H rho`` as an exact diagonal scaling of ``H``.

    Entries are formed as ``(H_ij * rho_i * rho_j) / eta_i``. The core
    ``H_ij * (rho_i * rho_j)`` is bitwise symmetric, so ``eta K`` and
    ``K^dagger eta`` each differ from it by a single rounding.
    """
    if h.symmetry != HERMITIAN:
        raise ValueError(f"similarity_transform needs a hermitian operator, got {h.symmetry}")
    check_same_grid(h, metric)
    rho = check_samples(metric.rho, h.grid.n, "rho", positive=True)
    coo = h.matrix.tocoo()
    core = coo.data * (rho[coo.row] * rho[coo.col])
    matrix = sp.coo_matrix((core / metric.eta[coo.row], (coo.row, coo.col)), shape=coo.shape)
    return HamiltonianOperator(h.grid, matrix, h.coordinate, PSEUDO_HERMITIAN, metric)


def check_pseudo_hermitian(k, metric):
    """Max-norm of ``K^dagger eta - eta K`` over interior rows.

    Boundary rows are skipped because Dirichlet truncation breaks the
    identity there.
    """
    check_same_grid(k, metric)
    eta = sp.diags(metric.eta)
    defect = (k.matrix.conj().T @ eta - eta @ k.matrix).tocsr()[1:-1]
    if defect.nnz == 0:
        return 0.0
    return float(np.max(np.abs(defect.data)))


def build_bs_hamiltonian(s_grid, sigma):
    """``-sigma^2 S^2/2 d2/dS2`` on a strictly positive price grid."""
    sigma = check_scalar(sigma, "sigma", min_val=0.0, strict=True)
    s = s_grid.nodes
    if s_grid.x_min <= 0:
        raise ValueError(f"price grid must be strictly positive, starts at {s_grid.x_min}")
    matrix = sp.diags(-0.5 * sigma**2 * s**2) @ derivative_matrix(s_grid, 2)
    return HamiltonianOperator(s_grid, matrix, "S", PSEUDO_HERMITIAN)


def metric_from_weight(grid, eta_samples):
    """Wrap positive weight samples as a :class:`MetricWeight`."""
    return MetricWeight(grid, eta_samples)
