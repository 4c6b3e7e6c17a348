"""Grids, wave functions, quadrature and finite-difference operators.

Everything here lives on a uniform grid over a truncated domain with
homogeneous Dirichlet boundaries. Integrals use the trapezoid rule and
derivatives use second-order central differences.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._validation import check_int, check_samples, check_same_grid, check_scalar

__all__ = [
    "Grid",
    "WaveFunction",
    "MetricWeight",
    "NormalizationWarning",
    "default_half_width",
    "trapezoid",
    "inner_product",
    "inner_product_eta",
    "expectation",
    "derivative_matrix",
]

NORMALIZATION_TOL = 1e-6


class NormalizationWarning(UserWarning):
    """Raised when an expectation is taken against a non-normalized state."""


def _frozen(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``n`` nodes on ``[x_min, x_max]``, endpoints included."""

    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        object.__setattr__(self, "x_min", check_scalar(self.x_min, "x_min"))
        object.__setattr__(self, "x_max", check_scalar(self.x_max, "x_max"))
        object.__setattr__(self, "n", check_int(self.n, "n", min_val=3))
        if self.x_max <= self.x_min:
            raise ValueError(f"x_max must exceed x_min, got [{self.x_min}, {self.x_max}]")

    @classmethod
    def centered(cls, half_width, n, center=0.0):
        half_width = check_scalar(half_width, "half_width", min_val=0.0, strict=True)
        return cls(center - half_width, center + half_width, n)

    @property
    def h(self):
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def nodes(self):
        return np.linspace(self.x_min, self.x_max, self.n)

    def index_of(self, x):
        """Index of the node nearest to ``x``; raises if ``x`` is off the grid."""
        x = float(x)
        if not self.x_min <= x <= self.x_max:
            raise ValueError(f"{x} lies outside the grid [{self.x_min}, {self.x_max}]")
        return int(round((x - self.x_min) / self.h))


def default_half_width(sigma, t_max):
    """Domain half-width ``max(8 sigma sqrt(T), 6)`` in log-price units."""
    return max(8.0 * sigma * math.sqrt(t_max), 6.0)


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Complex amplitudes sampled on a grid at a given time (years)."""

    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        values = check_samples(self.values, self.grid.n, "values", dtype=complex)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "time", check_scalar(self.time, "time"))

    @classmethod
    def from_function(cls, grid, func, time=0.0):
        return cls(grid, func(grid.nodes), time)

    @property
    def density(self):
        return np.abs(self.values) ** 2

    def replace(self, values, time=None):
        return WaveFunction(self.grid, values, self.time if time is None else time)


@dataclass(frozen=True, eq=False)
class MetricWeight:
    """Positive diagonal metric ``eta`` and its root ``rho = sqrt(eta)``."""

    grid: Grid
    eta: np.ndarray
    rho: np.ndarray = field(default=None)

    def __post_init__(self):
        eta = check_samples(self.eta, self.grid.n, "eta", positive=True)
        if self.rho is None:
            rho = np.sqrt(eta)
        else:
            rho = check_samples(self.rho, self.grid.n, "rho", positive=True)
            if not np.allclose(rho * rho, eta, rtol=4 * np.finfo(float).eps, atol=0.0):
                raise ValueError("rho**2 must equal eta")
        object.__setattr__(self, "eta", _frozen(eta))
        object.__setattr__(self, "rho", _frozen(rho))

    @classmethod
    def flat(cls, grid):
        return cls(grid, np.ones(grid.n), np.ones(grid.n))

    @classmethod
    def log_price(cls, grid):
        """The metric ``eta(x) = exp(-x)`` induced by ``S = exp(x)``."""
        x = grid.nodes
        return cls(grid, np.exp(-x), np.exp(-0.5 * x))

    @property
    def is_flat(self):
        return bool(np.all(self.eta == 1.0))


def trapezoid(values, h):
    """Trapezoid rule for samples on a uniform grid with spacing ``h``."""
    values = np.asarray(values)
    return h * (values.sum(axis=-1) - 0.5 * (values[..., 0] + values[..., -1]))


def _sesquilinear(phi, psi, h, weight=None):
    # real arithmetic keeps <psi|psi> exactly real and swapping arguments an exact conjugation
    a, b = phi.real, phi.imag
    c, d = psi.real, psi.imag
    re, im = a * c + b * d, a * d - b * c
    if weight is not None:
        re, im = weight * re, weight * im
    return complex(trapezoid(re, h), trapezoid(im, h))


def inner_product(phi, psi):
    """Trapezoid approximation of the flat inner product of two states."""
    check_same_grid(phi, psi)
    return _sesquilinear(phi.values, psi.values, phi.grid.h)


def inner_product_eta(phi, psi, metric):
    """Inner product weighted by the diagonal metric ``eta``."""
    check_same_grid(phi, psi)
    check_same_grid(phi, metric)
    return _sesquilinear(phi.values, psi.values, phi.grid.h, metric.eta)


def _on_grid(f, grid):
    if callable(f):
        return np.asarray(f(grid.nodes), dtype=float)
    return check_samples(f, grid.n, "f")


def expectation(psi, f, tol=NORMALIZATION_TOL):
    """Return ``int f(x) |psi(x)|^2 dx``.

    A :class:`NormalizationWarning` carrying the measured norm is issued when
    ``psi`` is not normalized to within ``tol``.
    """
    density = psi.density
    norm = trapezoid(density, psi.grid.h)
    if abs(norm - 1.0) > tol:
        warnings.warn(
            f"state is not normalized: <psi|psi> = {norm:.12g}",
            NormalizationWarning,
            stacklevel=2,
        )
    return float(trapezoid(_on_grid(f, psi.grid) * density, psi.grid.h))


def derivative_matrix(grid, order):
    """Central-difference matrix for d/dx (``order=1``) or d2/dx2 (``order=2``).

    Boundary rows keep the truncated stencil, i.e. off-domain values are zero.
    """
    n, h = grid.n, grid.h
    if order == 1:
        off = np.full(n - 1, 0.5 / h)
        return sp.diags([-off, off], [-1, 1], format="csr")
    if order == 2:
        off = np.full(n - 1, 1.0 / h**2)
        main = np.full(n, -2.0 / h**2)
        return sp.diags([off, main, off], [-1, 0, 1], format="csr")
    raise ValueError(f"order must be 1 or 2, got {order}")
