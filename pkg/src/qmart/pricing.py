"""Martingale calibration of the potential and wave-function pricing.

Pricing happens in the diffusive frame. A state ``psi`` evolved under the
Gaussian generator ``H`` maps to the pricing density ``rho * psi`` where
``rho = exp(-x/2)`` is the root of the log-price metric; any target ``M``
therefore has expectation ``int M(y) rho(y) psi(y) dy``. The initial state
is the metric-normalized delta at ``x0``, ``delta_{x0} / rho(x0)``, so the
pricing density starts with unit mass. With a constant potential
``sigma^2/8`` that density is exactly the lognormal martingale law of ``S = e^x``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import bisect

from ._validation import check_scalar, check_samples, check_same_grid
from .evolution import CrankNicolson, EvolutionConfig, evolve_checkpoints, heat_kernel
from .hamiltonians import PotentialSpec, build_gaussian_hamiltonian
from .numerics import Grid, MetricWeight, WaveFunction, derivative_matrix, trapezoid

__all__ = [
    "DiscountFactorModel",
    "ForwardTarget",
    "MartingaleReport",
    "PricingModel",
    "TabulatedPotential2D",
    "TruncationWarning",
    "martingale_expectation",
    "martingale_report",
    "calibrate_constant_c",
    "solve_constant_c",
    "calibrate_potential",
    "calibrate_potential_2d",
    "martingale_report_2d",
    "price_payout",
    "price_arrow_debreu",
    "forward_no_arbitrage",
    "df_curve",
]

DEFAULT_T0 = 1e-4


class TruncationWarning(UserWarning):
    """The payout is not negligible at the edges of the truncated domain."""


@dataclass(frozen=True)
class DiscountFactorModel:
    """``DF(x) = 1 / (1 + epsilon x^2)`` with a guard against the negative-epsilon pole.

    For ``epsilon < 0`` the pole sits at ``|x| = (-epsilon)^-1/2``; domains
    reaching ``guard_fraction`` of that distance are rejected.
    """

    epsilon: float = 0.0
    guard_fraction: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "epsilon", check_scalar(self.epsilon, "epsilon"))
        check_scalar(self.guard_fraction, "guard_fraction", min_val=0.0, max_val=1.0, strict=True)

    @property
    def pole(self):
        return math.inf if self.epsilon >= 0 else (-self.epsilon) ** -0.5

    @property
    def domain_guard(self):
        """Largest admissible ``|x|`` (exclusive)."""
        return self.guard_fraction * self.pole

    def check_domain(self, x_abs_max):
        if x_abs_max >= self.domain_guard:
            raise ValueError(
                f"domain reaches |x| = {x_abs_max:g}, beyond the guard {self.domain_guard:g} "
                f"of the discount-factor pole at {self.pole:g} (epsilon = {self.epsilon:g})"
            )

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return 1.0 / (1.0 + self.epsilon * x**2)

    def log_derivative(self, x):
        """``DF'/DF``."""
        x = np.asarray(x, dtype=float)
        return -2.0 * self.epsilon * x / (1.0 + self.epsilon * x**2)

    def curvature(self, x):
        """``DF''/DF``."""
        x = np.asarray(x, dtype=float)
        e = self.epsilon
        return (6.0 * e**2 * x**2 - 2.0 * e) / (1.0 + e * x**2) ** 2


@dataclass(frozen=True)
class ForwardTarget:
    """The forward ``M(x) = DF(x) e^x``; the plain ``e^x`` when ``epsilon = 0``."""

    df: DiscountFactorModel = field(default_factory=DiscountFactorModel)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.df(x) * np.exp(x)

    def weight_curvature(self, x):
        """``g''/g`` for the pricing weight ``g = M e^{-x/2} = DF e^{x/2}``."""
        return 0.25 + self.df.log_derivative(x) + self.df.curvature(x)


@dataclass(frozen=True, eq=False)
class TabulatedPotential2D:
    x_grid: Grid
    y_grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.x_grid.n, self.y_grid.n):
            raise ValueError(f"potential shape {values.shape} does not match the grids")
        if not np.all(np.isfinite(values)):
            raise ValueError("potential has nonfinite samples")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass
class MartingaleReport:
    times: List[float]
    expectation_path: List[float]
    defect: float
    calibrated_c: object
    target_value: float = 1.0

    def rows(self):
        """``(t, expectation, defect)`` rows, defect relative to the initial target."""
        return [
            (t, e, abs(e / self.target_value - 1.0))
            for t, e in zip(self.times, self.expectation_path)
        ]

    def to_dict(self):
        c = self.calibrated_c
        if isinstance(c, PotentialSpec) and c.is_constant:
            c_summary = {"kind": "constant", "value": c.value}
        else:
            c_summary = {"kind": "tabulated"}
        return {
            "times": list(self.times),
            "expectation": list(self.expectation_path),
            "defect": self.defect,
            "target_value": self.target_value,
            "potential": c_summary,
        }


def _weight(target, grid, metric):
    x = grid.nodes
    return np.asarray(target(x), dtype=float) * metric.rho


def martingale_expectation(psi, metric, target):
    """Expectation of ``target`` for a diffusive-frame state: ``int M rho psi``.

    For ``eta = e^{-x}`` and ``M = e^x`` the weight is ``e^{x/2}``.
    """
    check_same_grid(psi, metric)
    g = _weight(target, psi.grid, metric)
    return float(trapezoid(g * psi.values.real, psi.grid.h))


@dataclass(frozen=True, eq=False)
class PricingModel:
    """Diffusive dynamics ``dpsi/dtau = sigma^2/2 psi'' - C psi`` on a grid.

    ``metric`` defaults to the log-price metric; pass ``MetricWeight.flat``
    to price directly with the generator-frame density. ``t0`` is the
    smallest start time of the regularized delta; it is raised to
    ``(h/sigma)^2`` so the starting kernel spans at least one grid cell.
    """

    grid: Grid
    sigma: float
    potential: PotentialSpec
    metric: Optional[MetricWeight] = None
    dt: float = 1e-3
    t0: float = DEFAULT_T0

    def __post_init__(self):
        object.__setattr__(self, "sigma", check_scalar(self.sigma, "sigma", min_val=0.0, strict=True))
        if not isinstance(self.potential, PotentialSpec):
            object.__setattr__(self, "potential", PotentialSpec.constant(self.potential))
        if self.metric is None:
            object.__setattr__(self, "metric", MetricWeight.log_price(self.grid))
        check_same_grid(self, self.metric)
        check_scalar(self.dt, "dt", min_val=0.0, strict=True)
        check_scalar(self.t0, "t0", min_val=0.0, strict=True)

    def generator(self):
        return build_gaussian_hamiltonian(self.grid, self.sigma, self.potential)

    def start_time(self, horizon):
        return min(float(horizon), max(self.t0, (self.grid.h / self.sigma) ** 2))

    def initial_state(self, x0, t_start):
        """Closed-form kernel at ``t_start`` scaled to unit pricing mass.

        The sampled kernel is renormalized to unit trapezoid mass so that an
        under-resolved start still carries the right total weight.
        """
        x = self.grid.nodes
        self.grid.index_of(x0)
        kernel = heat_kernel(x - x0, t_start, self.sigma)
        kernel /= trapezoid(kernel, self.grid.h)
        c = self.potential.samples(self.grid)
        # log-linear interpolation is exact for exponential metrics
        rho0 = math.exp(np.interp(x0, x, np.log(self.metric.rho)))
        return WaveFunction(self.grid, kernel * np.exp(-c * t_start) / rho0, t_start)

    def states(self, x0, times):
        """Generator-frame states at ``times`` starting from the delta at ``x0``."""
        times = [float(t) for t in times]
        t_start = self.start_time(times[-1])
        psi0 = self.initial_state(x0, t_start)
        later = [t for t in times if t > t_start]
        states = evolve_checkpoints(psi0, self.generator(), self.dt, later)
        earlier = [psi0.replace(psi0.values, t_start) for t in times if t <= t_start]
        return earlier + states

    def density(self, x0, horizon):
        """Pricing density ``rho psi`` at ``horizon``."""
        psi = self.states(x0, [horizon])[-1]
        return psi.replace(self.metric.rho * psi.values.real)


def martingale_report(model, target, horizon=1.0, x0=0.0, n_checkpoints=10):
    """Expectation of ``target`` at the start time and at ``n_checkpoints`` times."""
    checkpoints = [horizon * k / n_checkpoints for k in range(1, n_checkpoints + 1)]
    t_start = model.start_time(horizon)
    states = model.states(x0, [t_start] + checkpoints)
    path = [martingale_expectation(psi, model.metric, target) for psi in states]
    m0 = float(target(np.array([x0]))[0])
    defect = max(abs(e / m0 - 1.0) for e in path)
    return MartingaleReport([psi.time for psi in states], path, defect, model.potential, m0)


def calibrate_constant_c(sigma):
    """Constant potential making ``e^x`` a martingale: ``sigma^2 / 8``."""
    sigma = check_scalar(sigma, "sigma", min_val=0.0)
    return sigma**2 / 8.0


def solve_constant_c(sigma, grid=None, horizon=1.0, dt=1e-3, xtol=1e-8):
    """Numerical root of the horizon martingale defect in the constant ``c``.

    Bisection over ``[0, sigma^2/2]``; the defect ``E_T(c)/e^{x0} - 1`` is
    strictly decreasing in ``c``.
    """
    sigma = check_scalar(sigma, "sigma", min_val=0.0)
    if sigma == 0.0:
        return 0.0
    if grid is None:
        grid = Grid.centered(6.0, 2048)
    target = ForwardTarget()

    def defect(c):
        model = PricingModel(grid, sigma, PotentialSpec.constant(c), dt=dt)
        psi = model.states(0.0, [horizon])[-1]
        return martingale_expectation(psi, model.metric, target) - 1.0

    lo, hi = 0.0, 0.5 * sigma**2
    f_lo, f_hi = defect(lo), defect(hi)
    if not f_lo > 0.0 > f_hi:
        raise RuntimeError(f"defect does not bracket a root: f(0)={f_lo}, f({hi})={f_hi}")
    return bisect(defect, lo, hi, xtol=xtol)


def _curvature_fd(g, h):
    """Central-difference ``g''/g`` with the boundary values copied inward."""
    out = np.empty_like(g)
    out[1:-1] = (g[2:] - 2.0 * g[1:-1] + g[:-2]) / (h**2 * g[1:-1])
    out[0], out[-1] = out[1], out[-2]
    return out


def _check_positive_weight(g, x, what="weight g = M rho"):
    bad = np.flatnonzero(~(g > 0))
    if bad.size:
        raise ValueError(f"{what} must be strictly positive; fails at x = {x[bad[0]]:.6g}")


def calibrate_potential(target, sigma, grid, metric=None, method="auto"):
    """Potential ``C = sigma^2/2 * g''/g`` holding ``int g psi`` fixed in time.

    ``g = M rho`` is the pricing weight of ``target``. ``method="fd"`` uses
    central differences (the discrete flow then conserves the expectation up
    to boundary effects); ``"analytic"`` needs a target exposing
    ``weight_curvature`` and the log-price metric. ``"auto"`` picks the
    analytic route whenever it is available.
    """
    sigma = check_scalar(sigma, "sigma", min_val=0.0)
    log_metric = metric is None
    if metric is None:
        metric = MetricWeight.log_price(grid)
    if metric.grid != grid:
        raise ValueError("metric and grid differ")
    df = getattr(target, "df", None)
    if df is not None:
        df.check_domain(max(abs(grid.x_min), abs(grid.x_max)))
    x = grid.nodes
    g = _weight(target, grid, metric)
    _check_positive_weight(g, x)

    analytic_ok = hasattr(target, "weight_curvature") and log_metric
    if method == "auto":
        method = "analytic" if analytic_ok else "fd"
    if method == "analytic":
        if not analytic_ok:
            raise ValueError("analytic calibration needs weight_curvature and the log-price metric")
        curvature = np.asarray(target.weight_curvature(x), dtype=float)
    elif method == "fd":
        curvature = _curvature_fd(g, grid.h)
    else:
        raise ValueError(f"unknown method {method!r}")
    return PotentialSpec.tabulated(grid, 0.5 * sigma**2 * curvature)


def calibrate_potential_2d(sigma_x, sigma_y, df, x_grid, y_grid, method="analytic"):
    """Two-factor potential for the forward ``DF(y) e^x``.

    The metric acts on the price coordinate only, so the weight is
    ``g = DF(y) e^{x/2}`` and ``C = (sigma_x^2 g_xx + sigma_y^2 g_yy) / (2 g)``.
    """
    sigma_x = check_scalar(sigma_x, "sigma_x", min_val=0.0)
    sigma_y = check_scalar(sigma_y, "sigma_y", min_val=0.0)
    df.check_domain(max(abs(y_grid.x_min), abs(y_grid.x_max)))
    x, y = x_grid.nodes, y_grid.nodes
    gx = np.exp(0.5 * x)
    gy = df(y)
    _check_positive_weight(gy, y, what="discount factor")
    if method == "analytic":
        cx = np.full(x.shape, 0.25)
        cy = df.curvature(y)
    elif method == "fd":
        cx = _curvature_fd(gx, x_grid.h)
        cy = _curvature_fd(gy, y_grid.h)
    else:
        raise ValueError(f"unknown method {method!r}")
    values = 0.5 * sigma_x**2 * cx[:, None] + 0.5 * sigma_y**2 * cy[None, :]
    return TabulatedPotential2D(x_grid, y_grid, values)


def generator_2d(sigma_x, sigma_y, potential):
    """``-sigma_x^2/2 d_xx - sigma_y^2/2 d_yy + C`` on the x-major flattened grid."""
    xg, yg = potential.x_grid, potential.y_grid
    ix, iy = sp.identity(xg.n), sp.identity(yg.n)
    lap = -0.5 * sigma_x**2 * sp.kron(derivative_matrix(xg, 2), iy)
    lap = lap - 0.5 * sigma_y**2 * sp.kron(ix, derivative_matrix(yg, 2))
    return (lap + sp.diags(potential.values.ravel())).tocsr()


def martingale_report_2d(sigma_x, sigma_y, df, potential, horizon=1.0, dt=1e-2, n_checkpoints=10):
    """Diffusive two-factor evolution from the delta at the origin.

    Reports the expectation of ``DF(y) e^x`` through ``int int g psi``.
    """
    xg, yg = potential.x_grid, potential.y_grid
    x, y = xg.nodes, yg.nodes
    t_start = min(horizon, max(DEFAULT_T0, (xg.h / sigma_x) ** 2, (yg.h / sigma_y) ** 2))
    kx = heat_kernel(x, t_start, sigma_x)
    ky = heat_kernel(y, t_start, sigma_y)
    kx /= trapezoid(kx, xg.h)
    ky /= trapezoid(ky, yg.h)
    psi = (kx[:, None] * ky[None, :]) * np.exp(-potential.values * t_start)
    weight = np.exp(0.5 * x)[:, None] * df(y)[None, :]

    def expectation(values):
        return float(trapezoid(trapezoid(weight * values, yg.h), xg.h))

    matrix = generator_2d(sigma_x, sigma_y, potential)
    times, path = [t_start], [expectation(psi)]
    values = psi.ravel()
    t = t_start
    steppers = {}
    for k in range(1, n_checkpoints + 1):
        t_next = horizon * k / n_checkpoints
        if t_next <= t:
            continue
        cfg = EvolutionConfig.over(t_next - t, dt)
        key = round(cfg.dt, 15)
        if key not in steppers:
            steppers[key] = CrankNicolson(matrix, cfg.dt)
        values = steppers[key].run(values, cfg.n_steps).real
        t = t_next
        times.append(t)
        path.append(expectation(values.reshape(psi.shape)))
    m0 = float(df(np.array([0.0]))[0])
    defect = max(abs(e / m0 - 1.0) for e in path)
    return MartingaleReport(times, path, defect, potential, m0)


def _payout_samples(f, grid):
    if callable(f):
        return np.asarray(f(grid.nodes), dtype=float)
    return check_samples(f, grid.n, "payout")


def price_payout(f, density, warn_tol=1e-8):
    """Quadrature of a payout against a terminal pricing density.

    The density mass is the discount implied by the potential, so it is
    not renormalized. A :class:`TruncationWarning` is issued when the
    boundary terms exceed ``warn_tol`` of the result.
    """
    grid = density.grid
    integrand = _payout_samples(f, grid) * density.values.real
    value = float(trapezoid(integrand, grid.h))
    edge = 0.5 * grid.h * (abs(integrand[0]) + abs(integrand[-1]))
    if edge > warn_tol * max(abs(value), np.finfo(float).tiny):
        warnings.warn(
            f"payout boundary contribution {edge:.3g} exceeds {warn_tol:g} of the price {value:.6g}",
            TruncationWarning,
            stacklevel=2,
        )
    return value


def price_arrow_debreu(x_target, x0, T, model):
    """Price of the claim paying 1 per unit ``x`` at ``x_target``: the transition density."""
    T = check_scalar(T, "T", min_val=0.0, strict=True)
    grid = model.grid
    if not grid.x_min <= x_target <= grid.x_max:
        raise ValueError(f"x_target {x_target} lies outside the grid [{grid.x_min}, {grid.x_max}]")
    density = model.density(x0, T)
    return float(np.interp(x_target, grid.nodes, density.values.real))


def forward_no_arbitrage(S0, r, T, dividends=()):
    """Arbitrage-free forward ``S0 e^{rT} - sum D e^{r (T - t_d)}``."""
    forward = S0 * math.exp(r * T)
    for amount, t_d in dividends:
        if t_d >= T:
            raise ValueError(f"dividend at t={t_d} is not before maturity T={T}")
        forward -= amount * math.exp(r * (T - t_d))
    return forward


def df_curve(model, grid):
    """Tabulated ``DF(x)`` on ``grid`` after checking the domain guard."""
    if isinstance(grid, Grid):
        x = grid.nodes
    else:
        x = np.asarray(grid, dtype=float)
    model.check_domain(float(np.max(np.abs(x))))
    return model(x)
