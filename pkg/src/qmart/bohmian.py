"""Polar decomposition, quantum potentials and Bohmian trajectory ensembles.

The phase of ``psi = R exp(i theta)`` is called ``theta`` here. Particles
move with velocity ``sigma^2 d(theta)/dx``, the field whose flux
``sigma^2 R^2 d(theta)/dx`` closes the continuity equation for
``i psi_t = -sigma^2/2 psi''``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import kstest

from ._validation import check_int, check_same_grid
from .numerics import Grid, MetricWeight

__all__ = [
    "PolarField",
    "TrajectoryEnsemble",
    "CFLError",
    "AMPLITUDE_FLOOR",
    "polar_decompose",
    "quantum_potential",
    "hje_residual",
    "continuity_residual",
    "velocity_field",
    "bohm_trajectories",
    "free_particle_variance",
    "classical_free_ensemble",
    "fit_power_law",
    "ks_statistic",
]

AMPLITUDE_FLOOR = 1e-8


class CFLError(ValueError):
    """Time series too coarse for the trajectory integrator."""

    def __init__(self, message, suggested_dt):
        super().__init__(message)
        self.suggested_dt = suggested_dt


def _wrap(phase):
    return np.angle(np.exp(1j * phase))


@dataclass(frozen=True, eq=False)
class PolarField:
    """Amplitude ``R``, unwrapped phase ``theta`` and the mask of retained nodes.

    ``theta`` is NaN wherever ``R`` fell below the amplitude floor.
    """

    grid: Grid
    R: np.ndarray
    theta: np.ndarray
    mask: np.ndarray
    time: float = 0.0

    @property
    def n_masked(self):
        return int(self.grid.n - np.count_nonzero(self.mask))

    def reconstruct(self):
        return np.where(self.mask, self.R * np.exp(1j * np.nan_to_num(self.theta)), 0.0)


def polar_decompose(psi, floor=AMPLITUDE_FLOOR):
    """Split ``psi`` into amplitude and an unwrapped phase.

    Nodes with ``R < floor * max(R)`` are masked. The phase is unwrapped left
    to right over the retained nodes by adding multiples of ``2 pi``
    whenever a node-to-node jump exceeds ``pi``.
    """
    values = psi.values
    R = np.abs(values)
    mask = R >= floor * R.max() if R.max() > 0 else np.zeros(R.shape, dtype=bool)
    theta = np.full(R.shape, np.nan)
    theta[mask] = np.unwrap(np.angle(values[mask]))
    for arr in (R, theta, mask):
        arr.setflags(write=False)
    return PolarField(psi.grid, R, theta, mask, psi.time)


def _interior_valid(mask):
    valid = np.zeros(mask.shape, dtype=bool)
    valid[1:-1] = mask[:-2] & mask[1:-1] & mask[2:]
    return valid


def quantum_potential(field, sigma, form="hermitian"):
    """Quantum potential from central differences of ``R``.

    ``hermitian``: ``-sigma^2/2 R''/R``. ``pseudo``, for the log-price
    generator with drift: ``sigma^2/2 R'/R - sigma^2/2 R''/R``. Masked and
    boundary nodes are NaN.
    """
    R, h = field.R, field.grid.h
    q = np.full(R.shape, np.nan)
    valid = _interior_valid(field.mask)
    i = np.flatnonzero(valid)
    r = R[i]
    d2 = (R[i + 1] - 2.0 * R[i] + R[i - 1]) / h**2
    q[i] = -0.5 * sigma**2 * d2 / r
    if form == "pseudo":
        d1 = (R[i + 1] - R[i - 1]) / (2.0 * h)
        q[i] += 0.5 * sigma**2 * d1 / r
    elif form != "hermitian":
        raise ValueError(f"form must be 'hermitian' or 'pseudo', got {form!r}")
    return q


def _check_series(fields):
    if len(fields) < 3:
        raise ValueError(f"need at least 3 time slices, got {len(fields)}")
    grid = fields[0].grid
    for f in fields[1:]:
        check_same_grid(fields[0], f)
    return grid


def hje_residual(fields, sigma, form="hermitian", potential=None, quantum=None):
    """Max-norm of ``theta_t + sigma^2 theta_x^2 / 2 + Q (+ V)`` over interior nodes.

    Evaluated at every slice with a neighbour on each side. ``quantum``
    replaces the built-in quantum potential: a callable taking a
    :class:`PolarField` and returning samples. ``potential`` adds a classical
    potential (samples or a constant).
    """
    grid = _check_series(fields)
    h = grid.h
    worst = 0.0
    for prev, cur, nxt in zip(fields[:-2], fields[1:-1], fields[2:]):
        valid = _interior_valid(cur.mask) & prev.mask & nxt.mask
        theta_t = _wrap(nxt.theta - prev.theta) / (nxt.time - prev.time)
        theta_x = np.full(grid.n, np.nan)
        theta_x[1:-1] = _wrap(cur.theta[2:] - cur.theta[:-2]) / (2.0 * h)
        q = quantum(cur) if quantum is not None else quantum_potential(cur, sigma, form)
        res = theta_t + 0.5 * sigma**2 * theta_x**2 + q
        if potential is not None:
            res = res + potential
        if np.any(valid):
            worst = max(worst, float(np.max(np.abs(res[valid]))))
    return worst


def _metric_weight(metric, grid):
    if metric is None or metric == "flat":
        return np.ones(grid.n)
    if metric == "eta":
        return np.exp(-grid.nodes)
    if isinstance(metric, MetricWeight):
        if metric.grid != grid:
            raise ValueError("metric lives on a different grid")
        return np.asarray(metric.eta)
    raise ValueError(f"metric must be 'flat', 'eta' or a MetricWeight, got {metric!r}")


def continuity_residual(fields, sigma, metric="flat"):
    """Max-norm of ``d(w R^2)/dt + d/dx(w sigma^2 R^2 theta_x)``.

    ``w`` is 1 (``"flat"``) or the metric weight (``"eta"`` for ``e^{-x}``,
    or any :class:`MetricWeight`). The flux is taken at half nodes from
    ``Im(conj(psi_i) psi_{i+1}) / h``, the time derivative by central
    differences between neighbouring slices.
    """
    grid = _check_series(fields)
    h = grid.h
    w = _metric_weight(metric, grid)
    w_half = 0.5 * (w[1:] + w[:-1])
    worst = 0.0
    for prev, cur, nxt in zip(fields[:-2], fields[1:-1], fields[2:]):
        valid = _interior_valid(cur.mask) & prev.mask & nxt.mask
        dens_t = w * (nxt.R**2 - prev.R**2) / (nxt.time - prev.time)
        psi = cur.reconstruct()
        flux_half = w_half * sigma**2 * np.imag(np.conj(psi[:-1]) * psi[1:]) / h
        div = np.full(grid.n, np.nan)
        div[1:-1] = (flux_half[1:] - flux_half[:-1]) / h
        res = dens_t + div
        if np.any(valid):
            worst = max(worst, float(np.max(np.abs(res[valid]))))
    return worst


def velocity_field(psi, sigma, floor=AMPLITUDE_FLOOR):
    """Guidance velocity ``sigma^2 theta_x`` on the nodes; zero where masked."""
    values = psi.values
    h = psi.grid.h
    amp = np.abs(values)
    keep = amp >= floor * amp.max()
    current = np.empty(values.shape)
    current[1:-1] = np.imag(np.conj(values[1:-1]) * (values[2:] - values[:-2])) / (2.0 * h)
    # one-sided at the ends so particles can actually leave the grid
    current[0] = np.imag(np.conj(values[0]) * (values[1] - values[0])) / h
    current[-1] = np.imag(np.conj(values[-1]) * (values[-1] - values[-2])) / h
    v = np.zeros(values.shape)
    v[keep] = sigma**2 * current[keep] / amp[keep] ** 2
    return v


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    """Particle positions, shape ``(n_particles, n_times)``."""

    times: np.ndarray
    positions: np.ndarray
    seed: int
    flagged: np.ndarray

    @property
    def n_particles(self):
        return self.positions.shape[0]

    @property
    def flagged_fraction(self):
        return float(np.mean(self.flagged))

    def variance(self):
        return np.var(self.positions, axis=0)

    def mean(self):
        return np.mean(self.positions, axis=0)


def _cdf(grid, density):
    density = np.clip(np.asarray(density, dtype=float), 0.0, None)
    cells = 0.5 * grid.h * (density[1:] + density[:-1])
    cdf = np.concatenate([[0.0], np.cumsum(cells)])
    return cdf / cdf[-1]


def sample_density(grid, density, n, seed):
    """Inverse-CDF samples; particle ``i`` uses the stream ``(seed, i)``."""
    cdf = _cdf(grid, density)
    u = np.array([np.random.default_rng([seed, i]).random() for i in range(n)])
    return np.interp(u, cdf, grid.nodes)


def bohm_trajectories(states, n_particles, seed, sigma, floor=AMPLITUDE_FLOOR, record_every=1):
    """Integrate ``dx/dt = sigma^2 theta_x`` through a time series of states.

    ``states`` may be any iterable (a generator keeps memory flat). Initial
    positions are drawn from ``|psi_0|^2``. Each interval uses the explicit
    midpoint rule with the velocity field linearly interpolated in space and
    time. Requires ``dt * max|v| <= h/2`` on every interval, otherwise
    :class:`CFLError` is raised. Particles leaving the grid are clamped and
    flagged. Positions are kept at every ``record_every``-th state.
    """
    n_particles = check_int(n_particles, "n_particles", min_val=1)
    record_every = check_int(record_every, "record_every", min_val=1)
    states = iter(states)
    first = next(states)
    grid = first.grid
    x_nodes, h = grid.nodes, grid.h

    x = sample_density(grid, first.density, n_particles, seed)
    flagged = np.zeros(n_particles, dtype=bool)
    times, recorded = [first.time], [x.copy()]
    t_prev, v_prev = first.time, velocity_field(first, sigma, floor)
    k = 0
    for k, state in enumerate(states, start=1):
        check_same_grid(first, state)
        v_next = velocity_field(state, sigma, floor)
        dt = state.time - t_prev
        vmax = max(np.max(np.abs(v_prev)), np.max(np.abs(v_next)))
        if dt * vmax > 0.5 * h:
            raise CFLError(
                f"step {k}: dt*max|v| = {dt * vmax:.3g} exceeds h/2 = {0.5 * h:.3g}",
                suggested_dt=0.5 * h / vmax,
            )
        x_half = x + 0.5 * dt * np.interp(x, x_nodes, v_prev)
        x = x + dt * np.interp(x_half, x_nodes, 0.5 * (v_prev + v_next))
        out = (x < grid.x_min) | (x > grid.x_max)
        flagged |= out
        x = np.clip(x, grid.x_min, grid.x_max)
        if k % record_every == 0:
            times.append(state.time)
            recorded.append(x.copy())
        t_prev, v_prev = state.time, v_next
    if k == 0:
        raise ValueError("need at least two states")
    if k % record_every:
        times.append(t_prev)
        recorded.append(x.copy())
    return TrajectoryEnsemble(np.array(times), np.stack(recorded, axis=1), int(seed), flagged)


def free_particle_variance(velocities, t):
    """Ensemble variance ``t^2 (mean(v^2) - mean(v)^2)`` of free particles at time ``t``."""
    v = np.asarray(velocities, dtype=float)
    if v.size == 0:
        raise ValueError("velocities must be nonempty")
    # shifting by a sample leaves the variance unchanged and makes equal velocities exact
    d = v - v[0]
    return float(t**2 * (np.mean(d**2) - np.mean(d) ** 2))


def classical_free_ensemble(velocities, times, x0=0.0):
    """Positions ``x0 + v t`` of particles moving at constant velocity."""
    v = np.asarray(velocities, dtype=float)
    times = np.asarray(times, dtype=float)
    return x0 + v[:, None] * times[None, :]


def fit_power_law(times, values):
    """Least-squares fit of ``values ~ a t^beta`` in log-log space; returns ``(beta, r2)``."""
    lt, lv = np.log(np.asarray(times, float)), np.log(np.asarray(values, float))
    beta, intercept = np.polyfit(lt, lv, 1)
    resid = lv - (beta * lt + intercept)
    ss_tot = np.sum((lv - lv.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(beta), float(r2)


def ks_statistic(samples, psi):
    """Kolmogorov-Smirnov distance between samples and ``|psi|^2`` on its grid."""
    grid = psi.grid
    cdf = _cdf(grid, psi.density)
    return float(kstest(samples, lambda s: np.interp(s, grid.nodes, cdf)).statistic)
