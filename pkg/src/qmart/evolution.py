"""Crank-Nicolson propagation in real and Wick-rotated time, plus exact kernels.

Conventions: real time solves ``i dpsi/dt = H psi``; the Wick-rotated
(diffusive) flow solves ``dpsi/dtau = -H psi``, which for the Gaussian
generator is the forward heat flow ``sigma^2/2 psi'' - C psi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ._validation import check_int, check_same_grid, check_scalar
from .numerics import trapezoid

__all__ = [
    "EvolutionConfig",
    "TraceRecord",
    "CrankNicolson",
    "evolve",
    "evolve_checkpoints",
    "iterate_states",
    "free_kernel",
    "heat_kernel",
    "closed_form_solution",
    "free_packet",
]

UNITARY = "unitary"
DIFFUSIVE = "diffusive"


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float
    n_steps: int
    mode: str = DIFFUSIVE

    def __post_init__(self):
        object.__setattr__(self, "dt", check_scalar(self.dt, "dt", min_val=0.0, strict=True))
        object.__setattr__(self, "n_steps", check_int(self.n_steps, "n_steps", min_val=1))
        if self.mode not in (UNITARY, DIFFUSIVE):
            raise ValueError(f"mode must be 'unitary' or 'diffusive', got {self.mode!r}")

    @classmethod
    def over(cls, duration, dt, mode=DIFFUSIVE):
        """Config covering ``duration`` exactly with step at most ``dt``."""
        n_steps = max(1, math.ceil(duration / dt - 1e-9))
        return cls(duration / n_steps, n_steps, mode)

    @property
    def duration(self):
        return self.dt * self.n_steps


class TraceRecord(NamedTuple):
    step: int
    time: float
    norm: float
    eta_norm: float


class CrankNicolson:
    """Pre-factored Crank-Nicolson stepper for a fixed matrix, step and mode.

    Solves ``(I + a H dt/2) psi_{k+1} = (I - a H dt/2) psi_k`` with ``a = i``
    in unitary mode and ``a = 1`` in diffusive mode. Accepts any square
    sparse matrix, so it also drives tensor-product operators.
    """

    def __init__(self, matrix, dt, mode=DIFFUSIVE):
        matrix = sp.csc_matrix(matrix)
        if mode not in (UNITARY, DIFFUSIVE):
            raise ValueError(f"mode must be 'unitary' or 'diffusive', got {mode!r}")
        self.dt = float(dt)
        self.mode = mode
        factor = (0.5j if mode == UNITARY else 0.5) * self.dt
        eye = sp.identity(matrix.shape[0], format="csc")
        self._rhs = (eye - factor * matrix).tocsr()
        lhs = (eye + factor * matrix).tocsc()
        # natural ordering keeps the band structure of 1-D operators
        self._lu = splu(lhs, permc_spec="NATURAL")
        self.real = mode == DIFFUSIVE and not np.iscomplexobj(matrix.data)

    def step(self, values):
        return self._lu.solve(self._rhs @ values)

    def run(self, values, n_steps, start_step=0, callback=None):
        values = np.asarray(values)
        if self.real and not np.any(values.imag):
            values = values.real.copy()
        for k in range(1, n_steps + 1):
            values = self.step(values)
            if not np.all(np.isfinite(values)):
                raise FloatingPointError(f"nonfinite amplitude at step {start_step + k}")
            if callback is not None:
                callback(start_step + k, values)
        return values.astype(complex)


def evolve(psi0, h, cfg, metric=None, return_trace=False):
    """Propagate ``psi0`` under the operator ``h`` for ``cfg.n_steps`` steps.

    Accuracy guidance: keep ``dt`` of order ``h**2 / sigma**2`` or below.
    With ``return_trace`` the per-step ``(step, time, norm, eta_norm)``
    records are returned alongside the state; ``eta_norm`` uses ``metric``
    (flat when omitted).
    """
    check_same_grid(psi0, h)
    if metric is not None:
        check_same_grid(psi0, metric)
    stepper = CrankNicolson(h.matrix, cfg.dt, cfg.mode)
    grid = psi0.grid
    eta = np.ones(grid.n) if metric is None else metric.eta
    trace = []

    def record(k, values):
        density = np.abs(values) ** 2
        trace.append(
            TraceRecord(
                k,
                psi0.time + k * cfg.dt,
                float(trapezoid(density, grid.h)),
                float(trapezoid(eta * density, grid.h)),
            )
        )

    if return_trace:
        record(0, psi0.values)
    values = stepper.run(psi0.values, cfg.n_steps, callback=record if return_trace else None)
    out = psi0.replace(values, psi0.time + cfg.duration)
    if return_trace:
        return out, trace
    return out


def evolve_checkpoints(psi0, h, dt, times, mode=DIFFUSIVE):
    """States at each time in ``times`` (increasing, all >= ``psi0.time``).

    Every segment between checkpoints is split into equal steps no longer
    than ``dt``.
    """
    check_same_grid(psi0, h)
    states = []
    psi = psi0
    steppers = {}
    for t in times:
        duration = float(t) - psi.time
        if duration < -1e-12:
            raise ValueError("checkpoint times must be increasing")
        if duration <= 1e-12:
            states.append(psi.replace(psi.values, float(t)))
            continue
        cfg = EvolutionConfig.over(duration, dt, mode)
        key = round(cfg.dt, 15)
        if key not in steppers:
            steppers[key] = CrankNicolson(h.matrix, cfg.dt, mode)
        values = steppers[key].run(psi.values, cfg.n_steps)
        psi = psi.replace(values, float(t))
        states.append(psi)
    return states


def iterate_states(psi0, h, cfg):
    """Yield ``psi0`` and then the state after every step."""
    check_same_grid(psi0, h)
    stepper = CrankNicolson(h.matrix, cfg.dt, cfg.mode)
    values = psi0.values
    yield psi0
    for k in range(1, cfg.n_steps + 1):
        values = stepper.run(values, 1, start_step=k - 1)
        yield psi0.replace(values, psi0.time + k * cfg.dt)


def _positive_time(t, name):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError(f"{name} must be > 0")
    return t


def free_kernel(x, t, sigma):
    """Fundamental solution ``(2 pi sigma^2 i t)^-1/2 exp(i x^2 / (2 sigma^2 t))``."""
    t = _positive_time(t, "t")
    x = np.asarray(x, dtype=float)
    prefactor = 1.0 / np.sqrt(2.0 * np.pi * sigma**2 * 1j * t)
    return prefactor * np.exp(1j * x**2 / (2.0 * sigma**2 * t))


def heat_kernel(x, tau, sigma):
    """Gaussian heat kernel of variance ``sigma^2 tau``."""
    tau = _positive_time(tau, "tau")
    x = np.asarray(x, dtype=float)
    var = sigma**2 * tau
    return np.exp(-(x**2) / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)


def closed_form_solution(x, t, sigma, c):
    """Heat kernel damped by a constant potential: ``K_t(x) exp(-c t)``."""
    t = _positive_time(t, "t")
    x = np.asarray(x, dtype=float)
    return np.exp(-(x**2) / (2.0 * sigma**2 * t) - c * t) / np.sqrt(2.0 * np.pi * sigma**2 * t)


def free_packet(x, t, sigma, width, center=0.0, momentum=0.0):
    """Exact free Gaussian packet for ``i psi_t = -sigma^2/2 psi''``.

    At ``t = 0`` the packet is ``(2 pi w^2)^-1/4 exp(-(x-c)^2/(4 w^2) + i k (x-c))``,
    so ``|psi|^2`` is normal with standard deviation ``width``.
    """
    x = np.asarray(x, dtype=float)
    s2 = width**2
    a = s2 + 0.5j * sigma**2 * t
    shift = x - center - sigma**2 * momentum * t
    return (
        (2.0 * np.pi * s2) ** -0.25
        * np.sqrt(s2 / a)
        * np.exp(-(shift**2) / (4.0 * a))
        * np.exp(1j * momentum * (x - center) - 0.5j * sigma**2 * momentum**2 * t)
    )
