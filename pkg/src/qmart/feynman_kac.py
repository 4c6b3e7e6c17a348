"""Feynman-Kac Monte Carlo pricer, independent of the PDE engine.

Paths are driftless scaled Brownian motion ``X = x0 + sigma W`` sampled with
exact increments; only the potential integral ``int_0^T C(X_s) ds`` is
discretized, by the left-point rule (bias O(1/n_steps)).

Randomness comes from numpy's PCG64. Batch ``b`` draws from the stream
seeded by ``SeedSequence([seed, b])``, so results do not depend on how
batches are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ._validation import check_int, check_scalar

__all__ = ["McConfig", "McResult", "mc_price", "mc_martingale_check", "GENERATOR_ID"]

GENERATOR_ID = f"numpy-{np.__version__}/PCG64/SeedSequence([seed, batch])"
MAX_REJECTED_FRACTION = 1e-3


@dataclass(frozen=True)
class McConfig:
    n_paths: int
    n_steps: int
    seed: int
    sigma: float
    x0: float = 0.0
    horizon: float = 1.0
    batch_size: int = 10_000

    def __post_init__(self):
        check_int(self.n_paths, "n_paths", min_val=1)
        check_int(self.n_steps, "n_steps", min_val=1)
        check_int(self.batch_size, "batch_size", min_val=1)
        seed = check_int(self.seed, "seed", min_val=0)
        if seed >= 2**64:
            raise ValueError("seed must fit in 64 bits")
        check_scalar(self.sigma, "sigma", min_val=0.0)
        check_scalar(self.x0, "x0")
        check_scalar(self.horizon, "horizon", min_val=0.0, strict=True)


@dataclass(frozen=True)
class McResult:
    estimate: float
    std_error: float
    n_paths: int
    n_rejected: int = 0
    generator: str = GENERATOR_ID
    config: dict = None

    def to_dict(self):
        return asdict(self)


def _potential_fn(c):
    if callable(c):
        return c
    c = float(c)
    return lambda x: np.full(np.shape(x), c)


def _batches(cfg):
    full, rest = divmod(cfg.n_paths, cfg.batch_size)
    sizes = [cfg.batch_size] * full + ([rest] if rest else [])
    for b, size in enumerate(sizes):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, b])))
        yield rng, size


def _path_samples(f, c, cfg):
    """Per-path values ``f(X_T) exp(-int C)`` and the number of rejected paths."""
    potential = _potential_fn(c)
    dt = cfg.horizon / cfg.n_steps
    scale = cfg.sigma * math.sqrt(dt)
    out, rejected = [], 0
    for rng, size in _batches(cfg):
        increments = scale * rng.standard_normal((size, cfg.n_steps))
        paths = cfg.x0 + np.cumsum(increments, axis=1)
        # left points: x0, X_1, ..., X_{n-1}
        left = np.empty_like(paths)
        left[:, 0] = cfg.x0
        left[:, 1:] = paths[:, :-1]
        c_vals = np.asarray(potential(left), dtype=float)
        ok = np.all(np.isfinite(c_vals), axis=1)
        rejected += int(size - ok.sum())
        integral = dt * c_vals[ok].sum(axis=1)
        terminal = paths[ok, -1]
        out.append(np.asarray(f(terminal), dtype=float) * np.exp(-integral))
    if rejected > MAX_REJECTED_FRACTION * cfg.n_paths:
        raise RuntimeError(
            f"{rejected} of {cfg.n_paths} paths left the potential's domain "
            f"(limit {MAX_REJECTED_FRACTION:g})"
        )
    return np.concatenate(out), rejected


def _summarize(samples, rejected, cfg, scale=1.0):
    n = samples.size
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return McResult(mean * scale, se * abs(scale), n, rejected, GENERATOR_ID, asdict(cfg))


def mc_price(f, c, cfg, frame="generator"):
    """Estimate ``E[f(X_T) exp(-int_0^T C(X_s) ds)]``.

    ``c`` is a constant, a :class:`~qmart.hamiltonians.PotentialSpec` or any
    vectorized callable; NaN values mark points outside its domain and the
    corresponding paths are rejected. With ``frame="pricing"`` the payout is
    weighted by ``exp(-(X_T - x0)/2)``, which maps the generator frame onto
    the log-price pricing density used by the PDE engine.
    """
    if frame == "pricing":
        payout = lambda x: f(x) * np.exp(-0.5 * (x - cfg.x0))
    elif frame == "generator":
        payout = f
    else:
        raise ValueError(f"frame must be 'generator' or 'pricing', got {frame!r}")
    samples, rejected = _path_samples(payout, c, cfg)
    return _summarize(samples, rejected, cfg)


def mc_martingale_check(target, c, cfg):
    """Estimate ``E[g(X_T) exp(-int C)] / g(x0)`` with ``g = M e^{-x/2}``; 1 when calibrated."""
    weight = lambda x: target(x) * np.exp(-0.5 * x)
    g0 = float(weight(np.array([cfg.x0]))[0])
    samples, rejected = _path_samples(weight, c, cfg)
    return _summarize(samples, rejected, cfg, scale=1.0 / g0)
