"""scikit-learn style wrappers around calibration and the two pricing engines.

The estimators hold scenario parameters as constructor arguments (so
``get_params``/``set_params``/``clone`` work), do their numerical work in
``fit`` and answer queries on arrays of log-prices or strikes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .feynman_kac import McConfig, mc_price
from .hamiltonians import PotentialSpec
from .numerics import Grid
from .pricing import (
    DiscountFactorModel,
    ForwardTarget,
    PricingModel,
    calibrate_potential,
    martingale_report,
    price_payout,
)

__all__ = ["MartingaleCalibrator", "WaveFunctionPricer", "FeynmanKacPricer"]


def _column(X, name="X"):
    """Validate a 1-D sample array given as shape ``(n,)`` or ``(n, 1)``."""
    X = check_array(X, ensure_2d=False, dtype=float, input_name=name)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"{name} must have a single column, got shape {X.shape}")
        X = X[:, 0]
    return X


def _strikes(X):
    k = _column(X, "strikes")
    if np.any(k <= 0):
        raise ValueError("strikes must be positive")
    return k


class MartingaleCalibrator(TransformerMixin, BaseEstimator):
    """Calibrate ``C(x)`` so the forward ``DF(x) e^x`` is a martingale.

    ``fit`` tabulates the potential on a centered grid and runs the
    martingale check; ``transform`` evaluates ``C`` at log-prices.

    Attributes
    ----------
    grid_ : Grid
    potential_ : PotentialSpec
    report_ : MartingaleReport
    defect_ : float
    """

    def __init__(self, sigma=0.2, epsilon=0.0, half_width=6.0, n=2049, method="auto",
                 horizon=1.0, dt=1e-3, n_checkpoints=10):
        self.sigma = sigma
        self.epsilon = epsilon
        self.half_width = half_width
        self.n = n
        self.method = method
        self.horizon = horizon
        self.dt = dt
        self.n_checkpoints = n_checkpoints

    def fit(self, X=None, y=None):
        grid = Grid.centered(self.half_width, self.n)
        target = ForwardTarget(DiscountFactorModel(self.epsilon))
        self.potential_ = calibrate_potential(target, self.sigma, grid, method=self.method)
        model = PricingModel(grid, self.sigma, self.potential_, dt=self.dt)
        self.report_ = martingale_report(model, target, self.horizon, 0.0, self.n_checkpoints)
        self.defect_ = self.report_.defect
        self.grid_ = grid
        return self

    def transform(self, X):
        """``C`` at the log-prices in ``X``; values off the grid raise."""
        check_is_fitted(self, "potential_")
        x = _column(X)
        if np.any((x < self.grid_.x_min) | (x > self.grid_.x_max)):
            raise ValueError(f"log-prices must lie in [{self.grid_.x_min}, {self.grid_.x_max}]")
        return self.potential_(x)


class WaveFunctionPricer(BaseEstimator):
    """European calls on the PDE engine; ``predict`` maps strikes to prices."""

    def __init__(self, sigma=0.2, T=1.0, S0=100.0, epsilon=0.0, half_width=6.0, n=2048, dt=1e-3):
        self.sigma = sigma
        self.T = T
        self.S0 = S0
        self.epsilon = epsilon
        self.half_width = half_width
        self.n = n
        self.dt = dt

    def fit(self, X=None, y=None):
        grid = Grid.centered(self.half_width, self.n)
        target = ForwardTarget(DiscountFactorModel(self.epsilon))
        self.potential_ = calibrate_potential(target, self.sigma, grid)
        model = PricingModel(grid, self.sigma, self.potential_, dt=self.dt)
        self.density_ = model.density(0.0, self.T)
        return self

    def predict(self, X):
        check_is_fitted(self, "density_")
        spot = self.S0 * np.exp(self.density_.grid.nodes)
        return np.array([price_payout(np.maximum(spot - k, 0.0), self.density_) for k in _strikes(X)])


class FeynmanKacPricer(BaseEstimator):
    """European calls by Feynman-Kac Monte Carlo in the pricing frame.

    ``fit`` calibrates the potential (a constant for ``epsilon = 0``);
    ``predict(X, return_std=True)`` also returns standard errors. Each
    strike reuses the same seeded paths.
    """

    def __init__(self, sigma=0.2, T=1.0, S0=100.0, epsilon=0.0, n_paths=100_000, n_steps=50,
                 seed=0, half_width=6.0, n=2048):
        self.sigma = sigma
        self.T = T
        self.S0 = S0
        self.epsilon = epsilon
        self.n_paths = n_paths
        self.n_steps = n_steps
        self.seed = seed
        self.half_width = half_width
        self.n = n

    def fit(self, X=None, y=None):
        self.config_ = McConfig(self.n_paths, self.n_steps, self.seed, self.sigma, 0.0, self.T)
        if self.epsilon == 0.0:
            self.potential_ = PotentialSpec.constant(self.sigma**2 / 8.0)
        else:
            grid = Grid.centered(self.half_width, self.n)
            target = ForwardTarget(DiscountFactorModel(self.epsilon))
            self.potential_ = calibrate_potential(target, self.sigma, grid)
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "config_")
        c = self.potential_.value if self.potential_.is_constant else self.potential_
        results = [
            mc_price(lambda x, k=k: np.maximum(self.S0 * np.exp(x) - k, 0.0), c, self.config_,
                     frame="pricing")
            for k in _strikes(X)
        ]
        prices = np.array([r.estimate for r in results])
        if return_std:
            return prices, np.array([r.std_error for r in results])
        return prices
