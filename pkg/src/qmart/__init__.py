"""Martingale pricing with quantum-mechanical generators.

Log-price dynamics are written as Schrodinger-type evolutions: a Hermitian
Gaussian generator ``H``, its pseudo-Hermitian similarity transform ``K``,
Crank-Nicolson propagation in real and Wick-rotated time, martingale
calibration of the potential, an independent Feynman-Kac Monte Carlo
engine and Bohmian trajectory diagnostics.
"""

from .bohmian import (
    CFLError,
    bohm_trajectories,
    continuity_residual,
    hje_residual,
    polar_decompose,
    quantum_potential,
    velocity_field,
)
from .estimators import FeynmanKacPricer, MartingaleCalibrator, WaveFunctionPricer
from .evolution import EvolutionConfig, evolve, free_packet, heat_kernel
from .feynman_kac import McConfig, mc_martingale_check, mc_price
from .hamiltonians import (
    HamiltonianOperator,
    PotentialSpec,
    build_gaussian_hamiltonian,
    build_transformed_hamiltonian,
    check_pseudo_hermitian,
    similarity_transform,
)
from .numerics import Grid, MetricWeight, WaveFunction, expectation, inner_product, inner_product_eta
from .pricing import (
    DiscountFactorModel,
    ForwardTarget,
    PricingModel,
    calibrate_constant_c,
    calibrate_potential,
    martingale_report,
    price_arrow_debreu,
    price_payout,
    solve_constant_c,
)

__all__ = [
    "bohm_trajectories",
    "build_gaussian_hamiltonian",
    "build_transformed_hamiltonian",
    "calibrate_constant_c",
    "calibrate_potential",
    "CFLError",
    "check_pseudo_hermitian",
    "continuity_residual",
    "DiscountFactorModel",
    "EvolutionConfig",
    "evolve",
    "expectation",
    "FeynmanKacPricer",
    "ForwardTarget",
    "free_packet",
    "Grid",
    "HamiltonianOperator",
    "heat_kernel",
    "hje_residual",
    "inner_product",
    "inner_product_eta",
    "martingale_report",
    "MartingaleCalibrator",
    "mc_martingale_check",
    "mc_price",
    "McConfig",
    "MetricWeight",
    "polar_decompose",
    "PotentialSpec",
    "price_arrow_debreu",
    "price_payout",
    "PricingModel",
    "quantum_potential",
    "similarity_transform",
    "solve_constant_c",
    "velocity_field",
    "WaveFunction",
    "WaveFunctionPricer",
]

__version__ = "0.1.0"
