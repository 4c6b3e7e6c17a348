import json
import math

import numpy as np
import pytest

from qmart.feynman_kac import GENERATOR_ID, McConfig, _path_samples, mc_martingale_check, mc_price
from qmart.hamiltonians import PotentialSpec
from qmart.numerics import Grid
from qmart.pricing import (
    DiscountFactorModel,
    ForwardTarget,
    PricingModel,
    calibrate_potential,
    martingale_expectation,
    price_payout,
)

SIGMA = 0.2


def cfg(n_paths=100_000, n_steps=20, seed=7, **kw):
    return McConfig(n_paths, n_steps, seed, kw.pop("sigma", SIGMA), **kw)


def within(res, value, k=3.0):
    return abs(res.estimate - value) <= k * res.std_error


def test_config_validation():
    for bad in (dict(n_paths=0), dict(n_steps=0), dict(seed=-1), dict(seed=2**64), dict(horizon=0.0)):
        with pytest.raises(ValueError):
            cfg(**bad)
    with pytest.raises(ValueError):
        mc_price(lambda x: x, 0.0, cfg(10), frame="other")


def test_driftless_mean():
    res = mc_price(lambda x: x, 0.0, cfg(x0=0.4))
    assert within(res, 0.4)
    assert res.std_error > 0 and res.n_paths == 100_000 and res.n_rejected == 0


def test_lognormal_moment_cancels_weight():
    res = mc_price(np.exp, SIGMA**2 / 2, cfg(x0=0.1))
    assert within(res, math.exp(0.1))


def test_martingale_weight_matches_pde_engine():
    x0 = 0.2
    res = mc_price(lambda x: np.exp(0.5 * x), SIGMA**2 / 8, cfg(x0=x0))
    g = Grid.centered(6.0, 2048)
    model = PricingModel(g, SIGMA, SIGMA**2 / 8)
    psi = model.states(x0, [1.0])[-1]
    pde = martingale_expectation(psi, model.metric, ForwardTarget()) / math.exp(x0)
    assert within(res, math.exp(0.5 * x0) * pde)


def test_martingale_check_examples():
    target = ForwardTarget()
    assert within(mc_martingale_check(target, SIGMA**2 / 8, cfg()), 1.0)
    assert within(mc_martingale_check(target, 0.0, cfg()), math.exp(SIGMA**2 / 8))
    df_target = ForwardTarget(DiscountFactorModel(0.1))
    c = calibrate_potential(df_target, SIGMA, Grid.centered(2.8, 1025))
    assert within(mc_martingale_check(df_target, c, cfg(n_steps=50)), 1.0)


def test_constant_potential_is_deterministic_weight():
    # with constant C the estimator is exactly exp(-C T) times the C = 0 estimator
    a = mc_price(lambda x: x**2, 0.0, cfg(1000))
    b = mc_price(lambda x: x**2, 0.3, cfg(1000))
    assert abs(b.estimate - a.estimate * math.exp(-0.3)) <= 1e-15 * abs(a.estimate)


def test_determinism_bitwise():
    spec = PotentialSpec.constant(SIGMA**2 / 8)
    a = mc_price(lambda x: np.maximum(np.exp(x) - 1, 0), spec, cfg(30_000))
    b = mc_price(lambda x: np.maximum(np.exp(x) - 1, 0), spec, cfg(30_000))
    assert a.estimate == b.estimate and a.std_error == b.std_error
    c = mc_price(lambda x: np.maximum(np.exp(x) - 1, 0), spec, cfg(30_000, seed=8))
    assert c.estimate != a.estimate


def test_batches_are_independent_substreams():
    # batch b draws from its own stream, so a prefix of whole batches reproduces the smaller run
    small, _ = _path_samples(lambda x: x, 0.0, cfg(20_000, batch_size=5_000))
    big, _ = _path_samples(lambda x: x, 0.0, cfg(40_000, batch_size=5_000))
    assert np.array_equal(big[:20_000], small)
    assert not np.array_equal(big[20_000:], small)


def test_standard_error_scaling():
    f = lambda x: np.maximum(np.exp(x) - 1, 0)
    ratios = []
    for seed in range(3):
        a = mc_price(f, SIGMA**2 / 8, cfg(25_000, seed=seed))
        b = mc_price(f, SIGMA**2 / 8, cfg(100_000, seed=seed))
        ratios.append(a.std_error / b.std_error)
    assert np.all(np.abs(np.array(ratios) / 2 - 1) < 0.2)


def test_step_doubling_bias_below_one_se():
    target = ForwardTarget(DiscountFactorModel(0.1))
    c = calibrate_potential(target, SIGMA, Grid.centered(2.8, 1025))
    coarse = mc_martingale_check(target, c, cfg(50_000, n_steps=25))
    fine = mc_martingale_check(target, c, cfg(50_000, n_steps=50))
    assert abs(fine.estimate - coarse.estimate) < fine.std_error


def test_rejection_counting_and_abort():
    g = Grid.centered(1.0, 201)
    tabulated = PotentialSpec.tabulated(g, np.zeros(g.n))
    with pytest.raises(RuntimeError, match="domain"):
        mc_price(lambda x: x, tabulated, cfg(2000, sigma=1.0))
    # rare escapes are counted but tolerated
    c = lambda x: np.where(np.abs(x) > 0.75, np.nan, 0.0)
    res = mc_price(lambda x: x, c, cfg(20_000, sigma=0.2))
    assert 0 < res.n_rejected <= 20 and res.n_paths == 20_000 - res.n_rejected


def test_pricing_frame_agrees_with_pde():
    g = Grid.centered(6.0, 2048)
    density = PricingModel(g, SIGMA, SIGMA**2 / 8).density(0.0, 1.0)
    call = lambda x: np.maximum(100 * np.exp(x) - 100, 0)
    res = mc_price(call, SIGMA**2 / 8, cfg(), frame="pricing")
    assert within(res, price_payout(call, density))


def test_result_serialization():
    res = mc_price(lambda x: x, 0.0, cfg(100))
    d = json.loads(json.dumps(res.to_dict()))
    assert d["generator"] == GENERATOR_ID and "PCG64" in GENERATOR_ID
    assert d["config"]["seed"] == 7 and d["std_error"] >= 0
