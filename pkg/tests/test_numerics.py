import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from conftest import gaussian
from qmart.numerics import (
    Grid,
    MetricWeight,
    NormalizationWarning,
    WaveFunction,
    default_half_width,
    derivative_matrix,
    expectation,
    inner_product,
    inner_product_eta,
    trapezoid,
)


def test_grid_invariants():
    g = Grid(-1.0, 3.0, 5)
    assert g.h == 1.0
    assert np.all(np.diff(g.nodes) > 0)
    np.testing.assert_allclose(np.diff(g.nodes), g.h)
    with pytest.raises(ValueError):
        Grid(0.0, 1.0, 2)
    with pytest.raises(ValueError):
        Grid(1.0, 1.0, 10)
    with pytest.raises(ValueError):
        g.index_of(3.5)
    assert g.index_of(0.9) == 2


def test_default_half_width():
    assert default_half_width(0.2, 1.0) == 6.0
    assert default_half_width(1.0, 4.0) == 16.0


def test_wavefunction_rejects_bad_values(grid):
    with pytest.raises(ValueError, match="shape"):
        WaveFunction(grid, np.ones(grid.n - 1))
    bad = np.ones(grid.n)
    bad[7] = np.nan
    with pytest.raises(ValueError, match="node 7"):
        WaveFunction(grid, bad)
    psi = WaveFunction(grid, np.ones(grid.n))
    with pytest.raises(ValueError):
        psi.values[0] = 2.0


def test_inner_product_normalized_gaussian(grid):
    psi = gaussian(grid)
    assert abs(inner_product(psi, psi) - 1.0) < 1e-12


def test_inner_product_even_odd_vanishes(grid):
    x = grid.nodes
    even = WaveFunction(grid, np.exp(-(x**2)))
    odd = WaveFunction(grid, x * np.exp(-(x**2)))
    assert abs(inner_product(even, odd)) < 1e-14


def test_inner_product_offset_gaussians_against_analytic_overlap():
    # unit-width amplitudes centered at 0 and 1 overlap to exp(-d^2/8)
    g = Grid.centered(12.0, 4001)
    a, b = gaussian(g, 1.0, 0.0), gaussian(g, 1.0, 1.0)
    analytic = math.exp(-1.0 / 8.0)
    brute, _ = quad(lambda x: (2 * np.pi) ** -0.5 * np.exp(-(x**2) / 4 - (x - 1) ** 2 / 4), -30, 30)
    assert abs(brute - analytic) < 1e-12
    assert abs(inner_product(a, b) - analytic) < 1e-10


def test_inner_product_grid_mismatch():
    a = WaveFunction(Grid(0, 1, 5), np.ones(5))
    b = WaveFunction(Grid(0, 2, 5), np.ones(5))
    with pytest.raises(ValueError, match="grid mismatch"):
        inner_product(a, b)


def test_quadrature_converges_at_second_order():
    # a non-decaying integrand so the trapezoid end corrections show
    errs = []
    for n in (101, 201, 401):
        g = Grid(0.0, 1.0, n)
        psi = WaveFunction(g, np.exp(g.nodes))
        errs.append(abs(inner_product(psi, psi).real - (math.exp(2) - 1) / 2))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    np.testing.assert_allclose(ratios, 4.0, rtol=0.02)


def test_inner_product_eta_identity_metric_reduces(grid):
    a, b = gaussian(grid, 1.0, 0.3), gaussian(grid, 0.7, -0.2)
    flat = MetricWeight.flat(grid)
    assert inner_product_eta(a, b, flat) == inner_product(a, b)


def test_inner_product_eta_weights_cancel(grid):
    x = grid.nodes
    g = WaveFunction(grid, np.exp(-(x**2)) * (1 + 0.3j * x))
    lifted = WaveFunction(grid, np.exp(0.5 * x) * g.values)
    m = MetricWeight.log_price(grid)
    np.testing.assert_allclose(inner_product_eta(lifted, lifted, m), inner_product(g, g), rtol=1e-13)


def test_inner_product_eta_against_quad():
    g = Grid.centered(12.0, 4001)
    a, b = gaussian(g, 1.0, 0.0), gaussian(g, 0.5, 0.5)
    m = MetricWeight.log_price(g)

    def integrand(x):
        pa = (2 * np.pi) ** -0.25 * np.exp(-(x**2) / 4)
        pb = (2 * np.pi * 0.25) ** -0.25 * np.exp(-((x - 0.5) ** 2) / 1.0)
        return pa * np.exp(-x) * pb

    oracle, _ = quad(integrand, -30, 30, epsabs=1e-14)
    assert abs(inner_product_eta(a, b, m) - oracle) < 1e-10


def test_metric_rejects_nonpositive(grid):
    eta = np.ones(grid.n)
    eta[3] = 0.0
    with pytest.raises(ValueError, match="node 3"):
        MetricWeight(grid, eta)
    with pytest.raises(ValueError):
        MetricWeight(grid, np.ones(grid.n), rho=np.full(grid.n, 2.0))


def test_log_price_metric_roots(grid):
    m = MetricWeight.log_price(grid)
    np.testing.assert_allclose(m.rho**2, m.eta, rtol=4e-16)
    assert not m.is_flat and MetricWeight.flat(grid).is_flat


def test_expectation_examples():
    g = Grid.centered(12.0, 4001)
    s = 0.8
    psi = gaussian(g, s)
    assert abs(expectation(psi, lambda x: np.ones_like(x)) - 1.0) < 1e-12
    assert abs(expectation(psi, lambda x: x)) < 1e-14
    assert abs(expectation(psi, lambda x: x**2) - s**2) < 1e-10
    # samples work as well as callables
    assert expectation(psi, g.nodes**2) == expectation(psi, lambda x: x**2)


def test_expectation_warns_when_not_normalized(grid):
    psi = WaveFunction(grid, 2.0 * gaussian(grid).values)
    with pytest.warns(NormalizationWarning, match="4"):
        val = expectation(psi, lambda x: np.ones_like(x))
    assert abs(val - 4.0) < 1e-10
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        expectation(psi, lambda x: np.ones_like(x), tol=10.0)


def test_derivative_matrix_exact_cases():
    g = Grid.centered(3.0, 61)
    x = g.nodes
    d2 = derivative_matrix(g, 2) @ x**2
    np.testing.assert_allclose(d2[1:-1], 2.0, rtol=1e-10)
    d1 = derivative_matrix(g, 1) @ np.ones(g.n)
    assert np.all(d1[1:-1] == 0.0)
    with pytest.raises(ValueError):
        derivative_matrix(g, 3)


def test_derivative_matrix_sine_converges_at_second_order():
    errs = []
    for n in (101, 201, 401, 801):
        g = Grid(0.0, np.pi, n)
        x = g.nodes
        d2 = derivative_matrix(g, 2) @ np.sin(x)
        errs.append(np.max(np.abs(d2[1:-1] + np.sin(x[1:-1]))))
    order = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(order - 2.0) < 0.05)


def test_derivative_matrix_symmetry():
    g = Grid(0.0, 1.0, 9)
    d2 = derivative_matrix(g, 2).toarray()
    d1 = derivative_matrix(g, 1).toarray()
    assert np.array_equal(d2, d2.T)
    assert np.array_equal(d1, -d1.T)


def test_trapezoid_matches_numpy():
    v = np.random.default_rng(0).random((3, 17))
    np.testing.assert_allclose(trapezoid(v, 0.1), np.trapezoid(v, dx=0.1, axis=-1), rtol=1e-14)


complex_arrays = st.lists(
    st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=5, max_size=40
).map(lambda pairs: np.array([a + 1j * b for a, b in pairs]))


@settings(max_examples=50, deadline=None)
@given(complex_arrays, st.integers(0, 2**32 - 1))
def test_inner_product_properties(values, seed):
    g = Grid(0.0, 1.0, values.size)
    rng = np.random.default_rng(seed)
    other = rng.normal(size=values.size) + 1j * rng.normal(size=values.size)
    eta = rng.uniform(0.1, 5.0, size=values.size)
    psi, phi = WaveFunction(g, values), WaveFunction(g, other)
    m = MetricWeight(g, eta)
    self_ip = inner_product(psi, psi)
    assert self_ip.imag == 0.0 and self_ip.real >= 0.0
    self_eta = inner_product_eta(psi, psi, m)
    assert self_eta.imag == 0.0 and self_eta.real >= 0.0
    assert inner_product(phi, psi) == np.conj(inner_product(psi, phi))
    lifted = inner_product(phi.replace(m.rho * phi.values), psi.replace(m.rho * psi.values))
    scale = max(1.0, abs(inner_product_eta(phi, psi, m)))
    assert abs(inner_product_eta(phi, psi, m) - lifted) <= 1e-13 * scale
