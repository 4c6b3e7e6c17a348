import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from qmart.hamiltonians import (
    HamiltonianOperator,
    PotentialSpec,
    build_bs_hamiltonian,
    build_gaussian_hamiltonian,
    build_transformed_hamiltonian,
    check_pseudo_hermitian,
    metric_from_weight,
    similarity_transform,
)
from qmart.numerics import Grid, MetricWeight

SIGMA = 0.2


def test_potential_spec_validation():
    g = Grid(0, 1, 5)
    with pytest.raises(ValueError, match="nonfinite"):
        PotentialSpec.tabulated(g, [0, 1, np.inf, 0, 0])
    with pytest.raises(ValueError, match="shape"):
        PotentialSpec.tabulated(g, [0, 1])
    with pytest.raises(ValueError):
        PotentialSpec("quadratic", 1.0)
    c = PotentialSpec.tabulated(g, np.arange(5.0))
    assert np.isnan(c(np.array([2.0]))[0])
    assert c(np.array([0.5]))[0] == 2.0
    with pytest.raises(ValueError):
        c.samples(Grid(0, 1, 7))


def test_gaussian_hamiltonian_on_quadratic():
    g = Grid.centered(3.0, 101)
    h = build_gaussian_hamiltonian(g, SIGMA, 0.0)
    out = h.apply(g.nodes**2)
    np.testing.assert_allclose(out[1:-1], -(SIGMA**2), rtol=1e-9)
    assert h.symmetry == "hermitian" and h.bandwidth == 1


def test_gaussian_hamiltonian_constant_shift():
    g = Grid.centered(3.0, 51)
    h0 = build_gaussian_hamiltonian(g, SIGMA, 0.0).dense()
    hc = build_gaussian_hamiltonian(g, SIGMA, 0.7).dense()
    assert np.array_equal(hc, h0 + 0.7 * np.eye(g.n))


def test_gaussian_hamiltonian_linear_in_potential():
    g = Grid.centered(3.0, 51)
    rng = np.random.default_rng(1)
    c1, c2 = rng.normal(size=g.n), rng.normal(size=g.n)
    h12 = build_gaussian_hamiltonian(g, SIGMA, PotentialSpec.tabulated(g, c1 + c2)).dense()
    h1 = build_gaussian_hamiltonian(g, SIGMA, PotentialSpec.tabulated(g, c1)).dense()
    np.testing.assert_allclose(h12, h1 + np.diag(c2), rtol=0, atol=1e-12)


def test_gaussian_hamiltonian_rejects_nonfinite_and_sigma():
    g = Grid.centered(3.0, 11)
    with pytest.raises(ValueError):
        build_gaussian_hamiltonian(g, 0.0, 0.0)
    with pytest.raises(ValueError):
        build_gaussian_hamiltonian(g, SIGMA, np.nan)


def test_dirichlet_ground_state_converges():
    # the Dirichlet conditions sit one cell beyond the end nodes
    errs = []
    for n in (51, 101, 201, 401):
        g = Grid.centered(3.0, n)
        length = g.x_max - g.x_min + 2 * g.h
        lowest = np.min(np.abs(np.linalg.eigvalsh(build_gaussian_hamiltonian(g, SIGMA, 0.0).dense())))
        errs.append(abs(lowest - SIGMA**2 * np.pi**2 / (2 * length**2)))
    assert errs[-1] < 1e-7
    assert np.all(np.diff(errs) < 0)


def test_hermitian_tag_is_enforced():
    g = Grid(0, 1, 4)
    m = sp.csr_matrix(np.triu(np.ones((4, 4))) - np.triu(np.ones((4, 4)), 2))
    with pytest.raises(ValueError, match="adjoint"):
        HamiltonianOperator(g, m, symmetry="hermitian")
    with pytest.raises(ValueError, match="pentadiagonal"):
        HamiltonianOperator(g, sp.csr_matrix(np.ones((4, 4))))


def test_similarity_identity_metric():
    g = Grid.centered(3.0, 41)
    h = build_gaussian_hamiltonian(g, SIGMA, 0.005)
    k = similarity_transform(h, MetricWeight.flat(g))
    assert np.array_equal(k.dense(), h.dense())
    assert k.symmetry == "pseudo_hermitian"


def test_similarity_matches_composition():
    g = Grid.centered(6.0, 301)
    m = MetricWeight.log_price(g)
    h = build_gaussian_hamiltonian(g, SIGMA, 0.005)
    k = similarity_transform(h, m)
    rng = np.random.default_rng(3)
    psi = rng.normal(size=g.n) + 1j * rng.normal(size=g.n)
    direct = k.apply(psi)
    composed = (h.apply(m.rho * psi)) / m.rho
    np.testing.assert_allclose(direct, composed, rtol=1e-13, atol=1e-13 * np.max(np.abs(direct)))


def test_similarity_rows_match_analytic_stencil_to_second_order():
    errs = []
    for n in (201, 401, 801, 1601):
        g = Grid.centered(3.0, n)
        k = similarity_transform(build_gaussian_hamiltonian(g, SIGMA, 0.005), MetricWeight.log_price(g))
        a = build_transformed_hamiltonian(g, SIGMA, 0.005)
        f = np.exp(-(g.nodes**2)) * np.cos(2 * g.nodes)
        diff = (k.apply(f) - a.apply(f))[1:-1]
        errs.append(np.max(np.abs(diff)))
    order = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(order > 1.9)


def test_similarity_preserves_spectrum():
    g = Grid.centered(4.0, 120)
    h = build_gaussian_hamiltonian(g, SIGMA, PotentialSpec.tabulated(g, 0.01 * g.nodes**2))
    k = similarity_transform(h, MetricWeight.log_price(g))
    ev_h = np.sort(np.linalg.eigvalsh(h.dense()))
    ev_k = np.sort(np.linalg.eigvals(k.dense()).real)
    np.testing.assert_allclose(ev_k, ev_h, rtol=1e-9, atol=1e-9)


def test_similarity_rejects_nonhermitian_input():
    g = Grid.centered(3.0, 21)
    k = build_transformed_hamiltonian(g, SIGMA, 0.005)
    with pytest.raises(ValueError):
        similarity_transform(k, MetricWeight.log_price(g))


def test_pseudo_hermitian_defect_examples():
    g = Grid.centered(6.0, 2048)
    m = MetricWeight.log_price(g)
    h = build_gaussian_hamiltonian(g, SIGMA, 0.005)
    assert check_pseudo_hermitian(h, MetricWeight.flat(g)) == 0.0
    k = similarity_transform(h, m)
    defect = check_pseudo_hermitian(k, m)
    # ~1 ulp of the largest entry of eta K; machine precision relative to the operator scale
    scale = np.max(np.abs(sp.diags(m.eta) @ k.matrix))
    assert defect <= 4 * np.finfo(float).eps * scale
    assert defect <= 1e-10
    # non-symmetric perturbation placed where eta >= 1
    i = g.index_of(-1.0)
    pert = k.matrix.tolil(copy=True)
    pert[i, i + 1] += 1e-3
    bad = HamiltonianOperator(g, pert.tocsr(), symmetry="unchecked")
    assert check_pseudo_hermitian(bad, m) >= 1e-4


def test_pseudo_hermitian_defect_small_grid_is_tight():
    g = Grid.centered(3.0, 200)
    m = MetricWeight.log_price(g)
    k = similarity_transform(build_gaussian_hamiltonian(g, SIGMA, 0.005), m)
    assert check_pseudo_hermitian(k, m) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 80), st.integers(0, 2**32 - 1), st.floats(0.05, 2.0))
def test_pseudo_hermitian_property(n, seed, sigma):
    rng = np.random.default_rng(seed)
    g = Grid(-2.0, 2.0, n)
    c = PotentialSpec.tabulated(g, rng.normal(size=n))
    h = build_gaussian_hamiltonian(g, sigma, c)
    m = MetricWeight(g, rng.uniform(0.1, 10.0, size=n))
    k = similarity_transform(h, m)
    assert np.array_equal(h.dense(), h.dense().conj().T)
    assert check_pseudo_hermitian(k, m) <= 1e-10


def test_bs_hamiltonian_examples():
    g = Grid(50.0, 150.0, 401)
    s = g.nodes
    h = build_bs_hamiltonian(g, SIGMA)
    np.testing.assert_allclose(h.apply(s)[1:-1], 0.0, atol=1e-9)
    np.testing.assert_allclose(h.apply(s**2)[1:-1], -(SIGMA**2) * s[1:-1] ** 2, rtol=1e-9)
    # leading truncation error on log S is sigma^2 h^2 / (4 S^2)
    err = np.abs(h.apply(np.log(s))[1:-1] - SIGMA**2 / 2)
    assert np.all(err <= 1.01 * SIGMA**2 * g.h**2 / (4 * s[1:-1] ** 2))
    assert h.coordinate == "S" and h.symmetry == "pseudo_hermitian"
    with pytest.raises(ValueError, match="positive"):
        build_bs_hamiltonian(Grid(0.0, 10.0, 11), SIGMA)


def test_metric_from_weight_examples():
    g = Grid.centered(2.0, 11)
    assert np.array_equal(metric_from_weight(g, np.ones(g.n)).rho, np.ones(g.n))
    np.testing.assert_allclose(metric_from_weight(g, np.exp(-g.nodes)).rho, np.exp(-0.5 * g.nodes), rtol=1e-15)
    assert np.array_equal(metric_from_weight(g, np.full(g.n, 4.0)).rho, np.full(g.n, 2.0))
    with pytest.raises(ValueError):
        metric_from_weight(g, np.zeros(g.n))
