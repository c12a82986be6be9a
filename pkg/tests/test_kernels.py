import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geopot import (AlphaNotOne, CorrelationSpec, InteractionSpec,
                    NonPositiveTheta, SiteSet, absorption_weights,
                    correlation_matrix, distance_matrix, g_phi_gradient,
                    g_tilde_matrix, g_vector, g_weight, interaction_f)
from geopot.model import chol_spd

from _oracles import g_loo


# --- correlation ---------------------------------------------------------

def test_correlation_zero_distance_is_one():
    assert correlation_matrix(CorrelationSpec(0.8), np.zeros((1, 1)))[0, 0] == 1.0


def test_correlation_example_value():
    val = correlation_matrix(CorrelationSpec(0.8), np.array([[1.0]]))[0, 0]
    assert val == pytest.approx(math.exp(-1.25), abs=1e-12)
    assert val == pytest.approx(0.28650, abs=5e-6)


def test_correlation_vanishes_far_away():
    val = correlation_matrix(CorrelationSpec(0.8), np.array([[1e9]]))[0, 0]
    assert 0.0 <= val < 1e-12


def test_correlation_rejects_bad_theta():
    with pytest.raises(NonPositiveTheta):
        CorrelationSpec(0.0)
    with pytest.raises(NonPositiveTheta):
        CorrelationSpec(-1.0)


def test_correlation_matrix_properties(square_sites):
    H = distance_matrix(square_sites)
    S = correlation_matrix(CorrelationSpec(0.8), H)
    assert np.allclose(np.diag(S), 1.0)
    assert np.allclose(S, S.T)
    assert np.all((S > 0) & (S <= 1))


# --- absorption weights --------------------------------------------------

def test_g_empty_set_is_exactly_one():
    assert g_weight([0.5, 0.5], np.zeros((0, 2)), InteractionSpec(0.3)) == 1.0


def test_g_coincident_single_absorber_is_exactly_half():
    assert g_weight([0.5, 0.5], [[0.5, 0.5]], InteractionSpec(0.3)) == 0.5


def test_g_square_layout_value(square_sites):
    spec = InteractionSpec(0.3)
    others = square_sites.coords[1:]
    sum_f = (2 * math.exp(-2.0) + math.exp(-math.sqrt(0.72) / 0.3))
    assert sum_f == pytest.approx(0.32977, abs=1e-5)
    g = g_weight(square_sites.coords[0], others, spec)
    assert g == pytest.approx(0.75201, abs=5e-6)
    assert g == pytest.approx(1.0 / (1.0 + sum_f), abs=1e-15)


def test_g_vector_single_site():
    sites = SiteSet([[1.0, 2.0]], [3.0], None)
    assert g_vector(sites, InteractionSpec(0.3)).tolist() == [1.0]


def test_g_vector_square_symmetry(square_sites):
    g = g_vector(square_sites, InteractionSpec(0.3))
    assert np.allclose(g, 0.75201, atol=5e-6)
    assert np.all(g == g[0])


def test_g_vector_pair_closed_form():
    d = 123.0
    sites = SiteSet([[0, 0], [d, 0]], [1.0, 1.0], None)
    g = g_vector(sites, InteractionSpec(d))
    expected = 1.0 / (1.0 + math.exp(-1.0))
    assert np.allclose(g, expected, atol=1e-12)
    assert g[0] == pytest.approx(0.73106, abs=5e-6)


def test_g_vector_matches_loop_oracle():
    rng = np.random.default_rng(5)
    coords = rng.uniform(0, 10, size=(7, 2))
    sites = SiteSet(coords, np.ones(7), None)
    spec = InteractionSpec(2.5, alpha=1.3)
    assert np.allclose(g_vector(sites, spec), g_loo(coords, 2.5, 1.3),
                       rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 100_000))
def test_equally_effective_pairs(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-1000, 1000, size=(2, 2))
    spec = InteractionSpec(float(rng.uniform(1, 500)))
    assert g_weight(a, [b], spec) == g_weight(b, [a], spec)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_adding_absorber_strictly_decreases_weight(seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0, 10, size=2)
    others = rng.uniform(0, 10, size=(3, 2))
    spec = InteractionSpec(5.0)
    g3 = g_weight(s, others, spec)
    g2 = g_weight(s, others[:2], spec)
    assert g3 < g2


def test_interaction_limits():
    rng = np.random.default_rng(2)
    coords = rng.uniform(0, 100, size=(6, 2))
    sites = SiteSet(coords, np.ones(6), None)
    # phi -> 0: no interaction, weights -> 1
    g_small = g_vector(sites, InteractionSpec(1e-9))
    assert np.allclose(g_small, 1.0)
    # phi -> inf: every pairwise f -> 1 and weights -> 1/N
    g_big = g_vector(sites, InteractionSpec(1e12))
    assert np.allclose(g_big, 1.0 / 6.0, rtol=1e-6)


def test_absorption_weights_vectorized_matches_scalar():
    rng = np.random.default_rng(3)
    targets = rng.uniform(0, 10, size=(5, 2))
    absorbers = rng.uniform(0, 10, size=(4, 2))
    spec = InteractionSpec(3.0)
    vec = absorption_weights(targets, absorbers, spec)
    for t, v in zip(targets, vec):
        assert g_weight(t, absorbers, spec) == v


# --- phi derivatives -----------------------------------------------------

def test_g_phi_gradient_single_site():
    sites = SiteSet([[0.0, 0.0]], [1.0], None)
    assert g_phi_gradient(sites, InteractionSpec(1.0)).tolist() == [0.0]


def test_g_phi_gradient_pair_closed_form():
    sites = SiteSet([[0, 0], [1, 0]], [1.0, 1.0], None)
    dg = g_phi_gradient(sites, InteractionSpec(1.0))
    f = math.exp(-1.0)
    expected = -f / (1.0 + f) ** 2
    assert np.allclose(dg, expected, rtol=1e-12)
    assert dg[0] == pytest.approx(-0.19661, abs=5e-6)


def test_g_phi_gradient_nonpositive_and_matches_fd():
    rng = np.random.default_rng(11)
    coords = rng.uniform(0, 300, size=(8, 2))
    sites = SiteSet(coords, np.ones(8), None)
    phi = 60.0
    spec = InteractionSpec(phi)
    dg = g_phi_gradient(sites, spec)
    assert np.all(dg <= 0)
    h = 1e-4 * phi
    fd = (g_vector(sites, InteractionSpec(phi + h))
          - g_vector(sites, InteractionSpec(phi - h))) / (2 * h)
    assert np.allclose(dg, fd, rtol=1e-5)


def test_g_phi_gradient_requires_alpha_one():
    sites = SiteSet([[0, 0], [1, 0]], [1.0, 1.0], None)
    with pytest.raises(AlphaNotOne):
        g_phi_gradient(sites, InteractionSpec(1.0, alpha=2.0))
    with pytest.raises(AlphaNotOne):
        g_tilde_matrix(sites, InteractionSpec(1.0, alpha=0.5))


def test_g_tilde_single_site():
    sites = SiteSet([[0.0, 0.0]], [1.0], None)
    assert g_tilde_matrix(sites, InteractionSpec(1.0)).tolist() == [[0.0]]


def test_g_tilde_pair_diagonal():
    sites = SiteSet([[0, 0], [1, 0]], [1.0, 1.0], None)
    Gt = g_tilde_matrix(sites, InteractionSpec(1.0))
    f = math.exp(-1.0)
    g = 1.0 / (1.0 + f)
    dg = -f / (1.0 + f) ** 2
    assert Gt[0, 0] == pytest.approx(2 * g * dg, rel=1e-12)
    assert Gt[0, 0] == pytest.approx(-0.28747, abs=1e-5)
    assert np.allclose(Gt, Gt.T)


def test_g_tilde_matches_fd_of_outer_product():
    rng = np.random.default_rng(13)
    coords = rng.uniform(0, 100, size=(6, 2))
    sites = SiteSet(coords, np.ones(6), None)
    phi = 25.0
    Gt = g_tilde_matrix(sites, InteractionSpec(phi))
    h = 1e-4 * phi
    gp = g_vector(sites, InteractionSpec(phi + h))
    gm = g_vector(sites, InteractionSpec(phi - h))
    fd = (np.outer(gp, gp) - np.outer(gm, gm)) / (2 * h)
    assert np.allclose(Gt, fd, rtol=1e-5)


def test_correlation_with_jitter_is_factorizable():
    rng = np.random.default_rng(17)
    for theta in (0.01, 1.0, 50.0, 5000.0):
        coords = rng.uniform(0, 100, size=(20, 2))
        sites = SiteSet(coords, np.ones(20), None)
        S = correlation_matrix(CorrelationSpec(theta), distance_matrix(sites))
        L, _ = chol_spd(S)
        assert np.all(np.isfinite(L))


def test_interaction_f_general_alpha():
    spec = InteractionSpec(2.0, alpha=3.0)
    assert interaction_f(spec, 0.0) == 1.0
    assert interaction_f(spec, 2.0) == pytest.approx(math.exp(-3.0))
