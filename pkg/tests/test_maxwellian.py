import math

import numpy as np
import pytest
from scipy import integrate

from rarekin.maxwellian import (
    MaxwellFrame,
    Projector,
    chi_basis,
    choose_theta_M,
    collision_frequency,
    maxwellian,
    min_weight_exponent,
    mu_comparison,
    project_P,
    sqrt_maxwellian,
)
from rarekin.velocity_grid import VelocityGrid, reference_grid_for
from rarekin.waves import GasState


@pytest.fixture(scope="module")
def ref():
    state = GasState(1.2, (0.4, 0.0, 0.0), 0.9)
    grid = reference_grid_for(theta_max=1.0, u_max=0.5, n_per_axis=32)
    return state, grid


class Kernel:
    def __init__(self, gamma, b_scale=1.0):
        self.gamma = gamma
        self.b_scale = b_scale


# ------------------------------------------------------------- velocity grid


def test_grid_symmetric_and_total_weight():
    g = VelocityGrid(3.0, 8)
    assert np.allclose(g.nodes[g.flip_index()], -g.nodes)
    assert g.integrate(np.ones(g.n_nodes)) == pytest.approx((2 * 3.0) ** 3, rel=1e-14)


# ---------------------------------------------------------------- maxwellian


def test_maxwellian_moments(ref):
    state, grid = ref
    mu = maxwellian(state, grid.nodes)
    basis = grid.moments_basis()
    m = basis.T @ mu * grid.weight
    assert m[0] == pytest.approx(state.rho, rel=1e-8)
    assert m[1] == pytest.approx(state.rho * state.u[0], abs=1e-8)
    assert m[2] == pytest.approx(0.0, abs=1e-10)
    e_expect = state.rho * np.dot(state.u_vec, state.u_vec) + 3 * state.rho * state.theta
    assert m[4] == pytest.approx(e_expect, rel=1e-8)


def test_maxwellian_peak_value(ref):
    state, _ = ref
    peak = maxwellian(state, np.array([state.u_vec]))[0]
    assert peak == pytest.approx(state.rho * (2 * math.pi * state.theta) ** -1.5, rel=1e-14)


def test_sqrt_maxwellian_consistent(ref):
    state, grid = ref
    v = grid.nodes[::917]
    assert np.allclose(sqrt_maxwellian(state, v) ** 2, maxwellian(state, v), rtol=1e-13)


# ------------------------------------------------------------------ chi basis


def test_chi_gram_identity(ref):
    state, grid = ref
    chi = chi_basis(state, grid.nodes)
    gram = chi @ chi.T * grid.weight
    assert np.max(np.abs(gram - np.eye(5))) < 1e-6


def test_chi4_root(ref):
    state, _ = ref
    r = math.sqrt(3 * state.theta)
    v = state.u_vec + np.array([r, 0.0, 0.0])
    assert chi_basis(state, np.array([v]))[4, 0] == pytest.approx(0.0, abs=1e-14)


def test_chi_odd_moments_vanish(ref):
    state, grid = ref
    chi = chi_basis(state, grid.nodes)
    for i in range(1, 4):
        assert abs(np.sum(chi[0] * chi[i]) * grid.weight) < 1e-8


# ----------------------------------------------------------------- projection


def test_project_basis_element(ref):
    state, grid = ref
    chi = chi_basis(state, grid.nodes)
    out = project_P(chi[2], state, grid)
    assert np.max(np.abs(out - chi[2])) < 1e-10


def test_project_shear_mode_is_micro(ref):
    state, grid = ref
    du = grid.nodes - state.u_vec
    g = sqrt_maxwellian(state, grid.nodes) * du[:, 0] * du[:, 1] / state.theta
    out = project_P(g, state, grid)
    # oracle: each projection coefficient is an integral of an odd-in-two-axes
    # Gaussian polynomial; dense 1D quadrature confirms they vanish
    assert np.max(np.abs(out)) < 1e-8


def test_projector_idempotent_and_orthogonal(ref):
    state, grid = ref
    proj = Projector(state, grid)
    rng = np.random.default_rng(1)
    g = rng.standard_normal(grid.n_nodes)
    pg = proj.apply(g)
    assert np.max(np.abs(proj.apply(pg) - pg)) < 1e-10
    micro = g - pg
    chi = proj.chi
    coefs = chi @ micro * grid.weight
    # raw chi moments of the complement vanish to projector tolerance
    assert np.max(np.abs(coefs)) < 1e-10


# --------------------------------------------------------- collision frequency


def test_nu_gamma0_constant(ref):
    state, grid = ref
    nu = collision_frequency(state, Kernel(0.0, b_scale=1.0), grid.nodes[::1111])
    assert np.allclose(nu, 2 * math.pi * state.rho, rtol=1e-10)


def test_nu_gamma1_at_bulk():
    state = GasState(1.0, (0.0, 0.0, 0.0), 1.0)
    # angular mass normalized to 1: divide out 2 pi b_scale
    nu = collision_frequency(state, Kernel(1.0, b_scale=1.0 / (2 * math.pi)), np.zeros((1, 3)))
    assert nu == pytest.approx(2 * math.sqrt(2 / math.pi), rel=1e-10)


def test_nu_gamma1_against_quad_oracle():
    state = GasState(1.3, (0.2, 0.0, 0.0), 0.8)
    v = np.array([[1.1, -0.4, 0.3]])
    got = collision_frequency(state, Kernel(1.0, b_scale=1.0 / (2 * math.pi)), v)
    z = float(np.linalg.norm(v[0] - state.u_vec))
    th = state.theta

    def integrand(r):
        shell = ((z + r) ** 3 - abs(z - r) ** 3) / (3.0 * z)
        return r * np.exp(-r * r / (2 * th)) * shell

    val, _ = integrate.quad(integrand, 0, z + 14 * math.sqrt(th), limit=200)
    expect = state.rho * (2 * math.pi * th) ** -1.5 * 2 * math.pi * val
    assert got == pytest.approx(expect, rel=1e-10)


def test_nu_band_and_symmetry(ref):
    state, _ = ref
    kern = Kernel(1.0)
    grid = VelocityGrid(6.0, 12)
    nu = collision_frequency(state, kern, grid.nodes)
    ratio = nu / (1.0 + np.linalg.norm(grid.nodes, axis=1)) ** kern.gamma
    assert ratio.max() / ratio.min() < 4.0
    # radial symmetry about u: compare v and 2u - v
    v = np.array([[1.0, 0.7, -0.2]])
    v_mirr = 2 * state.u_vec - v
    assert collision_frequency(state, kern, v) == pytest.approx(
        collision_frequency(state, kern, v_mirr), rel=1e-10)
    # monotone in |v - u| for gamma > 0
    rs = np.linspace(0, 4, 9)
    vals = [collision_frequency(state, kern, np.array([state.u_vec + [r, 0, 0]])) for r in rs]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_nu_rejects_bad_gamma(ref):
    state, _ = ref
    with pytest.raises(ValueError):
        collision_frequency(state, Kernel(-3.0), np.zeros((1, 3)))


# ------------------------------------------------------------------- theta_M


def test_theta_m_paper_style_ratio():
    got = choose_theta_M(1.0, 0.75)
    assert 0.5 < got < 0.75
    assert got == pytest.approx(0.625, abs=1e-14)


def test_theta_m_equal_temps():
    assert choose_theta_M(1.0, 1.0) == pytest.approx(0.75, abs=1e-14)


def test_theta_m_incompatible():
    with pytest.raises(ValueError):
        choose_theta_M(1.0, 2.5)


# ------------------------------------------------------------- mu comparison


def test_mu_comparison_uniform_state():
    state = GasState(1.0, (0.0, 0.0, 0.0), 0.75)
    frame = MaxwellFrame.for_state(state, theta_M=0.75, gamma=0.0)
    grid = VelocityGrid(6.0, 24)
    c, alpha = mu_comparison(frame, grid)
    assert alpha == pytest.approx(0.75, abs=1e-12)
    assert c >= 1.0


def test_mu_ratio_closed_form_origin():
    state = GasState(1.4, (0.0, 0.0, 0.0), 0.9)
    frame = MaxwellFrame.for_state(state, theta_M=0.7, gamma=0.0)
    v0 = np.zeros((1, 3))
    ratio = maxwellian(state, v0)[0] / frame.mu_global(v0)[0]
    assert ratio == pytest.approx(state.rho * (frame.theta_M / state.theta) ** 1.5, rel=1e-13)


def test_mu_comparison_bound_holds_for_wave_states():
    # theta+ = 0.75 theta- wave family
    states = [GasState(1.0, (0.0, 0.0, 0.0), 1.0), GasState(0.66, (0.5, 0.0, 0.0), 0.75)]
    theta_m = choose_theta_M(1.0, 0.75)
    frame = MaxwellFrame.for_state(states[0], theta_M=theta_m, gamma=0.0)
    grid = VelocityGrid(8.5, 32)
    c, alpha = mu_comparison(frame, grid, states=states)
    mu_M = frame.mu_global(grid.nodes)
    for s in states:
        mu = maxwellian(s, grid.nodes)
        assert np.all(mu_M / c <= mu * (1 + 1e-12))
        assert np.all(mu <= c * mu_M**alpha * (1 + 1e-12))


def test_mu_comparison_incompatible_theta_m():
    state = GasState(1.0, (0.0, 0.0, 0.0), 1.0)
    frame = MaxwellFrame.for_state(state, theta_M=0.45, gamma=0.0)
    with pytest.raises(ValueError):
        mu_comparison(frame, VelocityGrid(5.0, 8))


# ------------------------------------------------------------------- weights


def test_weight_exponent_floor():
    with pytest.raises(ValueError):
        MaxwellFrame(GasState(1.0, (0, 0, 0), 1.0), theta_M=0.8, beta=2.0, gamma=0.0)


def test_weighted_tail_vanishes_at_box_edge():
    # the envelope multiplying the weighted remainder when the density is
    # rebuilt is sqrt(mu_M)/w; it must be negligible at the truncation edge
    state = GasState(1.0, (0.0, 0.0, 0.0), 1.0)
    frame = MaxwellFrame.for_state(state, theta_M=0.75, gamma=0.0)
    grid = reference_grid_for(1.0, 0.5)
    edge = np.array([[grid.half_width, 0.0, 0.0]])
    val = np.sqrt(frame.mu_global(edge)) / frame.weight(edge)
    assert val[0] < 1e-12
