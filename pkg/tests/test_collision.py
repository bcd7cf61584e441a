import math

import numpy as np
import pytest

from rarekin.collision import (
    AssemblyRefusedError,
    KernelSpec,
    L_apply,
    L_assemble,
    L_pseudo_inverse,
    MacroscopicInputError,
    bgk_surrogate,
    discrete_maxwellian,
    entropy_production,
    gamma_bilinear,
    k_split,
    q_bilinear,
    q_bilinear_cells,
    q_bilinear_reference,
)
from rarekin.maxwellian import Projector, chi_basis, maxwellian, sqrt_maxwellian
from rarekin.velocity_grid import VelocityGrid
from rarekin.waves import GasState

STATE = GasState(1.0, (0.2, 0.0, 0.0), 0.9)
KERN1 = KernelSpec(gamma=1.0, b_scale=0.5)
KERN0 = KernelSpec(gamma=0.0, b_scale=0.5)


@pytest.fixture(scope="module")
def small_grid():
    return VelocityGrid(4.5, 8)


@pytest.fixture(scope="module")
def op12():
    return L_assemble(STATE, KERN1, VelocityGrid(6.0, 12), theta_M=0.75)


def smooth_micro_fields(state, grid, rng, count):
    """Random polynomial-times-sqrt-Maxwellian microscopic fields."""
    sq = sqrt_maxwellian(state, grid.nodes)
    du = (grid.nodes - state.u_vec) / math.sqrt(state.theta)
    feats = [np.ones(grid.n_nodes)]
    feats += [du[:, i] for i in range(3)]
    feats += [du[:, i] * du[:, j] for i in range(3) for j in range(i, 3)]
    q2 = np.einsum("ij,ij->i", du, du)
    feats += [du[:, i] * q2 for i in range(3)] + [q2 * q2]
    feats = np.array(feats)
    proj = Projector(state, grid)
    for _ in range(count):
        c = rng.standard_normal(len(feats))
        yield proj.complement((c @ feats) * sq)


# ------------------------------------------------------------------ q_bilinear


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(gamma=-3.0)
    with pytest.raises(ValueError):
        KernelSpec(gamma=1.5)


# refinement boxes follow the calibrated rule 3.8 sqrt(theta) + |u|: tight
# enough that the coarsest lattice already resolves the Gaussian
REFINE_L = 3.8 * math.sqrt(STATE.theta) + abs(STATE.u[0])


def test_q_maxwellian_near_zero_and_refines():
    sups = []
    for n in (8, 12):
        g = VelocityGrid(REFINE_L, n)
        mu = maxwellian(STATE, g.nodes)
        sups.append(np.max(np.abs(q_bilinear(mu, mu, KERN1, g))))
    order = math.log(sups[0] / sups[1]) / math.log(12 / 8)
    assert order >= 1.0


def test_q_conservation_defect_refines():
    defects = []
    for n in (8, 12):
        g = VelocityGrid(REFINE_L, n)
        mu = maxwellian(STATE, g.nodes)
        q = q_bilinear(mu, mu, KERN1, g)
        mom = g.moments_basis().T @ q * g.weight
        defects.append(np.max(np.abs(mom)))
    order = math.log(defects[0] / defects[1]) / math.log(12 / 8)
    assert order >= 1.0


def test_q_matches_naive_reference(small_grid):
    g6 = VelocityGrid(4.0, 6)
    hot = GasState(0.8, (-0.3, 0.1, 0.0), 0.6)
    F1 = maxwellian(STATE, g6.nodes) + maxwellian(hot, g6.nodes)
    F2 = maxwellian(STATE, g6.nodes)
    fast = q_bilinear(F1, F2, KERN1, g6)
    ref = q_bilinear_reference(F1, F2, KERN1, g6)
    scale = max(1.0, float(np.max(np.abs(ref))))
    assert np.max(np.abs(fast - ref)) < 1e-12 * scale


def test_q_cells_batch_matches_single(small_grid):
    g6 = VelocityGrid(4.0, 6)
    hot = GasState(0.8, (-0.3, 0.1, 0.0), 0.6)
    rows = np.vstack([
        maxwellian(STATE, g6.nodes),
        maxwellian(STATE, g6.nodes) + maxwellian(hot, g6.nodes),
    ])
    batch = q_bilinear_cells(rows, KERN1, g6)
    for c in range(2):
        single = q_bilinear(rows[c], rows[c], KERN1, g6)
        assert np.max(np.abs(batch[c] - single)) < 1e-13


def test_q_reflection_symmetry(small_grid):
    # reflection-symmetric input: Q output inherits the lattice symmetry
    sym_state = GasState(1.0, (0.0, 0.0, 0.0), 0.8)
    g = small_grid
    F = maxwellian(sym_state, g.nodes) + maxwellian(
        GasState(0.5, (0.0, 0.0, 0.0), 1.4), g.nodes)
    q = q_bilinear(F, F, KERN1, g)
    flip = g.flip_index()
    assert np.max(np.abs(q - q[flip])) < 1e-13


# -------------------------------------------------------------- gamma_bilinear


def test_gamma_bilinear_zero_at_equilibrium(small_grid):
    sq = sqrt_maxwellian(STATE, small_grid.nodes)
    out = gamma_bilinear(sq, sq, STATE, KERN1, small_grid)
    mu = maxwellian(STATE, small_grid.nodes)
    q = q_bilinear(mu, mu, KERN1, small_grid)
    assert np.allclose(out * sq, q, atol=1e-13)


def test_gamma_bilinear_bilinearity(small_grid):
    rng = np.random.default_rng(0)
    g1 = rng.standard_normal(small_grid.n_nodes)
    g2 = rng.standard_normal(small_grid.n_nodes)
    a = 1.7
    lhs = gamma_bilinear(a * g1, g2, STATE, KERN1, small_grid)
    rhs = a * gamma_bilinear(g1, g2, STATE, KERN1, small_grid)
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * np.max(np.abs(rhs))


def test_gamma_bilinear_chi0_matches_q_oracle(small_grid):
    chi0 = chi_basis(STATE, small_grid.nodes)[0]
    out = gamma_bilinear(chi0, chi0, STATE, KERN1, small_grid)
    sq = sqrt_maxwellian(STATE, small_grid.nodes)
    mu = maxwellian(STATE, small_grid.nodes)
    oracle = q_bilinear(mu / STATE.rho, mu / STATE.rho, KERN1, small_grid) / sq
    assert np.max(np.abs(out - oracle)) < 1e-12 * max(1.0, np.max(np.abs(oracle)))


# ------------------------------------------------------------------- L and K


def test_assembled_matrix_matches_column_application(op12):
    g = op12.grid
    rng = np.random.default_rng(5)
    for idx in rng.integers(0, g.n_nodes, size=3):
        e = np.zeros(g.n_nodes)
        e[idx] = 1.0
        col = L_apply(e, STATE, KERN1, g)
        scale = max(1.0, float(np.max(np.abs(col))))
        assert np.max(np.abs(op12.matrix[:, idx] - col)) < 1e-12 * scale


def test_L_annihilates_chi_within_quadrature_tolerance(op12):
    chi = chi_basis(STATE, op12.grid.nodes)
    nu_bulk = float(op12.nu_diag[np.argmin(np.linalg.norm(op12.grid.nodes - STATE.u_vec, axis=1))])
    tol = 0.3 * nu_bulk * op12.grid.spacing**2 / STATE.theta
    for i in range(5):
        assert np.max(np.abs(op12.matrix @ chi[i])) < tol


def test_L_positive_on_random_fields(op12):
    rng = np.random.default_rng(7)
    proj = op12.projector
    for _ in range(100):
        g = proj.complement(rng.standard_normal(op12.grid.n_nodes))
        val = op12.inner(op12.apply(g), g)
        assert val >= 0.0


def test_L_bilinear_two_path_agreement(op12):
    # the assembled matrix is the oracle for the bilinear form computed
    # through direct application
    rng = np.random.default_rng(11)
    fields = list(smooth_micro_fields(STATE, op12.grid, rng, 3))
    for g in fields:
        via_matrix = op12.inner(op12.matrix @ g, fields[0])
        via_apply = op12.inner(L_apply(g, STATE, KERN1, op12.grid), fields[0])
        assert via_matrix == pytest.approx(via_apply, rel=1e-8)


def test_L_symmetry_at_quadrature_error(op12):
    # trilinear gains break exact self-adjointness at O(h^2); verify the
    # defect sits at that scale rather than demanding exact symmetry
    rng = np.random.default_rng(13)
    fields = list(smooth_micro_fields(STATE, op12.grid, rng, 4))
    rel = []
    for g1, g2 in zip(fields[::2], fields[1::2]):
        lhs = op12.inner(op12.apply(g1), g2)
        rhs = op12.inner(g1, op12.apply(g2))
        rel.append(abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    assert max(rel) < 0.2 * op12.grid.spacing**2 / STATE.theta * 10


def test_spectral_gap_probe(op12):
    rng = np.random.default_rng(17)
    ratios = []
    for g in smooth_micro_fields(STATE, op12.grid, rng, 100):
        ratios.append(op12.inner(op12.apply(g), g) / op12.nu_norm(g) ** 2)
    assert min(ratios) > 0.0


def test_assembly_refused_oversize():
    with pytest.raises(AssemblyRefusedError):
        L_assemble(STATE, KERN1, VelocityGrid(6.0, 20))


# --------------------------------------------------------------- pseudo-inverse


def test_pseudo_inverse_round_trip(op12):
    rng = np.random.default_rng(19)
    g = next(iter(smooth_micro_fields(STATE, op12.grid, rng, 1)))
    r = op12.apply_micro(g)
    rec = L_pseudo_inverse(r, op12)
    assert np.linalg.norm(rec - g) / np.linalg.norm(g) < 1e-6


def test_pseudo_inverse_rejects_macroscopic(op12):
    chi0 = chi_basis(STATE, op12.grid.nodes)[0]
    with pytest.raises(MacroscopicInputError):
        L_pseudo_inverse(chi0, op12)


def test_pseudo_inverse_transport_source_decay(op12):
    # source with the structure of the wave's transport of the Maxwellian:
    # cubic polynomial times sqrt(mu); the solution must stay inside a
    # (1+|v|)^3 sqrt(mu) envelope with a finite fitted constant
    g = op12.grid
    sq = sqrt_maxwellian(STATE, g.nodes)
    du = (g.nodes - STATE.u_vec) / math.sqrt(STATE.theta)
    q2 = np.einsum("ij,ij->i", du, du)
    src = (0.3 + 0.5 * du[:, 0] + 0.2 * q2 + 0.4 * du[:, 0] * q2) * sq
    src = op12.projector.complement(src)
    f = L_pseudo_inverse(src, op12)
    speed = np.linalg.norm(g.nodes, axis=1)
    mu_floor = sq**2 >= 1e-10
    ratio = np.abs(f[mu_floor]) / ((1.0 + speed[mu_floor]) ** 3 * sq[mu_floor])
    assert np.isfinite(ratio).all()
    assert ratio.max() < 50.0 * np.linalg.norm(src) * op12.grid.weight ** 0.5


# -------------------------------------------------------------------- k_split


def test_k_split_partition_exact(op12):
    rng = np.random.default_rng(23)
    g = rng.standard_normal(op12.grid.n_nodes)
    spl = k_split(op12, 0.2)
    full = op12.K_matrix @ g
    err = np.max(np.abs(spl.apply_small(g) + spl.apply_rest(g) - full))
    assert err < 1e-12 * max(1.0, np.max(np.abs(full)))


@pytest.mark.parametrize("kern,expect", [(KERN0, 3.0), (KERN1, 4.0)])
def test_k_split_small_norm_scaling(kern, expect):
    op = L_assemble(STATE, kern, VelocityGrid(6.0, 12), theta_M=0.75)
    ms = [0.1, 0.2, 0.4]
    norms = [k_split(op, m).small_norm_inf for m in ms]
    fit = np.polyfit(np.log(ms), np.log(norms), 1)[0]
    assert abs(fit - expect) < 0.3


def test_k_split_saturates(op12):
    rng = np.random.default_rng(29)
    g = rng.standard_normal(op12.grid.n_nodes)
    spl = k_split(op12, 2.0 * op12.grid.half_width)
    rest = np.max(np.abs(spl.apply_rest(g)))
    full = np.max(np.abs(op12.K_matrix @ g))
    assert rest < 1e-6 * full


# --------------------------------------------------------- entropy production


def test_entropy_production_maxwellian(small_grid):
    mu = maxwellian(STATE, small_grid.nodes)
    d = entropy_production(mu, KERN1, small_grid)
    assert d <= 1e-8
    # scaling a Maxwellian stays Maxwellian-shaped: still near zero
    d2 = entropy_production(1.0001 * mu, KERN1, small_grid)
    assert d2 <= 1e-8
    assert abs(d2 - d) < 1e-2 * max(1e-30, abs(d)) + 1e-8


def test_entropy_production_bimodal_negative():
    vals = []
    for n in (8, 12):
        g = VelocityGrid(5.0, n)
        F = maxwellian(GasState(1.0, (0.8, 0, 0), 0.5), g.nodes) + \
            maxwellian(GasState(1.0, (-0.8, 0, 0), 0.5), g.nodes)
        vals.append(entropy_production(F, KERN1, g))
    # refined-grid oracle confirms the sign persists
    assert vals[0] < -1e-4 and vals[1] < -1e-4


def test_entropy_production_rejects_nonpositive(small_grid):
    F = maxwellian(STATE, small_grid.nodes)
    F[0] = 0.0
    with pytest.raises(ValueError):
        entropy_production(F, KERN1, small_grid)


# ------------------------------------------------------------------------ BGK


def test_bgk_fixed_point(small_grid):
    mu = maxwellian(STATE, small_grid.nodes)
    mom = small_grid.moments_basis().T @ mu * small_grid.weight
    m_disc = discrete_maxwellian(mom, small_grid)
    out = bgk_surrogate(m_disc, small_grid, nu_bar=2.0)
    assert np.max(np.abs(out)) < 1e-11


def test_bgk_moment_conservation(small_grid):
    hot = GasState(0.8, (-0.3, 0.1, 0.0), 0.6)
    F = maxwellian(STATE, small_grid.nodes) + maxwellian(hot, small_grid.nodes)
    out = bgk_surrogate(F, small_grid, nu_bar=1.3)
    mom = small_grid.moments_basis().T @ out * small_grid.weight
    assert np.max(np.abs(mom)) < 1e-12 * 10


def test_bgk_relaxation_decreases_H(small_grid):
    g = small_grid
    F = maxwellian(GasState(1.0, (0.6, 0, 0), 0.5), g.nodes) + \
        maxwellian(GasState(1.0, (-0.6, 0, 0), 0.7), g.nodes)
    nu_bar, dt = 1.0, 0.2
    h_prev = np.sum(F * np.log(F)) * g.weight
    for _ in range(8):
        mom = g.moments_basis().T @ F * g.weight
        m_disc = discrete_maxwellian(mom, g)
        F = m_disc + math.exp(-nu_bar * dt) * (F - m_disc)
        h_now = np.sum(F * np.log(F)) * g.weight
        assert h_now <= h_prev + 1e-10
        h_prev = h_now


def test_bgk_vacuum_error(small_grid):
    with pytest.raises(ValueError):
        discrete_maxwellian(np.array([0.0, 0, 0, 0, 1.0]), small_grid)
