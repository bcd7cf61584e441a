import math

import numpy as np
import pytest

from rarekin.cascade import (
    HilbertCascade,
    StandardLinearizedSolver,
    assemble_level,
    assemble_macro_system,
    build_level_at,
    j_tau,
    load_level,
    micro_part,
    save_level,
    solve_macro,
)
from rarekin.collision import KernelSpec, L_pseudo_inverse
from rarekin.maxwellian import maxwellian
from rarekin.waves import (
    GasState,
    SmoothWaveParams,
    connect_right_state,
    smooth_wave,
    wave_derivatives,
)

KERN = KernelSpec(1.0, 0.5)


def make_wave(strength=0.9, sigma=0.2):
    left = GasState(1.0, (math.sqrt(5.0 / 3.0) - strength / 2.0, 0.0, 0.0), 1.0)
    ends = connect_right_state(left, strength / 2.0)
    return SmoothWaveParams(ends, sigma)


@pytest.fixture(scope="module")
def wave():
    return make_wave()


@pytest.fixture(scope="module")
def solver():
    return StandardLinearizedSolver(KERN, n_per_axis=8, half_width=4.5)


# ----------------------------------------------------------------------- j_tau


def test_j_tau_constant_state(wave):
    # far outside the fan the background is constant: all rates vanish
    val = j_tau(wave, 1.0, -50.0, np.array([[0.3, 0.1, -0.2]]), "t")
    assert abs(val) < 1e-12


def test_j_tau_at_bulk_velocity(wave):
    t, x = 0.6, 0.05
    d = wave_derivatives(wave, t, x)
    v = np.array([[float(d.u1), 0.0, 0.0]])
    got = j_tau(wave, t, x, v, "t")
    expect = float(d.rho_t) / float(d.rho) - 1.5 * float(d.theta_t) / float(d.theta)
    assert got == pytest.approx(expect, rel=1e-12)


@pytest.mark.parametrize("direction", ["t", "x1"])
def test_j_tau_matches_fd_of_log_maxwellian(wave, direction):
    t, x = 0.7, 0.12
    v = np.array([[0.5, -0.3, 0.8]])
    got = j_tau(wave, t, x, v, direction)
    h = 1e-5
    if direction == "t":
        mu_p = maxwellian(smooth_wave(wave, t + h, x), v)[0]
        mu_m = maxwellian(smooth_wave(wave, t - h, x), v)[0]
    else:
        mu_p = maxwellian(smooth_wave(wave, t, x + h), v)[0]
        mu_m = maxwellian(smooth_wave(wave, t, x - h), v)[0]
    mu_0 = maxwellian(smooth_wave(wave, t, x), v)[0]
    assert got == pytest.approx((mu_p - mu_m) / (2 * h) / mu_0, rel=1e-6)


def test_j_tau_fd_second_order(wave):
    # the identity d_tau(mu) = mu J_tau is exact, so the centered-difference
    # mismatch must shrink at second order
    t, x = 0.5, -0.1
    v = np.array([[0.2, 0.4, -0.5]])
    got = j_tau(wave, t, x, v, "x1")

    def fd(h):
        mu_p = maxwellian(smooth_wave(wave, t, x + h), v)[0]
        mu_m = maxwellian(smooth_wave(wave, t, x - h), v)[0]
        mu_0 = maxwellian(smooth_wave(wave, t, x), v)[0]
        return (mu_p - mu_m) / (2 * h) / mu_0

    e1 = abs(fd(2e-4) - got)
    e2 = abs(fd(1e-4) - got)
    assert e2 < e1 / 3.0


# ------------------------------------------------------------------ micro part


def test_micro_level1_zero_for_constant_background(wave, solver):
    xg = np.array([-60.0, -55.0])  # far outside the fan
    micro = micro_part(0, [], wave, solver, 0.8, xg, tol_macro=1e-3)
    assert np.max(np.abs(micro)) < 1e-12


def test_micro_level1_envelope(wave, solver):
    xg = np.array([0.0])
    micro = micro_part(0, [], wave, solver, 0.3, xg, tol_macro=1e-3)[0]
    speed = np.linalg.norm(solver.grid.nodes, axis=1)
    keep = solver.mu > 1e-10
    ratio = np.abs(micro[keep]) / ((1.0 + speed[keep]) ** 3 * solver.sqrt_mu[keep])
    assert np.isfinite(ratio).all()
    assert ratio.max() < 100.0


def test_micro_level1_sigma_growth(solver):
    sups = []
    sigmas = [0.4, 0.2, 0.1]
    for s in sigmas:
        w = make_wave(sigma=s)
        micro = micro_part(0, [], w, solver, 0.0, np.array([0.0]), tol_macro=1e-3)
        sups.append(float(np.abs(micro).max()))
    assert sups[0] < sups[1] < sups[2]
    slope = np.polyfit(np.log(sigmas), np.log(sups), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.25)


def test_micro_two_solver_paths_agree(wave):
    # iterative pseudo-inverse vs the factored direct solve
    solver = StandardLinearizedSolver(KERN, n_per_axis=8, half_width=4.5)
    from rarekin.cascade import _level1_source_std

    d = wave_derivatives(wave, 0.4, 0.1)
    r = _level1_source_std(solver, d)
    f_direct = solver.micro_inverse(r)
    r_micro = solver.op.projector.complement(r)
    f_iter = L_pseudo_inverse(r_micro, solver.op, tol_macro=1.0)
    assert np.linalg.norm(f_direct - f_iter) / np.linalg.norm(f_direct) < 1e-8


def test_micro_is_discretely_microscopic(wave, solver):
    xg = np.linspace(-1.0, 1.0, 5)
    micro = micro_part(0, [], wave, solver, 0.5, xg, tol_macro=1e-3)
    proj = solver.op.projector
    for row in micro:
        assert np.max(np.abs(proj.apply(row))) < 1e-12 * max(1.0, np.max(np.abs(row)))


# ---------------------------------------------------------------- macro system


def test_macro_matrices_structure(wave):
    xg = np.linspace(-3, 3, 31)
    system = assemble_macro_system(wave, xg)
    for t in (0.0, 0.4, 1.0):
        a0, a1, _, _ = system.matrices(t)
        diag = np.einsum("xii->xi", a0)
        assert np.all(diag > 0)
        assert np.max(np.abs(a0 - np.transpose(a0, (0, 2, 1)))) == 0.0
        assert np.max(np.abs(a1 - np.transpose(a1, (0, 2, 1)))) == 0.0


def test_macro_a0_unit_state():
    # constant unit background: diag(1, 1, 1, 1, 1/6)
    left = GasState(1.0, (0.0, 0.0, 0.0), 1.0)
    ends = connect_right_state(left, left.u[0] - math.sqrt(5.0 / 3.0))
    w = SmoothWaveParams(ends, 0.1)
    system = assemble_macro_system(w, np.array([0.0]))
    a0 = system.matrices(0.5)[0][0]
    assert np.allclose(a0, np.diag([1.0, 1.0, 1.0, 1.0, 1.0 / 6.0]), atol=1e-12)


def test_macro_a1_couplings_at_rest():
    left = GasState(1.3, (0.0, 0.0, 0.0), 0.8)
    ends = connect_right_state(left, left.u[0] - math.sqrt(5.0 * 0.8 / 3.0))
    w = SmoothWaveParams(ends, 0.1)
    system = assemble_macro_system(w, np.array([0.0]))
    a1 = system.matrices(0.5)[1][0]
    rho, th = 1.3, 0.8
    expect = np.zeros((5, 5))
    expect[0, 1] = expect[1, 0] = rho * th**2
    expect[1, 4] = expect[4, 1] = rho**2 * th / 3.0
    assert np.allclose(a1, expect, atol=1e-12)


def test_solve_macro_zero_stays_zero(wave):
    xg = np.linspace(-3, 3, 41)
    system = assemble_macro_system(wave, xg)
    traj = solve_macro(system, np.zeros((41, 5)), 0.3)
    assert np.max(np.abs(traj.states[-1])) == 0.0


def test_solve_macro_mms_order():
    w = make_wave(sigma=0.4)

    def u_star(t, x):
        out = np.zeros((len(x), 5))
        g = np.exp(-((x - 0.3 * t) ** 2))
        out[:, 0] = 0.1 * g
        out[:, 1] = 0.05 * np.exp(-((x + 0.2 * t - 0.5) ** 2) * 1.5)
        out[:, 4] = 0.08 * g
        return out

    errs = []
    nxs = (100, 200)
    for nx in nxs:
        xg = np.linspace(-6, 6, nx)
        system = assemble_macro_system(w, xg)

        def forcing(t, x, system=system):
            h = 1e-6
            a0, a1, b, _ = system.matrices(t)
            ut = (u_star(t + h, x) - u_star(t - h, x)) / (2 * h)
            ux = (u_star(t, x + h) - u_star(t, x - h)) / (2 * h)
            return (np.einsum("xij,xj->xi", a0, ut)
                    + np.einsum("xij,xj->xi", a1, ux)
                    + np.einsum("xij,xj->xi", b, u_star(t, x)))

        traj = solve_macro(system, u_star(0.0, xg), 0.5, extra_forcing=forcing)
        errs.append(np.max(np.abs(traj.states[-1] - u_star(traj.times[-1], xg))))
    order = math.log(errs[0] / errs[1]) / math.log(nxs[1] / nxs[0])
    assert order >= 1.0


def test_solve_macro_cfl_guard(wave):
    xg = np.linspace(-3, 3, 21)
    system = assemble_macro_system(wave, xg)
    traj = solve_macro(system, np.zeros((21, 5)), 0.05)
    dts = np.diff(traj.times)
    dx = xg[1] - xg[0]
    for t, dt in zip(traj.times[:-1], dts):
        assert dt <= 0.4 * dx / system.char_speed_bound(t) + 1e-12


# --------------------------------------------------------------- level algebra


def test_assemble_level_zero_is_zero(wave, solver):
    xg = np.linspace(-1, 1, 3)
    lvl = assemble_level(np.zeros((3, 5)), np.zeros((3, solver.grid.n_nodes)),
                         wave, solver, 0.3, xg)
    for ix in range(3):
        assert np.max(np.abs(lvl.density_std(0.3, ix))) == 0.0
    assert np.max(np.abs(lvl.moments())) == 0.0


def test_level_moment_extraction_oracle(wave):
    # fine quadrature lattice so the extraction reproduces the coordinates
    fine = StandardLinearizedSolver(KERN, n_per_axis=16, half_width=7.0, assemble=False)
    xg = np.linspace(-2, 2, 5)
    rng = np.random.default_rng(0)
    macro = 0.1 * rng.standard_normal((5, 5))
    lvl = assemble_level(macro, np.zeros((5, fine.grid.n_nodes)), wave, fine, 0.3, xg)
    assert np.max(np.abs(lvl.moments() - macro)) < 1e-8


def test_micro_only_level_has_no_moments(wave, solver):
    xg = np.linspace(-1, 1, 5)
    micro = micro_part(0, [], wave, solver, 0.5, xg, tol_macro=1e-3)
    lvl = assemble_level(np.zeros((5, 5)), micro, wave, solver, 0.5, xg)
    assert np.max(np.abs(lvl.moments())) < 1e-13


def test_zero_strength_cascade_vanishes(solver):
    left = GasState(1.0, (0.0, 0.0, 0.0), 1.0)
    ends = connect_right_state(left, left.u[0] - math.sqrt(5.0 / 3.0))
    w = SmoothWaveParams(ends, 0.1)
    xg = np.linspace(-2, 2, 21)
    casc = HilbertCascade(w, KERN, xg, depth=1, n_std=8, std_half_width=4.5,
                          t_final=0.2, forcing_slices=5, tol_macro=1e-3)
    lvl = casc.level(1)
    assert np.max(np.abs(lvl.micro_std)) < 1e-12
    assert np.max(np.abs(lvl.macro)) < 1e-12


def test_level2_recursion_small(wave):
    xg = np.linspace(-3, 3, 21)
    casc = HilbertCascade(wave, KERN, xg, depth=2, n_std=8, std_half_width=4.5,
                          t_final=0.3, forcing_slices=5, tol_macro=1e-3)
    lvl2 = casc.level(2)
    assert np.isfinite(lvl2.micro_std).all()
    assert np.abs(lvl2.micro_std).max() > 0.0
    proj = casc.solver.op.projector
    worst = max(np.max(np.abs(proj.apply(lvl2.micro_std[ix]))) for ix in (0, 10, 20))
    assert worst < 1e-10 * max(1.0, np.abs(lvl2.micro_std).max())


def test_level_serialization_roundtrip(wave, solver, tmp_path):
    xg = np.linspace(-1, 1, 4)
    lvl = build_level_at(wave, solver, xg, 0.4, 1, tol_macro=1e-3)
    csv_path, json_path = save_level(lvl, str(tmp_path))
    back = load_level(csv_path, wave)
    assert np.array_equal(back.macro, lvl.macro)
    assert np.array_equal(back.micro_std, lvl.micro_std)
    assert back.index == lvl.index and back.t == lvl.t
