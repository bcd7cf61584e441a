"""Expansion coefficients of the kinetic solution around the smooth wave.

The first-order coefficient splits into a microscopic part, obtained by
inverting the linearized collision operator on a source built from the wave's
space-time derivatives, and a macroscopic part solving a linear symmetric
hyperbolic system driven by microscopic moment fluxes.  Higher coefficients
follow the same recursion with stored-level derivatives and quadratic
collision couplings.

All microscopic solves happen in standardized velocity coordinates
w = (v - u0)/sqrt(theta0): the linearized operator at any wave state is the
unit-Maxwellian operator conjugated by that affine map and scaled by
rho0 * theta0^(gamma/2), so one dense assembly serves every space-time point.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .collision import KernelSpec, L_assemble, LinearizedOperator, q_bilinear
from .maxwellian import Projector, chi_basis
from .velocity_grid import VelocityGrid
from .waves import (
    GasState,
    SmoothWaveParams,
    WaveDerivatives,
    smooth_wave,
    wave_derivatives,
)

__all__ = [
    "j_tau",
    "StandardLinearizedSolver",
    "CascadeLevel",
    "MacroSystem",
    "MacroTrajectory",
    "micro_part",
    "assemble_macro_system",
    "solve_macro",
    "assemble_level",
    "HilbertCascade",
    "save_level",
    "load_level",
    "euler_char_speed_bound",
]


def j_tau(wave: SmoothWaveParams, t: float, x1: float, v: np.ndarray, direction: str):
    """Logarithmic rate of the wave Maxwellian along t or x1.

    Written so that d_tau(mu) = mu * j_tau holds identically: the quadratic
    temperature term carries 1/(2 theta^2).
    """
    if direction not in ("t", "x1"):
        raise ValueError("direction must be 't' or 'x1'")
    d = wave_derivatives(wave, t, x1)
    if direction == "t":
        drho, du1, dth = float(d.rho_t), float(d.u1_t), float(d.theta_t)
    else:
        drho, du1, dth = float(d.rho_x), float(d.u1_x), float(d.theta_x)
    rho, u1, th = float(d.rho), float(d.u1), float(d.theta)
    v = np.atleast_2d(np.asarray(v, dtype=float))
    dv = v - np.array([u1, 0.0, 0.0])
    q = np.einsum("ij,ij->i", dv, dv)
    out = drho / rho - 1.5 * dth / th + dv[:, 0] * du1 / th + q * dth / (2.0 * th * th)
    return float(out[0]) if len(out) == 1 else out


UNIT_STATE = GasState(1.0, (0.0, 0.0, 0.0), 1.0)


class StandardLinearizedSolver:
    """Unit-Maxwellian linearized operator with a factored microscopic solve.

    The microscopic inversion augments the projected operator with a scaled
    identity on the macro subspace, which makes the system nonsingular while
    leaving microscopic right-hand sides with microscopic solutions.
    """

    def __init__(self, kernel: KernelSpec, n_per_axis: int = 12, half_width: float = 6.0,
                 assemble: bool = True):
        self.kernel = kernel
        self.grid = VelocityGrid(half_width, n_per_axis)
        self.sqrt_mu = np.exp(-0.25 * np.einsum("ij,ij->i", self.grid.nodes, self.grid.nodes))
        self.sqrt_mu *= (2.0 * math.pi) ** (-0.75)
        self.mu = self.sqrt_mu**2
        self._lu = None
        if assemble:
            self.op: LinearizedOperator = L_assemble(UNIT_STATE, kernel, self.grid)
            proj = self.op.projector
            w = self.grid.weight
            p_mat = proj.chi.T @ proj._gram_inv @ proj.chi * w
            comp = np.eye(self.grid.n_nodes) - p_mat
            nu_scale = float(np.median(self.op.nu_diag))
            self._augmented = comp @ self.op.matrix @ comp + nu_scale * p_mat
            self._lu = lu_factor(self._augmented)
            self._comp = comp

    def micro_inverse(self, r_std: np.ndarray) -> np.ndarray:
        """Solve L f = r, P f = 0 on the standard lattice (direct path)."""
        if self._lu is None:
            raise RuntimeError("solver built with assemble=False; no operator available")
        rhs = self._comp @ np.asarray(r_std, dtype=float)
        f = lu_solve(self._lu, rhs)
        return self._comp @ f

    def macro_fraction(self, r_std: np.ndarray) -> float:
        r = np.asarray(r_std, dtype=float)
        nrm = math.sqrt(self.op.inner(r, r))
        if nrm == 0.0:
            return 0.0
        pr = self.op.projector.apply(r)
        return math.sqrt(self.op.inner(pr, pr)) / nrm


def _local_frame(wave: SmoothWaveParams, t: float, x1: float) -> tuple[GasState, WaveDerivatives]:
    d = wave_derivatives(wave, t, x1)
    state = GasState(float(d.rho), (float(d.u1), 0.0, 0.0), float(d.theta))
    return state, d


def _level1_source_std(solver: StandardLinearizedSolver, d: WaveDerivatives) -> np.ndarray:
    """-(J_t + v1 J_x) sqrt(mu) evaluated on the standardized lattice.

    J coefficients expressed in standardized velocity w: each rate is
    a + b1 sqrt(th) w1 + c th |w|^2 with a, b, c the log-Maxwellian
    coefficients; the transport factor v1 = u0 + sqrt(th) w1.
    """
    rho, u1, th = float(d.rho), float(d.u1), float(d.theta)
    sth = math.sqrt(th)
    w = solver.grid.nodes
    w1 = w[:, 0]
    ww = np.einsum("ij,ij->i", w, w)

    def j_of(drho, du1, dth):
        return drho / rho - 1.5 * dth / th + sth * w1 * du1 / th + th * ww * dth / (2.0 * th * th)

    j_t = j_of(float(d.rho_t), float(d.u1_t), float(d.theta_t))
    j_x = j_of(float(d.rho_x), float(d.u1_x), float(d.theta_x))
    v1 = u1 + sth * w1
    amp = math.sqrt(rho) * th ** (-0.75)
    return -(j_t + v1 * j_x) * amp * solver.sqrt_mu


def micro_part(k: int, lower_levels, wave: SmoothWaveParams,
               solver: StandardLinearizedSolver, t: float, xgrid: np.ndarray,
               tol_macro: float = 1e-5, t_step: float = 1e-3) -> np.ndarray:
    """Microscopic field of coefficient k+1 at time t on the spatial grid.

    k = 0 uses the analytic wave source; k >= 1 differentiates the stored
    lower levels (centered in t and x) and adds the quadratic collision
    couplings between lower coefficients.  Returns (nx, n_std) standardized
    lattice samples, one local frame per node.
    """
    nx = len(xgrid)
    out = np.empty((nx, solver.grid.n_nodes))
    if k == 0:
        for ix, x in enumerate(xgrid):
            state, d = _local_frame(wave, t, x)
            r = _level1_source_std(solver, d)
            frac = solver.macro_fraction(r)
            if frac > 10.0 * tol_macro:
                raise ArithmeticError(
                    f"level-1 source has macroscopic fraction {frac:.2e} at x={x}")
            f = solver.micro_inverse(r)
            out[ix] = f / (state.rho * state.theta ** (0.5 * solver.kernel.gamma))
        return out

    if len(lower_levels) < k:
        raise ValueError(f"need levels 1..{k} to build the level-{k+1} source")

    gamma = solver.kernel.gamma
    for ix, x in enumerate(xgrid):
        state, _ = _local_frame(wave, t, x)
        sth = math.sqrt(state.theta)
        v_phys = state.u_vec + sth * solver.grid.nodes
        # transport of the k-th coefficient: centered differences of the
        # stored field sampled at fixed physical velocity
        hx = xgrid[1] - xgrid[0] if nx > 1 else 1e-3
        ht = t_step

        def capital_f(level, tt, xx):
            return level.density_at(tt, xx, v_phys)

        lev_k = lower_levels[k - 1]
        f_tp = capital_f(lev_k, t + ht, x)
        f_tm = capital_f(lev_k, t - ht, x) if t - ht >= 0.0 else None
        if f_tm is None:
            f_t = (capital_f(lev_k, t + ht, x) - capital_f(lev_k, t, x)) / ht
        else:
            f_t = (f_tp - f_tm) / (2.0 * ht)
        f_x = (capital_f(lev_k, t, x + hx) - capital_f(lev_k, t, x - hx)) / (2.0 * hx)
        v1 = v_phys[:, 0]
        transport = f_t + v1 * f_x

        coupling = np.zeros(solver.grid.n_nodes)
        for i in range(1, k + 1):
            j = k + 1 - i
            if j < 1 or j > len(lower_levels):
                continue
            gi = lower_levels[i - 1].density_std(t, ix)
            gj = lower_levels[j - 1].density_std(t, ix)
            q_std = q_bilinear(gi, gj, solver.kernel, solver.grid)
            coupling += state.theta ** (0.5 * (gamma + 3.0)) * q_std

        amp = math.sqrt(state.rho) * state.theta ** (-0.75)
        sqmu_phys = amp * solver.sqrt_mu
        src = -(transport - coupling) / sqmu_phys
        src = solver.op.projector.complement(src)
        f = solver.micro_inverse(src)
        out[ix] = f / (state.rho * state.theta ** (0.5 * gamma))
    return out


def euler_char_speed_bound(state: GasState) -> float:
    """|u1| + sqrt(5 theta / 3): spectral radius bound of the macro system."""
    return abs(state.u[0]) + math.sqrt(5.0 * state.theta / 3.0)


def _fourth_order_dx(values: np.ndarray, dx: float) -> np.ndarray:
    """4th-order centered x-derivative, one-sided at the boundary."""
    v = np.asarray(values, dtype=float)
    out = np.empty_like(v)
    n = len(v)
    if n < 5:
        return np.gradient(v, dx, axis=0)
    out[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * dx)
    out[0] = (-25 * v[0] + 48 * v[1] - 36 * v[2] + 16 * v[3] - 3 * v[4]) / (12 * dx)
    out[1] = (-3 * v[0] - 10 * v[1] + 18 * v[2] - 6 * v[3] + v[4]) / (12 * dx)
    out[-1] = (25 * v[-1] - 48 * v[-2] + 36 * v[-3] - 16 * v[-4] + 3 * v[-5]) / (12 * dx)
    out[-2] = (3 * v[-1] + 10 * v[-2] - 18 * v[-3] + 6 * v[-4] - v[-5]) / (12 * dx)
    return out


def _symmetrizer_diag_at(d: WaveDerivatives) -> np.ndarray:
    rho = np.atleast_1d(np.asarray(d.rho, dtype=float))
    th = np.atleast_1d(np.asarray(d.theta, dtype=float))
    out = np.empty((len(rho), 5))
    out[:, 0] = th**2
    out[:, 1] = rho**2 * th
    out[:, 2] = rho**2 * th
    out[:, 3] = rho**2 * th
    out[:, 4] = rho**2 / 6.0
    return out


def _flux_matrix_at(d: WaveDerivatives) -> np.ndarray:
    rho = np.atleast_1d(np.asarray(d.rho, dtype=float))
    u1 = np.atleast_1d(np.asarray(d.u1, dtype=float))
    th = np.atleast_1d(np.asarray(d.theta, dtype=float))
    a1 = np.zeros((len(rho), 5, 5))
    a1[:, 0, 0] = th**2 * u1
    a1[:, 0, 1] = rho * th**2
    a1[:, 1, 0] = rho * th**2
    a1[:, 1, 1] = rho**2 * th * u1
    a1[:, 1, 4] = rho**2 * th / 3.0
    a1[:, 2, 2] = rho**2 * th * u1
    a1[:, 3, 3] = rho**2 * th * u1
    a1[:, 4, 1] = rho**2 * th / 3.0
    a1[:, 4, 4] = rho**2 * u1 / 6.0
    return a1


class MacroSystem:
    """Symmetric-hyperbolic coefficient fields of one cascade level.

    Provides the symmetrizer, flux matrix, zero-order matrix and microscopic
    forcing sampled on the spatial grid at any requested time.  The forcing
    moments are precomputed on time slices (micro solves are the expensive
    part) and interpolated linearly in t.
    """

    def __init__(self, wave: SmoothWaveParams, xgrid: np.ndarray,
                 micro_moments=None, t_slices: np.ndarray | None = None):
        self.wave = wave
        self.xgrid = np.asarray(xgrid, dtype=float)
        self._micro = micro_moments  # (t_slices, arrays dict) or None
        self._t_slices = t_slices

    def background(self, t: float, xs: np.ndarray | None = None):
        return wave_derivatives(self.wave, t, self.xgrid if xs is None else xs)

    def matrices(self, t: float, xs: np.ndarray | None = None):
        d = self.background(t, xs)
        nx = len(self.xgrid) if xs is None else len(xs)
        rho = np.asarray(d.rho)
        u1 = np.asarray(d.u1)
        th = np.asarray(d.theta)
        a0 = np.zeros((nx, 5, 5))
        diag = _symmetrizer_diag_at(d)
        for i in range(5):
            a0[:, i, i] = diag[:, i]
        a1 = _flux_matrix_at(d)
        bmat = np.zeros((nx, 5, 5))

        rho_x = np.asarray(d.rho_x)
        u1_x = np.asarray(d.u1_x)
        th_x = np.asarray(d.theta_x)
        p_x = rho_x * th + rho * th_x
        bmat[:, 0, 0] = th**2 * u1_x
        bmat[:, 0, 1] = th**2 * rho_x
        bmat[:, 1, 0] = th * p_x
        bmat[:, 1, 1] = rho * th * u1_x
        bmat[:, 1, 4] = rho * th * rho_x / 3.0
        bmat[:, 4, 1] = rho**2 * th_x / 2.0
        bmat[:, 4, 4] = rho**2 * u1_x / 9.0

        # analytic x-derivative of the flux matrix: the finite-volume update
        # differences A1 U, so the commutator (dA1/dx) U must be restored
        a1x = np.zeros((nx, 5, 5))
        a1x[:, 0, 0] = 2 * th * th_x * u1 + th**2 * u1_x
        a1x[:, 0, 1] = rho_x * th**2 + 2 * rho * th * th_x
        a1x[:, 1, 0] = a1x[:, 0, 1]
        d_rr_th_u = 2 * rho * rho_x * th * u1 + rho**2 * th_x * u1 + rho**2 * th * u1_x
        a1x[:, 1, 1] = d_rr_th_u
        a1x[:, 2, 2] = d_rr_th_u
        a1x[:, 3, 3] = d_rr_th_u
        a1x[:, 1, 4] = (2 * rho * rho_x * th + rho**2 * th_x) / 3.0
        a1x[:, 4, 1] = a1x[:, 1, 4]
        a1x[:, 4, 4] = (2 * rho * rho_x * u1 + rho**2 * u1_x) / 6.0
        return a0, a1, bmat, a1x

    def forcing(self, t: float) -> np.ndarray:
        nx = len(self.xgrid)
        if self._micro is None:
            return np.zeros((nx, 5))
        ts = self._t_slices
        moments = self._micro  # shape (n_slices, nx, 3): B11, B21-ish, A1
        tt = min(max(t, ts[0]), ts[-1])
        i = int(np.searchsorted(ts, tt, side="right")) - 1
        i = min(max(i, 0), len(ts) - 2)
        lam = (tt - ts[i]) / (ts[i + 1] - ts[i])
        mom = (1.0 - lam) * moments[i] + lam * moments[i + 1]
        d = self.background(t)
        rho = np.asarray(d.rho)
        u1 = np.asarray(d.u1)
        th = np.asarray(d.theta)
        dx = self.xgrid[1] - self.xgrid[0]
        ib11, ib21, ib31, ia1 = mom.T
        fbar1 = -_fourth_order_dx(th * ib11, dx)
        fbar2 = -_fourth_order_dx(th * ib21, dx)
        fbar3 = -_fourth_order_dx(th * ib31, dx)
        gbar = -_fourth_order_dx(th**1.5 * ia1 + 2.0 * u1 * th * ib11, dx) - 2.0 * u1 * fbar1
        out = np.zeros((nx, 5))
        out[:, 1] = rho * th * fbar1
        out[:, 2] = rho * th * fbar2
        out[:, 3] = rho * th * fbar3
        out[:, 4] = rho**2 / 6.0 * gbar
        return out

    def char_speed_bound(self, t: float) -> float:
        d = self.background(t)
        return float(np.max(np.abs(np.asarray(d.u1)) + np.sqrt(5.0 * np.asarray(d.theta) / 3.0)))


def _micro_flux_moments(solver: StandardLinearizedSolver, micro_std: np.ndarray,
                        frames: list[GasState]) -> np.ndarray:
    """Velocity moments entering the forcing: integrals of the stress and
    heat basis against the microscopic density, per spatial node.

    In standardized coordinates the integrands are w_i w_1 - delta |w|^2/3
    and w_1 (|w|^2 - 5); only the microscopic part contributes by
    construction.
    """
    w = solver.grid.nodes
    ww = np.einsum("ij,ij->i", w, w)
    b11 = w[:, 0] * w[:, 0] - ww / 3.0
    b21 = w[:, 1] * w[:, 0]
    b31 = w[:, 2] * w[:, 0]
    a1 = w[:, 0] * (ww - 5.0)
    sq = solver.sqrt_mu
    wq = solver.grid.weight
    out = np.empty((len(frames), 4))
    for ix, st in enumerate(frames):
        g = micro_std[ix]
        scale = math.sqrt(st.rho) * st.theta**0.75
        out[ix, 0] = scale * float(np.sum(b11 * sq * g)) * wq
        out[ix, 1] = scale * float(np.sum(b21 * sq * g)) * wq
        out[ix, 2] = scale * float(np.sum(b31 * sq * g)) * wq
        out[ix, 3] = scale * float(np.sum(a1 * sq * g)) * wq
    return out


def assemble_macro_system(wave: SmoothWaveParams, xgrid: np.ndarray,
                          solver: StandardLinearizedSolver | None = None,
                          level_index: int = 1,
                          lower_levels=None,
                          t_final: float = 1.0,
                          n_slices: int = 17,
                          tol_macro: float = 1e-5) -> MacroSystem:
    """Build the coefficient fields for the level_index-th macro system.

    The microscopic forcing moments are sampled on a time grid refined near
    t = 0 (where the wave relaxes on the smoothing scale) and interpolated.
    With solver=None the forcing is zero (useful for manufactured solutions).
    """
    if solver is None:
        return MacroSystem(wave, xgrid)
    sigma = wave.sigma
    base = np.geomspace(sigma / 8.0, max(t_final, sigma / 4.0), n_slices - 1)
    t_slices = np.concatenate([[0.0], base])
    moments = np.empty((len(t_slices), len(xgrid), 4))
    for it, t in enumerate(t_slices):
        micro = micro_part(level_index - 1, lower_levels or [], wave, solver, t, xgrid,
                           tol_macro=tol_macro)
        frames = [_local_frame(wave, t, x)[0] for x in xgrid]
        moments[it] = _micro_flux_moments(solver, micro, frames)
    return MacroSystem(wave, xgrid, micro_moments=moments, t_slices=t_slices)


@dataclass
class MacroTrajectory:
    """Stored macro solution: times and (nt, nx, 5) states."""

    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    gronwall_rate: float

    def at(self, t: float) -> np.ndarray:
        ts = self.times
        tt = min(max(t, ts[0]), ts[-1])
        i = int(np.searchsorted(ts, tt, side="right")) - 1
        i = min(max(i, 0), len(ts) - 2)
        lam = (tt - ts[i]) / (ts[i + 1] - ts[i])
        return (1.0 - lam) * self.states[i] + lam * self.states[i + 1]


def _minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where(a * b > 0.0, np.where(np.abs(a) < np.abs(b), a, b), 0.0)


def solve_macro(system: MacroSystem, u_init: np.ndarray, t_final: float,
                cfl: float = 0.4, extra_forcing=None, time_scheme: str = "ssp-rk2",
                store_every: int = 1, reconstruct: bool = True) -> MacroTrajectory:
    """Local Lax-Friedrichs finite-volume march of the symmetrized system.

    Interface states come from minmod-limited linear reconstruction (set
    reconstruct=False for plain first order); the flux matrix and the
    spectral-radius dissipation are evaluated analytically at face midpoints.
    The flux difference approximates d/dx(A1 U), so the analytic commutator
    (dA1/dx) U is restored as a source together with the zero-order matrix
    and the microscopic forcing.  Far-field ghosts copy the edge cells
    (constant states outside the fan).
    """
    xg = system.xgrid
    dx = xg[1] - xg[0]
    u = np.array(u_init, dtype=float)
    nx = len(xg)
    if u.shape != (nx, 5):
        raise ValueError(f"u_init must be ({nx}, 5)")
    xf = np.concatenate([[xg[0] - 0.5 * dx], 0.5 * (xg[:-1] + xg[1:]), [xg[-1] + 0.5 * dx]])
    t = 0.0
    times = [0.0]
    states = [u.copy()]
    energies = []
    rate = 0.0

    def rhs(u_cur, t_cur):
        a0, _, bmat, a1x = system.matrices(t_cur)
        a0_inv_diag = 1.0 / np.einsum("xii->xi", a0)
        df = system.background(t_cur, xf)
        a1f = _flux_matrix_at(df)
        a0f_diag = _symmetrizer_diag_at(df)
        alpha_f = np.abs(np.asarray(df.u1)) + np.sqrt(5.0 * np.asarray(df.theta) / 3.0)
        ug = np.vstack([u_cur[:1], u_cur, u_cur[-1:]])
        if reconstruct:
            slope = _minmod(ug[1:-1] - ug[:-2], ug[2:] - ug[1:-1])
            sg = np.vstack([np.zeros((1, 5)), slope, np.zeros((1, 5))])
            u_left = ug[:-1] + 0.5 * sg[:-1]   # state just left of each face
            u_right = ug[1:] - 0.5 * sg[1:]   # state just right of each face
        else:
            u_left = ug[:-1]
            u_right = ug[1:]
        central = 0.5 * np.einsum("xij,xj->xi", a1f, u_left + u_right)
        diss = 0.5 * alpha_f[:, None] * a0f_diag * (u_right - u_left)
        face = central - diss
        div = (face[1:] - face[:-1]) / dx
        src = (np.einsum("xij,xj->xi", a1x, u_cur)
               - np.einsum("xij,xj->xi", bmat, u_cur) + system.forcing(t_cur))
        if extra_forcing is not None:
            src = src + extra_forcing(t_cur, xg)
        return (-div + src) * a0_inv_diag

    def energy(u_cur, t_cur):
        a0 = system.matrices(t_cur)[0]
        return float(np.einsum("xi,xii,xi->", u_cur, a0, u_cur) * dx)

    energies.append(energy(u, 0.0))
    step = 0
    while t < t_final - 1e-14:
        speed = system.char_speed_bound(t)
        dt = min(cfl * dx / speed, t_final - t)
        if dt <= 0.0:
            raise ArithmeticError("CFL-admissible step collapsed to zero")
        k1 = rhs(u, t)
        if time_scheme == "euler":
            u_new = u + dt * k1
        else:
            mid = u + dt * k1
            k2 = rhs(mid, t + dt)
            u_new = 0.5 * (u + mid + dt * k2)
        e_old = energy(u, t)
        t += dt
        u = u_new
        e_new = energy(u, t)
        step += 1
        if e_old > 1e-30:
            local = (system.wave.sigma + t) * (e_new - e_old) / (dt * (e_old + 1e-30))
            rate = max(rate, local)
        if step % store_every == 0 or t >= t_final - 1e-14:
            times.append(t)
            states.append(u.copy())
            energies.append(e_new)
    return MacroTrajectory(times=np.array(times), states=np.array(states),
                           energy=np.array(energies), gronwall_rate=rate)


@dataclass
class CascadeLevel:
    """One expansion coefficient at a time slice.

    macro holds (rho_i, u_i, theta_i) per node; micro_std the standardized
    microscopic lattice samples; frames the local wave states.  trajectory,
    when present, lets the level be re-evaluated at nearby times for
    higher-level sources.
    """

    index: int
    t: float
    xgrid: np.ndarray
    frames: list[GasState]
    macro: np.ndarray  # (nx, 5): rho_i, u_i(3), theta_i
    micro_std: np.ndarray  # (nx, n_std)
    solver: StandardLinearizedSolver
    wave: SmoothWaveParams
    trajectory: MacroTrajectory | None = None
    tol_macro: float = 1e-5
    _chi_cache: dict = field(default_factory=dict, repr=False)

    def chi_coefficients(self, ix: int) -> np.ndarray:
        """Coordinates of the macroscopic part in the local chi basis."""
        st = self.frames[ix]
        rho_i, u1_i, u2_i, u3_i, th_i = self.macro[ix]
        fac_u = math.sqrt(st.rho / st.theta)
        return np.array([
            rho_i / math.sqrt(st.rho),
            fac_u * u1_i, fac_u * u2_i, fac_u * u3_i,
            math.sqrt(st.rho / 6.0) * th_i / st.theta,
        ])

    def ratio_std(self, ix: int) -> np.ndarray:
        """f_i = F_i / sqrt(mu) sampled on the standardized lattice."""
        st = self.frames[ix]
        w = self.solver.grid.nodes
        ww = np.einsum("ij,ij->i", w, w)
        coef = self.chi_coefficients(ix)
        # chi basis at the local state, written in standardized velocity:
        # every element is theta^(-3/4) eta_i(w) sqrt(mu_std)
        chi = np.vstack([
            np.ones(len(w)), w[:, 0], w[:, 1], w[:, 2], (ww - 3.0) / math.sqrt(6.0),
        ]) * (self.solver.sqrt_mu * st.theta ** (-0.75))
        return coef @ chi + self.micro_std[ix]

    def density_std(self, t: float, ix: int) -> np.ndarray:
        """F_i on the standardized lattice at the stored (or nearby) time."""
        if abs(t - self.t) > 1e-12 and self.trajectory is not None:
            level = self._resampled(t)
            return level.density_std(t, ix)
        st = self.frames[ix]
        amp = math.sqrt(st.rho) * st.theta ** (-0.75)
        return amp * self.solver.sqrt_mu * self.ratio_std(ix)

    def _resampled(self, t: float) -> "CascadeLevel":
        key = round(t, 12)
        if key not in self._chi_cache:
            self._chi_cache[key] = build_level_at(
                self.wave, self.solver, self.xgrid, t, self.index,
                trajectory=self.trajectory, tol_macro=self.tol_macro)
        return self._chi_cache[key]

    def density_at(self, t: float, x: float, v_phys: np.ndarray) -> np.ndarray:
        """F_i at arbitrary (t, x, physical v) via the stored representation."""
        level = self if abs(t - self.t) <= 1e-12 else self._resampled(t)
        xg = level.xgrid
        ix = int(np.clip(np.searchsorted(xg, x), 1, len(xg) - 1))
        # nearest-node frame; fields vary on the wave scale which the cascade
        # grid resolves
        ix = ix if abs(xg[ix] - x) < abs(xg[ix - 1] - x) else ix - 1
        st = level.frames[ix]
        w_std = (np.atleast_2d(v_phys) - st.u_vec) / math.sqrt(st.theta)
        ratio = level.ratio_std(ix)
        vals = _trilinear_many(ratio, w_std, level.solver.grid)
        amp = math.sqrt(st.rho) * st.theta ** (-0.75)
        q = np.einsum("ij,ij->i", w_std, w_std)
        sqmu = amp * (2.0 * math.pi) ** (-0.75) * np.exp(-q / 4.0)
        return sqmu * vals

    def moments(self) -> np.ndarray:
        """Extract (rho_i, u_i, theta_i) from the assembled density."""
        out = np.empty_like(self.macro)
        wq = self.solver.grid.weight
        w = self.solver.grid.nodes
        ww = np.einsum("ij,ij->i", w, w)
        sq = self.solver.sqrt_mu
        for ix, st in enumerate(self.frames):
            g = self.ratio_std(ix)
            s0 = float(np.sum(sq * g)) * wq
            s1 = np.array([float(np.sum(w[:, k] * sq * g)) for k in range(3)]) * wq
            s2 = float(np.sum(ww * sq * g)) * wq
            scale = math.sqrt(st.rho) * st.theta**0.75
            rho_i = scale * s0
            mom = scale * (st.u_vec * s0 + math.sqrt(st.theta) * s1)
            ener = scale * (float(st.u_vec @ st.u_vec) * s0
                            + 2.0 * math.sqrt(st.theta) * float(st.u_vec @ s1)
                            + st.theta * s2)
            u_i = (mom - rho_i * st.u_vec) / st.rho
            # in these chi coordinates the energy carries rho0 * theta_i
            th_i = (ener - rho_i * (float(st.u_vec @ st.u_vec) + 3.0 * st.theta)
                    - 2.0 * st.rho * float(st.u_vec @ u_i)) / st.rho
            out[ix] = (rho_i, u_i[0], u_i[1], u_i[2], th_i)
        return out

    def envelope_ratio(self, power: float, mu_floor: float = 1e-10) -> float:
        """sup |F_i| / ((1+|v|)^power mu) over nodes with resolvable mu."""
        best = 0.0
        for ix, st in enumerate(self.frames):
            w = self.solver.grid.nodes
            mu_std = self.solver.mu
            keep = mu_std >= mu_floor
            v_phys = st.u_vec + math.sqrt(st.theta) * w[keep]
            speed = np.linalg.norm(v_phys, axis=1)
            f_over_sqmu = self.ratio_std(ix)[keep]
            amp_mu = st.rho * st.theta ** (-1.5)
            dens_over_mu = np.abs(f_over_sqmu) / np.sqrt(amp_mu * mu_std[keep])
            best = max(best, float(np.max(dens_over_mu / (1.0 + speed) ** power)))
        return best


def _trilinear_many(values: np.ndarray, pts: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    from .collision import _trilinear_ref

    return _trilinear_ref(values, np.atleast_2d(pts), grid)


def assemble_level(macro: np.ndarray, micro_std: np.ndarray, wave: SmoothWaveParams,
                   solver: StandardLinearizedSolver, t: float,
                   xgrid: np.ndarray, index: int = 1,
                   trajectory: MacroTrajectory | None = None,
                   tol_macro: float = 1e-5) -> CascadeLevel:
    frames = [_local_frame(wave, t, x)[0] for x in xgrid]
    macro = np.zeros((len(xgrid), 5)) if macro is None else np.asarray(macro, dtype=float)
    micro_std = (np.zeros((len(xgrid), solver.grid.n_nodes))
                 if micro_std is None else np.asarray(micro_std, dtype=float))
    return CascadeLevel(index=index, t=t, xgrid=np.asarray(xgrid, dtype=float),
                        frames=frames, macro=macro, micro_std=micro_std,
                        solver=solver, wave=wave, trajectory=trajectory,
                        tol_macro=tol_macro)


def build_level_at(wave: SmoothWaveParams, solver: StandardLinearizedSolver,
                   xgrid: np.ndarray, t: float, index: int,
                   lower_levels=None,
                   trajectory: MacroTrajectory | None = None,
                   tol_macro: float = 1e-5) -> CascadeLevel:
    micro = micro_part(index - 1, lower_levels or [], wave, solver, t, xgrid,
                       tol_macro=tol_macro)
    macro = trajectory.at(t) if trajectory is not None else None
    return assemble_level(macro, micro, wave, solver, t, xgrid, index=index,
                          trajectory=trajectory, tol_macro=tol_macro)


class HilbertCascade:
    """Driver computing cascade levels up to a configured depth."""

    def __init__(self, wave: SmoothWaveParams, kernel: KernelSpec,
                 xgrid: np.ndarray, depth: int = 2,
                 n_std: int = 12, std_half_width: float = 6.0,
                 t_final: float = 1.0, forcing_slices: int = 17,
                 tol_macro: float = 1e-5):
        if not 1 <= depth <= 5:
            raise ValueError("cascade depth must be between 1 and 5")
        self.wave = wave
        self.kernel = kernel
        self.xgrid = np.asarray(xgrid, dtype=float)
        self.depth = depth
        self.t_final = t_final
        self.forcing_slices = forcing_slices
        self.tol_macro = tol_macro
        self.solver = StandardLinearizedSolver(kernel, n_per_axis=n_std,
                                               half_width=std_half_width)
        self._levels: dict[int, CascadeLevel] = {}

    def level(self, i: int, t: float | None = None) -> CascadeLevel:
        if not 1 <= i <= self.depth:
            raise ValueError(f"level {i} outside configured depth {self.depth}")
        t = self.t_final if t is None else t
        key = (i, round(t, 12))
        if key in self._levels:
            return self._levels[key]
        lower = [self.level(j, t) for j in range(1, i)]
        system = assemble_macro_system(
            self.wave, self.xgrid, solver=self.solver, level_index=i,
            lower_levels=lower, t_final=max(t, self.t_final),
            n_slices=self.forcing_slices, tol_macro=self.tol_macro)
        u0 = np.zeros((len(self.xgrid), 5))
        traj = solve_macro(system, u0, max(t, 1e-9))
        lvl = build_level_at(self.wave, self.solver, self.xgrid, t, i,
                             lower_levels=lower, trajectory=traj,
                             tol_macro=self.tol_macro)
        self._levels[key] = lvl
        return lvl


def save_level(level: CascadeLevel, directory: str, stem: str = "level") -> tuple[str, str]:
    """Write one level as a documented CSV plus a sidecar JSON of metadata."""
    os.makedirs(directory, exist_ok=True)
    csv_path = os.path.join(directory, f"{stem}_{level.index}_t{level.t:g}.csv")
    json_path = csv_path.replace(".csv", ".json")
    n_std = level.solver.grid.n_nodes
    header = (["x1", "rho0", "u10", "theta0", "rho_i", "u1_i", "u2_i", "u3_i", "theta_i"]
              + [f"micro_{k:05d}" for k in range(n_std)])
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for ix, x in enumerate(level.xgrid):
            st = level.frames[ix]
            row = [repr(float(x)), repr(st.rho), repr(st.u[0]), repr(st.theta)]
            row += [repr(float(v)) for v in level.macro[ix]]
            row += [repr(float(v)) for v in level.micro_std[ix]]
            wr.writerow(row)
    meta = {
        "index": level.index,
        "t": level.t,
        "lattice": {
            "half_width": level.solver.grid.half_width,
            "n_per_axis": level.solver.grid.n_per_axis,
            "coordinates": "standardized: w = (v - u0)/sqrt(theta0), row-major (w1, w2, w3)",
        },
        "kernel": {"gamma": level.solver.kernel.gamma,
                   "b_scale": level.solver.kernel.b_scale},
        "columns": "x1, background (rho0, u10, theta0), level macro, then micro lattice samples",
        "sigma": level.wave.sigma,
    }
    with open(json_path, "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    return csv_path, json_path


def load_level(csv_path: str, wave: SmoothWaveParams) -> CascadeLevel:
    json_path = csv_path.replace(".csv", ".json")
    with open(json_path) as fh:
        meta = json.load(fh)
    kernel = KernelSpec(gamma=meta["kernel"]["gamma"], b_scale=meta["kernel"]["b_scale"])
    solver = StandardLinearizedSolver(kernel, n_per_axis=meta["lattice"]["n_per_axis"],
                                      half_width=meta["lattice"]["half_width"])
    xs, macro, micro = [], [], []
    with open(csv_path, newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        for row in rd:
            xs.append(float(row[0]))
            macro.append([float(v) for v in row[4:9]])
            micro.append([float(v) for v in row[9:]])
    return assemble_level(np.array(macro), np.array(micro), wave, solver,
                          float(meta["t"]), np.array(xs), index=int(meta["index"]))
