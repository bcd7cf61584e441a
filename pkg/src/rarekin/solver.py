"""Kinetic marching of the rarefaction problem at finite Knudsen number.

Strang-split transport/collision stepping of F(t, x1, v) on a cell grid times
a velocity lattice, initialized from the wave expansion, with BGK and full
collision backends sharing the transport machinery; plus the mollified
remainder functionals and the epsilon-sweep convergence study.
"""

from __future__ import annotations

import json
import math
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import roots_legendre

from . import _kernels
from .cascade import CascadeLevel
from .collision import (
    KernelSpec,
    discrete_maxwellian,
    discrete_maxwellian_batch,
    q_bilinear_cells,
)
from .maxwellian import MaxwellFrame, choose_theta_M, maxwellian
from .velocity_grid import VelocityGrid
from .waves import (
    GasState,
    SmoothWaveParams,
    exact_wave_fields,
    smooth_wave_fields,
)

__all__ = [
    "DistributionField",
    "KineticSolver",
    "RemainderView",
    "moments",
    "mollifier_phi",
    "mollifier_gradient_check",
    "remainder_norms",
    "limit_study",
    "LimitCase",
    "nu_at_bulk",
    "write_checkpoint",
    "read_raw_dump",
    "h_functional",
    "solver_domain_halfwidth",
]


class PositivityError(ValueError):
    """Initial expansion data went negative with the strict flag set."""


class VacuumError(ValueError):
    """A cell lost all its mass."""


@dataclass
class DistributionField:
    """Kinetic density on (cells x velocity lattice) at one time."""

    xgrid: np.ndarray
    vgrid: VelocityGrid
    F: np.ndarray
    t: float
    mass_defect: float = 0.0

    @property
    def dx(self) -> float:
        return float(self.xgrid[1] - self.xgrid[0])

    def copy(self) -> "DistributionField":
        return DistributionField(self.xgrid, self.vgrid, self.F.copy(), self.t,
                                 self.mass_defect)

    def total_mass(self) -> float:
        return float(np.sum(self.F)) * self.vgrid.weight * self.dx


def nu_at_bulk(rho: float, theta: float, kernel: KernelSpec) -> float:
    """Collision frequency at the bulk velocity, closed form for the cutoff
    kernel: angular mass times the |v-u|^gamma Maxwellian moment."""
    g = kernel.gamma
    return (kernel.angular_mass * rho * (2.0 * theta) ** (0.5 * g)
            * gamma_fn(0.5 * (3.0 + g)) * 2.0 / math.sqrt(math.pi))


def moments(fld: DistributionField):
    """Discrete (rho, u, theta) per cell; temperature from the energy identity."""
    basis = fld.vgrid.moments_basis()
    raw = fld.F @ basis * fld.vgrid.weight  # (ncell, 5)
    rho = raw[:, 0]
    if np.any(rho <= 0.0):
        raise VacuumError("non-positive density in moments()")
    u = raw[:, 1:4] / rho[:, None]
    theta = (raw[:, 4] / rho - np.einsum("ci,ci->c", u, u)) / 3.0
    return rho, u, theta


def h_functional(fld: DistributionField) -> float:
    """Discrete integral of F log F (entropy functional), positive part only."""
    pos = fld.F > 0.0
    return float(np.sum(fld.F[pos] * np.log(fld.F[pos]))) * fld.vgrid.weight * fld.dx


def solver_domain_halfwidth(wave: SmoothWaveParams, t_final: float) -> float:
    """Spatial half-width keeping the wave away from the boundaries."""
    e = wave.endstates
    speed = max(abs(e.w_plus), abs(e.w_minus))
    return speed * t_final * 1.5 + 40.0 * wave.sigma + 10.0


class KineticSolver:
    """Strang-split kinetic integrator bound to one wave and lattice."""

    def __init__(self, wave: SmoothWaveParams, kernel: KernelSpec,
                 vgrid: VelocityGrid, xgrid: np.ndarray, backend: str = "bgk",
                 cfl: float = 0.4, strict_positivity: bool = False):
        if backend not in ("bgk", "boltzmann"):
            raise ValueError(f"unknown backend {backend!r}")
        self.wave = wave
        self.kernel = kernel
        self.vgrid = vgrid
        self.xgrid = np.asarray(xgrid, dtype=float)
        self.backend = backend
        self.cfl = cfl
        self.strict_positivity = strict_positivity
        e = wave.endstates
        self.ghost_left = maxwellian(e.left, vgrid.nodes)
        self.ghost_right = maxwellian(e.right, vgrid.nodes)
        self._v1 = vgrid.nodes[:, 0].copy()
        self._pos = self._v1 > 0.0
        # largest collision frequency on the lattice, for subcycling bounds
        corner = float(np.sqrt(3.0) * vgrid.half_width)
        rho_max = max(e.left.rho, e.right.rho)
        th_min = min(e.left.theta, e.right.theta)
        gam = max(kernel.gamma, 0.0)
        self.nu_max = kernel.angular_mass * rho_max * (corner + 3.0) ** gam \
            if kernel.gamma > 0 else kernel.angular_mass * rho_max
        self.nu_max = max(self.nu_max, nu_at_bulk(rho_max, th_min, kernel))

    def max_dt(self) -> float:
        dx = float(self.xgrid[1] - self.xgrid[0])
        return self.cfl * dx / float(np.max(np.abs(self._v1)))

    # ------------------------------------------------------------ initializers

    def equilibrium_field(self, t: float = 0.0) -> DistributionField:
        rho, u1, th = smooth_wave_fields(self.wave, t, self.xgrid)
        F = np.empty((len(self.xgrid), self.vgrid.n_nodes))
        for c in range(len(self.xgrid)):
            st = GasState(float(rho[c]), (float(u1[c]), 0.0, 0.0), float(th[c]))
            F[c] = maxwellian(st, self.vgrid.nodes)
        return DistributionField(self.xgrid, self.vgrid, F, t)

    def init_expansion(self, cascade_levels: list[CascadeLevel], epsilon: float,
                       depth: int) -> DistributionField:
        """Initial data: wave Maxwellian plus the first depth coefficients."""
        if depth > len(cascade_levels):
            raise ValueError(f"depth {depth} exceeds available levels "
                             f"{len(cascade_levels)}")
        fld = self.equilibrium_field(0.0)
        for n in range(1, depth + 1):
            lvl = cascade_levels[n - 1]
            for c, x in enumerate(self.xgrid):
                fld.F[c] += epsilon**n * lvl.density_at(0.0, float(x), self.vgrid.nodes)
        neg = fld.F < 0.0
        if np.any(neg):
            defect = -float(np.sum(fld.F[neg])) * self.vgrid.weight * fld.dx
            if self.strict_positivity:
                raise PositivityError(
                    f"expansion initial data negative (mass defect {defect:.3e}); "
                    "reduce epsilon or the expansion depth")
            fld.F[neg] = 0.0
            fld.mass_defect += defect
        return fld

    # -------------------------------------------------------------- transport

    def _transport(self, fld: DistributionField, dt: float) -> None:
        dx = fld.dx
        courant = self._v1 * dt / dx
        if float(np.max(np.abs(courant))) > 1.0 + 1e-12:
            raise ValueError(f"CFL violation: max courant "
                             f"{np.max(np.abs(courant)):.3f} > 1")
        fld.F = _kernels.upwind_sweep(fld.F, self.ghost_left, self.ghost_right,
                                      courant, self._pos)
        neg = fld.F < 0.0
        if np.any(neg):
            fld.mass_defect += -float(np.sum(fld.F[neg])) * self.vgrid.weight * dx
            fld.F[neg] = 0.0

    # --------------------------------------------------------------- collision

    def _collide_bgk(self, fld: DistributionField, dt: float, epsilon: float) -> None:
        basis = self.vgrid.moments_basis()
        raw = fld.F @ basis * self.vgrid.weight
        if np.any(raw[:, 0] <= 0.0):
            raise VacuumError("vacuum cell in BGK relaxation")
        m_disc = discrete_maxwellian_batch(raw, self.vgrid)
        rho = raw[:, 0]
        u = raw[:, 1:4] / rho[:, None]
        theta = (raw[:, 4] / rho - np.einsum("ci,ci->c", u, u)) / 3.0
        g = self.kernel.gamma
        nu_bar = (self.kernel.angular_mass * rho * (2.0 * theta) ** (0.5 * g)
                  * gamma_fn(0.5 * (3.0 + g)) * 2.0 / math.sqrt(math.pi))
        decay = np.exp(-nu_bar * dt / epsilon)
        fld.F = m_disc + decay[:, None] * (fld.F - m_disc)

    def _collide_boltzmann(self, fld: DistributionField, dt: float, epsilon: float) -> None:
        dt_stable = epsilon / (2.0 * self.nu_max)
        n_sub = max(1, int(math.ceil(dt / dt_stable)))
        dt_c = dt / n_sub
        for _ in range(n_sub):
            q = q_bilinear_cells(fld.F, self.kernel, self.vgrid)
            fld.F = fld.F + (dt_c / epsilon) * q
            neg = fld.F < 0.0
            if np.any(neg):
                fld.mass_defect += -float(np.sum(fld.F[neg])) * self.vgrid.weight * fld.dx
                fld.F[neg] = 0.0

    # ------------------------------------------------------------------- step

    def step(self, fld: DistributionField, epsilon: float, dt: float) -> DistributionField:
        """One Strang step: half transport, full collision, half transport."""
        if dt > self.max_dt() * (1.0 + 1e-12):
            raise ValueError(f"dt {dt:.3e} exceeds the transport CFL bound "
                             f"{self.max_dt():.3e}")
        self._transport(fld, 0.5 * dt)
        if self.backend == "bgk":
            self._collide_bgk(fld, dt, epsilon)
        else:
            self._collide_boltzmann(fld, dt, epsilon)
        self._transport(fld, 0.5 * dt)
        fld.t += dt
        return fld

    def run(self, fld: DistributionField, epsilon: float, t_final: float,
            callback=None) -> DistributionField:
        while fld.t < t_final - 1e-12:
            dt = min(self.max_dt(), t_final - fld.t)
            self.step(fld, epsilon, dt)
            if callback is not None:
                callback(fld)
        return fld


# --------------------------------------------------------------------- mollifier


def mollifier_phi(a: float, x: np.ndarray):
    """Compactly supported bump a^-3 exp(1/(|x/a|^2 - 1)) inside |x| < a."""
    if a <= 0.0:
        raise ValueError("scale a must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r2 = np.einsum("ij,ij->i", x, x) / (a * a)
    out = np.zeros(len(x))
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 / (r2[inside] - 1.0)) / a**3
    return float(out[0]) if len(out) == 1 else out


def mollifier_gradient_check(a: float, lam: float, n_samples: int = 4000) -> float:
    """Sampled constant in the gradient bound of the scaled bump.

    The ratio |grad phi_a| / phi_a^(1-lambda) equals a^(-1-3 lambda) times a
    scale-free radial profile, so the reported supremum times a^(1+3 lambda)
    is independent of a.  Sampling is logarithmic in the boundary distance
    s = 1 - r^2, where the maximizer sits near s = lambda/2.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")
    if a <= 0.0:
        raise ValueError("scale a must be positive")
    s = np.geomspace(1e-3 * lam, 1.0, n_samples)

    def ratio(s_val):
        r = np.sqrt(np.maximum(1.0 - s_val, 0.0))
        return 2.0 * r * np.exp(-lam / s_val) / s_val**2

    vals = ratio(s)
    i = int(np.argmax(vals))
    lo = s[max(i - 1, 0)]
    hi = s[min(i + 1, len(s) - 1)]
    from scipy.optimize import minimize_scalar

    res = minimize_scalar(lambda ls: -ratio(math.exp(ls)),
                          bounds=(math.log(lo), math.log(hi)), method="bounded",
                          options={"xatol": 1e-13})
    return max(float(-res.fun), float(vals[i]))


# ----------------------------------------------------------------- remainder


@dataclass
class RemainderView:
    """Remainder of the truncated expansion in both weightings."""

    f: np.ndarray  # F_R / sqrt(mu_wave), (ncell, nv)
    h: np.ndarray  # w(v) F_R / sqrt(mu_M), (ncell, nv)
    a: float
    epsilon: float

    def consistency_defect(self, wave_sqrt_mu: np.ndarray, frame_weight: np.ndarray,
                           sqrt_mu_global: np.ndarray) -> float:
        """Max deviation of h - w sqrt(mu/mu_M) f over the grid."""
        rebuilt = frame_weight * wave_sqrt_mu / sqrt_mu_global * self.f
        scale = max(1.0, float(np.max(np.abs(self.h))))
        return float(np.max(np.abs(self.h - rebuilt))) / scale


def _transverse_mollifier_mass(a: float, xi: np.ndarray) -> np.ndarray:
    """Integral of phi_a^2 over the two trivial transverse directions.

    Radial reduction: 2 pi a^-4 * int_{|xi|/a}^1 exp(2/(rho^2-1)) rho d rho.
    """
    nodes, wts = roots_legendre(200)
    out = np.zeros(len(xi))
    lo = np.abs(xi) / a
    for i, l0 in enumerate(lo):
        if l0 >= 1.0:
            continue
        rho = 0.5 * (nodes + 1.0) * (1.0 - l0) + l0
        w = 0.5 * (1.0 - l0) * wts
        vals = np.exp(2.0 / (rho**2 - 1.0)) * rho
        out[i] = 2.0 * math.pi / a**4 * float(np.sum(w * vals))
    return out


def remainder_norms(fld: DistributionField, cascade_levels: list[CascadeLevel],
                    wave: SmoothWaveParams, frame: MaxwellFrame, epsilon: float,
                    a: float, center: float = 0.0, depth: int | None = None):
    """Localized L2 and weighted sup norms of the expansion remainder.

    The remainder is (F - mu - sum eps^n F_n)/eps^3; the localized norm
    integrates f^2 against the squared mollifier centered at (center, 0, 0),
    with the transverse directions integrated out analytically-by-quadrature.
    Returns (l2_localized, linf_weighted, RemainderView).
    """
    depth = len(cascade_levels) if depth is None else depth
    rho, u1, th = smooth_wave_fields(wave, fld.t, fld.xgrid)
    nv = fld.vgrid.n_nodes
    ncell = len(fld.xgrid)
    expansion = np.empty((ncell, nv))
    sqmu = np.empty((ncell, nv))
    for c, x in enumerate(fld.xgrid):
        st = GasState(float(rho[c]), (float(u1[c]), 0.0, 0.0), float(th[c]))
        mu_c = maxwellian(st, fld.vgrid.nodes)
        expansion[c] = mu_c
        sqmu[c] = np.sqrt(mu_c)
        for n in range(1, depth + 1):
            expansion[c] += epsilon**n * cascade_levels[n - 1].density_at(
                fld.t, float(x), fld.vgrid.nodes)
    f_rem = (fld.F - expansion) / (epsilon**3 * sqmu)
    wgt = frame.weight(fld.vgrid.nodes)
    sq_m = frame.sqrt_mu_global(fld.vgrid.nodes)
    h_rem = wgt[None, :] * (fld.F - expansion) / (epsilon**3) / sq_m[None, :]
    view = RemainderView(f=f_rem, h=h_rem, a=a, epsilon=epsilon)

    g_trans = _transverse_mollifier_mass(a, fld.xgrid - center)
    l2 = math.sqrt(float(np.einsum("cv,c->", f_rem**2, g_trans))
                   * fld.vgrid.weight * fld.dx)
    linf = epsilon**1.5 / a**3 * float(np.max(np.abs(h_rem)))
    return l2, linf, view


# ---------------------------------------------------------------- checkpoints

RAW_MAGIC = b"RKF1"


def write_checkpoint(fld: DistributionField, directory: str, tag: str,
                     raw_dump: bool = False) -> dict:
    """Moments CSV per time, optionally with the raw lattice dump.

    Raw layout (little-endian): magic 'RKF1'; int64 ncell, n_per_axis;
    float64 half_width, t, dx, x_first; then the (ncell x nv) values
    row-major as float64.
    """
    os.makedirs(directory, exist_ok=True)
    rho, u, th = moments(fld)
    csv_path = os.path.join(directory, f"moments_{tag}.csv")
    with open(csv_path, "w") as fh:
        fh.write("x1,rho,u1,u2,u3,theta\r\n")
        for c, x in enumerate(fld.xgrid):
            fh.write(",".join(repr(float(v)) for v in
                              (x, rho[c], u[c, 0], u[c, 1], u[c, 2], th[c])) + "\r\n")
    out = {"moments_csv": csv_path}
    if raw_dump:
        raw_path = os.path.join(directory, f"raw_{tag}.bin")
        with open(raw_path, "wb") as fh:
            fh.write(RAW_MAGIC)
            fh.write(struct.pack("<qq", fld.F.shape[0], fld.vgrid.n_per_axis))
            fh.write(struct.pack("<dddd", fld.vgrid.half_width, fld.t, fld.dx,
                                 float(fld.xgrid[0])))
            fh.write(fld.F.astype("<f8").tobytes(order="C"))
        out["raw_dump"] = raw_path
    return out


def read_raw_dump(path: str) -> DistributionField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != RAW_MAGIC:
            raise ValueError(f"not a raw kinetic dump: magic {magic!r}")
        ncell, n_axis = struct.unpack("<qq", fh.read(16))
        half_width, t, dx, x0 = struct.unpack("<dddd", fh.read(32))
        grid = VelocityGrid(half_width, int(n_axis))
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(int(ncell), grid.n_nodes)
    xg = x0 + dx * np.arange(int(ncell))
    return DistributionField(xg, grid, data.copy(), t)


# ---------------------------------------------------------------- limit study


@dataclass
class LimitCase:
    """One epsilon run of the convergence study."""

    epsilon: float
    sigma: float
    sup_errors: dict
    weighted_sup: float
    runtime_s: float
    cells: int
    n_axis: int
    mass_defect: float
    failed: str | None = None


def limit_study(wave_builder, kernel: KernelSpec, epsilons, t_final: float = 1.0,
                sigma: float | None = 0.1, eta: float | None = None,
                backend: str = "bgk", cells: int = 200, n_axis: int = 24,
                depth: int = 1, cascade_factory=None, cfl: float = 0.4):
    """March each epsilon to t_final and measure distance to the exact wave.

    wave_builder(sigma) must return SmoothWaveParams for the configured end
    states; sigma is either fixed or coupled as epsilon^eta.  Returns a list
    of LimitCase records (failures annotated, not raised).
    """
    results = []
    for eps in epsilons:
        sig = float(eps**eta) if eta is not None else float(sigma)
        t0 = time.time()
        try:
            wave = wave_builder(sig)
            e = wave.endstates
            theta_m = choose_theta_M(e.left.theta, e.right.theta)
            frame = MaxwellFrame.for_state(e.left, theta_M=theta_m, gamma=kernel.gamma)
            hw = solver_domain_halfwidth(wave, t_final)
            xg = np.linspace(-hw, hw, cells)
            u_max = max(abs(e.left.u[0]), abs(e.right.u[0]))
            th_max = max(e.left.theta, e.right.theta)
            vg = VelocityGrid(6.0 * math.sqrt(th_max) + u_max, n_axis)
            solver = KineticSolver(wave, kernel, vg, xg, backend=backend, cfl=cfl)
            levels = []
            if depth > 0:
                if cascade_factory is None:
                    raise ValueError("depth > 0 needs a cascade_factory")
                levels = cascade_factory(wave, depth)
            fld = solver.init_expansion(levels, eps, depth)
            solver.run(fld, eps, t_final)
            rho, u, th = moments(fld)
            re, ue, the = exact_wave_fields(e, t_final, xg)
            sup_err = {
                "rho": float(np.max(np.abs(rho - re))),
                "u1": float(np.max(np.abs(u[:, 0] - ue))),
                "theta": float(np.max(np.abs(th - the))),
            }
            sup_err["max"] = max(sup_err.values())
            wsup = _weighted_sup_vs_exact(fld, e, frame, t_final)
            results.append(LimitCase(
                epsilon=float(eps), sigma=sig, sup_errors=sup_err,
                weighted_sup=wsup, runtime_s=time.time() - t0, cells=cells,
                n_axis=n_axis, mass_defect=fld.mass_defect))
        except Exception as exc:  # annotate, keep sweeping
            results.append(LimitCase(
                epsilon=float(eps), sigma=sig, sup_errors={}, weighted_sup=math.nan,
                runtime_s=time.time() - t0, cells=cells, n_axis=n_axis,
                mass_defect=math.nan, failed=f"{type(exc).__name__}: {exc}"))
    return results


def _weighted_sup_vs_exact(fld: DistributionField, endstates, frame: MaxwellFrame,
                           t_final: float) -> float:
    re, ue, the = exact_wave_fields(endstates, t_final, fld.xgrid)
    sq_m = frame.sqrt_mu_global(fld.vgrid.nodes)
    worst = 0.0
    for c in range(len(fld.xgrid)):
        st = GasState(float(re[c]), (float(ue[c]), 0.0, 0.0), float(the[c]))
        mu_exact = maxwellian(st, fld.vgrid.nodes)
        worst = max(worst, float(np.max(np.abs(fld.F[c] - mu_exact) / sq_m)))
    return worst
