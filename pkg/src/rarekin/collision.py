"""Discrete-velocity Boltzmann collision operator, its linearization around a
local Maxwellian, the microscopic pseudo-inverse, the reference-weighted
kernel split, and the moment-matched BGK surrogate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse.linalg import LinearOperator, lgmres
from scipy.special import roots_legendre

from . import _kernels
from .maxwellian import Projector, maxwellian, sqrt_maxwellian
from .velocity_grid import VelocityGrid
from .waves import GasState

__all__ = [
    "KernelSpec",
    "LinearizedOperator",
    "KernelSplit",
    "q_bilinear",
    "q_bilinear_reference",
    "q_bilinear_cells",
    "gamma_bilinear",
    "L_apply",
    "L_assemble",
    "L_pseudo_inverse",
    "k_split",
    "entropy_production",
    "bgk_surrogate",
    "discrete_maxwellian",
    "MacroscopicInputError",
    "AssemblyRefusedError",
]

# dense assembly allowed up to this many nodes per axis (16^3 -> 134 MB)
ASSEMBLY_MAX_N = 16


class MacroscopicInputError(ValueError):
    """Pseudo-inverse input has a macroscopic component beyond tolerance."""


class AssemblyRefusedError(MemoryError):
    """Dense assembly refused; use apply-only mode."""


@dataclass(frozen=True)
class KernelSpec:
    """Cutoff collision kernel |v-u|^gamma * b_scale * |cos theta|."""

    gamma: float
    b_scale: float = 1.0
    angular_rule: tuple[int, int] = (8, 8)

    def __post_init__(self):
        if not (-3.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must be in (-3, 1], got {self.gamma}")
        if self.b_scale < 0.0:
            raise ValueError("b_scale must be nonnegative")

    @cached_property
    def s2_quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Product rule on the sphere: Gauss-Legendre polar cosine x uniform
        azimuth."""
        n_pol, n_az = self.angular_rule
        mu, w_mu = roots_legendre(n_pol)
        phi = 2.0 * math.pi * (np.arange(n_az) + 0.5) / n_az
        st = np.sqrt(1.0 - mu**2)
        om = np.empty((n_pol * n_az, 3))
        w = np.empty(n_pol * n_az)
        k = 0
        for i in range(n_pol):
            for j in range(n_az):
                om[k] = (st[i] * math.cos(phi[j]), st[i] * math.sin(phi[j]), mu[i])
                w[k] = w_mu[i] * (2.0 * math.pi / n_az)
                k += 1
        return om, w

    @property
    def angular_mass(self) -> float:
        """Exact integral of b over the sphere: 2 pi b_scale."""
        return 2.0 * math.pi * self.b_scale


def _grid_args(grid: VelocityGrid):
    return (grid.nodes, float(grid.axis[0]), 1.0 / grid.spacing, grid.n_per_axis)


def q_bilinear(F1, F2, kernel: KernelSpec, grid: VelocityGrid) -> np.ndarray:
    """Gain-minus-loss collision bilinear form on the lattice.

    Post-collision velocities leave the lattice and are read back by
    trilinear interpolation; values outside the node hull count as zero.
    The coincident node u = v is skipped: its gain and loss cancel exactly.
    """
    om, w_om = kernel.s2_quadrature
    nodes, axis0, inv_h, n = _grid_args(grid)
    return _kernels.q_bilinear_core(
        np.ascontiguousarray(F1, dtype=float), np.ascontiguousarray(F2, dtype=float),
        nodes, axis0, inv_h, n, grid.weight, om, w_om, kernel.gamma, kernel.b_scale)


def q_bilinear_cells(Fc, kernel: KernelSpec, grid: VelocityGrid) -> np.ndarray:
    """Q(F, F) for a batch of spatial cells sharing the lattice."""
    om, w_om = kernel.s2_quadrature
    nodes, axis0, inv_h, n = _grid_args(grid)
    return _kernels.q_bilinear_cells_core(
        np.ascontiguousarray(Fc, dtype=float),
        nodes, axis0, inv_h, n, grid.weight, om, w_om, kernel.gamma, kernel.b_scale)


def _trilinear_ref(F, pts, grid: VelocityGrid) -> np.ndarray:
    """Vectorized trilinear interpolation used by the reference path."""
    axis0 = grid.axis[0]
    h = grid.spacing
    n = grid.n_per_axis
    s = (pts - axis0) / h
    idx = np.floor(s).astype(np.int64)
    frac = s - idx
    ok = np.all((idx >= 0) & (idx <= n - 2), axis=1)
    idx = np.clip(idx, 0, n - 2)
    vals = np.zeros(len(pts))
    Fg = F.reshape(n, n, n)
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                vals += wx * wy * wz * Fg[idx[:, 0] + dx, idx[:, 1] + dy, idx[:, 2] + dz]
    return np.where(ok, vals, 0.0)


def q_bilinear_reference(F1, F2, kernel: KernelSpec, grid: VelocityGrid) -> np.ndarray:
    """Plain-numpy double loop over output nodes; same quadrature and
    interpolation as the fast path but an independent code path and summation
    order.  Meant for small lattices in tests."""
    F1 = np.asarray(F1, dtype=float)
    F2 = np.asarray(F2, dtype=float)
    om, w_om = kernel.s2_quadrature
    nodes = grid.nodes
    out = np.zeros(grid.n_nodes)
    for iv, v in enumerate(nodes):
        rel = v - nodes
        rr = np.linalg.norm(rel, axis=1)
        keep = rr > 0.0
        rel = rel[keep]
        rr = rr[keep]
        bpow = rr**kernel.gamma
        proj = rel @ om.T
        bf = bpow[:, None] * kernel.b_scale * np.abs(proj / rr[:, None]) * w_om[None, :]
        up = (nodes[keep][:, None, :] + proj[:, :, None] * om[None, :, :]).reshape(-1, 3)
        vp = (v[None, None, :] - proj[:, :, None] * om[None, :, :]).reshape(-1, 3)
        gain = _trilinear_ref(F1, up, grid) * _trilinear_ref(F2, vp, grid)
        loss = (F1[keep] * F2[iv])[:, None] * np.ones_like(w_om)[None, :]
        out[iv] = np.sum(bf * (gain.reshape(bf.shape) - loss)) * grid.weight
    return out


def _state_of(frame_or_state) -> GasState:
    return frame_or_state.state if hasattr(frame_or_state, "state") else frame_or_state


def gamma_bilinear(g1, g2, frame, kernel: KernelSpec, grid: VelocityGrid) -> np.ndarray:
    """Q(sqrt(mu) g1, sqrt(mu) g2) / sqrt(mu) around the frame's Maxwellian."""
    state = _state_of(frame)
    sq = sqrt_maxwellian(state, grid.nodes)
    return q_bilinear(sq * np.asarray(g1), sq * np.asarray(g2), kernel, grid) / sq


def L_apply(g, frame, kernel: KernelSpec, grid: VelocityGrid) -> np.ndarray:
    """Linearized operator: -(Q(mu, sqrt(mu) g) + Q(sqrt(mu) g, mu)) / sqrt(mu)."""
    state = _state_of(frame)
    mu = maxwellian(state, grid.nodes)
    sq = sqrt_maxwellian(state, grid.nodes)
    sg = sq * np.asarray(g, dtype=float)
    return -(q_bilinear(mu, sg, kernel, grid) + q_bilinear(sg, mu, kernel, grid)) / sq


@dataclass
class LinearizedOperator:
    """Dense linearized collision operator at one gas state.

    matrix acts on lattice fields; nu_diag is the lattice collision frequency
    (the diagonal loss part of the assembly, used for the nu-weighted inner
    product); projector is the discrete macro projection at the same state.
    theta_M parameterizes the reference-weighted kernel used by the
    small-relative-speed split.
    """

    state: GasState
    kernel: KernelSpec
    grid: VelocityGrid
    matrix: np.ndarray
    nu_diag: np.ndarray
    projector: Projector
    theta_M: float | None = None
    _k_weighted: np.ndarray | None = field(default=None, repr=False)

    def apply(self, g: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(g, dtype=float)

    def apply_micro(self, g: np.ndarray) -> np.ndarray:
        """Restriction to the microscopic subspace: (I-P) L (I-P)."""
        p = self.projector
        return p.complement(self.matrix @ p.complement(g))

    @property
    def K_matrix(self) -> np.ndarray:
        """Reference-weighted kernel part: L_ref = nu + K with analytic
        Maxwellian factors (requires theta_M)."""
        if self._k_weighted is None:
            if self.theta_M is None:
                raise ValueError("weighted kernel needs a reference temperature")
            om, w_om = self.kernel.s2_quadrature
            nodes, axis0, inv_h, n = _grid_args(self.grid)
            u = self.state.u_vec
            self._k_weighted = _kernels.weighted_k_assemble_core(
                nodes, axis0, inv_h, n, self.grid.weight, om, w_om,
                self.kernel.gamma, self.kernel.b_scale,
                self.state.rho, u[0], u[1], u[2], self.state.theta,
                self.theta_M, -1.0)
        return self._k_weighted

    def nu_norm(self, g: np.ndarray) -> float:
        g = np.asarray(g, dtype=float)
        return math.sqrt(float(np.sum(g * g * self.nu_diag)) * self.grid.weight)

    def inner(self, f, g) -> float:
        return float(np.sum(np.asarray(f) * np.asarray(g))) * self.grid.weight


def L_assemble(frame, kernel: KernelSpec, grid: VelocityGrid,
               theta_M: float | None = None) -> LinearizedOperator:
    """Assemble the dense linearized operator; refuses oversized lattices."""
    if grid.n_per_axis > ASSEMBLY_MAX_N:
        raise AssemblyRefusedError(
            f"dense assembly limited to {ASSEMBLY_MAX_N}^3 nodes; "
            f"got {grid.n_per_axis}^3 -- use L_apply instead")
    state = _state_of(frame)
    mu = maxwellian(state, grid.nodes)
    sq = sqrt_maxwellian(state, grid.nodes)
    om, w_om = kernel.s2_quadrature
    nodes, axis0, inv_h, n = _grid_args(grid)
    mat, nu_disc = _kernels.linearized_assemble_core(
        mu, sq, nodes, axis0, inv_h, n, grid.weight, om, w_om,
        kernel.gamma, kernel.b_scale)
    if theta_M is None:
        theta_M = getattr(frame, "theta_M", None)
    return LinearizedOperator(state=state, kernel=kernel, grid=grid, matrix=mat,
                              nu_diag=nu_disc, projector=Projector(state, grid),
                              theta_M=theta_M)


def L_pseudo_inverse(r, op: LinearizedOperator, tol_macro: float = 1e-6,
                     rtol: float = 1e-8, maxiter: int = 400) -> np.ndarray:
    """Microscopic solution f of L f = r with P f = 0.

    The input must be microscopic up to tol_macro (relative); the projected
    system (I-P) L (I-P) f = (I-P) r is solved iteratively with the inverse
    lattice collision frequency as preconditioner, and the residual of the
    projected system is required to meet rtol.
    """
    r = np.asarray(r, dtype=float)
    p = op.projector
    r_norm = math.sqrt(op.inner(r, r))
    if r_norm == 0.0:
        return np.zeros_like(r)
    r_macro = p.apply(r)
    macro_frac = math.sqrt(op.inner(r_macro, r_macro)) / r_norm
    if macro_frac > tol_macro:
        raise MacroscopicInputError(
            f"input has macroscopic fraction {macro_frac:.3e} > {tol_macro:.1e}")
    rhs = r - r_macro
    nv = op.grid.n_nodes

    mv = LinearOperator((nv, nv), matvec=op.apply_micro, dtype=float)
    precond = LinearOperator((nv, nv), matvec=lambda x: x / op.nu_diag, dtype=float)
    sol, info = lgmres(mv, rhs, M=precond, rtol=rtol * 1e-2, atol=0.0,
                       maxiter=maxiter)
    sol = p.complement(sol)
    resid = op.apply_micro(sol) - rhs
    rel = math.sqrt(op.inner(resid, resid)) / math.sqrt(op.inner(rhs, rhs))
    if info != 0 or rel > rtol:
        raise ArithmeticError(
            f"pseudo-inverse iteration stagnated: relative residual {rel:.3e}")
    return sol


@dataclass
class KernelSplit:
    """K = K_small + K_rest partition of the weighted kernel at one cutoff."""

    m: float
    k_small: np.ndarray
    k_rest: np.ndarray

    def apply_small(self, g):
        return self.k_small @ np.asarray(g, dtype=float)

    def apply_rest(self, g):
        return self.k_rest @ np.asarray(g, dtype=float)

    @property
    def small_norm_inf(self) -> float:
        """Operator infinity-norm of the small-relative-speed part."""
        return float(np.max(np.sum(np.abs(self.k_small), axis=1)))


def k_split(op: LinearizedOperator, m: float, n_radial: int = 16,
            n_sphere: int = 6) -> KernelSplit:
    """Split the weighted kernel at relative speed m (smooth blend to 2m).

    For cutoffs below the lattice scale the small part is quadratured on the
    ball |u - v| <= 2m directly (the lattice cannot resolve it); once 2m
    reaches the box size the cutoff saturates and the lattice path is exact.
    The remainder is K - K_small, so the partition is exact by construction.
    """
    if m <= 0.0:
        raise ValueError("cutoff m must be positive")
    kmat = op.K_matrix
    om, w_om = op.kernel.s2_quadrature
    nodes, axis0, inv_h, n = _grid_args(op.grid)
    u = op.state.u_vec
    if 2.0 * m >= op.grid.half_width:
        k_small = _kernels.weighted_k_assemble_core(
            nodes, axis0, inv_h, n, op.grid.weight, om, w_om,
            op.kernel.gamma, op.kernel.b_scale,
            op.state.rho, u[0], u[1], u[2], op.state.theta, op.theta_M, m)
    else:
        rx, rw = roots_legendre(n_radial)
        r_nodes = 0.5 * (rx + 1.0) * (2.0 * m)
        r_weights = rw * m
        mu_p, w_p = roots_legendre(n_sphere)
        phi = 2.0 * math.pi * (np.arange(n_sphere) + 0.5) / n_sphere
        st = np.sqrt(1.0 - mu_p**2)
        dirs = np.empty((n_sphere * n_sphere, 3))
        dw = np.empty(n_sphere * n_sphere)
        k = 0
        for i in range(n_sphere):
            for j in range(n_sphere):
                dirs[k] = (st[i] * math.cos(phi[j]), st[i] * math.sin(phi[j]), mu_p[i])
                dw[k] = w_p[i] * (2.0 * math.pi / n_sphere)
                k += 1
        k_small = _kernels.km_ball_assemble_core(
            nodes, axis0, inv_h, n, om, w_om, op.kernel.gamma, op.kernel.b_scale,
            op.state.rho, u[0], u[1], u[2], op.state.theta, op.theta_M, m,
            r_nodes, r_weights, dirs, dw)
    return KernelSplit(m=m, k_small=k_small, k_rest=kmat - k_small)


def entropy_production(F, kernel: KernelSpec, grid: VelocityGrid) -> float:
    """Discrete H-theorem functional, nonpositive term by term."""
    F = np.asarray(F, dtype=float)
    if np.any(F <= 0.0):
        raise ValueError("entropy production needs F > 0 on the lattice")
    om, w_om = kernel.s2_quadrature
    nodes, axis0, inv_h, n = _grid_args(grid)
    return float(_kernels.entropy_production_core(
        F, nodes, axis0, inv_h, n, grid.weight, om, w_om,
        kernel.gamma, kernel.b_scale))


def discrete_maxwellian(target_moments: np.ndarray, grid: VelocityGrid,
                        newton_tol: float = 1e-13, max_iter: int = 60) -> np.ndarray:
    """Lattice density exp(a + b.v + c|v|^2) matching discrete (rho, rho u, E).

    The analytic Maxwellian's lattice moments differ from its parameters by
    quadrature error, so conservation-exact relaxation needs this
    moment-matched form (it is also the lattice entropy minimizer).
    """
    rho, m1, m2, m3, energy = target_moments
    if rho <= 0.0:
        raise ValueError(f"vacuum cell: density {rho}")
    u = np.array([m1, m2, m3]) / rho
    theta = (energy / rho - float(u @ u)) / 3.0
    if theta <= 0.0:
        raise ValueError(f"non-positive temperature {theta}")
    basis = grid.moments_basis()
    params = np.array([
        math.log(rho * (2.0 * math.pi * theta) ** -1.5) - float(u @ u) / (2.0 * theta),
        u[0] / theta, u[1] / theta, u[2] / theta, -1.0 / (2.0 * theta),
    ])
    target = np.asarray(target_moments, dtype=float)
    scale = np.maximum(np.abs(target), rho)
    for _ in range(max_iter):
        m_vals = np.exp(basis @ params)
        mom = basis.T @ m_vals * grid.weight
        err = mom - target
        if np.max(np.abs(err) / scale) < newton_tol:
            return m_vals
        jac = (basis.T * m_vals) @ basis * grid.weight
        params = params - np.linalg.solve(jac, err)
    raise ArithmeticError("discrete Maxwellian Newton iteration did not converge")


def discrete_maxwellian_batch(target_moments: np.ndarray, grid: VelocityGrid,
                              newton_tol: float = 1e-13, max_iter: int = 60) -> np.ndarray:
    """Vectorized moment-matched lattice Maxwellians, one per row of targets."""
    tgt = np.atleast_2d(np.asarray(target_moments, dtype=float))
    rho = tgt[:, 0]
    if np.any(rho <= 0.0):
        raise ValueError("vacuum cell in batched Maxwellian matching")
    u = tgt[:, 1:4] / rho[:, None]
    theta = (tgt[:, 4] / rho - np.einsum("ci,ci->c", u, u)) / 3.0
    if np.any(theta <= 0.0):
        raise ValueError("non-positive temperature in batched Maxwellian matching")
    basis = grid.moments_basis()
    params = np.empty((len(rho), 5))
    params[:, 0] = np.log(rho * (2.0 * math.pi * theta) ** -1.5) \
        - np.einsum("ci,ci->c", u, u) / (2.0 * theta)
    params[:, 1:4] = u / theta[:, None]
    params[:, 4] = -1.0 / (2.0 * theta)
    scale = np.maximum(np.abs(tgt), rho[:, None])
    for _ in range(max_iter):
        m_vals = np.exp(params @ basis.T)
        mom = m_vals @ basis * grid.weight
        err = mom - tgt
        if np.max(np.abs(err) / scale) < newton_tol:
            return m_vals
        jac = np.einsum("cv,vi,vj->cij", m_vals, basis, basis) * grid.weight
        params = params - np.linalg.solve(jac, err)
    raise ArithmeticError("batched Maxwellian Newton did not converge")


def bgk_surrogate(F, grid: VelocityGrid, nu_bar: float) -> np.ndarray:
    """Relaxation collision model nu_bar (M[F] - F), conservation-exact."""
    F = np.asarray(F, dtype=float)
    moments = grid.moments_basis().T @ F * grid.weight
    m_match = discrete_maxwellian(moments, grid)
    return nu_bar * (m_match - F)
