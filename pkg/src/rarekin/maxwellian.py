"""Maxwellians, the five-dimensional collision-invariant basis, the macro
projection, collision frequencies, and the global reference frame used by
weighted estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import roots_legendre

from .velocity_grid import VelocityGrid
from .waves import GasState

__all__ = [
    "MaxwellFrame",
    "maxwellian",
    "sqrt_maxwellian",
    "chi_basis",
    "project_P",
    "Projector",
    "collision_frequency",
    "choose_theta_M",
    "mu_comparison",
    "min_weight_exponent",
]


def maxwellian(state: GasState, v: np.ndarray) -> np.ndarray:
    """Maxwellian density rho (2 pi theta)^(-3/2) exp(-|v-u|^2 / (2 theta))."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    du = v - state.u_vec
    q = np.einsum("ij,ij->i", du, du)
    out = state.rho * (2.0 * math.pi * state.theta) ** (-1.5) * np.exp(-q / (2.0 * state.theta))
    return out


def sqrt_maxwellian(state: GasState, v: np.ndarray) -> np.ndarray:
    v = np.atleast_2d(np.asarray(v, dtype=float))
    du = v - state.u_vec
    q = np.einsum("ij,ij->i", du, du)
    return math.sqrt(state.rho) * (2.0 * math.pi * state.theta) ** (-0.75) * np.exp(-q / (4.0 * state.theta))


def chi_basis(state: GasState, v: np.ndarray) -> np.ndarray:
    """Orthonormal spanning set of the collision-invariant space, shape (5, n).

    chi_0 = sqrt(mu)/sqrt(rho); chi_i = (v_i - u_i) sqrt(mu)/sqrt(rho theta);
    chi_4 = (|v-u|^2/theta - 3) sqrt(mu)/sqrt(6 rho).
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    sq = sqrt_maxwellian(state, v)
    du = v - state.u_vec
    q = np.einsum("ij,ij->i", du, du)
    rho, theta = state.rho, state.theta
    chi = np.empty((5, len(v)))
    chi[0] = sq / math.sqrt(rho)
    fac = 1.0 / math.sqrt(rho * theta)
    for i in range(3):
        chi[1 + i] = du[:, i] * fac * sq
    chi[4] = (q / theta - 3.0) * sq / math.sqrt(6.0 * rho)
    return chi


class Projector:
    """Discrete orthogonal projection onto span(chi_0..chi_4).

    Uses the inverse of the discrete Gram matrix, so the projector is exactly
    idempotent and self-adjoint in the lattice inner product even though the
    sampled basis is only orthonormal up to quadrature error.
    """

    def __init__(self, state: GasState, grid: VelocityGrid):
        self.state = state
        self.grid = grid
        self.chi = chi_basis(state, grid.nodes)
        gram = (self.chi @ self.chi.T) * grid.weight
        self._gram_inv = np.linalg.inv(gram)

    def coefficients(self, g: np.ndarray) -> np.ndarray:
        raw = (self.chi @ np.atleast_2d(g).T) * self.grid.weight
        return (self._gram_inv @ raw).T

    def apply(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        coef = self.coefficients(g)
        out = coef @ self.chi
        return out[0] if g.ndim == 1 else out

    def complement(self, g: np.ndarray) -> np.ndarray:
        return np.asarray(g, dtype=float) - self.apply(g)


def project_P(g: np.ndarray, state: GasState, grid: VelocityGrid) -> np.ndarray:
    """Macroscopic part of a velocity field: projection onto the chi span."""
    return Projector(state, grid).apply(g)


def _angular_kernel_mass(b_scale: float) -> float:
    """Integral of b(theta) = b_scale |cos theta| over the unit sphere."""
    return 2.0 * math.pi * b_scale


_GL_NODES, _GL_WEIGHTS = roots_legendre(64)


def _gl_quad(f, a: float, b: float) -> float:
    x = 0.5 * (b - a) * _GL_NODES + 0.5 * (a + b)
    return 0.5 * (b - a) * float(np.sum(_GL_WEIGHTS * f(x)))


def collision_frequency(state: GasState, kernel, v) -> np.ndarray | float:
    """nu(v): angular kernel mass times the |v-u|^gamma moment of mu.

    The 3D integral is reduced to one radial integral around the bulk
    velocity; Gauss-Legendre panels are split at the |v - u| kink so each
    piece is smooth.  gamma must lie in (-3, 1].
    """
    gam = kernel.gamma
    if not (-3.0 < gam <= 1.0):
        raise ValueError(f"kernel exponent must be in (-3, 1], got {gam}")
    b0 = _angular_kernel_mass(kernel.b_scale)
    rho, theta = state.rho, state.theta
    v = np.atleast_2d(np.asarray(v, dtype=float))
    z = np.linalg.norm(v - state.u_vec, axis=1)
    rmax = float(np.max(z)) + 12.0 * math.sqrt(theta)
    pref = rho * (2.0 * math.pi * theta) ** (-1.5)
    out = np.empty(len(z))
    a = gam + 2.0
    for k, zk in enumerate(z):
        if zk < 1e-12 * math.sqrt(theta):
            # closed form at the bulk velocity
            out[k] = b0 * rho * (2.0 * theta) ** (0.5 * gam) * gamma_fn(0.5 * (3.0 + gam)) * 2.0 / math.sqrt(math.pi)
            continue

        def radial(r, zk=zk):
            gauss = r * np.exp(-r * r / (2.0 * theta))
            with np.errstate(invalid="ignore"):
                shell = (zk + r) ** a - np.abs(zk - r) ** a
            return gauss * shell

        val = _gl_quad(radial, 0.0, zk) + _gl_quad(radial, zk, max(rmax, 2.0 * zk))
        out[k] = b0 * pref * (2.0 * math.pi / (a * zk)) * val
    return float(out[0]) if len(out) == 1 else out


def choose_theta_M(theta_minus: float, theta_plus: float) -> float:
    """Reference temperature: midpoint of the admissible band.

    Both two-sided Gaussian comparisons hold only for theta_M strictly
    between max(theta)/2 and min(theta); that band is nonempty exactly when
    the end-state temperatures are within a factor two of each other.
    """
    if theta_minus <= 0.0 or theta_plus <= 0.0:
        raise ValueError("temperatures must be positive")
    lo = 0.5 * max(theta_minus, theta_plus)
    hi = min(theta_minus, theta_plus)
    if not lo < hi:
        raise ValueError(
            f"incompatible wave strength: max theta {max(theta_minus, theta_plus)} "
            f">= 2 min theta {2*min(theta_minus, theta_plus)}"
        )
    return 0.5 * (lo + hi)


def min_weight_exponent(gamma: float) -> float:
    """Smallest admissible polynomial-weight exponent, 9/4 + 2(3 - gamma)."""
    return 9.0 / 4.0 + 2.0 * (3.0 - gamma)


@dataclass(frozen=True)
class MaxwellFrame:
    """Local state plus the global reference Maxwellian data.

    theta_M is the reference temperature of the global Maxwellian, beta the
    polynomial weight exponent, and gamma the kernel exponent the weight was
    sized for.
    """

    state: GasState
    theta_M: float
    beta: float
    gamma: float

    def __post_init__(self):
        if self.theta_M <= 0.0:
            raise ValueError("theta_M must be positive")
        if self.beta < min_weight_exponent(self.gamma) - 1e-12:
            raise ValueError(
                f"weight exponent {self.beta} below the admissible minimum "
                f"{min_weight_exponent(self.gamma)}"
            )

    @classmethod
    def for_state(cls, state: GasState, theta_M: float, gamma: float) -> "MaxwellFrame":
        return cls(state=state, theta_M=theta_M, beta=min_weight_exponent(gamma), gamma=gamma)

    def mu_local(self, v) -> np.ndarray:
        return maxwellian(self.state, v)

    def mu_global(self, v) -> np.ndarray:
        v = np.atleast_2d(np.asarray(v, dtype=float))
        q = np.einsum("ij,ij->i", v, v)
        return (2.0 * math.pi * self.theta_M) ** (-1.5) * np.exp(-q / (2.0 * self.theta_M))

    def sqrt_mu_global(self, v) -> np.ndarray:
        v = np.atleast_2d(np.asarray(v, dtype=float))
        q = np.einsum("ij,ij->i", v, v)
        return (2.0 * math.pi * self.theta_M) ** (-0.75) * np.exp(-q / (4.0 * self.theta_M))

    def weight(self, v) -> np.ndarray:
        v = np.atleast_2d(np.asarray(v, dtype=float))
        q = np.einsum("ij,ij->i", v, v)
        return (1.0 + q) ** self.beta


def mu_comparison(frame: MaxwellFrame, grid: VelocityGrid, states=None):
    """Fit (C, alpha) so that mu_M / C <= mu <= C mu_M^alpha on the lattice.

    alpha is placed midway between 1/2 and the largest exponent compatible
    with the Gaussian decay rates, theta_M / max(theta); C is read off the
    lattice ratio extrema over the supplied states.
    """
    if states is None:
        states = [frame.state]
    theta_max = max(s.theta for s in states)
    alpha_cap = min(1.0, frame.theta_M / theta_max)
    if alpha_cap <= 0.5:
        raise ValueError(
            f"no admissible alpha in (1/2, 1): theta_M/theta_max = {alpha_cap:.4f};"
            " reference temperature incompatible with the sampled states"
        )
    alpha = 0.5 * (0.5 + alpha_cap)
    mu_M = frame.mu_global(grid.nodes)
    c_needed = 1.0
    for s in states:
        mu = maxwellian(s, grid.nodes)
        c_lower = float(np.max(mu_M / mu))
        c_upper = float(np.max(mu / mu_M**alpha))
        c_needed = max(c_needed, c_lower, c_upper)
    return c_needed, alpha
