"""Planar 1-rarefaction waves of the compressible Euler system.

Exact self-similar wave, its smooth tanh-data approximation obtained by
following Burgers characteristics, analytic space/time derivatives, and the
decay / approximation-quality diagnostics used by the verification harness.

Units are nondimensional (gas constant 1), so the pressure is p = rho*theta
and the entropy is s = ln(theta) - (2/3) ln(rho).  The characteristic speed
of the first acoustic family is u1 - sqrt(5/3) * rho^(1/3) * exp(s/2) and the
quantity u1 + sqrt(15) * rho^(1/3) * exp(s/2) is constant across the wave.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

SQRT_5_3 = math.sqrt(5.0 / 3.0)
SQRT_15 = math.sqrt(15.0)
# spread between the two Riemann-invariant slopes; z = rho^(1/3) e^(s/2)
# changes by -(dw) / INVARIANT_GAP across the fan
INVARIANT_GAP = SQRT_15 + SQRT_5_3

__all__ = [
    "GasState",
    "WaveEndStates",
    "SmoothWaveParams",
    "WaveDerivatives",
    "entropy",
    "lambda1",
    "connect_right_state",
    "exact_wave",
    "exact_wave_fields",
    "burgers_smooth",
    "smooth_wave",
    "smooth_wave_fields",
    "wave_derivatives",
    "decay_norms",
    "sup_distance",
    "norm_domain_halfwidth",
]


class VacuumError(ValueError):
    """Derived density would be non-positive."""


class NotARarefactionError(ValueError):
    """Requested right state lies on the compressive side of the left state."""


@dataclass(frozen=True)
class GasState:
    """Macroscopic fluid state (rho, u, theta) at a point."""

    rho: float
    u: tuple[float, float, float]
    theta: float

    def __post_init__(self):
        if not (self.rho > 0.0 and math.isfinite(self.rho)):
            raise ValueError(f"density must be positive and finite, got {self.rho}")
        if not (self.theta > 0.0 and math.isfinite(self.theta)):
            raise ValueError(f"temperature must be positive and finite, got {self.theta}")
        if not all(math.isfinite(c) for c in self.u):
            raise ValueError(f"velocity components must be finite, got {self.u}")

    @property
    def u_vec(self) -> np.ndarray:
        return np.array(self.u, dtype=float)

    @property
    def pressure(self) -> float:
        return self.rho * self.theta

    @property
    def entropy(self) -> float:
        return entropy(self.rho, self.theta)


def entropy(rho, theta):
    """Specific entropy ln(theta) - (2/3) ln(rho) of the nondimensional gas."""
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(rho <= 0.0) or np.any(theta <= 0.0):
        raise ValueError("entropy requires rho > 0 and theta > 0")
    out = np.log(theta) - (2.0 / 3.0) * np.log(rho)
    return float(out) if out.ndim == 0 else out


def lambda1(rho, u1, s):
    """First characteristic speed u1 - sqrt(5/3) rho^(1/3) exp(s/2)."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0.0):
        raise ValueError("lambda1 requires rho > 0")
    out = np.asarray(u1, dtype=float) - SQRT_5_3 * np.cbrt(rho) * np.exp(0.5 * np.asarray(s, dtype=float))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class WaveEndStates:
    """Left/right constant states joined by a single 1-rarefaction."""

    left: GasState
    right: GasState
    s_plus: float
    w_minus: float
    w_plus: float

    @property
    def riemann_invariant(self) -> float:
        """u1 + sqrt(15) rho^(1/3) exp(s/2), common to both end states."""
        return self.right.u[0] + SQRT_15 * np.cbrt(self.right.rho) * math.exp(0.5 * self.s_plus)

    @property
    def wave_strength(self) -> float:
        return self.w_plus - self.w_minus

    @property
    def theta_compatible(self) -> bool:
        """True when max(theta-, theta+) < 2 min(theta-, theta+)."""
        th = (self.left.theta, self.right.theta)
        return max(th) < 2.0 * min(th)


def _state_from_wavespeed(w, riemann_inv, s):
    """Invert (characteristic speed, invariant, entropy) to (rho, u1, theta).

    Supports numpy broadcasting in w.
    """
    z = (np.asarray(riemann_inv, dtype=float) - np.asarray(w, dtype=float)) / INVARIANT_GAP
    if np.any(z <= 0.0):
        raise VacuumError("wave speed beyond vacuum: rho^(1/3) exp(s/2) <= 0")
    theta = z * z
    rho = (z * math.exp(-0.5 * s)) ** 3
    u1 = np.asarray(w, dtype=float) + SQRT_5_3 * z
    return rho, u1, theta


def connect_right_state(left: GasState, w_plus: float, require_theorem_compatible: bool = False) -> WaveEndStates:
    """Build the end-state pair whose 1-rarefaction ends at speed w_plus.

    The right state shares the left state's entropy and 2-Riemann invariant;
    its first characteristic speed equals w_plus.
    """
    if abs(left.u[1]) > 0.0 or abs(left.u[2]) > 0.0:
        raise ValueError("planar wave end states need u2 = u3 = 0")
    s_plus = entropy(left.rho, left.theta)
    w_minus = lambda1(left.rho, left.u[0], s_plus)
    if w_plus < w_minus:
        raise NotARarefactionError(
            f"w_plus={w_plus} < lambda1(left)={w_minus}: compressive data, not a rarefaction"
        )
    riemann_inv = left.u[0] + SQRT_15 * np.cbrt(left.rho) * math.exp(0.5 * s_plus)
    rho, u1, theta = _state_from_wavespeed(w_plus, riemann_inv, s_plus)
    right = GasState(float(rho), (float(u1), 0.0, 0.0), float(theta))
    ends = WaveEndStates(left=left, right=right, s_plus=s_plus, w_minus=float(w_minus), w_plus=float(w_plus))
    if require_theorem_compatible and not ends.theta_compatible:
        raise ValueError(
            "end-state temperatures violate max(theta-, theta+) < 2 min(theta-, theta+)"
        )
    return ends


def exact_wave_fields(endstates: WaveEndStates, t: float, x1):
    """Exact self-similar wave (rho, u1, theta) at x1 (array-friendly)."""
    if t <= 0.0:
        raise ValueError("the exact wave has a t=0 discontinuity; need t > 0")
    w = np.clip(np.asarray(x1, dtype=float) / t, endstates.w_minus, endstates.w_plus)
    return _state_from_wavespeed(w, endstates.riemann_invariant, endstates.s_plus)


def exact_wave(endstates: WaveEndStates, t: float, x1: float) -> GasState:
    """Exact self-similar wave state at a point, t > 0."""
    rho, u1, theta = exact_wave_fields(endstates, t, float(x1))
    return GasState(float(rho), (float(u1), 0.0, 0.0), float(theta))


@dataclass(frozen=True)
class SmoothWaveParams:
    """End states plus the tanh smoothing width sigma of the initial data."""

    endstates: WaveEndStates
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0.0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def initial_speed(self, x1):
        """Smoothed characteristic-speed data at t = 0."""
        e = self.endstates
        mid = 0.5 * (e.w_plus + e.w_minus)
        half = 0.5 * (e.w_plus - e.w_minus)
        return mid + half * np.tanh(np.asarray(x1, dtype=float) / self.sigma)

    def initial_speed_slope(self, x1):
        e = self.endstates
        half = 0.5 * (e.w_plus - e.w_minus)
        y = np.abs(np.asarray(x1, dtype=float)) / self.sigma
        # sech^2 written overflow-free for saturated arguments
        sech = 2.0 * np.exp(-y) / (1.0 + np.exp(-2.0 * y))
        return half / self.sigma * sech * sech


# Width 1e-13 for the bisection stage of the characteristic-foot solve; a
# single Newton step afterwards lands at machine precision.
_BISECT_WIDTH = 1e-13
_MAX_BISECT = 200


def _characteristic_foot(params: SmoothWaveParams, t: float, x1):
    """Solve x1 = x0 + w_sigma(x0) t for the characteristic foot x0.

    The map is strictly increasing in x0 (the smoothed data is increasing and
    t >= 0), so bisection on [x1 - w_plus t, x1 - w_minus t] cannot fail.
    Vectorized over x1.
    """
    e = params.endstates
    x1 = np.asarray(x1, dtype=float)
    scalar = x1.ndim == 0
    x1 = np.atleast_1d(x1)
    if t < 0.0:
        raise ValueError("need t >= 0")
    if t == 0.0 or e.w_plus == e.w_minus:
        out = x1 - e.w_minus * t
        return float(out[0]) if scalar else out

    # widen the exact bracket by a sliver so endpoint rounding at saturated
    # tanh values cannot flip the residual sign
    pad = 1e-9 * (1.0 + np.abs(x1) + (abs(e.w_plus) + abs(e.w_minus)) * t)
    lo = x1 - e.w_plus * t - pad
    hi = x1 - e.w_minus * t + pad

    def resid(x0):
        return x0 + params.initial_speed(x0) * t - x1

    flo = resid(lo)
    fhi = resid(hi)
    if np.any(flo > 0.0) or np.any(fhi < 0.0):
        raise ArithmeticError("characteristic bracket failed; data not monotone?")
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        fm = resid(mid)
        neg = fm < 0.0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
        if np.max(hi - lo) < _BISECT_WIDTH:
            break
    else:
        raise ArithmeticError("characteristic-foot bisection did not converge")
    x0 = 0.5 * (lo + hi)
    # one Newton polish; the derivative 1 + t w' is >= 1 so this is safe
    x0 = x0 - resid(x0) / (1.0 + t * params.initial_speed_slope(x0))
    return float(x0[0]) if scalar else x0


def burgers_smooth(params: SmoothWaveParams, t: float, x1):
    """Smoothed characteristic speed w(t, x1) from Burgers characteristics."""
    x0 = _characteristic_foot(params, t, x1)
    out = params.initial_speed(x0)
    return float(out) if np.ndim(out) == 0 else out


def smooth_wave_fields(params: SmoothWaveParams, t: float, x1):
    """Smooth approximate wave (rho, u1, theta) at x1 (array-friendly)."""
    w = burgers_smooth(params, t, x1)
    e = params.endstates
    return _state_from_wavespeed(w, e.riemann_invariant, e.s_plus)


def smooth_wave(params: SmoothWaveParams, t: float, x1: float) -> GasState:
    rho, u1, theta = smooth_wave_fields(params, t, float(x1))
    return GasState(float(rho), (float(u1), 0.0, 0.0), float(theta))


@dataclass(frozen=True)
class WaveDerivatives:
    """Smooth-wave values and exact space/time first derivatives at (t, x1)."""

    w: np.ndarray
    w_x: np.ndarray
    w_t: np.ndarray
    rho: np.ndarray
    u1: np.ndarray
    theta: np.ndarray
    rho_x: np.ndarray
    rho_t: np.ndarray
    u1_x: np.ndarray
    u1_t: np.ndarray
    theta_x: np.ndarray
    theta_t: np.ndarray


def wave_derivatives(params: SmoothWaveParams, t: float, x1) -> WaveDerivatives:
    """Analytic first derivatives of (w, rho, u1, theta) for the smooth wave.

    The chain rule through the characteristic solution gives
    dw/dx1 = w'(x0) / (1 + t w'(x0)) and dw/dt = -w dw/dx1; the gas fields
    follow from the invariant inversion, with z = rho^(1/3) exp(s/2).
    """
    e = params.endstates
    x0 = _characteristic_foot(params, t, x1)
    w = params.initial_speed(x0)
    slope = params.initial_speed_slope(x0)
    w_x = slope / (1.0 + t * slope)
    w_t = -w * w_x

    z = (e.riemann_invariant - w) / INVARIANT_GAP
    dz_dw = -1.0 / INVARIANT_GAP
    rho = (z * math.exp(-0.5 * e.s_plus)) ** 3
    u1 = w + SQRT_5_3 * z
    theta = z * z
    drho_dw = 3.0 * z * z * math.exp(-1.5 * e.s_plus) * dz_dw
    du1_dw = 1.0 + SQRT_5_3 * dz_dw
    dtheta_dw = 2.0 * z * dz_dw
    asarr = np.asarray
    return WaveDerivatives(
        w=asarr(w), w_x=asarr(w_x), w_t=asarr(w_t),
        rho=asarr(rho), u1=asarr(u1), theta=asarr(theta),
        rho_x=asarr(drho_dw * w_x), rho_t=asarr(drho_dw * w_t),
        u1_x=asarr(du1_dw * w_x), u1_t=asarr(du1_dw * w_t),
        theta_x=asarr(dtheta_dw * w_x), theta_t=asarr(dtheta_dw * w_t),
    )


def norm_domain_halfwidth(params: SmoothWaveParams, t: float) -> float:
    """Truncation half-width for x1 integrals; tanh tails are < 1e-17 there."""
    return abs(params.endstates.w_plus) * t + 40.0 * params.sigma + 10.0


def _dfield_dw(params: SmoothWaveParams, w):
    """d(rho, u1, theta)/dw along the wave at speed value w."""
    e = params.endstates
    z = (e.riemann_invariant - np.asarray(w)) / INVARIANT_GAP
    dz = -1.0 / INVARIANT_GAP
    return (
        3.0 * z * z * math.exp(-1.5 * e.s_plus) * dz,
        (1.0 + SQRT_5_3 * dz) * np.ones_like(z),
        2.0 * z * dz,
    )


def decay_norms(params: SmoothWaveParams, t: float, p) -> dict[str, float]:
    """L^p norms of d/dx1 of (rho, u1, theta, w) for the smooth wave.

    p is 1, 2 or the string/None/inf spelling of the sup norm.  Quadrature is
    done in the characteristic-foot variable, where the integrand is smooth
    and the change of variables dx1 = (1 + t w') dx0 is exact.
    """
    if t < 0.0:
        raise ValueError("need t >= 0")
    if p in (1, 2):
        p_val = int(p)
    elif p in (np.inf, math.inf, "inf"):
        p_val = None
    else:
        raise ValueError("p must be 1, 2 or inf")

    e = params.endstates
    if e.w_plus == e.w_minus:
        return {"rho": 0.0, "u1": 0.0, "theta": 0.0, "w": 0.0}
    half_x0 = 40.0 * params.sigma + 10.0

    def dx_fields(x0):
        wp = params.initial_speed_slope(x0)
        w_x = wp / (1.0 + t * wp)
        dr, du, dth = _dfield_dw(params, params.initial_speed(x0))
        return w_x, dr * w_x, du * w_x, dth * w_x, wp

    if p_val is None:
        xs = np.linspace(-half_x0, half_x0, 20001)
        w_x, r_x, u_x, th_x, _ = dx_fields(xs)
        out = {}
        for name, vals in (("w", w_x), ("rho", r_x), ("u1", u_x), ("theta", th_x)):
            i = int(np.argmax(np.abs(vals)))
            a = xs[max(i - 1, 0)]
            b = xs[min(i + 1, len(xs) - 1)]
            idx = {"w": 0, "rho": 1, "u1": 2, "theta": 3}[name]
            res = optimize.minimize_scalar(
                lambda x: -abs(dx_fields(x)[idx]), bounds=(a, b), method="bounded",
                options={"xatol": 1e-12},
            )
            out[name] = max(float(-res.fun), float(np.abs(vals[i])))
        return out

    if p_val == 1:
        # all profiles monotone in x1, so the L1 norm telescopes exactly
        w_lo = params.initial_speed(-half_x0)
        w_hi = params.initial_speed(half_x0)
        rho_lo, u_lo, th_lo = _state_from_wavespeed(w_lo, e.riemann_invariant, e.s_plus)
        rho_hi, u_hi, th_hi = _state_from_wavespeed(w_hi, e.riemann_invariant, e.s_plus)
        return {
            "w": float(w_hi - w_lo),
            "rho": float(abs(rho_hi - rho_lo)),
            "u1": float(abs(u_hi - u_lo)),
            "theta": float(abs(th_hi - th_lo)),
        }

    out = {}
    for idx, name in ((0, "w"), (1, "rho"), (2, "u1"), (3, "theta")):
        def integrand(x0, idx=idx):
            vals = dx_fields(x0)
            jac = 1.0 + t * vals[4]
            return vals[idx] ** 2 * jac
        val, _ = integrate.quad(integrand, -half_x0, half_x0, limit=200,
                                epsabs=1e-14, epsrel=1e-12)
        out[name] = math.sqrt(max(val, 0.0))
    return out


def sup_distance(params: SmoothWaveParams, t: float, n_samples: int = 20001) -> float:
    """sup over x1 of |smooth - exact| in (rho, u1, theta), max over components."""
    if t <= 0.0:
        raise ValueError("exact wave needs t > 0")
    e = params.endstates
    if e.w_plus == e.w_minus:
        return 0.0
    half = norm_domain_halfwidth(params, t)
    lo = e.w_minus * t - half
    hi = e.w_plus * t + half
    xs = np.linspace(lo, hi, n_samples)
    rs, us, ths = smooth_wave_fields(params, t, xs)
    re, ue, the = exact_wave_fields(e, t, xs)
    diff = np.maximum(np.abs(rs - re), np.maximum(np.abs(us - ue), np.abs(ths - the)))
    i = int(np.argmax(diff))
    a, b = xs[max(i - 2, 0)], xs[min(i + 2, n_samples - 1)]

    def neg_gap(x):
        r1, u1v, t1 = smooth_wave_fields(params, t, x)
        r2, u2v, t2 = exact_wave_fields(e, t, x)
        return -max(abs(r1 - r2), abs(u1v - u2v), abs(t1 - t2))

    res = optimize.minimize_scalar(neg_gap, bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-12})
    return max(float(-res.fun), float(diff[i]))
