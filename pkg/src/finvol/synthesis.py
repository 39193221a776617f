"""Construction of revolution profiles realizing prescribed growth functions.

Given an admissible nondecreasing lambda (the target isoperimetric
behavior), the tail of the profile is produced by integrating

    N'(r) = -lambda(N(r)),   N(R) = V/2,
    phi(r) = (lambda(N(r)) / omega)^(1/(n-1)),

which makes the implicit isoperimetric function of the result equal to
lambda along the tail.  The geodesic length is L = 2 int_0^(V/2) dr/lambda
(infinite exactly when the integral diverges).  A prescribed isocapacitary
target nu is reduced to this construction through

    lambda(s) = nu(s) / sqrt(nu'(s)),

after regularizing nu so that s nu'(s) stays comparable to nu(s).
The profile is completed on [0, R] by a one-parameter smooth cap whose
height is solved so that the cap carries exactly half the volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import funcs, revolution
from .funcs import (NONDECREASING, TabulatedMonotone, QuotientPreconditionError,
                    delta2_check, monotone_quotient_check, smoothing_chain)


class SynthesisError(ValueError):
    pass


class AdmissibilityError(ValueError):
    pass


# ---------------------------------------------------------------------------
# lambda from nu:  lambda = nu / sqrt(nu')
# ---------------------------------------------------------------------------

def regularize_slopes(nu, clamp=(1e-3, 1e3), window=5):
    """Local log-log slope of nu, smoothed and clamped.

    Returns (slopes at grid nodes, regularized nu values).  The
    regularized function integrates the clamped slope field, matched to
    nu at the top of the grid, which enforces s nu' ~ nu.
    """
    g, v = nu.grid, nu.values
    raw = np.diff(np.log(v)) / np.diff(np.log(g))
    # node slopes: average adjacent segment slopes, then a short running mean
    node = np.empty(g.size)
    node[0], node[-1] = raw[0], raw[-1]
    node[1:-1] = 0.5 * (raw[1:] + raw[:-1])
    if window > 1:
        kernel = np.ones(window) / window
        node = np.convolve(np.pad(node, window // 2, mode="edge"), kernel,
                           mode="valid")[: g.size]
    node = np.clip(node, clamp[0], clamp[1])
    # integrate slope field in log-log, anchored at the right endpoint
    logg = np.log(g)
    seg = 0.5 * (node[1:] + node[:-1]) * np.diff(logg)
    logv = np.concatenate([[0.0], np.cumsum(seg)])
    logv += math.log(v[-1]) - logv[-1]
    return node, np.exp(logv)


def lambda_from_nu(nu, clamp=(1e-3, 1e3)):
    """The isoperimetric target lambda = nu / sqrt(nu') for a given nu.

    Requires nu in the doubling class near 0.  nu is first replaced by an
    equivalent function with s nu'(s) ~ nu(s) (slope clamping); then
    lambda(s) = sqrt(s nu(s) / slope(s)), since nu' = slope * nu / s.
    """
    d2 = delta2_check(nu)
    if not d2.holds:
        raise AdmissibilityError(
            f"nu fails the doubling condition near 0 "
            f"(smallest-decade ratio {d2.smallest_decade_max:.3g})")
    slopes, v = regularize_slopes(nu, clamp)
    lam_vals = np.sqrt(nu.grid * v / slopes)
    return TabulatedMonotone(nu.grid, lam_vals, NONDECREASING, mono_tol=1e-3)


def check_inverse_identity(lam, nu, s_lo=None, s_hi=None):
    """Max relative error of int_s^a lambda^-2 dr = 1/nu(s) - 1/nu(a).

    The identity is exact in the continuum for lambda = nu/sqrt(nu'); the
    discrete version quantifies the tabulation error.
    """
    lo = lam.s_min if s_lo is None else s_lo
    hi = lam.s_max if s_hi is None else s_hi
    mask = (lam.grid >= lo) & (lam.grid <= hi)
    g = lam.grid[mask]
    segs = funcs.segment_integrals(g, lam.values[mask], vpow=-2.0)
    suffix = np.concatenate([np.cumsum(segs[::-1])[::-1], [0.0]])
    target = 1.0 / funcs.evaluate(nu, g) - 1.0 / funcs.evaluate(nu, g[-1])
    denom = np.maximum(target, 1e-300)
    return float(np.max(np.abs(suffix - target) / denom))


# ---------------------------------------------------------------------------
# the tail construction
# ---------------------------------------------------------------------------

def length_from_lambda(lam, v_half):
    """L = 2 int_0^(V/2) dr/lambda(r); inf iff the integral diverges at 0."""
    tail = funcs.tail_integral(lam, vpow=-1.0)
    if math.isinf(tail):
        return math.inf
    segs = funcs.segment_integrals(lam.grid, lam.values, vpow=-1.0)
    upto = np.interp(v_half, lam.grid, np.concatenate([[0.0], np.cumsum(segs)]))
    return 2.0 * (tail + upto)


def phi_from_lambda(lam, n, V, quotient_tol=1e-3):
    """Profile whose implicit isoperimetric function reproduces lam near 0.

    lam must be tabulated at least up to V/2 with lam(s)/s^(1/n') close to
    nondecreasing.  The result is a grid-backed profile with a smooth cap
    on [0, R] carrying volume V/2, and tail measure N(r) realized exactly
    on the tabulation grid.
    """
    if n < 2:
        raise ValueError("n >= 2 required")
    nprime = n / (n - 1.0)
    v_half = V / 2.0
    if lam.s_max < v_half * (1 - 1e-12):
        raise SynthesisError("lambda table must extend to V/2")

    rep = monotone_quotient_check(lam, 1.0 / nprime, s0=v_half,
                                  tol=max(quotient_tol, 0.2))
    if rep.direction != NONDECREASING:
        raise QuotientPreconditionError(
            f"lambda(s)/s^(1/n') not ~ nondecreasing on (0, {v_half:.3g}]"
            f" (drop {rep.up_violation:.2e})", s_violating=rep.s0)

    work = TabulatedMonotone(
        funcs.log_grid(lam.s_min, v_half, per_decade=64),
        funcs.evaluate(lam, funcs.log_grid(lam.s_min, v_half, per_decade=64)),
        NONDECREASING, mono_tol=1e-3)
    lam3 = smoothing_chain(work, n, tol=quotient_tol)

    L = length_from_lambda(lam3, v_half)
    R = L / 2.0 if math.isfinite(L) else 1.0

    # r(N) = R + int_N^(V/2) dr/lambda3: suffix integrals over the grid
    segs = funcs.segment_integrals(lam3.grid, lam3.values, vpow=-1.0)
    G = np.concatenate([np.cumsum(segs[::-1])[::-1], [0.0]])
    Ngrid = lam3.grid
    r_tail = R + G[::-1]              # ascending in r
    N_desc = Ngrid[::-1]
    lam_desc = lam3.values[::-1]
    omega = revolution.sphere_area(n)
    phi_tail = (lam_desc / omega) ** (1.0 / (n - 1.0))

    # tail derivative phi' = -phi * lambda3'(N)/(n-1), lambda3' from slopes
    slopes = np.diff(np.log(lam3.values)) / np.diff(np.log(lam3.grid))
    node_slope = np.empty(Ngrid.size)
    node_slope[0], node_slope[-1] = slopes[0], slopes[-1]
    node_slope[1:-1] = 0.5 * (slopes[1:] + slopes[:-1])
    dlam = node_slope * lam3.values / Ngrid
    dphi_tail = -phi_tail * dlam[::-1] / (n - 1.0)

    cap = _solve_cap(r_tail[0], phi_tail[0], dphi_tail[0], n, v_half, omega)

    def head_phi(r):
        return cap.phi(np.asarray(r, dtype=float))

    prof = revolution.grid_profile(
        r_tail, phi_tail, n=n, L=L, L0=R, family="synthesized-grid",
        params={"V": V, "R": R, "L": L, "cap": cap.describe()},
        head=(head_phi, r_tail[0]))

    base_dphi = prof.dphi

    def dphi(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < r_tail[0], cap.dphi(np.clip(x, 0.0, r_tail[0])),
                        np.interp(x, r_tail, dphi_tail))

    prof.dphi = dphi
    return prof


@dataclass
class _Cap:
    """Smooth C^1 cap on [0, R]: slope-1 ramp, plateau, log-cubic blend.

    ramp   [0, w]:  h * x(2 - x), x = r/w, w = 2h   (phi'(0) = 1)
    level  [w, b]:  h
    blend  [b, R]:  exp(cubic(r)) matching (h, slope 0) at b and
                    (phi_R, dphi_R) at R.
    """
    h: float
    w: float
    b: float
    R: float
    coeffs: np.ndarray   # cubic in (r - b) for log phi on [b, R]

    def phi(self, r):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        ramp = r < self.w
        x = np.clip(r / max(self.w, 1e-300), 0.0, 1.0)
        out[ramp] = self.h * (x * (2.0 - x))[ramp]
        mid = (~ramp) & (r < self.b)
        out[mid] = self.h
        blend = r >= self.b
        t = (r - self.b)[blend]
        out[blend] = np.exp(np.polyval(self.coeffs, t))
        return out

    def dphi(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        ramp = r < self.w
        x = np.clip(r / max(self.w, 1e-300), 0.0, 1.0)
        out[ramp] = (self.h * (2.0 - 2.0 * x) / self.w)[ramp]
        blend = r >= self.b
        t = (r - self.b)[blend]
        dc = np.polyder(self.coeffs)
        out[blend] = np.exp(np.polyval(self.coeffs, t)) * np.polyval(dc, t)
        return out

    def volume(self, n, omega):
        m = n - 1
        xs, ws = np.polynomial.legendre.leggauss(64)
        v1 = 0.0
        if self.w > 0:
            x = 0.5 * (xs + 1.0)
            v1 = self.w * 0.5 * float(np.dot(ws, (self.h * x * (2 - x)) ** m))
        v2 = (self.b - self.w) * self.h ** m
        t = 0.5 * (xs + 1.0) * (self.R - self.b)
        v3 = 0.5 * (self.R - self.b) * float(
            np.dot(ws, np.exp(m * np.polyval(self.coeffs, t))))
        return omega * (v1 + v2 + v3)

    def describe(self):
        return {"h": self.h, "w": self.w, "b": self.b, "R": self.R}


def _log_cubic(b, R, logh, logp, k):
    """Cubic c(t), t = r - b, with c(0)=logh, c'(0)=0, c(W)=logp, c'(W)=k."""
    W = R - b
    A = np.array([
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 0.0],
        [W ** 3, W ** 2, W, 1.0],
        [3 * W ** 2, 2 * W, 1.0, 0.0],
    ])
    rhs = np.array([logh, 0.0, logp, k])
    return np.linalg.solve(A, rhs)


def _solve_cap(R, phi_R, dphi_R, n, target_volume, omega):
    """Cap whose volume equals V/2, solving for the plateau height."""
    if phi_R <= 0:
        raise SynthesisError("tail start height must be positive")
    k = dphi_R / phi_R
    base_width = min(R / 2.0, 4.0 / max(abs(k), 0.5))

    def make(h, width3):
        b = R - width3
        w = min(2.0 * h, 0.98 * b)
        coeffs = _log_cubic(b, R, math.log(h), math.log(phi_R), k)
        return _Cap(h=h, w=w, b=b, R=R, coeffs=coeffs)

    for shrink in range(12):
        width3 = base_width / 2 ** shrink
        b = R - width3
        h_lo, h_hi = 1e-10, 0.49 * b

        def vol_err(h):
            return make(h, width3).volume(n, omega) - target_volume

        try:
            lo_val, hi_val = vol_err(h_lo), vol_err(h_hi)
        except (OverflowError, ValueError):
            continue
        if lo_val > 0 or hi_val < 0:
            continue
        h = optimize.brentq(vol_err, h_lo, h_hi, xtol=1e-14, rtol=1e-12)
        return make(h, width3)
    raise SynthesisError("volume balance unreachable with the cap family")


# ---------------------------------------------------------------------------
# nu -> profile
# ---------------------------------------------------------------------------

def fitted_alpha(nu, margin=0.9, floor=1e-3):
    """A positive exponent alpha with nu(s)/s^alpha ~ nondecreasing (n = 2).

    Taken as a fraction of the smallest local log-log slope of nu.
    """
    raw = np.diff(np.log(nu.values)) / np.diff(np.log(nu.grid))
    alpha = margin * float(np.min(raw))
    return max(alpha, floor)


def phi_from_nu(nu, n, V, quotient_tol=1e-3):
    """Profile realizing a prescribed isocapacitary behavior nu near 0.

    Preconditions: nu in the doubling class; for n >= 3 the quotient
    nu(s)/s^((n-2)/n) must be ~ nondecreasing, for n = 2 some positive
    exponent must work (the fitted slope floor is used).  The construction
    goes through lambda = nu/sqrt(nu') and the isoperimetric synthesis.
    """
    d2 = delta2_check(nu)
    if not d2.holds:
        raise AdmissibilityError("nu fails the doubling condition near 0")
    if n >= 3:
        a = (n - 2.0) / n
        rep = monotone_quotient_check(nu, a, tol=max(quotient_tol, 0.2))
        if rep.direction != NONDECREASING:
            raise AdmissibilityError(
                f"nu(s)/s^((n-2)/n) not ~ nondecreasing"
                f" (drop {rep.up_violation:.2e}); decays slower than the"
                f" compact rate")
        alpha = a
    else:
        alpha = fitted_alpha(nu)
        rep = monotone_quotient_check(nu, alpha, tol=max(quotient_tol, 0.2))
        if rep.direction != NONDECREASING:
            raise AdmissibilityError(
                f"no positive exponent with nu/s^alpha ~ nondecreasing"
                f" (tried alpha = {alpha:.3g})")

    lam = lambda_from_nu(nu)
    prof = phi_from_lambda(lam, n, V, quotient_tol=quotient_tol)
    prof.params["alpha_used"] = alpha
    prof.params["inverse_identity_err"] = check_inverse_identity(
        lam, nu, s_lo=nu.s_min * 10, s_hi=min(nu.s_max, V / 2) / 10)
    return prof


def length_is_infinite_for_nu(nu):
    """Dichotomy: L = inf iff int_0 dr/sqrt(r nu(r)) diverges."""
    e = nu.tail_exponent
    # integrand ~ r^(-(1+e)/2): divergent iff (1+e)/2 >= 1
    return (1.0 + e) / 2.0 >= 1.0 - 1e-9
