"""Geometry of n-dimensional manifolds of revolution with finite volume.

A profile phi: [0, L) -> [0, inf) with phi(0) = 0, phi'(0) = 1 defines the
metric dr^2 + phi(r)^2 domega^2 on a ball.  The module computes volumes,
boundary areas, the implicit isoperimetric surrogate lambda0 defined by

    lambda0( omega * int_r^L phi^(n-1) ) = omega * phi(r)^(n-1)

on the decreasing convex tail, and the isocapacitary surrogate

    nu(s) = 1 / int_s^(V/2) dr / lambda0(r)^2 .

Closed-form families (sphere, exponential, power cusp) carry exact tail
volumes; grid-backed profiles integrate their log-linear interpolant
segment-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from . import funcs
from .funcs import TabulatedMonotone, NONDECREASING

QUAD_OPTS = dict(epsabs=1e-14, epsrel=1e-10, limit=200)

NU_SENTINEL = 1e300


class GeometryError(ValueError):
    pass


def sphere_area(n):
    """Area omega_{n-1} of the unit (n-1)-sphere."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass
class Profile:
    """Revolution profile with derivative, family metadata and validity data.

    L may be math.inf.  L0 marks the start of the decreasing convex tail.
    volume_tail_fn, when set, returns the exact tail volume
    omega * int_r^L phi^(n-1) and is preferred over quadrature.
    grid_r / grid_phi back grid profiles (log phi interpolated linearly).
    """

    n: int
    L: float
    L0: float
    phi: callable
    dphi: callable
    family: str = "custom"
    params: dict = field(default_factory=dict)
    volume_tail_fn: callable = None
    grid_r: np.ndarray = None
    grid_phi: np.ndarray = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def omega(self):
        return sphere_area(self.n)

    @property
    def total_volume(self):
        if "V" not in self._cache:
            self._cache["V"] = volume_tail(self, 0.0)
        return self._cache["V"]

    @property
    def half_volume(self):
        return 0.5 * self.total_volume

    def weight(self, r):
        """The area density phi(r)^(n-1)."""
        return np.asarray(self.phi(r)) ** (self.n - 1)


@dataclass(frozen=True)
class GeometrySummary:
    total_volume: float
    half_volume: float
    omega: float


def summarize(p):
    v = p.total_volume
    return GeometrySummary(v, v / 2.0, p.omega)


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------

def _cap_factor(r):
    # r + r^2 - r^3 = r (1 + r - r^2): value 0 and slope 1 at r = 0,
    # value 1 and slope 0 at r = 1, positive in between.
    return r * (1.0 + r - r * r)


def _cap_factor_d(r):
    return 1.0 + 2.0 * r - 3.0 * r * r


def exponential_profile(alpha, n=2):
    """Profile equal to exp(-r^alpha) for r >= 1, smoothly capped on [0, 1].

    The cap (r + r^2 - r^3) * exp(-r^alpha) matches value and slope of the
    tail at r = 1 and gives phi(0) = 0, phi'(0) = 1.  The tail is
    decreasing and convex from r = 1 on for every alpha > 0.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")

    def phi(r):
        r = np.asarray(r, dtype=float)
        tail = np.exp(-np.abs(r) ** alpha)
        cap = np.where(r < 1.0, _cap_factor(np.clip(r, 0.0, 1.0)), 1.0)
        return cap * tail

    def dphi(r):
        r = np.asarray(r, dtype=float)
        rr = np.maximum(r, 1e-300)
        tail = np.exp(-rr ** alpha)
        dtail = -alpha * rr ** (alpha - 1.0) * tail
        rc = np.clip(r, 0.0, 1.0)
        return np.where(r < 1.0,
                        _cap_factor_d(rc) * tail + _cap_factor(rc) * dtail,
                        dtail)

    return Profile(n=n, L=math.inf, L0=1.0, phi=phi, dphi=dphi,
                   family="exponential", params={"alpha": alpha},
                   volume_tail_fn=lambda r: _exp_volume_tail(r, alpha, n))


def _exp_volume_tail(r, alpha, n):
    """omega * int_r^inf cap(rho)*exp(-(n-1) rho^alpha) d rho.

    For rho >= 1 the integrand is exp(-(n-1) rho^alpha); substituting
    u = (n-1) rho^alpha turns the tail into an upper incomplete gamma.
    The capped part over [r, 1] is done by fixed Gauss-Legendre.
    """
    omega = sphere_area(n)
    m = n - 1
    a = 1.0 / alpha

    def gamma_tail(x):
        z = m * x ** alpha
        return m ** (-a) / alpha * special.gammaincc(a, z) * math.gamma(a)

    r = float(r)
    if r >= 1.0:
        return omega * gamma_tail(r)
    xs, ws = np.polynomial.legendre.leggauss(48)
    mid, half = (1.0 + r) / 2.0, (1.0 - r) / 2.0
    rho = mid + half * xs
    capped = (_cap_factor(rho) * np.exp(-rho ** alpha)) ** m
    return omega * (float(np.dot(ws, capped)) * half + gamma_tail(1.0))


def sphere_profile(n=2):
    """The unit round sphere: phi = sin r on [0, pi]."""
    def vt(r):
        if n == 2:
            return 2.0 * math.pi * (1.0 + math.cos(min(max(r, 0.0), math.pi)))
        val, _ = integrate.quad(lambda x: math.sin(x) ** (n - 1), r, math.pi,
                                **QUAD_OPTS)
        return sphere_area(n) * val

    return Profile(n=n, L=math.pi, L0=math.pi / 2.0, phi=np.sin, dphi=np.cos,
                   family="sphere", params={}, volume_tail_fn=vt)


def power_cusp_profile(L=2.0, kappa=2.0, n=2):
    """Finite-length cusp phi(r) = r (1 - r/L)^kappa; power-law lambda0."""
    if kappa < 1:
        raise ValueError("kappa >= 1 needed for a convex tail")

    def phi(r):
        r = np.asarray(r, dtype=float)
        return r * np.clip(1.0 - r / L, 0.0, None) ** kappa

    def dphi(r):
        r = np.asarray(r, dtype=float)
        t = np.clip(1.0 - r / L, 0.0, None)
        return t ** kappa - r * kappa / L * np.where(t > 0, t ** (kappa - 1.0),
                                                     0.0)

    # past the maximum of phi and into the range where phi'' > 0
    L0 = L * (kappa + 2.0) / (kappa + 3.0)
    return Profile(n=n, L=L, L0=L0, phi=phi, dphi=dphi,
                   family="power", params={"L": L, "kappa": kappa})


def grid_profile(r, phi_vals, n, L=None, L0=None, dphi_vals=None,
                 family="grid", params=None, head=None, tail=None):
    """Profile backed by samples (r_i, phi_i); log phi linear between nodes.

    head / tail are optional (callable, r_limit) pairs giving closed forms
    near r = 0 and beyond the last node.
    """
    r = np.asarray(r, dtype=float)
    phi_vals = np.asarray(phi_vals, dtype=float)
    if np.any(phi_vals <= 0):
        raise ValueError("grid profile needs positive phi samples")
    logphi = np.log(phi_vals)
    r0, r1 = float(r[0]), float(r[-1])
    head_fn, head_lim = head if head is not None else (None, r0)
    tail_fn, tail_lim = tail if tail is not None else (None, r1)
    last_slope = (logphi[-1] - logphi[-2]) / (r[-1] - r[-2])

    def phi(x):
        x = np.asarray(x, dtype=float)
        out = np.exp(np.interp(x, r, logphi))
        if head_fn is not None:
            low = x < head_lim
            if np.any(low):
                out = np.where(low, head_fn(np.clip(x, 0.0, head_lim)), out)
        else:
            low = x < r0
            if np.any(low):
                # linear ramp through the first node, slope -> phi_0/r_0
                out = np.where(low, phi_vals[0] * np.clip(x, 0.0, r0) / r0, out)
        high = x > tail_lim
        if np.any(high):
            if tail_fn is not None:
                out = np.where(high, tail_fn(np.maximum(x, tail_lim)), out)
            else:
                out = np.where(high,
                               np.exp(logphi[-1] + last_slope * (x - r1)), out)
        return out

    if dphi_vals is not None:
        dvals = np.asarray(dphi_vals, dtype=float)

        def dphi(x):
            return np.interp(np.asarray(x, dtype=float), r, dvals)
    else:
        def dphi(x, _h=1e-7):
            x = np.asarray(x, dtype=float)
            lo = np.maximum(x - _h, 0.0)
            return (phi(x + _h) - phi(lo)) / (x + _h - lo)

    return Profile(n=n, L=(L if L is not None else math.inf),
                   L0=(L0 if L0 is not None else r0),
                   phi=phi, dphi=dphi, family=family, params=params or {},
                   grid_r=r, grid_phi=phi_vals)


# ---------------------------------------------------------------------------
# validation of the structural hypotheses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    positivity: bool          # phi > 0 on (0, L)
    origin: bool              # phi(0) = 0 and phi'(0) = 1
    vanishing_end: bool       # phi -> 0 as r -> L
    convex_tail: bool         # phi decreasing and convex on (L0, L)
    finite_volume: bool
    violations: dict

    @property
    def all_passed(self):
        return (self.positivity and self.origin and self.vanishing_end
                and self.convex_tail and self.finite_volume)


def _sample_radii(p, count=2000):
    if math.isfinite(p.L):
        return p.L * np.linspace(1e-6, 1.0 - 1e-6, count)
    r_hi = p.L0 + 1.0
    v = p.total_volume
    while volume_tail(p, r_hi) > 1e-12 * v and r_hi < 1e6:
        r_hi *= 2.0
    return np.concatenate([
        np.linspace(1e-6, p.L0, count // 2, endpoint=False),
        np.geomspace(p.L0, r_hi, count // 2),
    ])


def validate(p, count=2000, tol=1e-6):
    """Numerical check of the profile hypotheses on a sampling grid."""
    r = _sample_radii(p, count)
    ph = np.asarray(p.phi(r), dtype=float)
    if np.any(~np.isfinite(ph)):
        raise GeometryError("phi evaluates to a non-finite value")
    viol = {}

    positivity = bool(np.all(ph > 0))
    if not positivity:
        viol["positivity"] = float(r[int(np.argmax(ph <= 0))])

    eps = 1e-6
    phi0 = float(p.phi(0.0))
    slope = float(p.phi(eps)) / eps
    origin = abs(phi0) <= tol and abs(slope - 1.0) <= 1e-3
    if not origin:
        viol["origin"] = {"phi(0)": phi0, "phi'(0+)": slope}

    tail_mask = r >= p.L0
    rt, pt = r[tail_mask], ph[tail_mask]
    vanishing_end = bool(pt[-1] <= max(1e-6, 1e-4 * float(np.max(ph)))
                         and pt[-1] <= pt[0])
    if not vanishing_end:
        viol["vanishing_end"] = float(pt[-1])

    decreasing = np.all(np.diff(pt) <= tol * np.maximum(pt[:-1], 1e-300))
    second = np.diff(pt, 2)
    scale = np.maximum(np.abs(pt[1:-1]), 1e-300)
    convex = np.all(second >= -1e-6 * scale - 1e-14)
    convex_tail = bool(decreasing and convex)
    if not convex_tail:
        if not decreasing:
            viol["tail_monotone"] = float(
                rt[int(np.argmax(np.diff(pt) > 0))])
        if not convex:
            viol["tail_convex"] = float(
                rt[1:-1][int(np.argmax(second < -1e-6 * scale))])

    try:
        v = p.total_volume
        finite_volume = math.isfinite(v) and v > 0
    except Exception as exc:
        finite_volume = False
        viol["volume"] = repr(exc)

    return ValidationReport(positivity, origin, vanishing_end, convex_tail,
                            finite_volume, viol)


# ---------------------------------------------------------------------------
# volumes and the implicit isoperimetric function
# ---------------------------------------------------------------------------

def volume_tail(p, r):
    """omega * int_r^L phi^(n-1): the volume of the end {rho > r}."""
    r = float(r)
    if r < 0 or (math.isfinite(p.L) and r > p.L):
        raise GeometryError(f"radius {r} outside [0, L]")
    if math.isfinite(p.L) and r >= p.L:
        return 0.0
    if p.volume_tail_fn is not None:
        return float(p.volume_tail_fn(r))
    if p.grid_r is not None:
        return _grid_volume_tail(p, r)
    m = p.n - 1
    upper = p.L if math.isfinite(p.L) else np.inf
    val, _ = integrate.quad(lambda x: float(p.phi(x)) ** m, r, upper,
                            **QUAD_OPTS)
    if not math.isfinite(val):
        raise GeometryError("tail volume integral diverges")
    return p.omega * val


def _grid_state(p):
    """Cached suffix integrals of phi^(n-1) over the profile grid."""
    key = "grid_vt"
    if key not in p._cache:
        g, ph = p.grid_r, p.grid_phi
        m = p.n - 1
        w = ph ** m
        lw = np.log(w)
        slopes = np.diff(lw) / np.diff(g)
        flat = np.abs(slopes) < 1e-14
        segs = np.where(flat, w[:-1] * np.diff(g),
                        (w[1:] - w[:-1]) / np.where(flat, 1.0, slopes))
        suffix = np.zeros(g.size)
        suffix[:-1] = np.cumsum(segs[::-1])[::-1]
        last = slopes[-1]
        rem = -w[-1] / last if last < -1e-14 else 0.0
        head, _ = integrate.quad(lambda x: float(p.phi(x)) ** m, 0.0, g[0],
                                 **QUAD_OPTS)
        p._cache[key] = (g, w, suffix + rem, slopes, head)
    return p._cache[key]


def _grid_volume_tail(p, r):
    g, w, suffix, slopes, head = _grid_state(p)
    if r <= g[0]:
        m = p.n - 1
        part, _ = integrate.quad(lambda x: float(p.phi(x)) ** m, r, g[0],
                                 **QUAD_OPTS)
        return p.omega * (part + suffix[0])
    if r >= g[-1]:
        last = slopes[-1]
        if last < -1e-14:
            return p.omega * (-w[-1] * math.exp(last * (r - g[-1])) / last)
        return 0.0
    i = int(np.searchsorted(g, r)) - 1
    sl = slopes[i]
    wi = w[i] * math.exp(sl * (r - g[i]))
    part = wi * (g[i + 1] - r) if abs(sl) < 1e-14 else (w[i + 1] - wi) / sl
    return p.omega * (part + suffix[i + 1])


def boundary_area(p, r):
    """omega * phi(r)^(n-1), the area of the sphere {rho = r}."""
    return p.omega * float(p.phi(r)) ** (p.n - 1)


def _lambda0_state(p, s_min=None):
    """Cached (tail measure, boundary area) samples along r in [L0, L)."""
    target = s_min if s_min is not None else max(1e-13,
                                                 1e-13 * p.half_volume)
    key = "lambda0_state"
    if key in p._cache and p._cache[key][0][0] <= target:
        return p._cache[key]

    if p.grid_r is not None:
        mask = p.grid_r >= p.L0 * (1 - 1e-12)
        rs = p.grid_r[mask]
        lam_r = p.omega * p.grid_phi[mask] ** (p.n - 1)
    elif math.isfinite(p.L):
        gaps = (p.L - p.L0) * np.geomspace(1e-9, 1.0, 600)[::-1]
        rs = p.L - gaps
        lam_r = p.omega * np.asarray(p.phi(rs), float) ** (p.n - 1)
    else:
        r_hi = p.L0 + 1.0
        while volume_tail(p, r_hi) > target and r_hi < 1e9:
            r_hi = p.L0 + 2.0 * (r_hi - p.L0)
        rs = np.linspace(p.L0, r_hi, 2400)
        lam_r = p.omega * np.asarray(p.phi(rs), float) ** (p.n - 1)

    svals = np.array([volume_tail(p, float(x)) for x in rs])
    keep = (svals > 0) & (lam_r > 0)
    rs, lam_r, svals = rs[keep], lam_r[keep], svals[keep]
    order = np.argsort(svals)
    state = (svals[order], lam_r[order], rs[order])
    p._cache[key] = state
    return state


def lambda0(p, s):
    """The implicit isoperimetric value at tail measure s.

    Solves volume_tail(r) = s on the decreasing tail and returns
    omega * phi(r)^(n-1); for s above the tail's reach the left-continuous
    constant extension (value at the largest tail measure) is returned.
    """
    s = float(s)
    if s <= 0 or s > p.half_volume * (1 + 1e-9):
        raise GeometryError(f"s = {s} outside (0, half volume]")
    svals, lam, _ = _lambda0_state(p, s_min=min(s, 1e-13 * p.half_volume))
    if s >= svals[-1]:
        return float(lam[-1])
    if s <= svals[0]:
        m = (math.log(lam[1]) - math.log(lam[0])) / \
            (math.log(svals[1]) - math.log(svals[0]))
        return float(lam[0] * (s / svals[0]) ** m)
    return float(np.exp(np.interp(math.log(s), np.log(svals), np.log(lam))))


def lambda0_table(p, s_min=1e-12, s_max=None, per_decade=64):
    """lambda0 tabulated as a TabulatedMonotone on [s_min, s_max]."""
    cache_key = ("lam_table", s_min, s_max, per_decade)
    if cache_key in p._cache:
        return p._cache[cache_key]
    hi = p.half_volume if s_max is None else s_max
    svals, lam, _ = _lambda0_state(p, s_min=s_min * 0.5)
    grid = funcs.log_grid(s_min, hi, per_decade)
    lo_m = (math.log(lam[1]) - math.log(lam[0])) / \
        (math.log(svals[1]) - math.log(svals[0]))
    out = np.empty_like(grid)
    below = grid <= svals[0]
    out[below] = lam[0] * (grid[below] / svals[0]) ** lo_m
    inside = (~below) & (grid < svals[-1])
    out[inside] = np.exp(np.interp(np.log(grid[inside]), np.log(svals),
                                   np.log(lam)))
    out[grid >= svals[-1]] = lam[-1]
    table = TabulatedMonotone(grid, out, NONDECREASING, mono_tol=1e-3)
    p._cache[cache_key] = table
    return table


def nu_from_lambda0(p, s, table=None):
    """Reciprocal of int_s^(V/2) lambda0(r)^-2 dr; nondecreasing in s.

    At s -> half volume the integral vanishes; a capped sentinel 1e300 is
    returned there so downstream tabulation stays total.
    """
    lam = table if table is not None else lambda0_table(p)
    s = float(s)
    half = p.half_volume
    if not (0.0 < s < half * (1 + 1e-12)):
        raise GeometryError(f"s = {s} outside (0, half volume)")
    integral = _nu_integrals(p, lam)
    val = float(np.interp(s, lam.grid, integral))
    if val <= 1.0 / NU_SENTINEL:
        return NU_SENTINEL
    return 1.0 / val


def _nu_integrals(p, lam):
    """int_s^(V/2) lambda0^-2 at each lam.grid point (suffix, half-capped)."""
    key = ("nu_int", id(lam))
    if key not in p._cache:
        half = p.half_volume
        grid = lam.grid
        segs = funcs.segment_integrals(grid, lam.values, vpow=-2.0)
        suffix = np.zeros(grid.size)
        suffix[:-1] = np.cumsum(segs[::-1])[::-1]
        if grid[-1] > half:
            over = funcs.segment_integrals(
                np.array([half, grid[-1]]),
                np.array([funcs.evaluate(lam, half), lam.values[-1]]),
                vpow=-2.0)[0]
            suffix = suffix - over
        p._cache[key] = np.maximum(suffix, 0.0)
    return p._cache[key]


def nu_table(p, s_min=1e-12, s_max=None, per_decade=64):
    """nu_from_lambda0 tabulated on [s_min, s_max] (s_max <= half volume)."""
    lam = lambda0_table(p, s_min=min(s_min, 1e-12))
    hi = 0.5 * p.half_volume if s_max is None else s_max
    grid = funcs.log_grid(s_min, hi, per_decade)
    integral = _nu_integrals(p, lam)
    vals = 1.0 / np.maximum(np.interp(grid, lam.grid, integral),
                            1.0 / NU_SENTINEL)
    return TabulatedMonotone(grid, vals, NONDECREASING, mono_tol=1e-3)


# ---------------------------------------------------------------------------
# radial integrals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialIntegral:
    value: float
    diverges: bool
    windows: tuple = ()


def radial_integral(p, f, q=1.0, r_lo=0.0):
    """omega * int |f(r)|^q phi^(n-1) dr with divergence detection.

    For infinite L the integral is accumulated over doubling windows; if
    the window contributions keep growing the report flags divergence
    (used to certify that a function fails to lie in L^q).
    """
    m = p.n - 1

    def g(r):
        return abs(float(f(r))) ** q * float(p.phi(r)) ** m

    if math.isfinite(p.L):
        val, _ = integrate.quad(g, 0.0 + r_lo, p.L, **QUAD_OPTS)
        return RadialIntegral(p.omega * val, False)

    windows = []
    total = 0.0
    a, width = r_lo, 1.0
    for _ in range(60):
        val, _ = integrate.quad(g, a, a + width, limit=200)
        windows.append(val)
        total += val
        a += width
        width *= 2.0
        if len(windows) >= 4:
            recent = windows[-3:]
            if all(w <= 1e-14 * max(total, 1e-300) for w in recent):
                return RadialIntegral(p.omega * total, False, tuple(windows))
            if all(recent[i + 1] >= recent[i] * 1.05 for i in range(2)) \
                    and recent[-1] > 1e-6 * total:
                return RadialIntegral(math.inf, True, tuple(windows))
    diverges = windows[-1] > 1e-9 * total
    return RadialIntegral(math.inf if diverges else p.omega * total,
                          diverges, tuple(windows))
