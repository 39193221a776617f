"""Calculus of positive monotone functions of one variable near zero.

Functions are stored on a log-spaced grid and interpolated piecewise-linearly
in log-log coordinates, so that every grid segment is an exact power law
c * s**m.  This makes evaluation, generalized inversion and weighted
integrals of powers of the function exact for power-law data and accurate
for power-times-log data, which is the only kind of asymptotics this
package ever meets near zero.

Below the smallest grid point the function is continued by a power law
whose exponent is fitted by least squares over the smallest tabulated
decade (the "left tail").
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_S_MIN = 1e-12
DEFAULT_PER_DECADE = 64

# Search ladder for two-sided equivalence constants: the constants in a
# two-sided bound c1*g(c1*s) <= f(s) <= c2*g(c2*s) are only meaningful up to
# order of magnitude, so powers of two over [2^-20, 2^20] suffice.
EQUIV_LADDER = 2.0 ** np.arange(-20, 21)

NONDECREASING = "nondecreasing"
NONINCREASING = "nonincreasing"


class DomainError(ValueError):
    """Evaluation requested outside (0, s_max] and its extrapolation tail."""


class MonotoneError(ValueError):
    """Tabulated values violate the declared monotonicity direction."""


class QuotientPreconditionError(ValueError):
    """A required monotone-quotient hypothesis fails; carries the bad s."""

    def __init__(self, message, s_violating=None):
        super().__init__(message)
        self.s_violating = s_violating


def log_grid(s_min=DEFAULT_S_MIN, s_max=1.0, per_decade=DEFAULT_PER_DECADE):
    """Log-spaced abscissas covering [s_min, s_max], endpoints included."""
    if not (0.0 < s_min < s_max):
        raise ValueError(f"need 0 < s_min < s_max, got {s_min}, {s_max}")
    ndec = math.log10(s_max / s_min)
    npts = max(2, int(round(ndec * per_decade)) + 1)
    return np.geomspace(s_min, s_max, npts)


@dataclass(frozen=True)
class TabulatedMonotone:
    """A positive monotone function tabulated on a log grid near zero.

    grid          strictly increasing abscissas in (0, s_max]
    values        f(grid) > 0, monotone in the declared direction
    direction     "nondecreasing" or "nonincreasing"
    tail_exponent power-law exponent used below grid[0]
    """

    grid: np.ndarray
    values: np.ndarray
    direction: str = NONDECREASING
    tail_exponent: float = None
    mono_tol: float = 1e-9

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise ValueError("grid and values must be 1-d arrays of equal length >= 2")
        if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing and positive")
        if np.any(~np.isfinite(values)) or np.any(values <= 0):
            raise ValueError("values must be finite and strictly positive")
        if self.direction not in (NONDECREASING, NONINCREASING):
            raise ValueError(f"unknown direction {self.direction!r}")

        work = values if self.direction == NONDECREASING else values[::-1]
        env = np.maximum.accumulate(work)
        drop = np.max((env - work) / env)
        if drop > self.mono_tol:
            i = int(np.argmax((env - work) / env))
            if self.direction == NONINCREASING:
                i = values.size - 1 - i
            raise MonotoneError(
                f"{self.direction} violated by {drop:.3e} (tol {self.mono_tol:.1e})"
                f" near s = {grid[i]:.6e}"
            )
        # enforce exact monotonicity so downstream inversion is well posed
        env = env if self.direction == NONDECREASING else env[::-1]
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", env)
        if self.tail_exponent is None:
            object.__setattr__(self, "tail_exponent", self._fit_tail())

    def _fit_tail(self):
        g, v = self.grid, self.values
        mask = g <= g[0] * 10.0
        if np.count_nonzero(mask) < 2:
            mask = np.zeros_like(g, dtype=bool)
            mask[:2] = True
        x, y = np.log(g[mask]), np.log(v[mask])
        return float(np.polyfit(x, y, 1)[0])

    @property
    def s_min(self):
        return float(self.grid[0])

    @property
    def s_max(self):
        return float(self.grid[-1])

    def __call__(self, s):
        return evaluate(self, s)

    def restricted(self, s_lo=None, s_hi=None):
        """Sub-table on grid points in [s_lo, s_hi]."""
        lo = self.s_min if s_lo is None else s_lo
        hi = self.s_max if s_hi is None else s_hi
        mask = (self.grid >= lo * (1 - 1e-12)) & (self.grid <= hi * (1 + 1e-12))
        if np.count_nonzero(mask) < 2:
            raise ValueError("restriction leaves fewer than 2 grid points")
        return TabulatedMonotone(self.grid[mask], self.values[mask],
                                 self.direction, mono_tol=self.mono_tol)


def tabulate(fn, s_min=DEFAULT_S_MIN, s_max=0.5, per_decade=DEFAULT_PER_DECADE,
             direction=NONDECREASING, mono_tol=1e-9):
    """Tabulate a callable on a log grid."""
    g = log_grid(s_min, s_max, per_decade)
    v = np.asarray([float(fn(s)) for s in g]) if not _vectorizable(fn, g) else fn(g)
    return TabulatedMonotone(g, np.asarray(v, dtype=float), direction,
                             mono_tol=mono_tol)


def _vectorizable(fn, g):
    try:
        out = fn(g[:2])
        return np.shape(out) == np.shape(g[:2])
    except Exception:
        return False


def evaluate(f, s):
    """Log-log interpolated value of f at s (scalar or array).

    s in (0, grid[0]) uses the fitted power-law tail; s > s_max is a
    domain error (no right extrapolation).
    """
    s_arr = np.asarray(s, dtype=float)
    scalar = s_arr.ndim == 0
    s_arr = np.atleast_1d(s_arr)
    if np.any(s_arr <= 0):
        raise DomainError("evaluation requires s > 0")
    if np.any(s_arr > f.s_max * (1 + 1e-9)):
        raise DomainError(f"s = {s_arr.max():.6e} beyond s_max = {f.s_max:.6e}")
    s_arr = np.minimum(s_arr, f.s_max)
    out = np.empty_like(s_arr)
    below = s_arr < f.grid[0]
    if np.any(below):
        out[below] = f.values[0] * (s_arr[below] / f.grid[0]) ** f.tail_exponent
    if np.any(~below):
        out[~below] = np.exp(np.interp(np.log(s_arr[~below]),
                                       np.log(f.grid), np.log(f.values)))
    return float(out[0]) if scalar else out


def ginverse(f, t):
    """Generalized left-continuous inverse of a nondecreasing f.

    Returns sup{s : f(s) < t} = inf{s : f(s) >= t}; on a constant plateau
    at level t this is the left endpoint.  Values of t below the reachable
    range give 0; above the range give s_max (see ginverse_info for the
    saturation flag).
    """
    return ginverse_info(f, t)[0]


def ginverse_info(f, t):
    """(ginverse(f, t), saturated) where saturated flags t above range(f)."""
    if f.direction != NONDECREASING:
        raise ValueError("ginverse is defined for nondecreasing functions")
    t = float(t)
    if t > f.values[-1] * (1 + 1e-12):
        return f.s_max, True
    if t <= 0:
        return 0.0, False
    if t <= f.values[0]:
        e = f.tail_exponent
        if e > 1e-9:
            ls = math.log(f.grid[0]) + (math.log(t) - math.log(f.values[0])) / e
            return min(math.exp(ls), f.grid[0]), False
        # flat or degenerate tail: f stays ~values[0] down to 0+
        return 0.0, False
    i = int(np.searchsorted(f.values, t, side="left"))
    i = min(max(i, 1), f.values.size - 1)
    va, vb = f.values[i - 1], f.values[i]
    ga, gb = f.grid[i - 1], f.grid[i]
    if vb <= va * (1 + 1e-15):
        return float(ga), False
    m = (math.log(vb) - math.log(va)) / (math.log(gb) - math.log(ga))
    ls = math.log(ga) + (math.log(t) - math.log(va)) / m
    return float(min(max(math.exp(ls), ga), gb)), False


# ---------------------------------------------------------------------------
# two-sided equivalence f(s) ~ g(s): c1*g(c1*s) <= f(s) <= c2*g(c2*s)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EquivalenceWitness:
    """Constants certifying c1*g(c1*s) <= f(s) <= c2*g(c2*s) for s <= s0."""
    c1: float
    c2: float
    s0: float
    ok: bool = True

    def swapped(self):
        """Witness for the symmetric statement g ~ f."""
        return EquivalenceWitness(1.0 / self.c2, 1.0 / self.c1, self.s0)


@dataclass(frozen=True)
class EquivalenceFailure:
    s_violating: float
    ratio: float
    s0: float
    reason: str = ""
    ok: bool = False


def equiv_check(f, g, s0, s_lo=None):
    """Search the ladder of powers of two for an equivalence witness.

    Compares on f's grid points in [s_lo, s0].  Returns the witness with
    the largest feasible c1 and smallest feasible c2, or a failure record
    carrying the worst-violating abscissa.
    """
    lo = f.s_min if s_lo is None else s_lo
    mask = (f.grid >= lo * (1 - 1e-12)) & (f.grid <= s0 * (1 + 1e-12))
    s = f.grid[mask]
    fv = f.values[mask]
    if s.size < 2:
        raise ValueError("fewer than 2 grid points in [s_lo, s0]")
    ladder = EQUIV_LADDER[EQUIV_LADDER * s[-1] <= g.s_max * (1 + 1e-9)]
    if ladder.size == 0:
        return EquivalenceFailure(float(s[-1]), math.inf, s0,
                                  "comparison range exceeds g's domain")

    c2 = None
    for c in ladder:
        gv = c * evaluate(g, c * s)
        if np.all(fv <= gv * (1 + 1e-12)):
            c2 = float(c)
            break
    if c2 is None:
        c = ladder[-1]
        gv = c * evaluate(g, c * s)
        i = int(np.argmax(fv / gv))
        return EquivalenceFailure(float(s[i]), float(fv[i] / gv[i]), s0,
                                  "no upper constant on the ladder")

    c1 = None
    for c in ladder[::-1]:
        gv = c * evaluate(g, c * s)
        if np.all(gv <= fv * (1 + 1e-12)):
            c1 = float(c)
            break
    if c1 is None:
        c = ladder[0]
        gv = c * evaluate(g, c * s)
        i = int(np.argmax(gv / fv))
        return EquivalenceFailure(float(s[i]), float(gv[i] / fv[i]), s0,
                                  "no lower constant on the ladder")
    return EquivalenceWitness(min(c1, c2), c2, s0)


# ---------------------------------------------------------------------------
# doubling class near zero: f(2s) <= c f(s)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Delta2Result:
    holds: bool
    c: float
    s0: float
    smallest_decade_max: float
    overall_median: float


def delta2_check(f, instability_factor=1.5):
    """Empirical doubling check f(2s) <= c f(s) on the grid.

    The ratio f(2s)/f(s) is computed at every grid point s <= s_max/2;
    the condition holds when the ratios stay bounded with a stable left
    tail.  Instability (ratios blowing up toward s -> 0, as for
    exp(-1/s)) is detected by comparing the smallest tabulated decade
    against the overall median ratio.
    """
    s = f.grid[f.grid <= f.s_max / 2 * (1 + 1e-12)]
    ratios = evaluate(f, 2 * s) / evaluate(f, s)
    if not np.all(np.isfinite(ratios)):
        return Delta2Result(False, math.inf, f.s_max / 2, math.inf,
                            float(np.median(ratios[np.isfinite(ratios)])))
    med = float(np.median(ratios))
    small = ratios[s <= s[0] * 10.0]
    small_max = float(np.max(small))
    holds = small_max <= instability_factor * med
    return Delta2Result(holds, float(np.max(ratios)), float(f.s_max / 2),
                        small_max, med)


# ---------------------------------------------------------------------------
# classification of s -> f(s)/s^a near zero
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuotientReport:
    direction: str          # "nondecreasing" | "nonincreasing" | "neither"
    a: float
    s0: float
    tol: float
    up_violation: float     # worst drop below the running max (nondecr test)
    down_violation: float   # worst rise above the running min (noninc test)


def monotone_quotient_check(f, a, s0=None, tol=1e-3):
    """Classify s -> f(s)/s^a on grid points <= s0, with multiplicative slack.

    The quotient is accepted as nondecreasing when it never falls below
    its running maximum by more than the relative tolerance, and
    symmetrically for nonincreasing.  Default tolerance 1e-3 absorbs
    quadrature noise in measured tables; pass 1e-9 for exact families.
    """
    hi = f.s_max if s0 is None else s0
    s = f.grid[f.grid <= hi * (1 + 1e-12)]
    q = f.values[: s.size] / s ** a
    runmax = np.maximum.accumulate(q)
    up_viol = float(np.max(1.0 - q / runmax))
    runmin = np.minimum.accumulate(q)
    down_viol = float(np.max(q / runmin - 1.0))
    if up_viol <= tol and down_viol <= tol:
        # constant quotient: report nondecreasing (both classifications hold)
        direction = NONDECREASING
    elif up_viol <= tol:
        direction = NONDECREASING
    elif down_viol <= tol:
        direction = NONINCREASING
    else:
        direction = "neither"
    return QuotientReport(direction, a, float(s[-1]), tol, up_viol, down_viol)


# ---------------------------------------------------------------------------
# power-law-exact integration of f(s)^vpow * s^spow over tabulated segments
# ---------------------------------------------------------------------------

def segment_integrals(grid, values, vpow=1.0, spow=0.0):
    """Exact integrals of f^vpow * s^spow over each grid segment.

    On each segment the tabulated f is the power law implied by log-log
    linear interpolation, so each integral has a closed form.
    """
    g = np.asarray(grid, dtype=float)
    v = np.asarray(values, dtype=float)
    la, lb = np.log(g[:-1]), np.log(g[1:])
    lva, lvb = np.log(v[:-1]), np.log(v[1:])
    m = (lvb - lva) / (lb - la)
    p = m * vpow + spow          # local exponent of the integrand
    lc = vpow * lva - m * vpow * la  # log of the integrand's coefficient
    out = np.empty(g.size - 1)
    near = np.abs(p + 1.0) < 1e-12
    if np.any(near):
        out[near] = np.exp(lc[near]) * (lb[near] - la[near])
    reg = ~near
    if np.any(reg):
        pr = p[reg] + 1.0
        out[reg] = (np.exp(lc[reg] + pr * lb[reg])
                    - np.exp(lc[reg] + pr * la[reg])) / pr
    return out


def tail_integral(f, vpow=1.0, spow=0.0):
    """Integral of f^vpow * s^spow over (0, grid[0]] using the fitted tail.

    Returns inf when the local exponent makes the integral divergent at 0.
    """
    e = f.tail_exponent * vpow + spow
    if e <= -1.0 + 1e-12:
        return math.inf
    coeff = f.values[0] ** vpow
    return coeff * f.grid[0] / (e + 1.0)


def integral_from_zero(f, s, vpow=1.0, spow=0.0):
    """Integral of f^vpow * r^spow over (0, s] for each s in f's grid range."""
    segs = segment_integrals(f.grid, f.values, vpow, spow)
    cum = np.concatenate([[0.0], np.cumsum(segs)]) + tail_integral(f, vpow, spow)
    return np.interp(np.asarray(s, dtype=float), f.grid, cum)


def suffix_integrals(f, vpow=1.0, spow=0.0):
    """Integrals of f^vpow * r^spow over [grid[i], grid[-1]] for every i."""
    segs = segment_integrals(f.grid, f.values, vpow, spow)
    out = np.zeros(f.grid.size)
    out[:-1] = np.cumsum(segs[::-1])[::-1]
    return out


# ---------------------------------------------------------------------------
# the smoothing chain behind prescribed-isoperimetry synthesis
# ---------------------------------------------------------------------------

def smoothing_chain(lambda1, n, tol=1e-3):
    """Regularize a nondecreasing growth function by two integral averages.

    With n' = n/(n-1), each pass maps f to (integral_0^s f(r)^n'/r dr)^(1/n').
    The pass preserves the ~ equivalence class, and after two passes the
    result is C^1 with convex n'-th power.  Requires f(s)^n'/s to be
    nondecreasing on the grid (up to the tolerance band); if the raw input
    violates this, it is first lifted to (s * runmax(f^n'/s))^(1/n').
    """
    if n < 2:
        raise ValueError("dimension n must be >= 2")
    nprime = n / (n - 1.0)

    rep = monotone_quotient_check(lambda1, 1.0 / nprime, tol=tol)
    f = lambda1
    if rep.direction != NONDECREASING:
        if rep.up_violation > 0.5:
            raise QuotientPreconditionError(
                f"lambda(s)^n'/s is not equivalent to a nondecreasing function"
                f" (drop {rep.up_violation:.2e})", s_violating=rep.s0)
        theta = np.maximum.accumulate(f.values ** nprime / f.grid)
        f = TabulatedMonotone(f.grid, (f.grid * theta) ** (1.0 / nprime),
                              NONDECREASING, mono_tol=f.mono_tol)

    for _ in range(2):
        cum = (np.concatenate([[0.0], np.cumsum(
            segment_integrals(f.grid, f.values, nprime, -1.0))])
            + tail_integral(f, nprime, -1.0))
        if not np.all(np.isfinite(cum)):
            raise QuotientPreconditionError(
                "smoothing integral diverges at 0", s_violating=f.s_min)
        f = TabulatedMonotone(f.grid, cum ** (1.0 / nprime), NONDECREASING,
                              mono_tol=f.mono_tol)
    return f


# ---------------------------------------------------------------------------
# serialization: two-column CSV plus JSON sidecar
# ---------------------------------------------------------------------------

def save_csv(f, path):
    """Write (s, f(s)) rows plus a .json sidecar with the metadata."""
    path = Path(path)
    data = np.column_stack([f.grid, f.values])
    np.savetxt(path, data, delimiter=",", header="s,value", comments="")
    sidecar = {"direction": f.direction, "s_max": f.s_max,
               "tail_exponent": f.tail_exponent}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_csv(path):
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    meta = {}
    side = path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text())
    return TabulatedMonotone(data[:, 0], data[:, 1],
                             meta.get("direction", NONDECREASING),
                             meta.get("tail_exponent"))
