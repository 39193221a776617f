"""Eigenvalue solvers for the radial and line-form problems, and the
rearrangement machinery (distribution function, signed decreasing
rearrangement, median, level-set coarea integrals).

The radial problem  (phi^(n-1) u')' + gamma phi^(n-1) u = 0  and its
line form  v'' + gamma p(s) v = 0  are discretized by cell-centered
second-order finite volumes: the diffusion coefficient is evaluated at
cell faces, the mass is lumped at cell centers, and the outermost faces
carry zero flux (the natural condition; the weight vanishing at the ends
makes it exact).  The symmetric generalized tridiagonal pencil is solved
by Sturm-sequence bisection (LAPACK, via scipy.linalg.eigh_tridiagonal)
after the diagonal mass is folded in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.linalg import eigh_tridiagonal

from . import revolution


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    pass


# ---------------------------------------------------------------------------
# problems and eigenpairs
# ---------------------------------------------------------------------------

@dataclass
class SpectralProblem:
    """Discretized weighted eigenproblem on an interval.

    cells        cell centers (strictly increasing)
    faces        cell faces, len(cells) + 1
    weight       mass density at cell centers
    coeff_faces  diffusion coefficient at all faces (boundary faces are
                 ignored unless dirichlet is set)
    constraint   weighted-mean-zero constraint (satisfied automatically by
                 eigenvectors orthogonal to the constant null mode)
    """

    form: str
    cells: np.ndarray
    faces: np.ndarray
    weight: np.ndarray
    coeff_faces: np.ndarray
    constraint: bool = False
    dirichlet: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.weight <= 0) or np.any(~np.isfinite(self.weight)):
            raise SolverError("weight must be positive and finite at cells")
        if np.any(np.diff(self.cells) <= 0):
            raise SolverError("mesh must be strictly increasing")

    @classmethod
    def radial(cls, profile, r_max=None, n_cells=4096, mass_tol=1e-10):
        """Radial form on (0, r_max) with zero-flux ends.

        r_max defaults to the radius beyond which the remaining weight
        mass is below mass_tol of the total (or L when L is finite).
        """
        L = profile.L
        if r_max is None:
            r_max = L if math.isfinite(L) else _mass_radius(profile, mass_tol)
        elif math.isfinite(L) and r_max > L:
            raise SolverError("r_max beyond the geodesic length")
        elif not math.isfinite(L):
            beyond = revolution.volume_tail(profile, r_max)
            if beyond > mass_tol * profile.total_volume * (1 + 1e-9):
                raise SolverError(
                    f"mass beyond r_max is {beyond:.2e}, above the"
                    f" {mass_tol:.0e} truncation threshold")
        faces = np.linspace(0.0, r_max, n_cells + 1)
        cells = 0.5 * (faces[:-1] + faces[1:])
        m = profile.n - 1
        weight = np.asarray(profile.phi(cells), dtype=float) ** m
        coeff = np.asarray(profile.phi(faces), dtype=float) ** m
        return cls("radial", cells, faces, weight, coeff,
                   meta={"profile": profile, "r_max": float(r_max),
                         "mass_tol": mass_tol})

    @classmethod
    def line(cls, p, s_left, s_right, n_cells=4096, constraint=True,
             dirichlet=False):
        """Line form -v'' = gamma p v on (s_left, s_right)."""
        faces = np.linspace(s_left, s_right, n_cells + 1)
        cells = 0.5 * (faces[:-1] + faces[1:])
        weight = np.asarray([float(p(s)) for s in cells]) \
            if not _vector_ok(p, cells) else np.asarray(p(cells), dtype=float)
        coeff = np.ones(faces.size)
        return cls("line", cells, faces, weight, coeff, constraint=constraint,
                   dirichlet=dirichlet, meta={"p": p, "S": (s_left, s_right)})


def _vector_ok(f, x):
    try:
        return np.shape(f(x[:2])) == np.shape(x[:2])
    except Exception:
        return False


def _mass_radius(profile, mass_tol):
    v = profile.total_volume
    target = mass_tol * v
    r = max(profile.L0, 1.0)
    while revolution.volume_tail(profile, r) > target:
        r *= 2.0
        if r > 1e9:
            raise SolverError("could not truncate: weight decays too slowly")
    lo = r / 2.0
    from scipy.optimize import brentq
    return brentq(lambda x: revolution.volume_tail(profile, x) - target,
                  lo, r, xtol=1e-10 * r)


@dataclass
class EigenPair:
    """Eigenvalue and nodal eigenvector, normalized to weighted L2 norm 1."""

    gamma: float
    vec: np.ndarray
    mesh: np.ndarray
    weight: np.ndarray
    mass: np.ndarray
    residual: float
    meta: dict = field(default_factory=dict)

    def weighted_mean(self):
        return float(np.dot(self.mass, self.vec))


def _pencil(prob):
    h = np.diff(prob.faces)
    mass = prob.weight * h
    c = prob.coeff_faces
    hc = np.diff(prob.cells)
    a_int = c[1:-1] / hc                     # interior face conductances
    d = np.zeros(prob.cells.size)
    d[:-1] += a_int
    d[1:] += a_int
    if prob.dirichlet:
        # ghost-cell mirror: value zero on the boundary faces
        d[0] += 2.0 * c[0] / (prob.cells[0] - prob.faces[0]) / 2.0 * 2.0 \
            if False else 2.0 * c[0] / h[0]
        d[-1] += 2.0 * c[-1] / h[-1]
    e = -a_int
    return d, e, mass


def _solve_pencil(prob, index_lo, index_hi):
    d, e, mass = _pencil(prob)
    sm = np.sqrt(mass)
    dd = d / mass
    ee = e / (sm[:-1] * sm[1:])
    vals, vecs = eigh_tridiagonal(dd, ee, select="i",
                                  select_range=(index_lo, index_hi))
    return vals, vecs / sm[:, None], mass


def solve_radial(prob, k=1, verify_truncation=False):
    """k-th nonzero eigenvalue of the weighted problem (k >= 1).

    The zero eigenvalue with constant eigenfunction is always present for
    the zero-flux discretization and is skipped.
    """
    if prob.dirichlet:
        raise SolverError("solve_radial expects the natural (zero-flux) form")
    if k < 1:
        raise ValueError("k must be >= 1 (gamma_0 = 0 is skipped)")
    vals, vecs, mass = _solve_pencil(prob, 0, k)
    gamma = float(vals[k])
    u = vecs[:, k]
    u = u / math.sqrt(float(np.dot(mass, u ** 2)))
    if u[np.argmax(np.abs(u))] < 0:
        u = -u
    res = _residual(prob, gamma, u, mass)
    pair = EigenPair(gamma, u, prob.cells, prob.weight, mass, res,
                     meta=dict(prob.meta, k=k, form=prob.form))
    if verify_truncation:
        _check_truncation(prob, pair, k)
    return pair


def solve_line(prob, verify_truncation=False, dirichlet_index=0):
    """Smallest eigenvalue of the line form under the mean-zero constraint.

    Equivalently the smallest nonzero generalized eigenvalue after
    deflating the weighted constant (the minimizer of the Rayleigh
    quotient over { v : int v p ds = 0 }); for the Dirichlet calibration
    variant the constraint is dropped and the smallest eigenvalue is
    returned.
    """
    if prob.dirichlet:
        idx = dirichlet_index
        vals, vecs, mass = _solve_pencil(prob, idx, idx + 1)
        gamma = float(vals[0])
        v = vecs[:, 0]
    else:
        vals, vecs, mass = _solve_pencil(prob, 0, 2)
        gamma = float(vals[1])
        v = vecs[:, 1]
    v = v / math.sqrt(float(np.dot(mass, v ** 2)))
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    res = _residual(prob, gamma, v, mass)
    pair = EigenPair(gamma, v, prob.cells, prob.weight, mass, res,
                     meta=dict(prob.meta, form=prob.form))
    if not prob.dirichlet:
        pair.meta["weighted_mean"] = pair.weighted_mean()
        if len(vals) > 2 and vals[2] - vals[1] < 1e-6 * max(vals[1], 1e-300):
            pair.meta["near_degenerate"] = True
        pair.meta["membership"] = _membership(prob, v)
    if verify_truncation:
        s_l, s_r = prob.meta.get("S", (prob.faces[0], prob.faces[-1]))
        wide = SpectralProblem.line(prob.meta["p"], 2 * s_l, 2 * s_r,
                                    n_cells=2 * prob.cells.size,
                                    constraint=prob.constraint)
        ref = solve_line(wide)
        drift = abs(ref.gamma - gamma) / max(gamma, 1e-300)
        pair.meta["truncation_drift"] = drift
        if drift > 1e-3:
            raise ConvergenceError(
                f"eigenvalue drifts by {drift:.2%} when the truncation is"
                f" doubled")
    return pair


def _residual(prob, gamma, u, mass):
    d, e, _ = _pencil(prob)
    ku = d * u
    ku[:-1] += e * u[1:]
    ku[1:] += e * u[:-1]
    r = ku - gamma * mass * u
    scale = np.linalg.norm(ku) + gamma * np.linalg.norm(mass * u)
    return float(np.linalg.norm(r) / max(scale, 1e-300))


def _membership(prob, v):
    h = np.diff(prob.faces)
    dv = np.diff(v) / np.diff(prob.cells)
    energy = float(np.sum(dv ** 2 * 0.5 * (h[:-1] + h[1:])))
    mass_part = float(np.dot(prob.weight * h, v ** 2))
    return {"dirichlet_energy": energy, "weighted_l2": mass_part,
            "finite": bool(np.isfinite(energy) and np.isfinite(mass_part))}


def _check_truncation(prob, pair, k):
    profile = prob.meta.get("profile")
    if profile is None or math.isfinite(profile.L):
        return
    r2 = 2.0 * prob.meta["r_max"]
    wide = SpectralProblem.radial(profile, r_max=r2,
                                  n_cells=2 * prob.cells.size,
                                  mass_tol=prob.meta.get("mass_tol", 1e-10))
    ref = solve_radial(wide, k=k)
    drift = abs(ref.gamma - pair.gamma) / max(pair.gamma, 1e-300)
    pair.meta["truncation_drift"] = drift
    if drift > 1e-3:
        raise ConvergenceError(
            f"eigenvalue drifts by {drift:.2%} when the cut is doubled")


def truncation_sweep(p, s0, doublings=3, n_cells=4096, symmetric=True):
    """Solve the constrained line problem on (-S, S) for S = s0 * 2^j.

    Returns a list of dicts with gamma and max|v| per truncation (all
    eigenvectors share the unit weighted-L2 normalization), used to probe
    the growth of the minimizer across truncations.
    """
    out = []
    for j in range(doublings + 1):
        S = s0 * 2 ** j
        left = -S if symmetric else -s0
        prob = SpectralProblem.line(p, left, S, n_cells=n_cells * 2 ** j)
        pair = solve_line(prob)
        out.append({"S": S, "gamma": pair.gamma,
                    "vmax": float(np.max(np.abs(pair.vec))),
                    "edge": float(abs(pair.vec[-1])),
                    "pair": pair})
    return out


# ---------------------------------------------------------------------------
# change of variables to the line form
# ---------------------------------------------------------------------------

@dataclass
class LineData:
    """The map s = psi(r) and the transplanted weight p(s).

    psi(r) = int_{r0}^r phi^(1-n);  p(s) = phi(psi^{-1}(s))^(2(n-1)).
    s0 is the image of L (may be inf).  The transplantation preserves the
    weighted L2 pairing and the Dirichlet energy.
    """

    s0: float
    r_nodes: np.ndarray
    s_nodes: np.ndarray
    logphi_nodes: np.ndarray
    n: int

    def psi(self, r):
        return np.interp(np.asarray(r, dtype=float), self.r_nodes,
                         self.s_nodes)

    def psi_inv(self, s):
        return np.interp(np.asarray(s, dtype=float), self.s_nodes,
                         self.r_nodes)

    def p(self, s):
        s = np.asarray(s, dtype=float)
        lo, hi = self.s_nodes[0], self.s_nodes[-1]
        # log phi is asymptotically linear in s at both ends
        head_slope = (self.logphi_nodes[1] - self.logphi_nodes[0]) / \
            (self.s_nodes[1] - self.s_nodes[0])
        tail_slope = (self.logphi_nodes[-1] - self.logphi_nodes[-2]) / \
            (self.s_nodes[-1] - self.s_nodes[-2])
        lp = np.interp(s, self.s_nodes, self.logphi_nodes)
        lp = np.where(s < lo,
                      self.logphi_nodes[0] + head_slope * (s - lo), lp)
        lp = np.where(s > hi,
                      self.logphi_nodes[-1] + tail_slope * (s - hi), lp)
        return np.exp(2.0 * (self.n - 1) * lp)


def change_of_variables(profile, r0, r_lo=None, r_hi=None, n_nodes=4000):
    """Tabulate psi and the line weight p for a profile.

    The mesh runs over [r_lo, r_hi] (defaults: geometric spread around r0
    covering the weight's support up to 1e-12 of the mass on each side).
    """
    n = profile.n
    m = n - 1
    if r_lo is None:
        r_lo = min(r0 / 2.0, 1e-4)
    if r_hi is None:
        if math.isfinite(profile.L):
            r_hi = profile.L - (profile.L - r0) * 1e-9
        else:
            r_hi = _mass_radius(profile, 1e-12)
    left = np.geomspace(r_lo, r0, n_nodes // 2, endpoint=False)
    right = np.linspace(r0, r_hi, n_nodes // 2)
    r = np.unique(np.concatenate([left, right]))
    # composite Simpson per segment for int phi^(1-n)
    mid = 0.5 * (r[:-1] + r[1:])
    f_nodes = np.asarray(profile.phi(r), dtype=float) ** (-m)
    f_mid = np.asarray(profile.phi(mid), dtype=float) ** (-m)
    seg = (r[1:] - r[:-1]) / 6.0 * (f_nodes[:-1] + 4.0 * f_mid + f_nodes[1:])
    s_nodes = np.concatenate([[0.0], np.cumsum(seg)])
    i0 = int(np.searchsorted(r, r0))
    s_nodes = s_nodes - np.interp(r0, r, s_nodes)
    logphi = np.log(np.asarray(profile.phi(r), dtype=float))

    if math.isfinite(profile.L):
        val, _ = integrate.quad(lambda x: float(profile.phi(x)) ** (-m),
                                r_hi, profile.L, limit=200) \
            if False else (math.inf, 0.0)
        s0 = math.inf if not math.isfinite(val) else float(
            s_nodes[-1] + val)
    else:
        s0 = math.inf
    # for finite L decide divergence of int^L phi^(1-n) from the local slope
    if math.isfinite(profile.L):
        tail_phi = float(profile.phi(0.5 * (r_hi + profile.L)))
        s0 = math.inf if tail_phi > 0 else s_nodes[-1]
    return LineData(s0=s0, r_nodes=r, s_nodes=s_nodes, logphi_nodes=logphi,
                    n=n)


# ---------------------------------------------------------------------------
# rearrangement
# ---------------------------------------------------------------------------

@dataclass
class RearrangedFunction:
    """Distribution function, signed decreasing rearrangement, median.

    t_nodes / mu_nodes form the polyline of mu(t) = measure{u >= t}
    (t ascending, mu descending); ustar is its generalized inverse.
    """

    t_nodes: np.ndarray
    mu_nodes: np.ndarray
    total_volume: float
    median: float

    def mu(self, t):
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.t_nodes, self.mu_nodes)
        out = np.where(t < self.t_nodes[0], self.total_volume, out)
        out = np.where(t > self.t_nodes[-1], 0.0, out)
        return out

    def ustar(self, s):
        s = np.asarray(s, dtype=float)
        out = np.interp(s, self.mu_nodes[::-1], self.t_nodes[::-1])
        out = np.where(s <= self.mu_nodes[-1], self.t_nodes[-1], out)
        out = np.where(s >= self.mu_nodes[0], self.t_nodes[0], out)
        return out

    def lq_norm(self, q):
        """||ustar||_{L^q(0, V)} integrated exactly over the polyline."""
        t, mu = self.t_nodes, self.mu_nodes
        total = 0.0
        for i in range(t.size - 1):
            dmu = mu[i] - mu[i + 1]
            if dmu <= 0:
                continue
            a, b = t[i], t[i + 1]
            total += dmu * _mean_abs_pow(a, b, q)
        return total ** (1.0 / q)


def _mean_abs_pow(a, b, q):
    """Average of |t|^q over t in [a, b]."""
    if abs(b - a) < 1e-300:
        return abs(0.5 * (a + b)) ** q
    if a <= 0.0 <= b or b <= 0.0 <= a:
        # split at zero
        wa, wb = abs(a), abs(b)
        return (wa ** (q + 1) + wb ** (q + 1)) / ((q + 1) * (wa + wb))
    lo, hi = sorted((abs(a), abs(b)))
    return (hi ** (q + 1) - lo ** (q + 1)) / ((q + 1) * (hi - lo))


def _segment_measures(profile, r):
    """Measures of the shells between mesh nodes, plus the end lumps."""
    lam = np.array([revolution.volume_tail(profile, float(x)) for x in r])
    seg = lam[:-1] - lam[1:]
    left = profile.total_volume - lam[0]
    right = lam[-1]
    return seg, left, right


def rearrange(profile, r, u):
    """Distribution function and signed rearrangement of a radial function.

    u is piecewise linear on the nodes r; the superlevel measure
    mu(t) = measure{u >= t} is assembled exactly for the piecewise-linear
    model (each segment contributes a clipped-linear function of t).
    """
    r = np.asarray(r, dtype=float)
    u = np.asarray(u, dtype=float)
    if r.ndim != 1 or r.shape != u.shape:
        raise ValueError("r and u must be 1-d arrays of equal shape")
    seg, m_left, m_right = _segment_measures(profile, r)
    V = profile.total_volume

    lo = np.minimum(u[:-1], u[1:])
    hi = np.maximum(u[:-1], u[1:])
    d = np.maximum(hi - lo, 1e-30)
    slopes_at = np.concatenate([lo, [u[0]], [u[-1]]])
    # slope events: each segment adds -m/d on (lo, hi); end lumps are steps
    starts = lo
    ends = hi
    rates = seg / d

    t_all = np.unique(np.concatenate([lo, hi, [u[0] - 1e-30, u[0]],
                                      [u[-1] - 1e-30, u[-1]]]))
    # derivative of mu between consecutive t values
    rate_change = np.zeros(t_all.size)
    i_start = np.searchsorted(t_all, starts)
    i_end = np.searchsorted(t_all, ends)
    np.add.at(rate_change, i_start, -rates)
    np.add.at(rate_change, i_end, rates)
    rate = np.cumsum(rate_change)          # d mu / d t on [t_k, t_{k+1})
    mu = np.zeros(t_all.size)
    for k in range(t_all.size - 2, -1, -1):
        mu[k] = mu[k + 1] - rate[k] * (t_all[k + 1] - t_all[k])
    # end lumps: u ~ constant on the stubs outside the mesh
    mu += m_left * (t_all <= u[0]) + m_right * (t_all <= u[-1])
    mu = np.maximum.accumulate(mu[::-1])[::-1]

    rf = RearrangedFunction(t_all, mu, V, 0.0)
    med = float(rf.ustar(V / 2.0))
    return RearrangedFunction(t_all, mu, V, med)


# ---------------------------------------------------------------------------
# coarea integrals: psi_u(t) = int_0^t dtau / int_{u = tau} |grad u|
# ---------------------------------------------------------------------------

def _monotone_runs(u):
    sign = np.sign(np.diff(u))
    runs = []
    start = 0
    cur = sign[0] if sign.size else 1.0
    for i in range(1, sign.size):
        if sign[i] != cur and sign[i] != 0:
            if cur != 0:
                runs.append((start, i))
                start = i
            cur = sign[i]
    runs.append((start, u.size - 1))
    return runs


def level_gradient_integral(profile, r, u, taus):
    """int_{u = tau} |grad u| dH^{n-1} for radial u, per tau.

    For radial u the level set at tau is a union of spheres, one per
    monotone branch crossing tau, each contributing
    omega phi(r)^(n-1) |u'(r)| at the crossing radius.
    """
    r = np.asarray(r, dtype=float)
    u = np.asarray(u, dtype=float)
    taus = np.asarray(taus, dtype=float)
    m = profile.n - 1
    w = profile.omega * np.asarray(profile.phi(r), dtype=float) ** m
    out = np.zeros(taus.size)
    for a, b in _monotone_runs(u):
        if b <= a:
            continue
        ui = u[a:b + 1]
        ri = r[a:b + 1]
        wi = w[a:b + 1]
        du = np.gradient(ui, ri)
        if ui[-1] < ui[0]:
            ui, ri, wi, du = ui[::-1], ri[::-1], wi[::-1], du[::-1]
        inside = (taus >= ui[0]) & (taus <= ui[-1])
        if not np.any(inside):
            continue
        rc = np.interp(taus[inside], ui, ri)
        wc = np.interp(rc, r, w)
        dc = np.abs(np.interp(rc, r, np.gradient(u, r)))
        out[inside] += wc * dc
    return out


def psi_u(profile, r, u, t):
    """The coarea transform at level t (scalar)."""
    table = psi_u_table(profile, r, u)
    return float(table(t))


def psi_u_table(profile, r, u):
    """Callable t -> psi_u(t) built by midpoint integration in tau.

    The tau grid is the sorted set of nodal values of u within (0, max u];
    midpoints avoid the critical values where the level-gradient integral
    vanishes.
    """
    u = np.asarray(u, dtype=float)
    umax = float(np.max(u))
    if umax <= 0:
        raise ValueError("psi_u needs levels in (0, max u]; max u <= 0")
    vals = np.unique(np.concatenate([[0.0], u[(u > 0)], [umax]]))
    # refine: at least ~2000 points for a smooth cumulative integral
    if vals.size < 2000:
        extra = np.linspace(0.0, umax, 2000)
        vals = np.unique(np.concatenate([vals, extra]))
    mids = 0.5 * (vals[:-1] + vals[1:])
    D = level_gradient_integral(profile, r, u, mids)
    D = np.maximum(D, 1e-300)
    incr = np.diff(vals) / D
    cum = np.concatenate([[0.0], np.cumsum(incr)])

    def table(t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < -1e-12) or np.any(t_arr > umax * (1 + 1e-9)):
            raise ValueError("level outside [0, max u]")
        return np.interp(np.clip(t_arr, 0.0, umax), vals, cum)

    return table


def equimeasurability_error(profile, pair, qs=(1, 2, 4)):
    """Relative gap between ||ustar||_q on (0, V) and ||u||_q on the manifold."""
    rf = rearrange(profile, pair.mesh, pair.vec)
    out = {}
    for q in qs:
        direct = float(np.dot(pair.mass, np.abs(pair.vec) ** q)) ** (1.0 / q)
        rearranged = rf.lq_norm(q)
        out[q] = abs(direct - rearranged) / max(direct, 1e-300)
    return out
