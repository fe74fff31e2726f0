"""Weak-Poincare calculus.

A decreasing certificate function beta with beta(s) -> 0 is turned into a
convergence profile alpha(n) through the chain

    K(u) = u * beta(1/u),   K*(v) = sup_u [u v - K(u)],
    F(x) = int_x^1 dv / K*(v),   alpha = F^{-1},

with the convex conjugate computed by a bracketed golden-section search and F
by adaptive composite quadrature.  The module also carries the certificate
functions and closed-form bounds for the worked sampler families: the
independent-proposal certificates on exponential targets, gap-profile
certificates, the stepping-out ratio, the exponential ideal-slice gap, the
Hit-and-Run gap bound, and the quadratic-quartic tail bounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .geometry import quad_quartic_constants
from .targets import TargetDensity, unit_ball_volume

__all__ = [
    "BetaFn",
    "AlphaProfile",
    "power_beta",
    "gap_beta",
    "im_exponential_beta",
    "quad_quartic_beta",
    "beta_im_exponential",
    "beta_from_gap_profile",
    "bar_beta",
    "convex_conjugate",
    "alpha_from_beta",
    "alpha_closed_form_bound",
    "rho_stepping_out",
    "gamma_exp_slice",
    "har_gap_bound",
    "student_t_ideal_gap",
    "quad_quartic_bound",
    "QuadQuarticBound",
    "tv_bound",
    "iterations_for_epsilon",
]

_U_LO, _U_HI, _U_MAX = 1e-8, 1e8, 1e16
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class BetaFn:
    """Decreasing certificate s -> beta(s) with beta(s) -> 0.

    ``fn`` must accept numpy arrays.  ``breakpoints`` lists jump locations of
    piecewise certificates so downstream quadrature can split there.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    tag: str
    breakpoints: tuple[float, ...] = ()

    def __call__(self, s):
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr <= 0):
            raise ValueError("certificate functions are defined for s > 0")
        out = np.asarray(self.fn(s_arr), dtype=float)
        return float(out) if np.isscalar(s) or s_arr.ndim == 0 else out

    def capped(self) -> "BetaFn":
        """Certificate truncated at 1/4; always admissible since centered
        squared norms never exceed a quarter of the squared oscillation."""
        return BetaFn(lambda s: np.minimum(0.25, self.fn(np.asarray(s, float))),
                      f"min(1/4, {self.tag})", self.breakpoints)

    def sup_value(self) -> float:
        """Limit of beta at 0+, i.e. the asymptotic slope of K."""
        return float(self(np.array(1e-12)))


def power_beta(c0: float, c1: float) -> BetaFn:
    if c0 <= 0 or c1 <= 0:
        raise ValueError("power certificate needs positive constants")
    return BetaFn(lambda s: c0 * np.asarray(s, float) ** (-c1), f"power({c0},{c1})")


def gap_beta(gamma: float) -> BetaFn:
    """Indicator certificate 1/4 on (0, 1/gamma): the weak inequality with
    this certificate is exactly a spectral-gap (strong) inequality with
    constant gamma."""
    if gamma <= 0:
        raise ValueError("gap must be positive")
    return BetaFn(lambda s: np.where(np.asarray(s, float) < 1.0 / gamma, 0.25, 0.0),
                  f"gap({gamma})", (1.0 / gamma,))


def beta_im_exponential(lam: float, s):
    """Certificate of the independent-proposal Metropolis chain targeting a
    unit-rate exponential through an Exponential(lam) reference.

    Both branches are the exact piecewise formulas (the inner function b for
    lam < 1, the indicator-plus-power form for lam >= 1); no truncation at
    1/4 is applied here.
    """
    if lam <= 0:
        raise ValueError("reference rate must be positive")
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr <= 0):
        raise ValueError("certificate defined for s > 0")
    if lam < 1.0:
        sp = (1.0 + lam) * s_arr / 2.0
        safe = np.maximum(sp, 1.0)
        w = 1.0 - 1.0 / safe
        tail = lam - w ** ((1.0 - lam) / lam) + (1.0 - lam) * w ** (1.0 / lam)
        b = np.where(sp <= 1.0, lam, tail)
        out = b / (2.0 * (1.0 + lam) * lam)
    else:
        pref = 1.0 / (4.0 * (2.0 * lam - 1.0) * lam)
        ind = (s_arr < (2.0 * lam - 1.0) ** -2).astype(float)
        power = (lam - 1.0) * s_arr ** (-1.0 / lam) / (2.0 * lam - 1.0) ** (2.0 / lam)
        out = pref * (ind + power)
    return float(out) if np.isscalar(s) or s_arr.ndim == 0 else out


def im_exponential_beta(lam: float, *, capped: bool = True) -> BetaFn:
    """BetaFn wrapper around :func:`beta_im_exponential`."""
    if lam < 1.0:
        bp = (2.0 / (1.0 + lam),)
    else:
        bp = ((2.0 * lam - 1.0) ** -2,)
    raw = BetaFn(lambda s: beta_im_exponential(lam, np.asarray(s, float)),
                 f"im_exp({lam})", bp)
    return raw.capped() if capped else raw


def quad_quartic_beta(d: int) -> BetaFn:
    """Power certificate d^(2d) 2^(6d) s^(-d/8-1/4) for Hit-and-Run within
    slice sampling on the quadratic-quartic potential, d >= 4."""
    if d < 4:
        raise ValueError("the simplified certificate needs d >= 4")
    return power_beta(float(d) ** (2 * d) * 2.0 ** (6 * d), d / 8.0 + 0.25)


def bar_beta(beta, gamma: float, s):
    """Certificate rescaling through a spectral gap: s -> beta(gamma s)/gamma."""
    if gamma <= 0:
        raise ValueError("gap must be positive")
    return beta(gamma * np.asarray(s, float) if not np.isscalar(s) else gamma * s) / gamma


def beta_from_gap_profile(target: TargetDensity, gamma_of_t: Callable[[float], float],
                          s: float, *, abs_tol: float = 1e-8) -> float:
    """Aggregate on-slice gap profile into a certificate value

        beta(s) = (4c)^{-1} * int over {t : gamma(t) < 1/s} of m(t) dt,

    splitting the quadrature at the indicator breakpoints located by root
    finding on gamma(t) - 1/s.
    """
    if s <= 0:
        raise ValueError("certificate defined for s > 0")
    c = target.normalizer()
    sup = target.sup_density
    t_cap = sup if math.isfinite(sup) else max(1e6, 100.0 / s)
    level = 1.0 / s

    grid = np.geomspace(1e-14, t_cap * (1.0 - 1e-12), 600)
    vals = np.array([gamma_of_t(t) - level for t in grid])
    cuts = [1e-300, t_cap]
    for i in np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]:
        cuts.append(optimize.brentq(lambda t: gamma_of_t(t) - level,
                                    grid[i], grid[i + 1], xtol=1e-14))
    cuts = sorted(cuts)

    total = 0.0
    mass = lambda t: target.level_mass(t).value
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid = math.sqrt(lo * hi) if lo > 0 else hi / 2.0
        if gamma_of_t(mid) < level:
            val, _ = integrate.quad(mass, lo, hi, epsabs=abs_tol, limit=400)
            total += val
    if not math.isfinite(sup):
        mid_tail = 2.0 * t_cap
        if gamma_of_t(mid_tail) < level:
            val, _ = integrate.quad(mass, t_cap, np.inf, epsabs=abs_tol, limit=400)
            total += val
    return total / (4.0 * c)


# ---------------------------------------------------------------------------
# Convex conjugate and the convergence profile
# ---------------------------------------------------------------------------


def _k_of(beta: Callable, u: np.ndarray) -> np.ndarray:
    return u * np.asarray(beta(1.0 / u), dtype=float)


def _conjugate_batch(beta: Callable, vs: np.ndarray, *, rel_tol: float = 1e-10) -> np.ndarray:
    """Convex conjugate sup_u [u v - K(u)] for a batch of v >= 0.

    Golden-section refinement (in log u) of an argmax located on a log-spaced
    grid; the grid is widened tenfold until the maximizer is interior, and a
    supremum still growing at u = 1e16 is reported as +inf.
    """
    vs = np.asarray(vs, dtype=float)
    out = np.zeros_like(vs)
    pos = vs > 0
    if not np.any(pos):
        return out
    v = vs[pos]

    u_hi = _U_HI
    while True:
        grid = np.geomspace(_U_LO, u_hi, 97)
        kg = _k_of(beta, grid)
        obj = v[:, None] * grid[None, :] - kg[None, :]
        idx = np.argmax(obj, axis=1)
        at_edge = idx == len(grid) - 1
        growing = obj[np.arange(len(v)), idx] > obj[np.arange(len(v)), np.maximum(idx - 1, 0)]
        if not np.any(at_edge & growing) or u_hi >= _U_MAX:
            break
        u_hi = min(u_hi * 1e2, _U_MAX)

    unbounded = at_edge & growing & (u_hi >= _U_MAX)

    a = np.log(grid[np.maximum(idx - 1, 0)])
    b = np.log(grid[np.minimum(idx + 1, len(grid) - 1)])
    f = lambda logu: v * np.exp(logu) - _k_of(beta, np.exp(logu))
    for _ in range(90):
        if np.max(b - a) < rel_tol:
            break
        x1 = b - _GOLDEN * (b - a)
        x2 = a + _GOLDEN * (b - a)
        go_right = f(x1) < f(x2)
        a = np.where(go_right, x1, a)
        b = np.where(go_right, b, x2)
    best = np.maximum(f(0.5 * (a + b)), 0.0)
    best[unbounded] = np.inf
    out[pos] = best
    return out


def convex_conjugate(beta, v: float) -> float:
    """K*(v) = sup_{u >= 0} [u v - u beta(1/u)]; +inf when v exceeds the
    asymptotic slope of K."""
    if v < 0:
        raise ValueError("conjugate argument must be nonnegative")
    return float(_conjugate_batch(_as_fn(beta), np.array([v]))[0])


def _as_fn(beta) -> Callable:
    if isinstance(beta, BetaFn):
        return beta.fn
    return lambda s: np.asarray([beta(float(x)) for x in np.atleast_1d(s)], dtype=float) \
        if not np.isscalar(s) else beta(s)


class AlphaProfile:
    """Convergence profile n -> alpha(n) in (0,1), the inverse of
    F(x) = int_x^1 dv/K*(v).

    F is tabulated on a halving knot sequence and extended on demand; each
    query finishes with a bisection between knots at absolute tolerance 1e-10.
    """

    def __init__(self, beta, *, quad_tol: float = 1e-9):
        self._beta = beta if isinstance(beta, BetaFn) else BetaFn(_as_fn(beta), "custom")
        self._fn = self._beta.fn
        self._quad_tol = quad_tol
        self._v_crit = self._beta.sup_value()
        self._knots = [1.0]
        self._F = [0.0]

    # -- quadrature of 1/K* -------------------------------------------------

    def _inv_kstar(self, vs: np.ndarray) -> np.ndarray:
        ks = _conjugate_batch(self._fn, vs)
        out = np.zeros_like(ks)
        finite = np.isfinite(ks) & (ks > 0)
        out[finite] = 1.0 / ks[finite]
        return out

    def _segment(self, a: float, b: float) -> float:
        """Integral of 1/K* over (a, b), split at the conjugate blow-up point
        and refined geometrically until two successive levels agree."""
        if not a < b:
            return 0.0
        pieces = [(a, b)]
        if a < self._v_crit < b:
            pieces = [(a, self._v_crit), (self._v_crit, b)]
        total = 0.0
        for lo, hi in pieces:
            total += self._segment_plain(lo, hi)
        return total

    def _segment_plain(self, a: float, b: float) -> float:
        nodes0, w0 = np.polynomial.legendre.leggauss(16)
        prev = None
        n_sub = max(2, int(math.log(b / a) / math.log(1.5)) + 1) if a > 0 else 8
        for _ in range(8):
            edges = np.geomspace(a, b, n_sub + 1) if a > 0 else np.linspace(a, b, n_sub + 1)
            mids = 0.5 * (edges[1:] + edges[:-1])
            half = 0.5 * (edges[1:] - edges[:-1])
            pts = (mids[:, None] + half[:, None] * nodes0[None, :]).ravel()
            wts = (half[:, None] * w0[None, :]).ravel()
            val = float(np.sum(wts * self._inv_kstar(pts)))
            if prev is not None and abs(val - prev) <= self._quad_tol * max(1.0, abs(val)):
                return val
            prev = val
            n_sub *= 2
        return prev

    # -- knot table ----------------------------------------------------------

    def _extend_to(self, n: float) -> None:
        while self._F[-1] < n:
            x = self._knots[-1]
            if x < 1e-300:
                raise ValueError("profile decays slower than any tabulated level")
            self._knots.append(x / 2.0)
            self._F.append(self._F[-1] + self._segment(x / 2.0, x))

    def F(self, x: float) -> float:
        """Tabulated-plus-refined value of F at x in (0, 1]."""
        if not 0.0 < x <= 1.0:
            raise ValueError("F is defined on (0, 1]")
        self._extend_to_knot(x)
        k = next(i for i, xk in enumerate(self._knots) if xk <= x)
        return self._F[k] - self._segment(self._knots[k], x) \
            if self._knots[k] < x else self._F[k]

    def _extend_to_knot(self, x: float) -> None:
        while self._knots[-1] > x:
            xk = self._knots[-1]
            self._knots.append(xk / 2.0)
            self._F.append(self._F[-1] + self._segment(xk / 2.0, xk))

    def alpha(self, n: float) -> float:
        """alpha(n) = F^{-1}(n) by bisection between knots, tolerance 1e-10."""
        if n <= 0:
            raise ValueError("the profile is defined for n > 0")
        self._extend_to(n)
        k = next(i for i in range(len(self._F)) if self._F[i] >= n)
        hi_x, hi_F = self._knots[k - 1], self._F[k - 1]
        lo_x = self._knots[k]
        # F decreases in x; invert on [lo_x, hi_x] with F(hi_x) = hi_F <= n.
        a, b = lo_x, hi_x
        fb = hi_F
        for _ in range(200):
            if b - a <= 1e-10 and b - a <= 1e-6 * max(b, 1e-300):
                break
            mid = 0.5 * (a + b)
            fm = fb + self._segment(mid, b)
            if fm >= n:
                a = mid
            else:
                b, fb = mid, fm
        return 0.5 * (a + b)


def alpha_from_beta(beta, n: float) -> float:
    """One-shot pipeline query; builds a fresh profile tabulation."""
    return AlphaProfile(beta).alpha(n)


def alpha_closed_form_bound(case: int, params: dict, n: float) -> float:
    """Closed-form envelopes matching the three canonical certificate decays.

    Case 1 (power certificate c0 s^{-c1}) is fully explicit.  Cases 2 and 3
    only pin the functional shape; the constants c4, c5 are caller-supplied
    and no canonical values are asserted.
    """
    if case == 1:
        c0, c1 = params["c0"], params["c1"]
        return c0 * (1.0 + c1) ** (1.0 + c1) * n ** (-c1)
    if case == 2:
        return params["c4"] * math.exp(-params["c5"] * n ** (params["c3"] / (1.0 + params["c3"])))
    if case == 3:
        return params["c4"] / math.log(max(2.0, n)) ** params["c3"]
    raise ValueError("case must be 1, 2 or 3")


# ---------------------------------------------------------------------------
# Closed-form bounds for the worked examples
# ---------------------------------------------------------------------------


def rho_stepping_out(h: float, delta: float, m_small: float) -> float:
    """Uniform mixture-weight lower bound (h - Delta)/h * m/(m + Delta) of the
    stepping-out/shrinkage kernel; the unimodal limit (Delta = 0, m = inf)
    gives 1."""
    if delta < 0 or m_small <= 0:
        raise ValueError("need Delta >= 0 and positive minimal mass")
    if h < delta:
        raise ValueError("width must be at least the maximal gap")
    width_factor = (h - delta) / h
    mass_factor = 1.0 if math.isinf(m_small) else m_small / (m_small + delta)
    return width_factor * mass_factor


def gamma_exp_slice(alpha: float, lam: float) -> float:
    """Spectral-gap lower bound of ideal slice sampling for an
    Exponential(alpha) target through an Exponential(lam) reference:
    (alpha+lam)/(2 alpha) when alpha >= lam, else (alpha/(2 lam - alpha))^2."""
    if alpha <= 0 or lam <= 0:
        raise ValueError("rates must be positive")
    if alpha >= lam:
        return (alpha + lam) / (2.0 * alpha)
    return (alpha / (2.0 * lam - alpha)) ** 2


def har_gap_bound(d: int, kappa: float) -> float:
    """Hit-and-Run Dirichlet-form lower bound 2^-33 d^-2 kappa^-2 on a convex
    body with conditioning ratio kappa."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if kappa < 1.0:
        raise ValueError("conditioning ratio is at least 1")
    return 2.0 ** -33 / (d * d * kappa * kappa)


def student_t_ideal_gap(d: int, m: float) -> float:
    """Ideal-slice spectral-gap lower bound (m-1)/((d+1)(d+m-1)) for the
    heavy-tailed spherically symmetric family."""
    return (m - 1.0) / ((d + 1.0) * (d + m - 1.0))


@dataclass(frozen=True)
class QuadQuarticBound:
    b1: float
    b2: float
    r_star: float
    simplified: float
    two_term: float


def quad_quartic_bound(d: int, s: float) -> QuadQuarticBound:
    """Certificate-integral bounds for Hit-and-Run within slice sampling on
    the quadratic-quartic potential, d >= 4.

    ``two_term`` is the sharp two-piece estimate built from the ball-sandwich
    constants; ``simplified`` is the closed power-law envelope
    omega_d d^{2d} 2^{6d} s^{-d/8-1/4} that dominates it.
    """
    if d < 4:
        raise ValueError("the simplified bound requires d >= 4")
    if s <= 0:
        raise ValueError("s must be positive")
    k = quad_quartic_constants(d)
    b1, b2, r_star = k["b1"], k["b2"], k["r_star"]
    p1, p2, q1, q2 = k["p1"], k["p2"], k["q1"], k["q2"]
    bulk = b2 * min(1.0, (b1 / s) ** ((p1 - p2) / (p1 * p2))) ** (d / r_star + 1.0)
    tail = 2.0 * b2 * (2.0 * d / (r_star * math.e)) ** (d / r_star) \
        * math.exp(-0.5 * max(1.0, (s / b1) ** ((q2 - q1) / (q1 * q2))))
    simplified = unit_ball_volume(d) * float(d) ** (2 * d) * 2.0 ** (6 * d) \
        * s ** (-d / 8.0 - 0.25)
    return QuadQuarticBound(b1, b2, r_star, simplified, bulk + tail)


def tv_bound(m_osc: float, alpha_value: float) -> float:
    """Total-variation bound sqrt(m_osc) * sqrt(alpha(n)) from the oscillation
    of the initial density ratio and the convergence profile."""
    if m_osc < 0 or alpha_value < 0:
        raise ValueError("inputs must be nonnegative")
    return math.sqrt(m_osc) * math.sqrt(alpha_value)


def iterations_for_epsilon(d: int, gamma_d: float, m_const: float, epsilon: float) -> float:
    """Iteration threshold 2^48 (M eps)^{16/(d+2)} d^16 ((d+10)/(8 gamma))^3
    for the quadratic-quartic Hit-and-Run chain, evaluated verbatim.

    Note the (M * eps) factor: the epsilon-dependence direction is surprising
    for an accuracy threshold (an M/eps form would be expected);  the formula
    is evaluated exactly as stated.
    """
    if d < 4 or gamma_d <= 0 or not 0 < epsilon <= 1 or m_const < 0:
        raise ValueError("need d >= 4, gamma > 0, epsilon in (0,1], M >= 0")
    return 2.0 ** 48 * (m_const * epsilon) ** (16.0 / (d + 2.0)) * float(d) ** 16 \
        * ((d + 10.0) / (8.0 * gamma_d)) ** 3
