"""Superlevel-set geometry: membership, shapes, chords, exact slice sampling,
bimodality constants and conditioning profiles.

The superlevel set of a target at height t is ``{x : varpi(x) > t}`` (strict).
For the 1D builtins the interval endpoints are located by bisection on varpi;
ball shapes are analytic; general convex slices are exposed through a
membership oracle plus a finite bounding radius so chords can be bracketed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .targets import TargetDensity, TargetError, unit_ball_volume

__all__ = [
    "Interval1D",
    "Ball",
    "ConvexOracle",
    "LevelSetShape",
    "GeometryError",
    "NoExactSamplerError",
    "BimodalConstants",
    "ConditioningProfile",
    "SandwichReport",
    "contains",
    "level_shape",
    "chord",
    "uniform_on_level",
    "bimodal_constants",
    "conditioning_profile",
    "ball_sandwich_check",
    "piecewise_log_profile",
    "log_envelope",
]

BISECT_TOL = 1e-10
BISECT_MAX_ITER = 200


class GeometryError(ValueError):
    """Level-set operation outside its domain of validity."""


class NoExactSamplerError(GeometryError):
    """No exact uniform sampler exists for this slice; an on-slice Markov
    kernel (a hybrid method) is the intended fallback."""


@dataclass(frozen=True)
class Interval1D:
    """Union of at most two disjoint, ordered open intervals of the line."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not 1 <= len(self.intervals) <= 2:
            raise GeometryError("expected one or two intervals")
        for lo, hi in self.intervals:
            if not lo < hi:
                raise GeometryError("empty interval")
        if len(self.intervals) == 2 and self.intervals[0][1] > self.intervals[1][0]:
            raise GeometryError("intervals must be disjoint and ordered")

    def total_length(self) -> float:
        return sum(hi - lo for lo, hi in self.intervals)


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise GeometryError("ball radius must be positive")


@dataclass(frozen=True)
class ConvexOracle:
    """Convex slice given by a membership predicate and a bounding radius."""

    member: Callable[[np.ndarray], bool]
    bounding_radius: float


LevelSetShape = Union[Interval1D, Ball, ConvexOracle]


def contains(target: TargetDensity, t: float, x) -> bool:
    """Strict superlevel membership varpi(x) > t."""
    target.check_height(t)
    return target.density(x) > t


def _bisect_on_density(target: TargetDensity, t: float, lo: float, hi: float) -> float:
    """Root of varpi(x) - t on [lo, hi], assuming a sign change."""
    f = lambda x: target.density_eval(np.array([x])) - t
    flo = f(lo)
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if hi - lo <= BISECT_TOL:
            return mid
        fmid = f(mid)
        if (flo > 0) == (fmid > 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _expand_until_below(target: TargetDensity, t: float, start: float,
                        direction: float) -> float:
    """March from ``start`` in ``direction`` until varpi drops below t."""
    step = 1.0
    x = start + direction * step
    for _ in range(BISECT_MAX_ITER):
        if target.density_eval(np.array([x])) <= t:
            return x
        step *= 2.0
        x = start + direction * step
    raise GeometryError("could not bracket the level-set boundary")


def level_shape(target: TargetDensity, t: float) -> LevelSetShape:
    """Shape of the superlevel set at height t.

    Intervals for the 1D builtins (two of them in the bimodal band), balls
    for the spherically symmetric families, a membership oracle otherwise.
    """
    target.check_height(t)
    name = target.name
    if name == "exp":
        r = target.params["r"]
        if r == 0:
            return Interval1D(((0.0, math.inf),))
        if r > 0:
            hi = _expand_until_below(target, t, 0.0, +1.0)
            b = _bisect_on_density(target, t, 0.0, hi)
            return Interval1D(((0.0, b),))
        if t <= 1.0:
            return Interval1D(((0.0, math.inf),))
        # varpi is increasing and exceeds t from the boundary point onward.
        hi_seed = 1.0
        for _ in range(BISECT_MAX_ITER):
            if target.density_eval(np.array([hi_seed])) > t:
                break
            hi_seed *= 2.0
        lo = _bisect_on_density(target, t, 0.0, hi_seed)
        return Interval1D(((lo, math.inf),))
    if name == "student":
        d, m = target.dim, target.params["m"]
        radius = math.sqrt(t ** (-2.0 / (d + m)) - 1.0)
        return Ball(np.zeros(d), radius)
    if name == "diagquad":
        a = target.params["coeffs"]
        v = math.log(1.0 / t)
        if np.all(a == a[0]):
            return Ball(np.zeros(target.dim), math.sqrt(2.0 * v / a[0]))
        r_box = math.sqrt(2.0 * v / target.params["m"])
        return ConvexOracle(lambda x: target.density_eval(x) > t, r_box)
    if name == "quadquartic":
        v = math.log(1.0 / t)
        r_box = target.params["outer_radius"](v)
        return ConvexOracle(lambda x: target.density_eval(x) > t, r_box)
    if name == "bimodal1d":
        return _bimodal_level_shape(target, t)
    raise GeometryError(f"no level-set shape rule for target {name!r}")


def _bimodal_level_shape(target: TargetDensity, t: float) -> Interval1D:
    c1, c2 = target.params["centers"]
    x_cross = target.params["x_cross"]
    t1, t2 = target.params["t1"], target.params["t2"]
    left_lo = _bisect_on_density(target, t, _expand_until_below(target, t, c1, -1.0), c1)
    if t >= t2:
        hi = _bisect_on_density(target, t, c1, x_cross)
        return Interval1D(((left_lo, hi),))
    right_hi = _bisect_on_density(target, t, c2, _expand_until_below(target, t, c2, +1.0))
    if t < t1:
        return Interval1D(((left_lo, right_hi),))
    hi1 = _bisect_on_density(target, t, c1, x_cross)
    lo2 = _bisect_on_density(target, t, x_cross, c2)
    return Interval1D(((left_lo, hi1), (lo2, right_hi)))


def chord(shape: LevelSetShape, x, theta) -> tuple[float, float]:
    """Signed parameter interval [s_lo, s_hi] of the line x + s*theta inside
    a convex shape; x must lie strictly inside."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if isinstance(shape, Ball):
        z = x - shape.center
        b = float(np.dot(theta, z))
        c0 = float(np.dot(z, z)) - shape.radius ** 2
        disc = b * b - c0
        if c0 >= 0 or disc <= 0:
            raise GeometryError("chord base point is not inside the ball")
        root = math.sqrt(disc)
        return (-b - root, -b + root)
    if isinstance(shape, ConvexOracle):
        if not shape.member(x):
            raise GeometryError("chord base point is not inside the shape")
        reach = shape.bounding_radius + float(np.linalg.norm(x)) + 1.0
        return (-_boundary_param(shape, x, -theta, reach),
                _boundary_param(shape, x, theta, reach))
    if isinstance(shape, Interval1D):
        if len(shape.intervals) > 1:
            raise GeometryError("chord undefined for a disconnected slice")
        (lo, hi), = shape.intervals
        if not math.isfinite(lo) or not math.isfinite(hi):
            raise GeometryError("chord undefined on an unbounded interval")
        th = float(theta[0])
        if not lo < float(x[0]) < hi:
            raise GeometryError("chord base point is not inside the interval")
        ends = sorted(((lo - float(x[0])) / th, (hi - float(x[0])) / th))
        return (ends[0], ends[1])
    raise GeometryError(f"unsupported shape {type(shape).__name__}")


def _boundary_param(shape: ConvexOracle, x, theta, reach: float) -> float:
    """Distance from x to the boundary along theta, by bisection."""
    lo, hi = 0.0, reach
    if shape.member(x + hi * theta):
        raise GeometryError("bounding radius does not enclose the shape")
    for _ in range(BISECT_MAX_ITER):
        if hi - lo <= BISECT_TOL:
            break
        mid = 0.5 * (lo + hi)
        if shape.member(x + mid * theta):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def uniform_on_level(target: TargetDensity, t: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Exact draw from nu restricted to the superlevel set at height t.

    Available when the slice is an interval union (Lebesgue or exponential
    reference) or a ball (Lebesgue reference); anything else needs an
    on-slice Markov kernel instead.
    """
    shape = level_shape(target, t)
    ref = target.reference
    if isinstance(shape, Interval1D):
        if ref.kind == "lebesgue":
            lengths = np.array([hi - lo for lo, hi in shape.intervals])
            if not np.all(np.isfinite(lengths)):
                raise NoExactSamplerError("slice has infinite Lebesgue measure")
            i = _pick_weighted(rng, lengths)
            lo, hi = shape.intervals[i]
            return np.array([rng.uniform(lo, hi)])
        if ref.kind == "exponential":
            lam = ref.rate
            masses = np.array([_exp_tail(lam, lo) - _exp_tail(lam, hi)
                               for lo, hi in shape.intervals])
            i = _pick_weighted(rng, masses)
            lo, hi = shape.intervals[i]
            u = rng.uniform()
            tail = _exp_tail(lam, lo) - u * (_exp_tail(lam, lo) - _exp_tail(lam, hi))
            return np.array([-math.log(tail) / lam])
        raise NoExactSamplerError(f"no interval sampler for reference {ref.kind!r}")
    if isinstance(shape, Ball) and ref.kind == "lebesgue":
        d = target.dim
        z = rng.normal(size=d)
        z /= np.linalg.norm(z)
        return shape.center + shape.radius * rng.uniform() ** (1.0 / d) * z
    raise NoExactSamplerError(
        f"no exact slice sampler for target {target.name!r}; use a hybrid kernel")


def _exp_tail(lam: float, x: float) -> float:
    return 0.0 if math.isinf(x) else math.exp(-lam * x)


def _pick_weighted(rng: np.random.Generator, weights: np.ndarray) -> int:
    total = float(np.sum(weights))
    if total <= 0:
        raise GeometryError("degenerate slice weights")
    u = rng.uniform() * total
    return 0 if u < weights[0] or len(weights) == 1 else 1


# ---------------------------------------------------------------------------
# Bimodality constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BimodalConstants:
    """Heights (t1, t2) of the two-interval band, the gap profile between the
    interval pair, its supremum Delta, and the minimal slice mass over the
    band (infinite when the band is empty)."""

    t1: float
    t2: float
    delta_profile: Callable[[float], float]
    Delta: float
    m_small: float


def bimodal_constants(target: TargetDensity) -> BimodalConstants:
    """Bimodality constants of a builtin target.

    Unimodal targets have an empty band (t1 == t2), zero gap and infinite
    minimal slice mass.  For the two-bump builtin everything is obtained from
    bisected level-set endpoints; the supremum over the band is its limit at
    the top of the band.
    """
    if target.geometry_tag != "bimodal":
        mid = target.sup_density / 2.0 if math.isfinite(target.sup_density) else 1.0
        return BimodalConstants(mid, mid, lambda t: 0.0, 0.0, math.inf)
    t1, t2 = target.params["t1"], target.params["t2"]

    def delta_profile(t: float) -> float:
        if not t1 <= t < t2:
            return 0.0
        shape = level_shape(target, t)
        if len(shape.intervals) < 2:
            return 0.0
        return shape.intervals[1][0] - shape.intervals[0][1]

    t_top = t2 * (1.0 - 1e-12)
    delta = delta_profile(t_top)
    m_small = target.level_mass(t_top).value
    return BimodalConstants(t1, t2, delta_profile, delta, m_small)


# ---------------------------------------------------------------------------
# Conditioning profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditioningProfile:
    """Inscribed/circumscribed radius bounds of the slices and the resulting
    conditioning ratio kappa(t) = R(t)/r(t) (or a validated upper bound)."""

    r_of_t: Callable[[float], float]
    R_of_t: Callable[[float], float]
    kappa_of_t: Callable[[float], float]
    kappa_bar: Optional[float]
    constants: dict


def conditioning_profile(target: TargetDensity) -> ConditioningProfile:
    """Conditioning profile of a quasi-log-concave builtin.

    The spherically symmetric family is perfectly conditioned; the diagonal
    quadratic family has constant ratio sqrt(L/m); the quadratic-quartic
    family only admits upper bounds, which degenerate at both ends of the
    height range.
    """
    if target.name == "student":
        def radius(t):
            d, m = target.dim, target.params["m"]
            return math.sqrt(t ** (-2.0 / (d + m)) - 1.0)
        return ConditioningProfile(radius, radius, lambda t: 1.0, 1.0, {})
    if target.name == "diagquad":
        m, L = target.params["m"], target.params["L"]
        r_of_t = lambda t: math.sqrt(2.0 * math.log(1.0 / t) / L)
        R_of_t = lambda t: math.sqrt(2.0 * math.log(1.0 / t) / m)
        # Circumscribed over inscribed radius is sqrt(L/m) (the largest
        # semiaxis over the smallest); the inverted ratio sqrt(m/L) that is
        # sometimes quoted cannot exceed 1 and is a transcription slip.
        kappa = math.sqrt(L / m)
        return ConditioningProfile(r_of_t, R_of_t, lambda t: kappa, kappa,
                                   {"m": m, "L": L})
    if target.name == "quadquartic":
        return _quad_quartic_profile(target)
    raise GeometryError(
        f"no conditioning profile for target {target.name!r} (slices must be convex bodies)")


def quad_quartic_constants(d: int) -> dict:
    """Ball-sandwich constants for the quadratic-quartic potential in
    dimension d: inner/outer radius powers near the minimum and in the tail,
    and the aggregated constants (b1, b2, r_star) built from them."""
    c1, c2, p1, p2 = d ** 0.25, 1.0, 4.0, 2.0
    C1, C2, q1, q2 = d ** 0.5, 1.0, 2.0, 4.0
    v_lo, v_hi = 1.0 / d, 1.0
    b1 = 2.0 ** 33 * d ** 2 * max(c1 / c2, C1 / C2,
                                  (C1 / c2) * v_hi ** (1 / q1) / v_lo ** (1 / p2))
    b2 = unit_ball_volume(d) * max(v_hi ** (d / q1) * C1 ** d / v_lo ** (d / p1),
                                   c1 ** d)
    return {"c1": c1, "c2": c2, "p1": p1, "p2": p2,
            "C1": C1, "C2": C2, "q1": q1, "q2": q2,
            "v_lo": v_lo, "v_hi": v_hi,
            "b1": b1, "b2": b2, "r_star": min(q1, p1)}


def _quad_quartic_profile(target: TargetDensity) -> ConditioningProfile:
    d = target.dim
    k = quad_quartic_constants(d)

    def r_of_t(t):
        v = math.log(1.0 / t)
        if v <= k["v_lo"]:
            return k["c2"] * v ** (1.0 / k["p2"])
        if v >= k["v_hi"]:
            return k["C2"] * v ** (1.0 / k["q2"])
        return k["c2"] * k["v_lo"] ** (1.0 / k["p2"])

    def R_of_t(t):
        v = math.log(1.0 / t)
        if v <= k["v_lo"]:
            return k["c1"] * v ** (1.0 / k["p1"])
        if v >= k["v_hi"]:
            return k["C1"] * v ** (1.0 / k["q1"])
        return k["C1"] * k["v_hi"] ** (1.0 / k["q1"])

    lead = k["b1"] / (2.0 ** 33 * d ** 2)
    alpha = 1.0 / k["p2"] - 1.0 / k["p1"]
    beta = 1.0 / k["q1"] - 1.0 / k["q2"]

    def kappa_of_t(t):
        return log_envelope(t, lead, alpha, beta)

    return ConditioningProfile(r_of_t, R_of_t, kappa_of_t, None, k)


# ---------------------------------------------------------------------------
# Ball sandwich verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SandwichReport:
    passed: bool
    worst_inner_margin: float
    worst_outer_margin: float
    n: int


def ball_sandwich_check(target: TargetDensity, v: float, n: int,
                        rng: np.random.Generator) -> SandwichReport:
    """Sample-based check that B(0, r_in) <= {V < v} <= B(0, R_out) for the
    quadratic-quartic potential.

    Inner inclusion: uniform draws from the inner ball shrunk by (1 - 1e-6)
    must satisfy V < v.  Outer inclusion: points with V < v, obtained by
    rejection from an inflated proposal ball, must fall inside the claimed
    outer ball.  Margins are worst-case slack (negative means satisfied).
    """
    if target.name != "quadquartic":
        raise GeometryError("sandwich check applies to the quadratic-quartic family")
    k = quad_quartic_constants(target.dim)
    if k["v_lo"] < v < k["v_hi"]:
        raise GeometryError(
            f"no sandwich claim for levels in ({k['v_lo']}, {k['v_hi']})")
    if v <= k["v_lo"]:
        r_in = k["c2"] * v ** (1.0 / k["p2"])
        r_out = k["c1"] * v ** (1.0 / k["p1"])
    else:
        r_in = k["C2"] * v ** (1.0 / k["q2"])
        r_out = k["C1"] * v ** (1.0 / k["q1"])

    d = target.dim
    pts = _sample_ball(rng, n, d) * (r_in * (1.0 - 1e-6))
    pot = np.array([target.potential_eval(p) for p in pts])
    worst_inner = float(np.max(pot) - v)

    accepted = []
    proposal_radius = 2.0 * r_out
    while len(accepted) < n:
        batch = _sample_ball(rng, 4 * n, d) * proposal_radius
        vals = np.array([target.potential_eval(p) for p in batch])
        accepted.extend(batch[vals < v])
    accepted = np.array(accepted[:n])
    worst_outer = float(np.max(np.linalg.norm(accepted, axis=1)) - r_out)

    return SandwichReport(worst_inner < 0.0 and worst_outer <= 1e-12,
                          worst_inner, worst_outer, n)


def _sample_ball(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    z = rng.normal(size=(n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * rng.uniform(size=(n, 1)) ** (1.0 / d)


# ---------------------------------------------------------------------------
# Piecewise log-power profiles and their two-piece envelope
# ---------------------------------------------------------------------------


def piecewise_log_profile(t: float, c_tail: float, c_mid: float, c_top: float,
                          alpha: float, beta: float, v_lo: float, v_hi: float) -> float:
    """Three-regime profile in the height variable:

    c_tail * (log 1/t)^beta deep in the tail (t <= e^{-v_hi}), a constant
    c_mid on the middle band, and c_top * (log 1/t)^(-alpha) near the top.
    """
    if not 0.0 < t < 1.0:
        raise GeometryError("profile defined for t in (0, 1)")
    logt = math.log(1.0 / t)
    if t <= math.exp(-v_hi):
        return c_tail * logt ** beta
    if t <= math.exp(-v_lo):
        return c_mid
    return c_top * logt ** (-alpha)


def log_envelope(t: float, c_max: float, alpha: float, beta: float) -> float:
    """Two-piece envelope dominating any three-regime profile with constants
    bounded by c_max: grows like (log 1/t)^beta below e^{-1} and decays like
    (log 1/t)^(-alpha) above it."""
    if not 0.0 < t < 1.0:
        raise GeometryError("envelope defined for t in (0, 1)")
    logt = math.log(1.0 / t)
    return c_max * (logt ** beta if t <= math.exp(-1.0) else logt ** (-alpha))
