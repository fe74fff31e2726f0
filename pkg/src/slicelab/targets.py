"""Target distributions given as unnormalized densities against a reference measure.

A target is a pair (varpi, nu): ``pi(dx) = c^{-1} varpi(x) nu(dx)`` with
``c = int varpi dnu`` and potential ``V = -log varpi``.  The builtin families
carry whatever analytic structure they have (superlevel-set masses,
normalizers, exact stationary samplers); everything else falls back to
quadrature or Monte Carlo with reported uncertainty.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate, optimize, special

__all__ = [
    "TargetError",
    "SupportError",
    "ReferenceMeasure",
    "TargetDensity",
    "MassEstimate",
    "make_builtin",
    "parse_target",
    "exp_target",
    "student_t_type",
    "quad_quartic",
    "diag_quadratic",
    "bimodal_1d",
    "unit_ball_volume",
]


class TargetError(ValueError):
    """Invalid target parameters."""


class SupportError(ValueError):
    """Point outside the support of the reference measure."""


def unit_ball_volume(d: int) -> float:
    """Lebesgue volume of the d-dimensional Euclidean unit ball."""
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


@dataclass(frozen=True)
class ReferenceMeasure:
    """Reference measure nu: Lebesgue(d), Exponential(rate) on [0,inf), or
    a centered Gaussian with diagonal covariance.

    Exponential and Gaussian kinds support exact i.i.d. sampling; Lebesgue is
    not a probability measure, so ``sample`` raises for it.
    """

    kind: str
    dim: int
    rate: float = 0.0
    variances: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in ("lebesgue", "exponential", "gaussian"):
            raise TargetError(f"unknown reference kind {self.kind!r}")
        if self.dim < 1:
            raise TargetError("dimension must be >= 1")
        if self.kind == "exponential":
            if self.dim != 1:
                raise TargetError("exponential reference is one-dimensional")
            if self.rate <= 0:
                raise TargetError("exponential rate must be positive")
        if self.kind == "gaussian":
            if self.variances is None or len(self.variances) != self.dim:
                raise TargetError("gaussian reference needs one variance per axis")
            if any(v <= 0 for v in self.variances):
                raise TargetError("gaussian variances must be positive")

    def in_support(self, x: np.ndarray) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.kind == "exponential":
            return bool(np.all(x >= 0.0))
        return True

    def density(self, x) -> float:
        """Density of nu w.r.t. Lebesgue measure (1.0 for the Lebesgue kind)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.kind == "lebesgue":
            return 1.0
        if self.kind == "exponential":
            if not self.in_support(x):
                raise SupportError("exponential reference lives on [0, inf)")
            return float(self.rate * np.exp(-self.rate * x[0]))
        var = np.asarray(self.variances, dtype=float)
        z = float(np.sum(x * x / var))
        norm = float(np.prod(np.sqrt(2.0 * math.pi * var)))
        return math.exp(-0.5 * z) / norm

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        if self.kind == "lebesgue":
            raise TargetError("Lebesgue reference is not a probability measure; "
                              "no i.i.d. sampler exists")
        n = 1 if size is None else size
        if self.kind == "exponential":
            out = rng.exponential(1.0 / self.rate, size=(n, 1))
        else:
            sd = np.sqrt(np.asarray(self.variances, dtype=float))
            out = rng.normal(size=(n, self.dim)) * sd
        return out[0] if size is None else out


class MassEstimate(NamedTuple):
    """Superlevel-set mass with its Monte Carlo standard error (0 if analytic)."""

    value: float
    stderr: float


@dataclass(frozen=True)
class TargetDensity:
    """Unnormalized target density and its analytic structure.

    ``density_eval`` returns varpi(x) > 0, ``potential_eval`` returns
    V(x) = -log varpi(x); ``sup_density`` is the (possibly infinite) supremum
    of varpi.  Family-specific constants live in ``params``.
    """

    name: str
    dim: int
    reference: ReferenceMeasure
    density_eval: Callable[[np.ndarray], float]
    potential_eval: Callable[[np.ndarray], float]
    sup_density: float
    geometry_tag: Optional[str] = None
    params: dict = field(default_factory=dict)
    _level_mass_fn: Optional[Callable[[float], float]] = None
    _normalizer_fn: Optional[Callable[[], float]] = None

    # -- basic evaluations ------------------------------------------------

    def density(self, x) -> float:
        """varpi(x); raises SupportError off the reference support."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise TargetError(f"expected point of dimension {self.dim}")
        if not self.reference.in_support(x):
            raise SupportError("point outside the reference support")
        return float(self.density_eval(x))

    def potential(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.reference.in_support(x):
            raise SupportError("point outside the reference support")
        return float(self.potential_eval(x))

    @property
    def slice_height_range(self) -> tuple[float, float]:
        """Open interval of admissible slice heights (0, sup varpi)."""
        return (0.0, self.sup_density)

    def check_height(self, t: float) -> None:
        if not (0.0 < t < self.sup_density):
            raise TargetError(
                f"slice height t={t} outside (0, {self.sup_density})")

    # -- superlevel-set mass ----------------------------------------------

    def level_mass(self, t: float, *, rng: Optional[np.random.Generator] = None,
                   n: int = 100_000) -> MassEstimate:
        """nu-mass m(t) of the superlevel set {varpi > t}.

        Analytic for the families that admit it; otherwise a Monte Carlo
        estimate over a bounding region, with its standard error.
        """
        self.check_height(t)
        if self._level_mass_fn is not None:
            return MassEstimate(float(self._level_mass_fn(t)), 0.0)
        return self._level_mass_mc(t, rng=rng, n=n)

    def _level_mass_mc(self, t, *, rng=None, n=100_000) -> MassEstimate:
        if rng is None:
            rng = np.random.default_rng(0)
        if self.reference.kind != "lebesgue" or "outer_radius" not in self.params:
            raise TargetError(f"no level-mass rule for target {self.name!r}")
        v = math.log(1.0 / t)
        radius = self.params["outer_radius"](v)
        vol = unit_ball_volume(self.dim) * radius ** self.dim
        pts = _uniform_in_ball(rng, n, self.dim) * radius
        inside = np.fromiter((self.density_eval(p) > t for p in pts), bool, n)
        p_hat = inside.mean()
        return MassEstimate(vol * p_hat, vol * math.sqrt(p_hat * (1 - p_hat) / n))

    # -- normalizing constant ----------------------------------------------

    def normalizer(self) -> float:
        """c = int varpi dnu, analytic where available else by quadrature."""
        if self._normalizer_fn is not None:
            return float(self._normalizer_fn())
        return self.normalizer_quadrature()

    def normalizer_quadrature(self) -> float:
        """Quadrature normalizer: adaptive in 1D, tensor Gauss rules up to d=4."""
        if self.reference.kind == "exponential":
            val, _ = integrate.quad(
                lambda x: self.density_eval(np.array([x])) * self.reference.density(np.array([x])),
                0.0, np.inf, epsabs=1e-10, limit=400)
            return val
        if self.dim == 1:
            val, _ = integrate.quad(
                lambda x: self.density_eval(np.array([x])) * self.reference.density(np.array([x])),
                -np.inf, np.inf, epsabs=1e-10, limit=400)
            return val
        if self.dim > 4:
            raise TargetError("no analytic normalizer and quadrature is limited to d <= 4")
        half = self.params.get("quad_halfwidth", 12.0)
        nodes, wts = np.polynomial.legendre.leggauss(64)
        nodes, wts = half * nodes, half * wts
        grids = np.meshgrid(*([nodes] * self.dim), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        wmats = np.meshgrid(*([wts] * self.dim), indexing="ij")
        w = np.ones_like(wmats[0])
        for wm in wmats:
            w = w * wm
        vals = np.array([self.density_eval(p) * self.reference.density(p) for p in pts])
        return float(np.sum(vals * w.ravel()))


def _uniform_in_ball(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    z = rng.normal(size=(n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = rng.uniform(size=(n, 1)) ** (1.0 / d)
    return z * r


# ---------------------------------------------------------------------------
# Builtin families
# ---------------------------------------------------------------------------


def exp_target(alpha: float, lam: float) -> TargetDensity:
    """Exponential(alpha) target against an Exponential(lam) reference.

    varpi(x) = exp(-(alpha - lam) x) on [0, inf).  For lam > alpha, varpi is
    increasing and sup varpi = inf; slice heights then range over (0, inf).
    """
    if alpha <= 0 or lam <= 0:
        raise TargetError("rates must be positive")
    r = alpha - lam

    def dens(x):
        return math.exp(-r * float(x[0]))

    def pot(x):
        return r * float(x[0])

    def mass(t):
        if r > 0:
            return 1.0 - t ** (lam / r)
        if r == 0:
            return 1.0
        return max(1.0, t) ** (lam / r)

    sup = 1.0 if r >= 0 else math.inf
    return TargetDensity(
        name="exp",
        dim=1,
        reference=ReferenceMeasure("exponential", 1, rate=lam),
        density_eval=dens,
        potential_eval=pot,
        sup_density=sup,
        geometry_tag="interval",
        params={"alpha": alpha, "lam": lam, "r": r},
        _level_mass_fn=mass,
        _normalizer_fn=lambda: lam / alpha,
    )


def student_t_type(d: int, m: float) -> TargetDensity:
    """Heavy-tailed spherically symmetric target varpi(x) = (1+|x|^2)^(-(d+m)/2).

    Superlevel sets are Euclidean balls of radius sqrt(t^(-2/(d+m)) - 1).
    Requires m > 2 so the second moment exists.
    """
    if d < 1:
        raise TargetError("dimension must be >= 1")
    if m <= 2:
        raise TargetError("degrees-of-freedom parameter must exceed 2")
    expo = 0.5 * (d + m)

    def dens(x):
        return float((1.0 + np.dot(x, x)) ** (-expo))

    def pot(x):
        return float(expo * np.log1p(np.dot(x, x)))

    def mass(t):
        return unit_ball_volume(d) * (t ** (-2.0 / (d + m)) - 1.0) ** (d / 2.0)

    def norm():
        return math.pi ** (d / 2.0) * math.gamma(m / 2.0) / math.gamma((d + m) / 2.0)

    return TargetDensity(
        name="student",
        dim=d,
        reference=ReferenceMeasure("lebesgue", d),
        density_eval=dens,
        potential_eval=pot,
        sup_density=1.0,
        geometry_tag="ball",
        params={"m": m},
        _level_mass_fn=mass,
        _normalizer_fn=norm,
    )


def quad_quartic(d: int, index_set) -> TargetDensity:
    """Potential V(x) = sum_{i in I} x_i^2 + sum_{i not in I} x_i^4.

    Mixed quadratic/quartic growth makes the superlevel sets convex but
    increasingly ill-conditioned towards both small and large heights.
    Coordinates are 1-based in ``index_set``.
    """
    if d < 1:
        raise TargetError("dimension must be >= 1")
    index_set = frozenset(int(i) for i in index_set)
    if not index_set <= set(range(1, d + 1)):
        raise TargetError("index set must be a subset of {1..d}")
    quad_mask = np.zeros(d, dtype=bool)
    for i in index_set:
        quad_mask[i - 1] = True

    def pot(x):
        x = np.asarray(x, dtype=float)
        return float(np.sum(x[quad_mask] ** 2) + np.sum(x[~quad_mask] ** 4))

    def dens(x):
        return math.exp(-pot(x))

    def norm():
        n_quad = int(quad_mask.sum())
        return math.pi ** (n_quad / 2.0) * (math.gamma(0.25) / 2.0) ** (d - n_quad)

    def outer_radius(v):
        # Superlevel set {V < v} sits inside B(0, sqrt(d * max(v, 1))).
        return math.sqrt(d * max(v, 1.0))

    return TargetDensity(
        name="quadquartic",
        dim=d,
        reference=ReferenceMeasure("lebesgue", d),
        density_eval=dens,
        potential_eval=pot,
        sup_density=1.0,
        geometry_tag="convex",
        params={"index_set": index_set, "quad_mask": quad_mask,
                "outer_radius": outer_radius},
        _normalizer_fn=norm,
    )


def diag_quadratic(d: int, coeffs) -> TargetDensity:
    """Gaussian-shaped target with V(x) = 0.5 * sum a_i x_i^2, a_i in [m, L].

    Strongly convex and smooth; superlevel sets are axis-aligned ellipsoids
    (balls when all coefficients agree).
    """
    a = np.asarray(list(coeffs), dtype=float)
    if d < 1 or len(a) != d:
        raise TargetError("need one positive coefficient per axis")
    if np.any(a <= 0):
        raise TargetError("coefficients must be positive")

    def pot(x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * np.sum(a * x * x))

    def dens(x):
        return math.exp(-pot(x))

    def mass(t):
        v = math.log(1.0 / t)
        return unit_ball_volume(d) * (2.0 * v) ** (d / 2.0) / math.sqrt(float(np.prod(a)))

    def norm():
        return float(np.prod(np.sqrt(2.0 * math.pi / a)))

    return TargetDensity(
        name="diagquad",
        dim=d,
        reference=ReferenceMeasure("lebesgue", d),
        density_eval=dens,
        potential_eval=pot,
        sup_density=1.0,
        geometry_tag="ball" if np.all(a == a[0]) else "convex",
        params={"coeffs": a, "m": float(a.min()), "L": float(a.max())},
        _level_mass_fn=mass,
        _normalizer_fn=norm,
    )


# Two-bump density used throughout the comparison lab: unequal mode heights
# give a strictly positive minimal slice mass, so the stepping-out guarantee
# is nontrivial.
_BIMODAL_CENTERS = (-2.0, 2.0)
_BIMODAL_HEIGHTS = (1.0, 0.5)


def _bimodal_branches(x: float) -> tuple[float, float]:
    c1, c2 = _BIMODAL_CENTERS
    a1, a2 = _BIMODAL_HEIGHTS
    return a1 * math.exp(-((x - c1) ** 2)), a2 * math.exp(-((x - c2) ** 2))


def bimodal_1d() -> TargetDensity:
    """One-dimensional two-bump target varpi(x) = max(e^{-(x+2)^2}, 0.5 e^{-(x-2)^2}).

    The interior local minimum (the crossing of the two bumps) and the
    derived bimodality constants are located by bisection at construction.
    """

    def dens(x):
        f1, f2 = _bimodal_branches(float(x[0]))
        return max(f1, f2)

    def pot(x):
        return -math.log(dens(x))

    # Crossing point of the two branches; the bumps swap dominance exactly once.
    x_cross = optimize.brentq(
        lambda x: _bimodal_branches(x)[0] - _bimodal_branches(x)[1],
        0.0, 1.0, xtol=1e-10)
    t1 = max(_bimodal_branches(x_cross))
    t2 = _BIMODAL_HEIGHTS[1]

    c1, c2 = _BIMODAL_CENTERS
    a1, a2 = _BIMODAL_HEIGHTS

    def half_widths(t):
        s1 = math.sqrt(math.log(a1 / t)) if t < a1 else 0.0
        s2 = math.sqrt(math.log(a2 / t)) if t < a2 else 0.0
        return s1, s2

    def mass(t):
        s1, s2 = half_widths(t)
        if t >= t2:
            return 2.0 * s1
        if t >= t1:
            return 2.0 * s1 + 2.0 * s2
        return (c2 + s2) - (c1 - s1)

    def norm():
        sqrt_pi = math.sqrt(math.pi)
        left = 0.5 * sqrt_pi * (1.0 + math.erf(x_cross - c1))
        right = a2 * 0.5 * sqrt_pi * special.erfc(x_cross - c2)
        return left + right

    return TargetDensity(
        name="bimodal1d",
        dim=1,
        reference=ReferenceMeasure("lebesgue", 1),
        density_eval=dens,
        potential_eval=pot,
        sup_density=1.0,
        geometry_tag="bimodal",
        params={"centers": _BIMODAL_CENTERS, "heights": _BIMODAL_HEIGHTS,
                "x_cross": x_cross, "t1": t1, "t2": t2,
                "half_widths": half_widths},
        _level_mass_fn=mass,
        _normalizer_fn=norm,
    )


_BUILTINS = {
    "exp": lambda p: exp_target(p["alpha"], p["lam"]),
    "student": lambda p: student_t_type(int(p["d"]), p["m"]),
    "quadquartic": lambda p: quad_quartic(int(p["d"]), p["I"]),
    "diagquad": lambda p: diag_quadratic(int(p["d"]), p["a"]),
    "bimodal1d": lambda p: bimodal_1d(),
}


def make_builtin(kind: str, params: Optional[dict] = None) -> TargetDensity:
    """Construct a builtin target family by name with validated parameters."""
    if kind not in _BUILTINS:
        raise TargetError(f"unknown builtin target {kind!r}")
    return _BUILTINS[kind](params or {})


def parse_target(spec: str) -> TargetDensity:
    """Parse a target spec string.

    Grammar: ``exp(alpha,lambda)``, ``student(d,m)``,
    ``quadquartic(d,I=i1,i2,...)``, ``diagquad(d,a=a1,...,ad)``, ``bimodal1d``.
    """
    spec = spec.strip()
    if spec == "bimodal1d":
        return bimodal_1d()
    if "(" not in spec or not spec.endswith(")"):
        raise TargetError(f"malformed target spec {spec!r}")
    head, body = spec[:-1].split("(", 1)
    head = head.strip()
    if head == "exp":
        alpha, lam = (float(v) for v in body.split(","))
        return exp_target(alpha, lam)
    if head == "student":
        d, m = body.split(",")
        return student_t_type(int(d), float(m))
    if head == "quadquartic":
        parts = body.split(",")
        d = int(parts[0])
        rest = ",".join(parts[1:])
        if rest.startswith("I="):
            idx = [int(v) for v in rest[2:].split(",") if v]
        elif rest in ("", "I="):
            idx = []
        else:
            raise TargetError(f"malformed quadquartic spec {spec!r}")
        return quad_quartic(d, idx)
    if head == "diagquad":
        parts = body.split(",")
        d = int(parts[0])
        rest = ",".join(parts[1:])
        if not rest.startswith("a="):
            raise TargetError(f"malformed diagquad spec {spec!r}")
        coeffs = [float(v) for v in rest[2:].split(",") if v]
        return diag_quadratic(d, coeffs)
    raise TargetError(f"unknown target spec {spec!r}")
