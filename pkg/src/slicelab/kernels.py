"""Markov transition mechanisms.

The ideal slice step draws a height t uniformly below the current density
value and then resamples exactly from the reference measure restricted to the
superlevel set.  A hybrid step replaces the exact on-slice draw by one
transition of a Markov kernel that leaves that restriction invariant:
independent-proposal accept/hold, Neal's stepping-out/shrinkage, or
Hit-and-Run on a convex slice.  Metropolis kernels with reference-reversible
proposals are provided both for their own sake and because the
independent-proposal case coincides with a hybrid slice sampler.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

from . import geometry
from .targets import TargetDensity, TargetError

__all__ = [
    "KernelError",
    "ChainState",
    "draw_height",
    "ideal_step",
    "hybrid_step",
    "im_on_slice_step",
    "stepping_out",
    "shrink_sample",
    "stepping_out_shrinkage_step",
    "hit_and_run_step",
    "on_slice_closed_form",
    "SteppingOutLaw",
    "ExactOnSlice",
    "IMOnSlice",
    "SteppingOutShrinkage",
    "HitAndRunOnSlice",
    "RWMGaussian",
    "IndependentProposal",
    "PCN",
    "metropolis_step",
    "lazy",
    "run_chain",
    "stationary_sampler",
    "parse_kernel",
    "KernelSpec",
]

MAX_PROCEDURE_ITER = 1_000_000


class KernelError(RuntimeError):
    """Kernel misuse or procedural iteration-cap overflow."""


@dataclass
class ChainState:
    """Position, private random stream and step counter of one chain."""

    position: np.ndarray
    rng: np.random.Generator
    steps: int = 0


def draw_height(target: TargetDensity, x, rng: np.random.Generator) -> float:
    """Auxiliary slice height t ~ Unif(0, varpi(x)); well defined per state
    even when sup varpi is infinite."""
    return rng.uniform() * target.density(x)


def ideal_step(target: TargetDensity, x, rng: np.random.Generator) -> np.ndarray:
    """One ideal slice transition: a height draw followed by an exact uniform
    draw on the superlevel set.  Requires an exact slice sampler."""
    t = draw_height(target, x, rng)
    return geometry.uniform_on_level(target, t, rng)


def hybrid_step(target: TargetDensity, on_slice, x,
                rng: np.random.Generator) -> np.ndarray:
    """One hybrid slice transition: a height draw followed by a single
    on-slice kernel transition."""
    t = draw_height(target, x, rng)
    return on_slice.step(target, t, np.atleast_1d(np.asarray(x, dtype=float)), rng)


def im_on_slice_step(target: TargetDensity, t: float, x,
                     rng: np.random.Generator) -> np.ndarray:
    """Independent-proposal on-slice move: propose from the reference measure,
    accept iff the proposal clears the height, otherwise hold."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = target.reference.sample(rng)
    return y if target.density(y) > t else x


def stepping_out(target: TargetDensity, t: float, x, h: float,
                 rng: np.random.Generator) -> tuple[float, float]:
    """Neal's stepping-out: place a width-h interval uniformly around x and
    expand in steps of h until both ends are outside the slice."""
    if h <= 0:
        raise KernelError("stepping-out width must be positive")
    x0 = float(np.atleast_1d(x)[0])
    left = x0 - h * rng.uniform()
    right = left + h
    inside = lambda y: target.density(np.array([y])) > t
    for _ in range(MAX_PROCEDURE_ITER):
        if not inside(left):
            break
        left -= h
    else:
        raise KernelError("stepping-out expansion exceeded the iteration cap")
    for _ in range(MAX_PROCEDURE_ITER):
        if not inside(right):
            break
        right += h
    else:
        raise KernelError("stepping-out expansion exceeded the iteration cap")
    return left, right


def shrink_sample(target: TargetDensity, t: float, x,
                  interval: tuple[float, float],
                  rng: np.random.Generator) -> np.ndarray:
    """Shrinkage: draw uniformly on the interval, return on success, else
    shrink the endpoint on the rejected side of x towards the rejected point.

    A draw landing exactly on x (a null event) counts as acceptance.
    """
    x0 = float(np.atleast_1d(x)[0])
    left, right = interval
    if not left <= x0 <= right:
        raise KernelError("shrinkage interval must contain the current point")
    for _ in range(MAX_PROCEDURE_ITER):
        y = rng.uniform(left, right)
        if target.density(np.array([y])) > t:
            return np.array([y])
        if y < x0:
            left = y
        elif y > x0:
            right = y
        else:
            return np.array([y])
    raise KernelError("shrinkage exceeded the iteration cap")


def stepping_out_shrinkage_step(target: TargetDensity, t: float, x, h: float,
                                rng: np.random.Generator) -> np.ndarray:
    """Composite stepping-out + shrinkage transition on a 1D slice."""
    interval = stepping_out(target, t, x, h, rng)
    return shrink_sample(target, t, x, interval, rng)


def hit_and_run_step(target: TargetDensity, t: float, x,
                     rng: np.random.Generator) -> np.ndarray:
    """Hit-and-Run on the superlevel set: uniform direction, then a uniform
    draw on the chord through x.  In one dimension this is an exact uniform
    draw on the slice interval."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    shape = geometry.level_shape(target, t)
    if isinstance(shape, geometry.Interval1D):
        if len(shape.intervals) > 1:
            raise KernelError("Hit-and-Run needs a convex slice")
        lo, hi = shape.intervals[0]
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise KernelError("Hit-and-Run needs a bounded slice")
        return np.array([rng.uniform(lo, hi)])
    theta = rng.normal(size=target.dim)
    norm = np.linalg.norm(theta)
    while norm < 1e-12:
        theta = rng.normal(size=target.dim)
        norm = np.linalg.norm(theta)
    theta /= norm
    s_lo, s_hi = geometry.chord(shape, x, theta)
    return x + rng.uniform(s_lo, s_hi) * theta


# ---------------------------------------------------------------------------
# On-slice kernel objects
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExactOnSlice:
    """H_t equal to the slice-restricted reference; the hybrid chain with
    this kernel is the ideal chain, by the same code path."""

    kind: str = "exact"

    def step(self, target, t, x, rng):
        return geometry.uniform_on_level(target, t, rng)


@dataclass(frozen=True)
class IMOnSlice:
    kind: str = "im"

    def step(self, target, t, x, rng):
        return im_on_slice_step(target, t, x, rng)


@dataclass(frozen=True)
class SteppingOutShrinkage:
    width: float
    kind: str = "stepout"

    def __post_init__(self):
        if self.width <= 0:
            raise KernelError("stepping-out width must be positive")

    def step(self, target, t, x, rng):
        if target.dim != 1:
            raise KernelError("stepping-out/shrinkage is one-dimensional")
        return stepping_out_shrinkage_step(target, t, x, self.width, rng)


@dataclass(frozen=True)
class HitAndRunOnSlice:
    kind: str = "har"

    def step(self, target, t, x, rng):
        return hit_and_run_step(target, t, x, rng)


@dataclass(frozen=True)
class LazyOnSlice:
    """Lazy modification of an on-slice kernel: hold with probability 1/2."""

    base: object
    kind: str = "lazy"

    def step(self, target, t, x, rng):
        if rng.uniform() < 0.5:
            return np.atleast_1d(np.asarray(x, dtype=float))
        return self.base.step(target, t, x, rng)


# ---------------------------------------------------------------------------
# Closed-form stepping-out/shrinkage transition law on two-interval slices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SteppingOutLaw:
    """Exact transition law of the stepping-out/shrinkage kernel at height t
    on a (at most two-interval) slice, valid when the expansion width is at
    least the maximal gap between the interval pair.

    The law is a mixture: with weight lam the uniform distribution on the
    whole slice, with weight (1 - lam) the uniform distribution on the
    interval currently containing the chain.
    """

    t: float
    lam: float
    slice_intervals: tuple[tuple[float, float], ...]

    def side(self, x) -> int:
        """Index of the slice interval containing x."""
        x0 = float(np.atleast_1d(x)[0])
        for i, (lo, hi) in enumerate(self.slice_intervals):
            if lo < x0 < hi:
                return i
        raise KernelError("point is not on the slice")

    def interval_masses(self, cuts: np.ndarray,
                        intervals: tuple[tuple[float, float], ...]) -> np.ndarray:
        """Uniform-measure masses of the bins [cuts[k], cuts[k+1]) over a
        union of intervals."""
        total = sum(hi - lo for lo, hi in intervals)
        masses = np.zeros(len(cuts) - 1)
        for lo, hi in intervals:
            clipped_lo = np.clip(cuts[:-1], lo, hi)
            clipped_hi = np.clip(cuts[1:], lo, hi)
            masses += np.maximum(clipped_hi - clipped_lo, 0.0)
        return masses / total

    def bin_probabilities(self, x, cuts: np.ndarray) -> np.ndarray:
        """Transition probabilities into the bins delimited by ``cuts``."""
        p = self.lam * self.interval_masses(cuts, self.slice_intervals)
        if self.lam < 1.0:
            own = (self.slice_intervals[self.side(x)],)
            p = p + (1.0 - self.lam) * self.interval_masses(cuts, own)
        return p

    def equal_mass_cuts(self, k: int) -> np.ndarray:
        """Bin edges splitting the slice into k bins of equal uniform mass."""
        lengths = np.array([hi - lo for lo, hi in self.slice_intervals])
        total = lengths.sum()
        targets_ = np.linspace(0.0, total, k + 1)
        cuts = []
        for s in targets_:
            acc = 0.0
            for (lo, hi), ln in zip(self.slice_intervals, lengths):
                if s <= acc + ln + 1e-15:
                    cuts.append(lo + (s - acc))
                    break
                acc += ln
        return np.array(cuts)


def on_slice_closed_form(target: TargetDensity, t: float, h: float) -> SteppingOutLaw:
    """Closed-form stepping-out/shrinkage law at height t with width h.

    On the two-interval band the mixture weight is
    ``(h - gap)/h * mass/(mass + gap)``; outside the band the kernel is the
    exact slice-restricted uniform (weight one).  Requires h at least the
    maximal gap.
    """
    consts = geometry.bimodal_constants(target)
    if h < consts.Delta:
        raise KernelError("closed form requires the width to dominate the maximal gap")
    shape = geometry.level_shape(target, t)
    intervals = shape.intervals
    if len(intervals) == 1:
        return SteppingOutLaw(t, 1.0, intervals)
    gap = intervals[1][0] - intervals[0][1]
    mass = sum(hi - lo for lo, hi in intervals)
    lam = (h - gap) / h * mass / (mass + gap)
    return SteppingOutLaw(t, lam, intervals)


# ---------------------------------------------------------------------------
# Metropolis kernels with reference-reversible proposals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RWMGaussian:
    """Isotropic Gaussian random-walk proposal; reversible for the Lebesgue
    reference by symmetry."""

    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise KernelError("random-walk step size must be positive")

    def validate(self, target: TargetDensity) -> None:
        if target.reference.kind != "lebesgue":
            raise KernelError("random-walk proposal needs a Lebesgue reference")

    def step(self, target, x, rng):
        return np.asarray(x, dtype=float) + self.sigma * rng.normal(size=target.dim)


@dataclass(frozen=True)
class IndependentProposal:
    """Proposal equal to the reference measure itself."""

    def validate(self, target: TargetDensity) -> None:
        if target.reference.kind == "lebesgue":
            raise KernelError("independent proposal needs a probability reference")

    def step(self, target, x, rng):
        return target.reference.sample(rng)


@dataclass(frozen=True)
class PCN:
    """Autoregressive proposal sqrt(1-s^2) x + s * sqrt(C) Z for a centered
    Gaussian reference with diagonal covariance C; reversible by construction.
    Finite-dimensional only."""

    s: float

    def __post_init__(self):
        if not 0.0 <= self.s <= 1.0:
            raise KernelError("autoregressive step size must lie in [0, 1]")

    def validate(self, target: TargetDensity) -> None:
        if target.reference.kind != "gaussian":
            raise KernelError("pCN proposal needs a Gaussian reference")

    def step(self, target, x, rng):
        sd = np.sqrt(np.asarray(target.reference.variances, dtype=float))
        x = np.asarray(x, dtype=float)
        return math.sqrt(1.0 - self.s ** 2) * x + self.s * sd * rng.normal(size=target.dim)


def metropolis_step(target: TargetDensity, proposal, x,
                    rng: np.random.Generator) -> np.ndarray:
    """Metropolis accept/reject with acceptance min(1, varpi(y)/varpi(x))."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(proposal.step(target, x, rng))
    if not target.reference.in_support(y):
        return x
    ratio = target.density(y) / target.density(x)
    return y if rng.uniform() < ratio else x


def lazy(step_fn: Callable) -> Callable:
    """Lazy modification: hold with probability 1/2, else delegate.  The
    resulting kernel is positive."""

    def lazy_step(x, rng):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if rng.uniform() < 0.5:
            return x
        return step_fn(x, rng)

    return lazy_step


def run_chain(step_fn: Callable, x0, n_steps: int, rng: np.random.Generator,
              *, burn: int = 0, thin: int = 1) -> np.ndarray:
    """Drive one chain and collect every ``thin``-th state after ``burn``."""
    state = ChainState(np.atleast_1d(np.asarray(x0, dtype=float)), rng)
    kept = []
    for _ in range(burn):
        state.position = step_fn(state.position, state.rng)
        state.steps += 1
    for i in range(n_steps):
        state.position = step_fn(state.position, state.rng)
        state.steps += 1
        if i % thin == 0:
            kept.append(np.array(state.position))
    return np.array(kept)


# ---------------------------------------------------------------------------
# Exact stationary samplers for the builtin targets
# ---------------------------------------------------------------------------


def stationary_sampler(target: TargetDensity) -> Callable[[np.random.Generator], np.ndarray]:
    """Exact sampler for the normalized target, where one exists."""
    name = target.name
    if name == "exp":
        alpha = target.params["alpha"]
        return lambda rng: np.array([rng.exponential(1.0 / alpha)])
    if name == "student":
        return _student_sampler(target)
    if name == "bimodal1d":
        return _bimodal_sampler(target)
    if name == "diagquad":
        sd = np.sqrt(1.0 / np.asarray(target.params["coeffs"], dtype=float))
        return lambda rng: sd * rng.normal(size=target.dim)
    if name == "quadquartic":
        mask = target.params["quad_mask"]

        def draw(rng):
            x = np.empty(target.dim)
            x[mask] = rng.normal(size=int(mask.sum())) / math.sqrt(2.0)
            n4 = int((~mask).sum())
            mag = rng.gamma(0.25, 1.0, size=n4) ** 0.25
            x[~mask] = mag * rng.choice((-1.0, 1.0), size=n4)
            return x

        return draw
    raise TargetError(f"no exact stationary sampler for target {name!r}")


def _student_sampler(target: TargetDensity):
    """Radial inverse-CDF sampler: uniform direction times a radius drawn by
    inverting the radial distribution function (analytic in dimension two)."""
    d, m = target.dim, target.params["m"]
    if d == 2:
        def radius(u):
            return math.sqrt((1.0 - u) ** (-2.0 / m) - 1.0)
    else:
        dens = lambda r: r ** (d - 1) * (1.0 + r * r) ** (-(d + m) / 2.0)
        total, _ = integrate.quad(dens, 0.0, np.inf)

        def cdf(rho):
            val, _ = integrate.quad(dens, 0.0, rho)
            return val / total

        def radius(u):
            hi = 1.0
            while cdf(hi) < u:
                hi *= 2.0
            return optimize.brentq(lambda r: cdf(r) - u, 0.0, hi, xtol=1e-12)

    def draw(rng):
        z = rng.normal(size=d)
        z /= np.linalg.norm(z)
        return radius(rng.uniform()) * z

    return draw


def _bimodal_sampler(target: TargetDensity):
    """Inverse-CDF sampler through the two-branch error-function CDF."""
    from scipy import special

    c1, c2 = target.params["centers"]
    a1, a2 = target.params["heights"]
    x_cross = target.params["x_cross"]
    c = target.normalizer()
    sqrt_pi = math.sqrt(math.pi)

    def cdf(x):
        left = 0.5 * sqrt_pi * (1.0 + special.erf(min(x, x_cross) - c1))
        right = 0.0
        if x > x_cross:
            right = a2 * 0.5 * sqrt_pi * (special.erf(x - c2) - special.erf(x_cross - c2))
        return (left + right) / c

    def draw(rng):
        u = rng.uniform()
        return np.array([optimize.brentq(lambda x: cdf(x) - u, -40.0, 40.0, xtol=1e-13)])

    return draw


# ---------------------------------------------------------------------------
# Kernel spec strings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelSpec:
    """Parsed kernel selector: ``ideal``, ``hybrid:<on-slice>``,
    ``metropolis:<proposal>``, optionally wrapped by a ``lazy:`` prefix."""

    name: str
    kind: str
    variant: Optional[str] = None
    params: dict = field(default_factory=dict)
    is_lazy: bool = False

    def resolve_width(self, target: TargetDensity) -> float:
        h = self.params.get("h")
        if h == "auto2x":
            return 2.0 * geometry.bimodal_constants(target).Delta
        return float(h)

    def step_factory(self, target: TargetDensity) -> Callable:
        """Bind the spec to a target, returning ``step(x, rng) -> x``."""
        if self.kind == "ideal":
            base = lambda x, rng: ideal_step(target, x, rng)
        elif self.kind == "hybrid":
            on_slice = self._on_slice(target)
            base = lambda x, rng: hybrid_step(target, on_slice, x, rng)
        elif self.kind == "metropolis":
            proposal = self._proposal()
            proposal.validate(target)
            base = lambda x, rng: metropolis_step(target, proposal, x, rng)
        else:
            raise KernelError(f"kernel {self.name!r} cannot be sampled")
        return lazy(base) if self.is_lazy else base

    def _on_slice(self, target):
        if self.variant == "exact":
            return ExactOnSlice()
        if self.variant == "im":
            return IMOnSlice()
        if self.variant == "stepout":
            return SteppingOutShrinkage(self.resolve_width(target))
        if self.variant == "har":
            return HitAndRunOnSlice()
        raise KernelError(f"unknown on-slice kernel {self.variant!r}")

    def _proposal(self):
        if self.variant == "rwm":
            return RWMGaussian(float(self.params["sigma"]))
        if self.variant == "im":
            return IndependentProposal()
        if self.variant == "pcn":
            return PCN(float(self.params["s"]))
        raise KernelError(f"unknown proposal {self.variant!r}")


def parse_kernel(spec: str) -> KernelSpec:
    """Parse a kernel selector string.

    Grammar: ``ideal``, ``hybrid:im``, ``hybrid:stepout(h=...)`` (h may be
    ``auto2x`` for twice the maximal slice gap), ``hybrid:har``,
    ``metropolis:rwm(sigma=...)``, ``metropolis:im``, ``metropolis:pcn(s=...)``;
    any of these may carry a ``lazy:`` prefix.  ``identity`` and
    ``independent`` name the trivial kernels used by the matrix lab.
    """
    text = spec.strip()
    is_lazy = text.startswith("lazy:")
    if is_lazy:
        text = text[len("lazy:"):]
    params: dict = {}
    if "(" in text:
        if not text.endswith(")"):
            raise KernelError(f"malformed kernel spec {spec!r}")
        text, body = text[:-1].split("(", 1)
        for item in body.split(","):
            if not item:
                continue
            if "=" not in item:
                raise KernelError(f"malformed kernel parameter {item!r}")
            key, val = item.split("=", 1)
            params[key.strip()] = val.strip()
    if text == "ideal":
        return KernelSpec(spec.strip(), "ideal", "exact", params, is_lazy)
    if text in ("identity", "independent"):
        return KernelSpec(spec.strip(), text, None, params, is_lazy)
    if ":" not in text:
        raise KernelError(f"unknown kernel spec {spec!r}")
    kind, variant = text.split(":", 1)
    if kind not in ("hybrid", "metropolis"):
        raise KernelError(f"unknown kernel family {kind!r}")
    if "h" in params and params["h"] != "auto2x":
        params["h"] = float(params["h"])
    return KernelSpec(spec.strip(), kind, variant, params, is_lazy)
