"""Finite verification engine: 1D kernels as stochastic matrices on quantile
grids, Dirichlet forms, spectral gaps, and the comparison checks.

Matrices are cell-lumped versions of the continuous kernels: entry (i, j) is
the conditional probability of moving from cell i to cell j under one
stationary-started transition.  For the slice-type kernels this joint measure
has the height representation

    pi (x in cell_i, y in cell_j) = c^{-1} int m(t) nu_t(cell_i) H_t-mass(cell_j) dt,

so the matrix is assembled as a Gram accumulation over a height quadrature
and is symmetric (reversible) by construction; Dirichlet forms of
cell-constant functions then agree exactly with their continuous values.
Kernel mass escaping the grid is folded into the boundary cells and the fold
magnitude is reported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from . import geometry, kernels
from .targets import TargetDensity, TargetError

__all__ = [
    "SpectralError",
    "Grid1D",
    "StochasticMatrix",
    "quantile_grid",
    "discretize_1d",
    "dirichlet_form_matrix",
    "dirichlet_form_mc",
    "DirichletEstimate",
    "spectral_gap",
    "check_domination",
    "check_wpi_comparison",
    "check_gap_sandwich",
    "check_reversible_positive",
    "osc_norm",
    "ideal_dirichlet_quadrature",
    "invariance_test",
    "InvarianceReport",
    "make_test_functions",
    "TestFunctionSet",
    "grid_function",
    "estimate_matrix_mc",
]

GRID_EPS = 1e-6
ROW_TOL = 1e-8


class SpectralError(RuntimeError):
    """Discretization or verification failure."""


# ---------------------------------------------------------------------------
# Quantile grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid1D:
    edges: np.ndarray
    centers: np.ndarray
    masses: np.ndarray


def stationary_cdf(target: TargetDensity) -> Callable[[float], float]:
    """Distribution function of the normalized target (1D families)."""
    if target.name == "exp":
        alpha = target.params["alpha"]
        return lambda x: -math.expm1(-alpha * max(x, 0.0))
    if target.name == "bimodal1d":
        from scipy import special

        c1, c2 = target.params["centers"]
        a2 = target.params["heights"][1]
        x_cross = target.params["x_cross"]
        c = target.normalizer()
        sqrt_pi = math.sqrt(math.pi)

        def cdf(x):
            left = 0.5 * sqrt_pi * (1.0 + special.erf(min(x, x_cross) - c1))
            right = 0.0
            if x > x_cross:
                right = a2 * 0.5 * sqrt_pi * (special.erf(x - c2)
                                              - special.erf(x_cross - c2))
            return (left + right) / c

        return cdf
    raise TargetError(f"no distribution function for target {target.name!r}")


def _quantile(target: TargetDensity, u: float) -> float:
    if target.name == "exp":
        return -math.log1p(-u) / target.params["alpha"]
    cdf = stationary_cdf(target)
    return optimize.brentq(lambda x: cdf(x) - u, -50.0, 50.0, xtol=1e-13)


def quantile_grid(target: TargetDensity, n: int, x_max: Optional[float] = None,
                  eps: float = GRID_EPS) -> Grid1D:
    """Equal-mass cells truncated at the 1-eps quantile(s).

    Half-line supports keep their left endpoint; two-sided supports truncate
    eps/2 on each side.  An x_max below the truncation quantile would leave
    more than eps of mass uncovered and is rejected.
    """
    if target.dim != 1:
        raise SpectralError("matrix discretization is one-dimensional")
    if n < 50:
        raise SpectralError("need at least 50 cells")
    half_line = target.reference.kind == "exponential"
    u_lo = 0.0 if half_line else eps / 2.0
    u_hi = 1.0 - eps if half_line else 1.0 - eps / 2.0
    us = np.linspace(u_lo, u_hi, n + 1)
    edges = np.array([_quantile(target, u) for u in us])
    if x_max is not None:
        if edges[-1] > x_max or (not half_line and edges[0] < -x_max):
            raise SpectralError(
                f"x_max={x_max} covers less than 1 - {eps} of the target mass")
    # Boundary cells absorb the truncated tail mass: the lumped chain lives on
    # n cells whose outermost members extend to the support boundary.
    masses = np.diff(us)
    masses[0] += u_lo
    masses[-1] += 1.0 - u_hi
    centers = np.array([_quantile(target, 0.5 * (a + b)) for a, b in zip(us[:-1], us[1:])])
    return Grid1D(edges, centers, masses)


@dataclass(frozen=True)
class StochasticMatrix:
    """Row-stochastic kernel matrix on a quantile grid with its stationary
    weights.  Rows may be renormalized by at most 1e-8; larger corrections
    are treated as a failed quadrature."""

    grid: np.ndarray
    edges: np.ndarray
    P: np.ndarray
    weights: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.grid)
        if self.P.shape != (n, n) or len(self.weights) != n:
            raise SpectralError("inconsistent matrix shapes")
        if np.any(np.diff(self.edges) <= 0):
            raise SpectralError("grid edges must be strictly increasing")
        if np.any(self.weights <= 0):
            raise SpectralError("stationary weights must be strictly positive")
        if np.any(self.P < -1e-12):
            raise SpectralError("negative transition mass")
        rows = self.P.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > 1e-10:
            raise SpectralError("rows are not stochastic after renormalization")

    @property
    def n(self) -> int:
        return len(self.grid)

    def reversibility_residual(self) -> float:
        flux = self.weights[:, None] * self.P
        return float(np.max(np.abs(flux - flux.T)))

    def invariance_residual(self) -> float:
        return float(np.max(np.abs(self.weights @ self.P - self.weights)))


def _finalize(grid: Grid1D, raw: np.ndarray, meta: dict) -> StochasticMatrix:
    """Normalize unnormalized joint-mass rows into a stochastic matrix.

    Quantile cells carry equal stationary mass, so the raw row sums must all
    agree; their spread is the renormalization correction and doubles as a
    quadrature health check.
    """
    raw = np.maximum(raw, 0.0)
    rows = raw.sum(axis=1)
    P = raw / rows[:, None]
    meta = dict(meta)
    weights = grid.masses / grid.masses.sum()
    meta["row_correction"] = float(np.max(np.abs(rows / (rows.sum() * weights) - 1.0)))
    return StochasticMatrix(grid.centers, grid.edges, P, weights, meta)


# ---------------------------------------------------------------------------
# Height quadrature rules
# ---------------------------------------------------------------------------


def _gl_nodes(lo: float, hi: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    return mid + half * x, half * w


def _log_gl_nodes(lo: float, hi: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = math.log(lo), math.log(hi)
    mid, half = 0.5 * (b + a), 0.5 * (b - a)
    tau = mid + half * x
    t = np.exp(tau)
    return t, half * w * t


def _dyadic_nodes(lo: float, hi: float, toward: str, order: int = 10,
                  levels: int = 46) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule with geometric refinement toward one endpoint,
    absorbing integrable endpoint singularities."""
    offs = (hi - lo) * 0.5 ** np.arange(levels + 1)
    if toward == "lo":
        pairs = [(lo + offs[k + 1], lo + offs[k]) for k in range(levels)]
        pairs.append((lo, lo + offs[levels]))
    else:
        pairs = [(hi - offs[k], hi - offs[k + 1]) for k in range(levels)]
        pairs.append((hi - offs[levels], hi))
    ts, ws = [], []
    for a, b in pairs:
        if b <= a:
            continue
        t, w = _gl_nodes(a, b, order)
        ts.append(t)
        ws.append(w)
    return np.concatenate(ts), np.concatenate(ws)


def _height_rule(breaks: Sequence[float], singular: Sequence[float],
                 order: int = 16, first_piece_plain: bool = False
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise quadrature over consecutive ``breaks``: log-spaced Gauss
    nodes on regular pieces, dyadic refinement next to singular endpoints."""
    breaks = np.unique(np.asarray(breaks, dtype=float))
    singular = set(float(s) for s in singular)
    ts, ws = [], []
    for i, (lo, hi) in enumerate(zip(breaks[:-1], breaks[1:])):
        if hi - lo <= 1e-300:
            continue
        if lo in singular and hi in singular:
            mid = 0.5 * (lo + hi)
            for a, b, side in ((lo, mid, "lo"), (mid, hi, "hi")):
                t, w = _dyadic_nodes(a, b, side)
                ts.append(t)
                ws.append(w)
            continue
        if lo in singular or (i == 0 and lo <= 0):
            t, w = _dyadic_nodes(lo, hi, "lo")
        elif hi in singular:
            t, w = _dyadic_nodes(lo, hi, "hi")
        elif lo <= 0 or first_piece_plain and i == 0:
            t, w = _gl_nodes(lo, hi, order)
        else:
            t, w = _log_gl_nodes(lo, hi, order)
        ts.append(t)
        ws.append(w)
    return np.concatenate(ts), np.concatenate(ws)


# ---------------------------------------------------------------------------
# Slice cell masses (vectorized over heights)
# ---------------------------------------------------------------------------


def _exp_slice_vectors(target: TargetDensity, t: np.ndarray,
                       edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reference-measure masses nu_t(cell) of the grid cells (folds included)
    and the slice masses m(t), for the exponential family."""
    lam, r = target.params["lam"], target.params["r"]
    nb = np.exp(-lam * edges)
    t = np.asarray(t, dtype=float)
    if r > 0:
        p = lam / r
        tp = t ** p
        m = 1.0 - tp
        clipped = np.maximum(nb[None, :], tp[:, None])
        masses = clipped[:, :-1] - clipped[:, 1:]
        masses[:, -1] += clipped[:, -1] - tp
    elif r == 0:
        m = np.ones_like(t)
        masses = np.broadcast_to(nb[:-1] - nb[1:], (len(t), len(edges) - 1)).copy()
        masses[:, -1] += nb[-1]
    else:
        q = lam / r
        m = np.maximum(1.0, t) ** q
        clipped = np.minimum(nb[None, :], m[:, None])
        masses = clipped[:, :-1] - clipped[:, 1:]
        masses[:, -1] += clipped[:, -1]
    return masses / m[:, None], m


def _bimodal_intervals(target: TargetDensity, t: np.ndarray):
    """Endpoints of the one or two slice intervals at each height."""
    (c1, c2) = target.params["centers"]
    (a1, a2) = target.params["heights"]
    t1, t2 = target.params["t1"], target.params["t2"]
    t = np.asarray(t, dtype=float)
    s1 = np.sqrt(np.maximum(np.log(a1 / t), 0.0))
    s2 = np.sqrt(np.maximum(np.log(np.maximum(a2 / t, 1.0)), 0.0))
    lo1, hi1 = c1 - s1, c1 + s1
    lo2, hi2 = c2 - s2, c2 + s2
    merged = t < t1
    two = (t >= t1) & (t < t2)
    hi1 = np.where(merged, hi2, hi1)          # single interval (lo1, hi2)
    lo2 = np.where(two, lo2, np.nan)
    hi2 = np.where(two, hi2, np.nan)
    return lo1, hi1, lo2, hi2


def _interval_cell_masses(lo: np.ndarray, hi: np.ndarray,
                          edges: np.ndarray) -> np.ndarray:
    """Lebesgue masses of grid cells inside (lo, hi), folding overshoot into
    the boundary cells."""
    lo_c = np.clip(edges[None, :], lo[:, None], hi[:, None])
    masses = lo_c[:, 1:] - lo_c[:, :-1]
    masses[:, 0] += np.maximum(edges[0] - lo, 0.0)
    masses[:, -1] += np.maximum(hi - edges[-1], 0.0)
    return masses


def _bimodal_slice_vectors(target: TargetDensity, t: np.ndarray, edges: np.ndarray):
    """nu_t cell masses, slice masses, interval gap, and the per-interval
    (component mass vector, component weight) pairs on the two-interval band."""
    lo1, hi1, lo2, hi2 = _bimodal_intervals(target, t)
    m1 = _interval_cell_masses(lo1, hi1, edges)
    len1 = hi1 - lo1
    two = ~np.isnan(lo2)
    lo2f = np.where(two, lo2, 0.0)
    hi2f = np.where(two, hi2, 0.0)
    m2 = _interval_cell_masses(lo2f, hi2f, edges) * two[:, None]
    len2 = np.where(two, hi2f - lo2f, 0.0)
    total = len1 + len2
    v = (m1 + m2) / total[:, None]
    gap = np.where(two, lo2f - hi1, 0.0)
    comp1 = np.divide(m1, len1[:, None], out=np.zeros_like(m1),
                      where=len1[:, None] > 0)
    comp2 = np.divide(m2, len2[:, None], out=np.zeros_like(m2),
                      where=len2[:, None] > 0)
    w1 = len1 / total
    w2 = len2 / total
    return v, total, gap, (comp1, w1), (comp2, w2), two


def _exp_height_rule(target: TargetDensity, edges: np.ndarray):
    r = target.params["r"]
    dens = np.exp(-r * edges)
    if r > 0:
        breaks = np.concatenate(([0.0], np.sort(dens)))
        return _height_rule(breaks, singular=[0.0])
    if r == 0:
        return _gl_nodes(0.0, 1.0, 4)
    breaks = np.concatenate(([0.0, 1.0], np.sort(dens)))
    return _height_rule(breaks, singular=[], first_piece_plain=True)


def _bimodal_height_rule(target: TargetDensity, edges: np.ndarray):
    (c1, c2) = target.params["centers"]
    (a1, a2) = target.params["heights"]
    t1, t2 = target.params["t1"], target.params["t2"]
    f1 = a1 * np.exp(-((edges - c1) ** 2))
    f2 = a2 * np.exp(-((edges - c2) ** 2))
    vals = np.concatenate((f1, f2, [t1, t2]))
    vals = vals[(vals > 0.0) & (vals < 1.0)]
    breaks = np.concatenate(([0.0], np.sort(vals), [1.0]))
    return _height_rule(breaks, singular=[0.0, t2, 1.0])


# ---------------------------------------------------------------------------
# Matrix builders
# ---------------------------------------------------------------------------


def _gram(parts: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Accumulate sum_g w_g v_g v_g^T from (weights, row-vectors) batches."""
    blocks = [np.sqrt(np.maximum(w, 0.0))[:, None] * v for w, v in parts if len(w)]
    V = np.vstack(blocks)
    return V.T @ V


def _exp_tail_mass(target: TargetDensity, t_hi: float) -> float:
    """int_{t_hi}^inf m(t) dt for the increasing-density exponential case."""
    q = target.params["lam"] / target.params["r"]
    return -t_hi ** (q + 1.0) / (q + 1.0)


def _build_ideal(target: TargetDensity, grid: Grid1D) -> np.ndarray:
    if target.name == "exp":
        t, w = _exp_height_rule(target, grid.edges)
        v, m = _exp_slice_vectors(target, t, grid.edges)
        raw = _gram([(w * m, v)])
        if target.params["r"] < 0:
            t_hi = float(np.exp(-target.params["r"] * grid.edges[-1]))
            raw[-1, -1] += _exp_tail_mass(target, t_hi)
        return raw
    if target.name == "bimodal1d":
        t, w = _bimodal_height_rule(target, grid.edges)
        v, m, _, _, _, _ = _bimodal_slice_vectors(target, t, grid.edges)
        return _gram([(w * m, v)])
    raise SpectralError(f"no ideal-kernel matrix rule for target {target.name!r}")


def _build_hybrid_im(target: TargetDensity, grid: Grid1D) -> np.ndarray:
    """Independent-proposal hybrid slice kernel through the height route:
    continuous part m(t)^2 nu_t (x) nu_t plus the diagonal holding mass."""
    if target.name != "exp":
        raise SpectralError("the independent on-slice kernel needs a probability reference")
    t, w = _exp_height_rule(target, grid.edges)
    v, m = _exp_slice_vectors(target, t, grid.edges)
    raw = _gram([(w * m * m, v)])
    hold = ((w * (1.0 - m) * m)[:, None] * v).sum(axis=0)
    raw[np.diag_indices_from(raw)] += np.maximum(hold, 0.0)
    if target.params["r"] < 0:
        t_hi = float(np.exp(-target.params["r"] * grid.edges[-1]))
        raw[-1, -1] += _exp_tail_mass(target, t_hi)
    return raw


def _build_stepout(target: TargetDensity, grid: Grid1D, h: float) -> np.ndarray:
    """Stepping-out/shrinkage hybrid kernel on the two-bump target through
    its closed-form mixture law; valid for h at least the maximal gap."""
    if target.name != "bimodal1d":
        raise SpectralError("the closed-form stepping-out matrix is for the two-bump target")
    consts = geometry.bimodal_constants(target)
    if h < consts.Delta:
        raise SpectralError("width below the maximal slice gap: no closed form")
    t, w = _bimodal_height_rule(target, grid.edges)
    v, m, gap, (c1, w1), (c2, w2), two = _bimodal_slice_vectors(target, t, grid.edges)
    lam = np.where(two, (h - gap) / h * m / (m + gap), 1.0)
    parts = [
        (w * m * lam, v),
        (w * m * (1.0 - lam) * w1, c1),
        (w * m * (1.0 - lam) * w2, c2),
    ]
    return _gram(parts)


def _metropolis_im_rows(target: TargetDensity, x: np.ndarray,
                        edges: np.ndarray) -> np.ndarray:
    """Independent Metropolis rows at source points x: per-cell acceptance
    mass plus the rejection atom, tail mass folded into the last cell."""
    lam, alpha, r = target.params["lam"], target.params["alpha"], target.params["r"]
    a, b = edges[:-1], edges[1:]
    u = np.clip(x[:, None], a[None, :], b[None, :])
    if r >= 0:
        part_full = np.exp(-lam * a[None, :]) - np.exp(-lam * u)
        part_damped = np.exp(r * x)[:, None] * (lam / alpha) * (
            np.exp(-alpha * u) - np.exp(-alpha * b[None, :]))
        rows = part_full + part_damped
        tail = np.exp(r * x) * (lam / alpha) * math.exp(-alpha * edges[-1])
        atom = np.exp(-lam * x) * (1.0 - lam / alpha)
    else:
        part_damped = np.exp(-abs(r) * x)[:, None] * (lam / alpha) * (
            np.exp(-alpha * a[None, :]) - np.exp(-alpha * u))
        part_full = np.exp(-lam * u) - np.exp(-lam * b[None, :])
        rows = part_damped + part_full
        tail = np.full_like(x, math.exp(-lam * edges[-1]))
        atom = 1.0 - (np.exp(-abs(r) * x) * (lam / alpha) * (-np.expm1(-alpha * x))
                      + np.exp(-lam * x))
    rows[:, -1] += tail
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(a) - 1)
    rows[np.arange(len(x)), idx] += atom
    return rows


def _build_metropolis_im(target: TargetDensity, grid: Grid1D) -> np.ndarray:
    """Independent Metropolis kernel by source-cell quadrature of the
    accept/reject transition law (a route independent of the height-integral
    builders)."""
    if target.name != "exp":
        raise SpectralError("independent Metropolis matrices need the exponential family")
    lam, alpha = target.params["lam"], target.params["alpha"]
    nodes0, w0 = np.polynomial.legendre.leggauss(24)
    raw = np.zeros((len(grid.centers), len(grid.centers)))
    for i, (lo, hi) in enumerate(zip(grid.edges[:-1], grid.edges[1:])):
        n_sub = max(1, int(math.ceil((hi - lo) / 1.0)))
        subs = np.linspace(lo, hi, n_sub + 1)
        xs, ws = [], []
        for a, b in zip(subs[:-1], subs[1:]):
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            xs.append(mid + half * nodes0)
            ws.append(half * w0)
        x = np.concatenate(xs)
        w = np.concatenate(ws) * alpha * np.exp(-alpha * x)  # pi-density weight
        rows = _metropolis_im_rows(target, x, grid.edges)
        raw[i] = w @ rows
    return raw


_KNOWN_MATRIX_KERNELS = ("ideal", "hybrid:im", "hybrid:stepout", "metropolis:im",
                         "identity", "independent")


def discretize_1d(kernel_spec, target: TargetDensity, n: int,
                  x_max: Optional[float] = None) -> StochasticMatrix:
    """Stochastic-matrix surrogate of a kernel on the quantile grid.

    Available for kernels with an analytic transition law on the 1D builtin
    families; sampler-only kernels have no quadrature rule here (use
    :func:`estimate_matrix_mc` for an empirical, error-flagged estimate).
    """
    spec = kernels.parse_kernel(kernel_spec) if isinstance(kernel_spec, str) else kernel_spec
    grid = quantile_grid(target, n, x_max)
    meta = {"kernel": spec.name, "target": target.name, "n": n, "x_max": x_max}

    if spec.kind == "identity":
        mat = StochasticMatrix(grid.centers, grid.edges, np.eye(n),
                               grid.masses / grid.masses.sum(), meta)
    elif spec.kind == "independent":
        w = grid.masses / grid.masses.sum()
        mat = StochasticMatrix(grid.centers, grid.edges,
                               np.broadcast_to(w, (n, n)).copy(), w, meta)
    elif spec.kind == "ideal":
        mat = _finalize(grid, _build_ideal(target, grid), meta)
    elif spec.kind == "hybrid" and spec.variant == "im":
        mat = _finalize(grid, _build_hybrid_im(target, grid), meta)
    elif spec.kind == "hybrid" and spec.variant == "stepout":
        h = spec.resolve_width(target)
        meta["h"] = h
        mat = _finalize(grid, _build_stepout(target, grid, h), meta)
    elif spec.kind == "metropolis" and spec.variant == "im":
        mat = _finalize(grid, _build_metropolis_im(target, grid), meta)
    else:
        raise SpectralError(
            f"no quadrature matrix rule for kernel {spec.name!r}; "
            "estimate_matrix_mc offers an empirical surrogate")

    if spec.is_lazy:
        mat = StochasticMatrix(mat.grid, mat.edges, 0.5 * (mat.P + np.eye(n)),
                               mat.weights, {**mat.meta, "lazy": True})
    if mat.meta.get("row_correction", 0.0) > ROW_TOL:
        raise SpectralError("row renormalization exceeded tolerance: quadrature failure")
    return mat


def estimate_matrix_mc(step_fn, sampler, target: TargetDensity, n: int,
                       n_samples: int, rng: np.random.Generator,
                       x_max: Optional[float] = None) -> StochasticMatrix:
    """Empirical transition-matrix estimate from stationary-started single
    steps; flagged with its sampling error scale in ``meta``."""
    grid = quantile_grid(target, n, x_max)
    counts = np.full((n, n), 1e-12)
    for _ in range(n_samples):
        x = sampler(rng)
        y = step_fn(x, rng)
        i = int(np.clip(np.searchsorted(grid.edges, x[0], "right") - 1, 0, n - 1))
        j = int(np.clip(np.searchsorted(grid.edges, y[0], "right") - 1, 0, n - 1))
        counts[i, j] += 1.0
    meta = {"kernel": "empirical", "target": target.name, "n": n,
            "empirical": True, "n_samples": n_samples,
            "sampling_error": 1.0 / math.sqrt(n_samples / n)}
    rows = counts.sum(axis=1)
    return StochasticMatrix(grid.centers, grid.edges, counts / rows[:, None],
                            rows / rows.sum(), meta)


# ---------------------------------------------------------------------------
# Dirichlet forms, gaps and checks
# ---------------------------------------------------------------------------


def dirichlet_form_matrix(mat: StochasticMatrix, f: np.ndarray) -> float:
    """(1/2) sum_ij pi_i P_ij (f_i - f_j)^2."""
    f = np.asarray(f, dtype=float)
    diff = f[:, None] - f[None, :]
    return float(0.5 * np.sum(mat.weights[:, None] * mat.P * diff * diff))


@dataclass(frozen=True)
class DirichletEstimate:
    value: float
    standard_error: float
    sample_count: int


def dirichlet_form_mc(step_fn, sampler, f: Callable, n: int,
                      rng: np.random.Generator) -> DirichletEstimate:
    """Monte Carlo Dirichlet form: mean of (f(X)-f(Y))^2 / 2 over stationary
    X and one-step Y, with a jackknife standard error."""
    vals = np.empty(n)
    for k in range(n):
        x = sampler(rng)
        y = step_fn(x, rng)
        vals[k] = 0.5 * (f(x) - f(y)) ** 2
    mean = float(vals.mean())
    # leave-one-out jackknife of the mean
    se = float(np.sqrt(max(vals.var(ddof=1), 0.0) / n))
    return DirichletEstimate(mean, se, n)


def osc_norm(f: np.ndarray, weights: np.ndarray) -> float:
    """Essential oscillation: spread of f over cells carrying mass."""
    f = np.asarray(f, dtype=float)
    live = np.asarray(weights) > 0
    return float(f[live].max() - f[live].min())


def spectral_gap(mat: StochasticMatrix) -> float:
    """Absolute spectral gap 1 - max |eigenvalue| over the orthocomplement of
    the constants, from the symmetrized dense eigenproblem."""
    res = mat.reversibility_residual()
    if res > 1e-8:
        raise SpectralError(f"reversibility residual {res:.2e} exceeds 1e-8")
    if mat.n > 2000:
        raise SpectralError("dense eigensolve capped at n = 2000")
    d = np.sqrt(mat.weights)
    S = (d[:, None] / d[None, :]) * mat.P
    S = 0.5 * (S + S.T)
    vals = np.linalg.eigvalsh(S)
    if abs(vals[-1] - 1.0) > 1e-8:
        raise SpectralError("leading eigenvalue is not 1")
    sub = max(abs(vals[0]), abs(vals[-2]))
    return float(1.0 - sub)


@dataclass(frozen=True)
class CheckReport:
    passed: bool
    worst: float
    details: str


def check_domination(mat_ideal: StochasticMatrix, mat_hybrid: StochasticMatrix,
                     fns: Sequence[np.ndarray], tol: float = 1e-10) -> CheckReport:
    """Dirichlet-form domination: the hybrid form never exceeds the ideal
    form, for every test function, up to tol."""
    worst = -math.inf
    for f in fns:
        gap = dirichlet_form_matrix(mat_hybrid, f) - dirichlet_form_matrix(mat_ideal, f)
        worst = max(worst, gap)
    return CheckReport(worst <= tol, worst,
                       f"max E_H - E_U = {worst:.3e} (tol {tol:.1e})")


def check_wpi_comparison(mat_ideal: StochasticMatrix, mat_hybrid: StochasticMatrix,
                         beta: Callable[[float], float], s_grid: Sequence[float],
                         fns: Sequence[np.ndarray], tol: float = 1e-9) -> CheckReport:
    """Weak comparison inequality E_U <= s E_H + beta(s) osc(f)^2 over a grid
    of s values and a set of test functions."""
    worst = -math.inf
    e_u = [dirichlet_form_matrix(mat_ideal, f) for f in fns]
    e_h = [dirichlet_form_matrix(mat_hybrid, f) for f in fns]
    oscs = [osc_norm(f, mat_ideal.weights) for f in fns]
    for s in s_grid:
        b = float(beta(s))
        for eu, eh, osc in zip(e_u, e_h, oscs):
            worst = max(worst, eu - s * eh - b * osc * osc)
    return CheckReport(worst <= tol, worst,
                       f"max E_U - s E_H - beta osc^2 = {worst:.3e} (tol {tol:.1e})")


def check_gap_sandwich(mat_ideal: StochasticMatrix, mat_hybrid: StochasticMatrix,
                       gamma_star: float, fns: Sequence[np.ndarray],
                       tol: float = 1e-10) -> CheckReport:
    """Two-sided bound gamma_* E_U <= E_H <= E_U under a uniform on-slice gap."""
    worst = -math.inf
    for f in fns:
        eu = dirichlet_form_matrix(mat_ideal, f)
        eh = dirichlet_form_matrix(mat_hybrid, f)
        worst = max(worst, gamma_star * eu - eh, eh - eu)
    return CheckReport(worst <= tol, worst,
                       f"max sandwich violation = {worst:.3e} (tol {tol:.1e})")


def check_reversible_positive(mat: StochasticMatrix) -> CheckReport:
    """Reversibility residual and minimum symmetrized eigenvalue report."""
    res = mat.reversibility_residual()
    d = np.sqrt(mat.weights)
    S = (d[:, None] / d[None, :]) * mat.P
    S = 0.5 * (S + S.T)
    min_eig = float(np.linalg.eigvalsh(S)[0])
    passed = res <= 1e-8 and min_eig >= -1e-8
    return CheckReport(passed, max(res, -min_eig),
                       f"reversibility residual {res:.2e}, min eigenvalue {min_eig:.2e}")


# ---------------------------------------------------------------------------
# Independent height-integral oracle for the ideal Dirichlet form
# ---------------------------------------------------------------------------


def _slice_intervals_oracle(target: TargetDensity, t: float) -> list[tuple[float, float]]:
    """Slice interval endpoints via direct branch inversion (not the matrix
    builders' clipping route)."""
    if target.name == "exp":
        lam, r = target.params["lam"], target.params["r"]
        if r > 0:
            return [(0.0, -math.log(t) / r)]
        if r == 0:
            return [(0.0, math.inf)]
        return [(max(0.0, -math.log(max(1.0, t)) / r), math.inf)]
    if target.name == "bimodal1d":
        (c1, c2) = target.params["centers"]
        (a1, a2) = target.params["heights"]
        t1, t2 = target.params["t1"], target.params["t2"]
        s1 = math.sqrt(math.log(a1 / t))
        if t >= t2:
            return [(c1 - s1, c1 + s1)]
        s2 = math.sqrt(math.log(a2 / t))
        if t < t1:
            return [(c1 - s1, c2 + s2)]
        return [(c1 - s1, c1 + s1), (c2 - s2, c2 + s2)]
    raise SpectralError(f"no slice oracle for target {target.name!r}")


def _cell_masses_at_height(target: TargetDensity, t: float,
                           edges: np.ndarray) -> np.ndarray:
    """Normalized nu_t masses of grid cells (folds included) from the
    interval oracle and the reference distribution function."""
    ref = target.reference
    if ref.kind == "exponential":
        def measure(y):
            y = np.asarray(y, dtype=float)
            return -np.where(np.isfinite(y), np.exp(-ref.rate * np.minimum(y, 1e300)), 0.0)
    else:
        def measure(y):
            return np.asarray(y, dtype=float)
    masses = np.zeros(len(edges) - 1)
    total = 0.0
    for lo, hi in _slice_intervals_oracle(target, t):
        total += float(measure(hi) - measure(lo))
        cl = measure(np.clip(edges, lo, hi))
        seg = cl[1:] - cl[:-1]
        seg[0] += max(float(measure(min(edges[0], hi)) - measure(lo)), 0.0)
        seg[-1] += max(float(measure(hi) - measure(max(edges[-1], lo))), 0.0)
        masses += seg
    return masses / total


def ideal_dirichlet_quadrature(target: TargetDensity, mat_edges: np.ndarray,
                               f: np.ndarray, *, tol: float = 1e-8) -> float:
    """Ideal-kernel Dirichlet form of a cell-constant function through the
    height representation c^{-1} int Var_{nu_t}(f) m(t) dt, by adaptive
    quadrature split at the heights of the cell edges.

    This is a route independent of the matrix assembly; the two must agree
    on cell-constant functions.
    """
    f = np.asarray(f, dtype=float)
    c = target.normalizer()

    def integrand(t):
        p = _cell_masses_at_height(target, t, mat_edges)
        mean = float(p @ f)
        var = float(p @ (f * f)) - mean * mean
        return max(var, 0.0) * target.level_mass(t).value

    dens_at = [float(target.density_eval(np.array([x]))) for x in mat_edges]
    if target.name == "bimodal1d":
        dens_at += [target.params["t1"], target.params["t2"]]
        for x in mat_edges:
            for a_i, c_i in zip(target.params["heights"], target.params["centers"]):
                dens_at.append(a_i * math.exp(-((x - c_i) ** 2)))
    sup = target.sup_density
    hi = sup if math.isfinite(sup) else max(dens_at) * 2.0
    pts = sorted({v for v in dens_at if 0.0 < v < hi * (1.0 - 1e-15)})
    total = 0.0
    cuts = [1e-300] + pts + [hi]
    for lo, hi_p in zip(cuts[:-1], cuts[1:]):
        if hi_p - lo < 1e-14 * hi_p:
            continue
        val, _ = integrate.quad(integrand, lo, hi_p, epsabs=tol / len(cuts),
                                limit=200)
        total += val
    if not math.isfinite(sup):
        val, _ = integrate.quad(integrand, hi, np.inf, epsabs=tol, limit=200)
        total += val
    return total / c


# ---------------------------------------------------------------------------
# Stationarity / invariance testing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InvarianceReport:
    passed: bool
    max_z: float
    details: str


def invariance_test(step_fn, sampler, n_chains: int, rng: np.random.Generator,
                    *, k_steps: int = 10, z_crit: float = 4.0) -> InvarianceReport:
    """Start chains at exact stationarity, run k steps, and compare first and
    second empirical moments of the end states against the initial draws at
    ``z_crit`` combined standard errors."""
    first = sampler(rng)
    dim = len(np.atleast_1d(first))
    starts = np.empty((n_chains, dim))
    starts[0] = first
    for i in range(1, n_chains):
        starts[i] = sampler(rng)
    finals = np.empty_like(starts)
    for i in range(n_chains):
        x = starts[i]
        for _ in range(k_steps):
            x = step_fn(x, rng)
        finals[i] = x

    stats_init = np.column_stack([starts, np.sum(starts * starts, axis=1)])
    stats_fin = np.column_stack([finals, np.sum(finals * finals, axis=1)])
    mu_i, mu_f = stats_init.mean(axis=0), stats_fin.mean(axis=0)
    se = np.sqrt(stats_init.var(axis=0, ddof=1) / n_chains
                 + stats_fin.var(axis=0, ddof=1) / n_chains)
    z = np.abs(mu_f - mu_i) / np.maximum(se, 1e-300)
    max_z = float(z.max())
    return InvarianceReport(max_z <= z_crit, max_z,
                            f"moment z-scores {np.round(z, 2).tolist()} (crit {z_crit})")


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunctionSet:
    names: list[str]
    functions: list[np.ndarray]

    def __iter__(self):
        return iter(self.functions)

    def __len__(self):
        return len(self.functions)


def make_test_functions(weights: np.ndarray, rng: np.random.Generator,
                        *, n_indicators: int = 20, n_chebyshev: int = 10,
                        n_blocks: int = 20) -> TestFunctionSet:
    """Centered grid test functions: random interval indicators, Chebyshev
    polynomials in the stationary quantile variable, and random sign blocks.
    All are centered to mean zero under ``weights``."""
    weights = np.asarray(weights, dtype=float)
    n = len(weights)
    q_mid = np.cumsum(weights) - 0.5 * weights
    names, fns = [], []

    def centered(v):
        return v - float(weights @ v)

    for k in range(n_indicators):
        i, j = sorted(rng.choice(n, size=2, replace=False))
        v = np.zeros(n)
        v[i:j + 1] = 1.0
        names.append(f"ind{k:02d}")
        fns.append(centered(v))
    for k in range(1, n_chebyshev + 1):
        v = np.cos(k * np.arccos(np.clip(2.0 * q_mid - 1.0, -1.0, 1.0)))
        names.append(f"cheb{k:02d}")
        fns.append(centered(v))
    for k in range(n_blocks):
        n_cuts = int(rng.integers(3, 12))
        cuts = np.sort(rng.choice(np.arange(1, n), size=n_cuts, replace=False))
        signs = rng.choice((-1.0, 1.0), size=n_cuts + 1)
        v = np.empty(n)
        prev = 0
        for seg, cut in enumerate(np.append(cuts, n)):
            v[prev:cut] = signs[seg]
            prev = cut
        names.append(f"blk{k:02d}")
        fns.append(centered(v))
    return TestFunctionSet(names, fns)


def grid_function(mat: StochasticMatrix, values: np.ndarray) -> Callable:
    """Lift a cell-constant vector to a callable on the line, matching the
    fold convention at the grid boundaries."""
    values = np.asarray(values, dtype=float)

    def f(x):
        x0 = float(np.atleast_1d(x)[0])
        i = int(np.clip(np.searchsorted(mat.edges, x0, "right") - 1, 0, mat.n - 1))
        return values[i]

    return f
