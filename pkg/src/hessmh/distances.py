"""Deterministic quadrature (d <= 3) for normalizing constants, moments and distances.

Integrals are computed in coordinates standardized by a Gaussian ``N(m, L L^T)``
(normally the Laplace approximation), ``x = m + L z``, followed by the
substitution ``z_i = sinh(u_i)`` and a tensor trapezoid rule in ``u``. The
trapezoid rule converges geometrically for analytic integrands, the sinh map
reaches polynomially and Gaussian-decaying tails alike, and the standardization
keeps node counts flat as the target concentrates. The step is halved until
successive estimates agree to the requested tolerance.

In one dimension total variation is instead computed by adaptive Gauss-Kronrod
integration split at the crossing points of the two densities, because the
kink of ``|p - q|`` limits tensor rules to second order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.special import logsumexp

from hessmh.core_measures import GaussianMeasure, SpdMatrix, TargetFamily, as_vector
from hessmh.laplace import LaplaceApproximation, laplace_approximation

MAX_DIM = 3
TV_RTOL = 1e-4  # relative tolerance of multi-dimensional total variation
_U_MAX = math.asinh(2000.0)
_MAX_POINTS = 2_500_000


class QuadratureError(RuntimeError):
    """Refinement failed to converge; ``estimates`` holds the last two values."""

    def __init__(self, message: str, estimates=()):
        super().__init__(message)
        self.estimates = tuple(estimates)


class DimensionError(ValueError):
    """Tensor quadrature refused for dimension above MAX_DIM."""


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor nodes ``x`` and log-weights for ``∫ f(x) dx ≈ Σ exp(log_w) f(x)``."""

    points: np.ndarray
    log_weights: np.ndarray
    step: float
    nodes_per_axis: int
    center: np.ndarray
    root: np.ndarray

    @classmethod
    def build(cls, center, cov: SpdMatrix, step: float, u_max: float = _U_MAX) -> "QuadratureGrid":
        center = as_vector(center)
        d = center.size
        if d > MAX_DIM:
            raise DimensionError(f"tensor quadrature is limited to d <= {MAX_DIM}, got {d}")
        k = int(math.ceil(u_max / step))
        u = step * np.arange(-k, k + 1)
        z = np.sinh(u)
        log_jac = np.log(step) + np.log(np.cosh(u))
        if (2 * k + 1) ** d > _MAX_POINTS:
            raise QuadratureError(f"grid with {(2 * k + 1) ** d} points exceeds the budget")
        mesh = np.meshgrid(*([z] * d), indexing="ij")
        zs = np.stack([m.ravel() for m in mesh], axis=1)
        lw_mesh = np.meshgrid(*([log_jac] * d), indexing="ij")
        log_w = sum(m.ravel() for m in lw_mesh)
        root = cov.factor
        points = center + zs @ root.T
        log_w = log_w + float(np.sum(np.log(np.diag(root))))
        return cls(points, log_w, step, 2 * k + 1, center, root)


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    nodes_per_axis: int


@dataclass(frozen=True)
class Density:
    """Probability density given by a vectorized log-density (possibly unnormalized).

    ``location``/``scale`` describe where the mass sits; they drive the
    standardization of the quadrature grid. When ``log_norm`` is None the
    normalization is computed by quadrature.
    """

    log_density: Callable[[np.ndarray], np.ndarray]
    location: np.ndarray
    scale: SpdMatrix
    log_norm: Optional[float] = None

    @property
    def dim(self) -> int:
        return self.location.size


def gaussian_density(g: GaussianMeasure) -> Density:
    return Density(g.log_density_many, g.mean, g.cov, 0.0)


def _target_log_density_many(target: TargetFamily, n: float):
    pot, lp, sup = target.potential.value, target.log_prior.value, target.support

    def log_density(xs):
        xs = np.atleast_2d(xs)
        out = np.empty(xs.shape[0])
        for i, x in enumerate(xs):
            out[i] = -n * pot(x) + lp(x) if sup(x) else -np.inf
        return out

    return log_density


def posterior_density(target: TargetFamily, n: float, la: Optional[LaplaceApproximation] = None) -> Density:
    """Unnormalized ``pi_n`` standardized by its Laplace approximation."""
    if la is None:
        la = laplace_approximation(target, n)
    return Density(_target_log_density_many(target, n), la.map_point, la.covariance)


def _rel_change(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def _refine(evaluate, tol: float, step0: float = 0.5, min_step: float = 1 / 64, absolute: bool = False,
            atol: float = 0.0):
    """Halve the trapezoid step until two successive results agree.

    Agreement means a change of at most ``tol`` (absolute or relative) or at
    most ``atol`` in absolute terms.
    """
    step = step0
    prev = evaluate(step)
    while True:
        step /= 2
        if step < min_step:
            raise QuadratureError("quadrature refinement did not converge", (prev[0], cur[0]))
        cur = evaluate(step)
        err = abs(cur[0] - prev[0]) if absolute else _rel_change(cur[0], prev[0])
        if err <= tol or abs(cur[0] - prev[0]) <= atol:
            return cur, err, step
        prev = cur


def _grid_for(density: Density, step: float) -> QuadratureGrid:
    return QuadratureGrid.build(density.location, density.scale, step)


def log_integral(density: Density, tol: float = 1e-10) -> QuadResult:
    """``log ∫ exp(log_density)`` by adaptive tensor quadrature."""
    if density.dim > MAX_DIM:
        raise DimensionError(f"quadrature limited to d <= {MAX_DIM}")

    def evaluate(step):
        grid = _grid_for(density, step)
        return (float(np.exp(logsumexp(grid.log_weights + density.log_density(grid.points)))),)

    (val,), err, step = _refine(evaluate, tol)
    return QuadResult(math.log(val), err, QuadratureGrid.build(density.location, density.scale, step).nodes_per_axis)


def _with_norm(density: Density, tol: float) -> Density:
    if density.log_norm is not None:
        return density
    return Density(density.log_density, density.location, density.scale, log_integral(density, tol).value)


def normalizing_constant(target: TargetFamily, n: float, tol: float = 1e-10,
                         la: Optional[LaplaceApproximation] = None) -> QuadResult:
    """``Z_n = ∫ exp(-n U) dpi_0`` with its estimated relative error."""
    res = log_integral(posterior_density(target, n, la), tol)
    return QuadResult(math.exp(res.value), res.error, res.nodes_per_axis)


def expectation(density: Density, f: Callable[[np.ndarray], np.ndarray], tol: float = 1e-10) -> QuadResult:
    """``∫ f p`` for a vectorized ``f`` mapping ``(N, d)`` points to ``(N,)`` values."""
    density = _with_norm(density, tol)

    def evaluate(step):
        grid = _grid_for(density, step)
        logp = grid.log_weights + density.log_density(grid.points) - density.log_norm
        w = np.exp(logp)
        return (float(np.sum(w * f(grid.points))), float(np.sum(w)))

    (val, _), err, step = _refine(evaluate, tol, absolute=False)
    return QuadResult(val, err, _grid_for(density, step).nodes_per_axis)


def posterior_moment(target: TargetFamily, n: float, f, tol: float = 1e-10,
                     la: Optional[LaplaceApproximation] = None) -> float:
    """``pi_n(f)`` by quadrature; ``f`` is vectorized over rows of an ``(N, d)`` array."""
    return expectation(posterior_density(target, n, la), f, tol).value


def posterior_variance(target: TargetFamily, n: float, v, tol: float = 1e-10,
                       la: Optional[LaplaceApproximation] = None) -> float:
    """``Var_{pi_n}(v^T x)``, computed about the MAP point to avoid cancellation."""
    v = as_vector(v)
    dens = _with_norm(posterior_density(target, n, la), tol)
    m = dens.location
    first = expectation(dens, lambda xs: (xs - m) @ v, tol).value
    second = expectation(dens, lambda xs: ((xs - m) @ v) ** 2, tol).value
    return second - first**2


def _mixture_standardization(p: Density, q: Density):
    dm = q.location - p.location
    cov = 0.5 * (p.scale.dense + q.scale.dense) + 0.25 * np.outer(dm, dm)
    return 0.5 * (p.location + q.location), SpdMatrix(cov)


def _pair_integral(p: Density, q: Density, combine, tol: float, absolute: bool = True,
                   atol: float = 0.0) -> float:
    p, q = _with_norm(p, tol), _with_norm(q, tol)
    center, cov = _mixture_standardization(p, q)

    def evaluate(step):
        grid = QuadratureGrid.build(center, cov, step)
        lp = p.log_density(grid.points) - p.log_norm
        lq = q.log_density(grid.points) - q.log_norm
        return (float(np.sum(np.exp(grid.log_weights) * combine(lp, lq))),)

    (val,), _, _ = _refine(evaluate, tol, absolute=absolute, atol=atol)
    return val


def _sqrt_diff_sq(lp, lq):
    # (sqrt p - sqrt q)^2 = p (1 - sqrt(q/p))^2, written with expm1 so that
    # nearly equal densities do not cancel.
    hi, lo = np.maximum(lp, lq), np.minimum(lp, lq)
    with np.errstate(invalid="ignore", over="ignore"):
        out = np.exp(hi) * np.expm1(0.5 * (lo - hi)) ** 2
    return np.nan_to_num(np.where(np.isneginf(hi), 0.0, out))


def hellinger_distance(p: Density, q: Density, tol: float = 1e-12) -> float:
    """``(∫ (sqrt p - sqrt q)^2)^{1/2}``, in [0, sqrt 2]."""
    sq = _pair_integral(p, q, _sqrt_diff_sq, tol)
    return math.sqrt(min(2.0, max(0.0, sq)))


def _crossings_1d(diff, lo: float, hi: float, num: int = 4001) -> list:
    xs = np.linspace(lo, hi, num)
    vals = np.array([diff(x) for x in xs])
    roots = []
    for a, b, fa, fb in zip(xs[:-1], xs[1:], vals[:-1], vals[1:]):
        if not (np.isfinite(fa) and np.isfinite(fb)):
            continue
        if fa == 0.0:
            roots.append(a)
        elif fa * fb < 0:
            roots.append(optimize.brentq(diff, a, b, xtol=1e-14, rtol=1e-15))
    return roots


def _tv_1d(p: Density, q: Density, tol: float) -> float:
    center, cov = _mixture_standardization(p, q)
    sd = math.sqrt(cov.dense[0, 0])
    c = float(center[0])

    def lp(x):
        return float(p.log_density(np.array([[x]]))[0]) - p.log_norm

    def lq(x):
        return float(q.log_density(np.array([[x]]))[0]) - q.log_norm

    def diff(x):
        a, b = lp(x), lq(x)
        if a == -np.inf and b == -np.inf:
            return 0.0
        return a - b

    def excess(x):
        a, b = lp(x), lq(x)
        return math.exp(a) - math.exp(b) if a > b else 0.0

    lo, hi = c - 60 * sd, c + 60 * sd
    cuts = [lo] + _crossings_1d(diff, lo, hi) + [hi]
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        val, _ = integrate.quad(excess, a, b, epsabs=tol, epsrel=1e-12, limit=400)
        total += val
    tails = [integrate.quad(excess, -np.inf, lo, limit=200)[0], integrate.quad(excess, hi, np.inf, limit=200)[0]]
    return min(1.0, max(0.0, total + sum(tails)))


def tv_distance(p: Density, q: Density, tol: float = 1e-12) -> float:
    """``½ ∫ |p - q|`` in [0, 1]."""
    p, q = _with_norm(p, tol), _with_norm(q, tol)
    if p.dim == 1:
        return _tv_1d(p, q, tol)

    def pos_part(lp, lq):
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.where(lp > lq, np.exp(lp) - np.exp(lq), 0.0)
        return np.nan_to_num(out)

    # The integrand has a kink on {p = q}, so the tensor rule only converges at
    # second order; a relative tolerance keeps the grid size bounded.
    return min(1.0, max(0.0, _pair_integral(p, q, pos_part, TV_RTOL, absolute=False,
                                                    atol=1e-12)))


@dataclass(frozen=True)
class RateStudy:
    """Distances between ``pi_n`` and its Laplace approximation over an ``n`` grid."""

    n: np.ndarray
    hellinger: np.ndarray
    tv: np.ndarray
    slope: float
    intercept: float


def loglog_slope(x, y) -> tuple:
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def hellinger_rate_study(target: TargetFamily, n_grid: Sequence[float], with_tv: bool = True,
                         marginal: Optional[np.ndarray] = None) -> RateStudy:
    """Tabulate ``d_H(pi_n, Λ_n)`` (and ``d_TV``) and fit the log-log slope.

    With ``marginal`` (a unit vector) the distances are computed between the
    one-dimensional marginals of ``pi_n`` and ``Λ_n`` along that direction;
    this is only supported when the remaining coordinates factorize, i.e. for
    axis-aligned directions of targets with an independent standard prior.
    """
    ns = np.asarray(sorted(n_grid), dtype=float)
    dh, dtv = [], []
    for n in ns:
        la = laplace_approximation(target, n)
        p = posterior_density(target, n, la)
        q = gaussian_density(la.measure)
        if marginal is not None:
            p, q = _axis_marginals(target, n, la, as_vector(marginal))
        dh.append(hellinger_distance(p, q))
        dtv.append(tv_distance(p, q) if with_tv else np.nan)
    dh = np.array(dh)
    slope, intercept = loglog_slope(ns, dh) if np.all(dh > 0) else (float("nan"), float("nan"))
    return RateStudy(ns, dh, np.array(dtv), slope, intercept)


def _axis_marginals(target, n, la, v):
    axis = int(np.argmax(np.abs(v)))
    if not np.isclose(abs(v[axis]), 1.0):
        raise ValueError("marginal rate studies need an axis-aligned direction")
    others = [i for i in range(target.dim) if i != axis]
    if np.any(np.abs(la.covariance.dense[axis, others]) > 1e-14):
        raise ValueError("Laplace covariance does not factorize along the requested axis")
    full = posterior_density(target, n, la)

    def log_marg(xs):
        # Potential depends only on ``axis``; other coordinates integrate out of the prior.
        pts = np.zeros((np.atleast_2d(xs).shape[0], target.dim))
        pts[:, axis] = np.atleast_2d(xs)[:, 0]
        return full.log_density(pts) + 0.5 * np.sum(pts[:, others] ** 2, axis=1) \
            + 0.5 * len(others) * math.log(2 * math.pi)

    scale = SpdMatrix([[la.covariance.dense[axis, axis]]])
    p = Density(log_marg, la.map_point[[axis]], scale)
    q = gaussian_density(GaussianMeasure(la.map_point[[axis]], scale))
    return p, q


@dataclass(frozen=True)
class SubspaceRow:
    n: float
    direction: np.ndarray
    scaled_variance: float  # n v^T C_n v


def informed_subspace_check(target: TargetFamily, n_grid: Sequence[float], v_list) -> list:
    """``n v^T C_n v`` across ``n``: bounded exactly for directions the potential informs."""
    rows = []
    for n in n_grid:
        la = laplace_approximation(target, n)
        for v in v_list:
            v = as_vector(v)
            v = v / np.linalg.norm(v)
            rows.append(SubspaceRow(float(n), v, float(n * v @ la.covariance.dense @ v)))
    return rows


# One-dimensional Metropolis-Hastings functionals by nested adaptive quadrature.

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)
_FLOW_WIDTH = 12.0  # integration half-width in standard deviations


def _piecewise_gauss_legendre(f, cuts: Sequence[float], width: float) -> float:
    """Composite Gauss-Legendre over consecutive ``cuts``, panels at most ``width`` wide.

    ``f`` is vectorized; it should be smooth on every interval between cuts.
    """
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b <= a:
            continue
        k = max(1, int(math.ceil((b - a) / width)))
        edges = np.linspace(a, b, k + 1)
        half = 0.5 * np.diff(edges)
        mids = 0.5 * (edges[:-1] + edges[1:])
        pts = (mids[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
        total += float(np.sum(w * f(pts)))
    return total


def mh_flow_1d(log_pi: Callable[[np.ndarray], np.ndarray], kernel, weight=None, location: float = 0.0,
               scale: float = 1.0, tol: float = 1e-10) -> float:
    """``∫∫ w(x, y) min{pi(x) p(x, y), pi(y) p(y, x)} dy dx`` for a normalized 1-d ``pi``.

    ``log_pi`` maps an array of points to log densities. With ``w = 1`` the
    result is the average acceptance rate of the MH kernel with proposal
    ``kernel`` targeting ``pi``; with ``w = (x - y)^2`` it is the expected
    squared jump distance. The inner integral is split where the two flows
    cross, so each piece is smooth. ``location`` and ``scale`` should bracket
    the bulk of ``pi``: the outer integral covers ``location ± 12 scale``.
    """
    var = float(kernel.proposal_covariance.dense[0, 0])
    psd = math.sqrt(var)
    c = kernel.contraction
    center = 0.0 if kernel.center is None else float(kernel.center[0])
    log_c = -0.5 * math.log(2 * math.pi * var)
    weight = weight or (lambda x, y: np.ones_like(y))

    def logp(x, y):
        return log_c - 0.5 * (y - (center + c * (x - center))) ** 2 / var

    def inner(x):
        lx = float(log_pi(np.array([x]))[0])
        if lx == -np.inf:
            return 0.0
        m = center + c * (x - center)
        lo, hi = m - _FLOW_WIDTH * psd, m + _FLOW_WIDTH * psd

        def forward(y):
            return lx + logp(x, y)

        def backward(y):
            return log_pi(y) + logp(y, x)

        def gap(y):
            b = backward(np.atleast_1d(y))
            out = np.where(np.isfinite(b), b - forward(np.atleast_1d(y)), -1.0)
            return out if np.ndim(y) else float(out[0])

        # y = x is always a crossing; a second one can sit arbitrarily close to
        # it near critical points of pi, so the scan is refined geometrically there.
        near = psd * np.geomspace(1e-7, 0.5, 25)
        ys = np.unique(np.concatenate([np.linspace(lo, hi, 241), x - near, x + near]))
        ys = ys[(ys >= lo) & (ys <= hi)]
        g = gap(ys)
        cuts = [lo, x, hi]
        for i in range(ys.size - 1):
            if g[i] * g[i + 1] < 0:
                cuts.append(optimize.brentq(gap, ys[i], ys[i + 1], xtol=1e-15, rtol=1e-15))
        cuts = sorted(c for c in cuts if lo <= c <= hi)

        def f(y):
            with np.errstate(invalid="ignore"):
                lm = np.minimum(forward(y), backward(y))
            return np.where(np.isfinite(lm), weight(x, y) * np.exp(lm), 0.0)

        return _piecewise_gauss_legendre(f, cuts, psd / 2)

    lo, hi = location - _FLOW_WIDTH * scale, location + _FLOW_WIDTH * scale
    # The outer integrand has kinks where the crossing pattern changes, i.e. at
    # critical points of pi; hand them to the integrator as breakpoints.
    val, _ = integrate.quad(inner, lo, hi, epsabs=tol, epsrel=tol, limit=200,
                            points=[location] + _critical_points(log_pi, lo, hi))
    return val


def _critical_points(log_pi, lo: float, hi: float, num: int = 2001) -> list:
    xs = np.linspace(lo, hi, num)
    with np.errstate(invalid="ignore"):
        d = np.diff(np.asarray(log_pi(xs), dtype=float))
    out = []
    for i in range(1, d.size):
        if np.isfinite(d[i - 1]) and np.isfinite(d[i]) and d[i - 1] * d[i] < 0:
            sign = 1.0 if d[i - 1] > 0 else -1.0
            res = optimize.minimize_scalar(lambda x: -sign * float(log_pi(np.array([x]))[0]),
                                           bounds=(xs[i - 1], xs[i + 1]), method="bounded",
                                           options={"xatol": 1e-12})
            out.append(float(res.x))
    return out
