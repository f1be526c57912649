"""Efficiency metrics of Metropolis-Hastings chains and their Gaussian reference values."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from hessmh.core_measures import GaussianMeasure, TargetFamily, as_vector
from hessmh.mh_core import ChainRecord, ConfigurationError


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float

    def __iter__(self):
        yield self.value
        yield self.se

    def __format__(self, spec):
        return f"{self.value:{spec}} ± {self.se:{spec}}"


def batch_means_se(values: np.ndarray, n_batches: Optional[int] = None) -> float:
    """Standard error of the mean of a correlated series by non-overlapping batch means."""
    values = np.asarray(values, dtype=float)
    size = values.size
    if size < 4:
        return float("nan")
    b = n_batches or int(math.isqrt(size))
    length = size // b
    means = values[: b * length].reshape(b, length).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(b))


def _estimate(values) -> Estimate:
    values = np.asarray(values, dtype=float)
    return Estimate(float(values.mean()), batch_means_se(values))


def pooled(estimates: Sequence[Estimate]) -> Estimate:
    """Average of independent replica estimates with the matching standard error."""
    vals = np.array([e.value for e in estimates])
    ses = np.array([e.se for e in estimates])
    return Estimate(float(vals.mean()), float(np.sqrt(np.sum(ses**2)) / len(estimates)))


def average_acceptance(record: ChainRecord) -> Estimate:
    """Mean realized acceptance probability (Rao-Blackwellized acceptance rate)."""
    if len(record) == 0:
        raise ValueError("empty chain record")
    return _estimate(record.alpha_values)


def acceptance_frequency(record: ChainRecord) -> Estimate:
    """Fraction of accepted proposals; a noisier cross-check of :func:`average_acceptance`."""
    return _estimate(record.accepted.astype(float))


def _unit(v) -> np.ndarray:
    v = as_vector(v)
    if not np.isclose(np.linalg.norm(v), 1.0, rtol=0, atol=1e-12):
        raise ValueError("direction must have unit norm")
    return v


def directional_esjd(record: ChainRecord, v) -> Estimate:
    """Mean of ``|v^T (x_{k+1} - x_k)|^2`` along the chain; rejected steps contribute zero."""
    v = _unit(v)
    jumps = record.increments() @ v
    return _estimate(jumps**2)


def normalized_esjd(record: ChainRecord, v, variance: float) -> Estimate:
    """Directional squared jump distance divided by ``Var_pi(v^T x)``; lies in [0, 2] in stationarity."""
    if not variance > 0:
        raise ConfigurationError("normalizing variance must be positive")
    est = directional_esjd(record, v)
    return Estimate(est.value / variance, est.se / variance)


@dataclass(frozen=True)
class IactResult:
    tau: float
    window: int


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def iact_series(values) -> IactResult:
    """Integrated autocorrelation time ``1 + 2 Σ ρ_k`` with Geyer's initial positive sequence.

    Raises:
        ValueError: for a constant series.
    """
    x = np.asarray(values, dtype=float)
    if x.size < 4:
        raise ValueError("need at least 4 values")
    acov = _autocovariance(x)
    if acov[0] <= 0:
        raise ValueError("functional is constant along the chain")
    rho = acov / acov[0]
    # Sum consecutive pairs Γ_m = ρ_{2m} + ρ_{2m+1} while they stay positive.
    total = -1.0
    m = 0
    while 2 * m + 1 < rho.size:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0:
            break
        total += 2.0 * pair
        m += 1
    return IactResult(max(total, 1e-12), 2 * m)


def iact(record: ChainRecord, f: Callable[[np.ndarray], np.ndarray]) -> IactResult:
    """IACT of the functional ``f`` (vectorized over the rows of ``record.states``)."""
    return iact_series(f(record.states))


def gaussian_reference_alpha(d: int, s: float, budget: int = 10**7, seed: int = 12345,
                             method: str = "auto") -> Estimate:
    """Stationary acceptance rate of the random walk ``N(x, s^2 I)`` targeting ``N(0, I_d)``.

    This is ``E[1 ∧ exp(-|X + s ξ|^2 / 2 + |X|^2 / 2)]`` with ``X, ξ ~ N(0, I_d)``
    and does not depend on the concentration level. ``method`` is ``"mc"`` (plain
    Monte Carlo with ``budget`` draws), ``"quadrature"`` (one-dimensional radial
    integral, see :func:`gaussian_reference_radial`) or ``"auto"`` (quadrature
    for d = 1, Monte Carlo otherwise).
    """
    return _gaussian_reference(d, s, budget, seed, method, squared_jump=False)


def gaussian_reference_esjd(d: int, s: float, budget: int = 10**7, seed: int = 12345,
                            method: str = "auto") -> Estimate:
    """Normalized directional squared jump ``E[s^2 ξ_1^2 (1 ∧ exp(...))]`` of the same chain."""
    return _gaussian_reference(d, s, budget, seed, method, squared_jump=True)


def _gaussian_reference(d, s, budget, seed, method, squared_jump):
    if d < 1:
        raise ValueError("dimension must be positive")
    if s == 0:
        return Estimate(0.0 if squared_jump else 1.0, 0.0)
    if method == "auto":
        method = "quadrature" if d == 1 else "mc"
    if method == "quadrature":
        return Estimate(gaussian_reference_radial(d, s, squared_jump), 0.0)
    rng = np.random.Generator(np.random.Philox(key=seed))
    chunk = 1_000_000
    sums = []
    remaining = budget
    while remaining > 0:
        m = min(chunk, remaining)
        x = rng.standard_normal((m, d))
        xi = rng.standard_normal((m, d))
        y = x + s * xi
        log_r = 0.5 * (np.einsum("ij,ij->i", x, x) - np.einsum("ij,ij->i", y, y))
        a = np.exp(np.minimum(log_r, 0.0))
        vals = s**2 * xi[:, 0] ** 2 * a if squared_jump else a
        sums.append(vals)
        remaining -= m
    vals = np.concatenate(sums)
    return Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size)))


def gaussian_reference_radial(d: int, s: float, squared_jump: bool = False) -> float:
    """Same reference through the identity ``E[1 ∧ ...] = E[2 Φ(-s|ξ|/2)]``.

    Conditioning on ``ξ`` leaves a one-dimensional Gaussian integral with a
    closed form, so only the chi-distributed radius ``|ξ|`` is integrated.
    A tensor Gauss-Hermite rule converges only slowly here because of the
    kink of ``1 ∧ exp``.
    """
    log_c = (1 - d / 2) * math.log(2) - math.lgamma(d / 2)

    def integrand(r):
        dens = math.exp(log_c + (d - 1) * math.log(r) - 0.5 * r * r) if r > 0 else (
            math.exp(log_c) if d == 1 else 0.0)
        acc = 2.0 * ndtr(-0.5 * s * r)
        return dens * acc * (s * s * r * r / d if squared_jump else 1.0)

    val, _ = integrate.quad(integrand, 0, np.inf, epsabs=1e-14, epsrel=1e-13, limit=400)
    return val


def modified_pcn_reference_esjd(s: float) -> float:
    """Normalized squared jump ``2 - 2 sqrt(1 - s^2)`` of the exact-target Crank-Nicolson chain."""
    return 2.0 - 2.0 * math.sqrt(1.0 - s * s)


@dataclass(frozen=True)
class VarianceResult:
    value: float
    provenance: str  # "exact", "quadrature" or "sample"


def target_variance(target: TargetFamily, n: float, v, *, exact: Optional[GaussianMeasure] = None,
                    records: Sequence[ChainRecord] = (), quadrature_max_dim: int = 3) -> VarianceResult:
    """``Var_{pi_n}(v^T x)`` from the best available source.

    An exact Gaussian posterior wins, then quadrature (d <= 3), then the
    pooled sample variance of ``records``.
    """
    v = as_vector(v)
    if not np.any(v):
        raise ValueError("direction must be nonzero")
    if exact is not None:
        return VarianceResult(float(v @ exact.cov.dense @ v), "exact")
    if target.dim <= quadrature_max_dim:
        from hessmh.distances import QuadratureError, posterior_variance

        try:
            return VarianceResult(posterior_variance(target, n, v), "quadrature")
        except QuadratureError as err:
            if not records:
                raise
            warnings.warn(f"quadrature failed ({err}); using sample variance", RuntimeWarning)
    if not records:
        raise ValueError("no exact, quadrature or sample variance available")
    proj = np.concatenate([r.states @ v for r in records])
    return VarianceResult(float(proj.var(ddof=1)), "sample")


@dataclass(frozen=True)
class EfficiencyReport:
    abar: Estimate
    rho: dict  # direction label -> Estimate of the directional squared jump
    rhobar: dict  # direction label -> Estimate normalized by the target variance
    tau: dict  # direction label -> IACT of f_v
    variance: dict = field(default_factory=dict)  # direction label -> VarianceResult


def efficiency_report(records: Sequence[ChainRecord], directions: dict, variances: dict) -> EfficiencyReport:
    """Pool replica estimates of acceptance, jump distances and IACTs.

    ``directions`` maps labels to unit vectors, ``variances`` maps the same
    labels to :class:`VarianceResult` used for normalization.
    """
    abar = pooled([average_acceptance(r) for r in records])
    rho, rhobar, tau = {}, {}, {}
    for label, v in directions.items():
        ests = [directional_esjd(r, v) for r in records]
        rho[label] = pooled(ests)
        var = variances[label].value
        rhobar[label] = Estimate(rho[label].value / var, rho[label].se / var)
        try:
            tau[label] = float(np.mean([iact(r, lambda xs, v=v: xs @ v).tau for r in records]))
        except ValueError:
            tau[label] = float("nan")
    return EfficiencyReport(abar, rho, rhobar, tau, dict(variances))
