"""Gaussian random-walk and Crank-Nicolson proposal kernels.

Every kernel proposes ``y = center + c (x - center) + s L z`` with ``z ~ N(0, I)``:
random walks use ``c = 1`` (no center), the Crank-Nicolson variants use
``c = sqrt(1 - s^2)`` and are reversible with respect to ``N(center, L L^T)``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.linalg as sla

from hessmh.core_measures import (
    GaussianMeasure,
    OutsideSupportError,
    SpdMatrix,
    TargetFamily,
    as_vector,
)
from hessmh.laplace import LaplaceApproximation


class InvalidStateError(OutsideSupportError):
    """The current chain state lies outside the support; the chain is corrupted."""


class ProposalKernel:
    """Shared machinery of the four proposal variants."""

    variant = "abstract"

    def __init__(self, cov, step: float, center=None):
        self.cov = cov if isinstance(cov, SpdMatrix) else SpdMatrix(cov)
        self.step = float(step)
        self._check_step()
        self.noise_factor = self.step * self.cov.factor
        self.center = None if center is None else as_vector(center)
        self.contraction = 1.0
        self._inv_factor = None
        if self.center is not None:
            self.contraction = float(np.sqrt(1.0 - self.step**2))
            self._inv_factor = sla.solve_triangular(self.cov.factor, np.eye(self.dim), lower=True)

    def _check_step(self):
        if not self.step > 0:
            raise ValueError("step size must be positive")

    @property
    def dim(self) -> int:
        return self.cov.dim

    @property
    def proposal_covariance(self) -> SpdMatrix:
        """Covariance ``s^2 C`` of a single proposal draw."""
        return self.cov.scaled(self.step**2)

    @property
    def invariant(self) -> Optional[GaussianMeasure]:
        """Gaussian the proposal is reversible for (Crank-Nicolson variants only)."""
        if self.center is None:
            return None
        return GaussianMeasure(self.center, self.cov)

    def mean(self, x: np.ndarray) -> np.ndarray:
        if self.center is None:
            return x
        return self.center + self.contraction * (x - self.center)

    def log_reference_ratio(self, x: np.ndarray, y: np.ndarray) -> float:
        """``log phi(x) - log phi(y)`` for the invariant Gaussian ``phi``; zero for random walks."""
        if self.center is None:
            return 0.0
        wx = self._inv_factor @ (x - self.center)
        wy = self._inv_factor @ (y - self.center)
        return 0.5 * float(wy @ wy - wx @ wx)

    def describe(self) -> dict:
        return {"variant": self.variant, "step": self.step}

    def __repr__(self) -> str:
        return f"{type(self).__name__}(step={self.step}, dim={self.dim})"


class RandomWalk(ProposalKernel):
    """``N(x, s^2 C)`` with ``s > 0``."""

    variant = "rw"

    def __init__(self, cov, step: float):
        super().__init__(cov, step)


class Pcn(ProposalKernel):
    """``N(m + sqrt(1 - s^2)(x - m), s^2 C)`` with ``s`` in (0, 1]; classically ``m = 0``."""

    variant = "pcn"

    def __init__(self, cov, step: float, center=None):
        cov = cov if isinstance(cov, SpdMatrix) else SpdMatrix(cov)
        super().__init__(cov, step, np.zeros(cov.dim) if center is None else center)

    def _check_step(self):
        if not 0 < self.step <= 1:
            raise ValueError("Crank-Nicolson step size must lie in (0, 1]")


class HessianRw(RandomWalk):
    """Random walk ``N(x, s^2 C_n)`` driven by the Laplace covariance."""

    variant = "hessian-rw"

    def __init__(self, la: LaplaceApproximation, step: float):
        self.laplace = la
        super().__init__(la.covariance, step)


class ModifiedPcn(Pcn):
    """Crank-Nicolson proposal centred at ``x_n``; reversible for the Laplace approximation."""

    variant = "modified-pcn"

    def __init__(self, la: LaplaceApproximation, step: float):
        self.laplace = la
        super().__init__(la.covariance, step, la.map_point)


def propose(kernel: ProposalKernel, x, rng: np.random.Generator = None, z=None) -> np.ndarray:
    """Draw from the proposal at ``x``; ``z`` overrides the standard-normal noise."""
    x = as_vector(x)
    if z is None:
        z = rng.standard_normal(kernel.dim)
    return kernel.mean(x) + kernel.noise_factor @ as_vector(z)


def log_acceptance_ratio(target: TargetFamily, n: float, kernel: ProposalKernel, x, y) -> float:
    """Log of the Metropolis-Hastings ratio; the acceptance probability is ``min(1, exp(.))``.

    Raises:
        InvalidStateError: if ``x`` is outside the support.
    """
    x, y = as_vector(x), as_vector(y)
    if not target.in_support(x):
        raise InvalidStateError(f"current state {x} is outside the support")
    if not target.in_support(y):
        return -np.inf
    pot, lp = target.potential.value, target.log_prior.value
    log_r = n * (pot(x) - pot(y)) + lp(y) - lp(x)
    return float(log_r + kernel.log_reference_ratio(x, y))


def acceptance_probability(log_r: float) -> float:
    return 1.0 if log_r >= 0 else float(np.exp(log_r))
