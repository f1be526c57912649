"""MAP estimation and the Laplace approximation of concentrating posteriors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from hessmh.core_measures import (
    FactorizationError,
    GaussianMeasure,
    SpdMatrix,
    TargetFamily,
    as_vector,
)


class ConvergenceError(RuntimeError):
    """Newton iteration did not reach the gradient tolerance.

    The best iterate found is kept in ``best`` so callers can inspect or restart.
    """

    def __init__(self, message: str, best: np.ndarray, grad_norm: float):
        super().__init__(message)
        self.best = best
        self.grad_norm = grad_norm


class DegenerateMinimumError(RuntimeError):
    """The Hessian at the candidate minimizer is not positive definite."""


@dataclass(frozen=True)
class NewtonOptions:
    grad_tol: float = 1e-10
    max_iter: int = 200
    step_floor: float = 1e-14
    armijo: float = 1e-4


@dataclass(frozen=True)
class OptimizerTrace:
    iterations: int
    grad_norm: float
    objective: float


@dataclass(frozen=True)
class LaplaceApproximation:
    """Gaussian ``N(x_n, C_n)`` with ``C_n = (n H_n)^{-1}`` built at the MAP point.

    ``precision_core`` is ``H_n = ∇²U(x_n) - n^{-1} ∇² log pi_0(x_n)``.
    """

    map_point: np.ndarray
    precision_core: SpdMatrix
    covariance: SpdMatrix
    n: float
    trace: Optional[OptimizerTrace] = None

    @property
    def measure(self) -> GaussianMeasure:
        return GaussianMeasure(self.map_point, self.covariance)

    @property
    def dim(self) -> int:
        return self.map_point.size

    @classmethod
    def from_gaussian(cls, mean, cov, n: float = 1.0) -> "LaplaceApproximation":
        """Wrap a known Gaussian as if it were the Laplace approximation at level ``n``."""
        cov = cov if isinstance(cov, SpdMatrix) else SpdMatrix(cov)
        core = SpdMatrix(cov.inverse().dense / n)
        return cls(as_vector(mean), core, cov, float(n))


def _objective(target: TargetFamily, n: float):
    pot, lp = target.potential, target.log_prior

    def value(x):
        if not target.in_support(x):
            return np.inf
        return pot(x) - lp(x) / n

    def grad(x):
        return pot.grad(x) - lp.grad(x) / n

    def hess(x):
        return pot.hess(x) - lp.hess(x) / n

    return value, grad, hess


def _modified_newton_direction(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    lam = 0.0
    eye = np.eye(h.shape[0])
    while True:
        try:
            return -sla.cho_solve(sla.cho_factor(h + lam * eye, lower=True), g)
        except np.linalg.LinAlgError:
            lam = 2.0 * lam if lam else 1e-10 * max(np.linalg.norm(h), 1.0)


def map_estimate(target: TargetFamily, n: float, x0, opts: NewtonOptions = NewtonOptions()):
    """Minimize ``J(x) = U(x) - n^{-1} log pi_0(x)`` by damped Newton with Armijo backtracking.

    Returns:
        ``(x_n, trace)``.

    Raises:
        ConvergenceError: gradient tolerance not met within ``opts.max_iter``.
        DegenerateMinimumError: the Hessian of ``J`` at the final point is not positive definite.
    """
    if n <= 0:
        raise ValueError("concentration n must be positive")
    x = as_vector(x0).copy()
    if not target.in_support(x):
        raise ValueError("starting point lies outside the support")
    value, grad, hess = _objective(target, n)
    fx, g = value(x), grad(x)
    gnorm = float(np.linalg.norm(g))
    it = 0
    while gnorm > opts.grad_tol:
        if it >= opts.max_iter:
            raise ConvergenceError(f"no convergence after {it} Newton steps", x, gnorm)
        p = _modified_newton_direction(hess(x), g)
        slope = float(g @ p)
        if slope >= 0:  # modified Hessian too ill-conditioned; fall back to steepest descent
            p, slope = -g, -gnorm**2
        t = 1.0
        while True:
            x_new = x + t * p
            f_new = value(x_new)
            if f_new <= fx + opts.armijo * t * slope:
                break
            # Near the optimum the decrease drops below the rounding level of J.
            if t == 1.0 and f_new <= fx + 16 * np.finfo(float).eps * abs(fx) \
                    and np.linalg.norm(grad(x_new)) < gnorm:
                break
            t *= 0.5
            if t * np.linalg.norm(p) < opts.step_floor:
                raise ConvergenceError("line search stalled", x, gnorm)
        x, fx = x_new, f_new
        g = grad(x)
        gnorm = float(np.linalg.norm(g))
        it += 1
    return _finish(x, hess, it, gnorm, fx)


def _finish(x, hess, it, gnorm, fx):
    try:
        SpdMatrix(hess(x))
    except FactorizationError as err:
        raise DegenerateMinimumError(f"Hessian at {x} is not positive definite") from err
    return x, OptimizerTrace(iterations=it, grad_norm=gnorm, objective=float(fx))


def laplace_approximation(target: TargetFamily, n: float, x0=None,
                          opts: NewtonOptions = NewtonOptions()) -> LaplaceApproximation:
    """Laplace approximation ``N(x_n, n^{-1} H_n^{-1})`` of ``pi_n``."""
    if x0 is None:
        x0 = np.zeros(target.dim)
    x_n, trace = map_estimate(target, n, x0, opts)
    h = target.potential.hess(x_n) - target.log_prior.hess(x_n) / n
    try:
        core = SpdMatrix(h)
    except FactorizationError as err:
        raise DegenerateMinimumError("H_n is not positive definite") from err
    cov = core.inverse().scaled(1.0 / n)
    return LaplaceApproximation(x_n, core, cov, float(n), trace)


@dataclass(frozen=True)
class LimitHessian:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    positive_definite: bool
    null_space: np.ndarray  # columns spanning the numerical null space


def limit_hessian(target: TargetFamily, x_star, rtol: float = 1e-10) -> LimitHessian:
    """``∇²U(x_star)`` with a definiteness report.

    Semi-definite results are allowed: they indicate concentration on a linear
    manifold rather than a point, and ``null_space`` spans its directions.
    """
    h = target.potential.hess(as_vector(x_star))
    eigval, eigvec = np.linalg.eigh(h)
    scale = max(np.max(np.abs(eigval)), 1.0)
    null = np.abs(eigval) <= rtol * scale
    return LimitHessian(h, eigval, bool(np.all(eigval > rtol * scale)), eigvec[:, null])
