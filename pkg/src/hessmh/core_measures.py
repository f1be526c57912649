"""Gaussian measures, differentiable scalar functions and concentrating target families."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

ArrayFunction = Callable[[np.ndarray], np.ndarray]
ScalarFunction = Callable[[np.ndarray], float]

_FD_STEP = np.cbrt(np.finfo(float).eps)


class OutsideSupportError(ValueError):
    """Raised when a density is requested at a point outside the reference support."""


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be symmetric positive definite is not."""


def as_vector(x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise ValueError(f"expected a 1-d state vector, got shape {x.shape}")
    return x


class SpdMatrix:
    """Symmetric positive definite matrix stored alongside its lower Cholesky factor.

    The dense matrix is symmetrized on construction so that ``M == M.T`` holds
    exactly. Construct either from the dense matrix or directly from a factor
    with :meth:`from_factor`.
    """

    __slots__ = ("_dense", "_factor")

    def __init__(self, matrix):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {matrix.shape}")
        matrix = 0.5 * (matrix + matrix.T)
        try:
            factor = np.linalg.cholesky(matrix)
        except np.linalg.LinAlgError as err:
            raise FactorizationError("matrix is not positive definite") from err
        if not np.all(np.diag(factor) > 0) or not np.all(np.isfinite(factor)):
            raise FactorizationError("matrix is not positive definite")
        self._dense = matrix
        self._factor = factor

    @classmethod
    def from_factor(cls, factor) -> "SpdMatrix":
        factor = np.tril(np.atleast_2d(np.asarray(factor, dtype=float)))
        if not np.all(np.diag(factor) > 0):
            raise FactorizationError("factor must have a positive diagonal")
        obj = cls.__new__(cls)
        dense = factor @ factor.T
        obj._dense = 0.5 * (dense + dense.T)
        obj._factor = factor
        return obj

    @property
    def dense(self) -> np.ndarray:
        return self._dense

    @property
    def factor(self) -> np.ndarray:
        return self._factor

    @property
    def dim(self) -> int:
        return self._dense.shape[0]

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._factor))))

    def solve_factor(self, b) -> np.ndarray:
        """Return ``L^{-1} b``."""
        return sla.solve_triangular(self._factor, b, lower=True)

    def inverse(self) -> "SpdMatrix":
        inv_factor = sla.solve_triangular(self._factor, np.eye(self.dim), lower=True)
        return SpdMatrix(inv_factor.T @ inv_factor)

    def sqrtm(self) -> np.ndarray:
        """Symmetric square root, used for affine standardizations ``x_n + C^{1/2} z``."""
        eigval, eigvec = np.linalg.eigh(self._dense)
        return (eigvec * np.sqrt(eigval)) @ eigvec.T

    def scaled(self, c: float) -> "SpdMatrix":
        if c <= 0:
            raise ValueError("scale must be positive")
        return SpdMatrix.from_factor(np.sqrt(c) * self._factor)

    def __repr__(self) -> str:
        return f"SpdMatrix({self._dense.tolist()!r})"


@dataclass(frozen=True)
class GaussianMeasure:
    """Multivariate normal distribution ``N(mean, cov)`` evaluated through the Cholesky factor."""

    mean: np.ndarray
    cov: SpdMatrix

    def __post_init__(self):
        mean = as_vector(self.mean)
        cov = self.cov if isinstance(self.cov, SpdMatrix) else SpdMatrix(self.cov)
        if cov.dim != mean.size:
            raise ValueError("mean and covariance dimensions differ")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        if size is None:
            return gaussian_sample(self, rng)
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self.cov.factor.T

    def log_density(self, x) -> float:
        return gaussian_log_density(self, x)

    def log_density_many(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(xs)
        w = sla.solve_triangular(self.cov.factor, (xs - self.mean).T, lower=True)
        return -0.5 * np.sum(w * w, axis=0) - 0.5 * (self.dim * np.log(2 * np.pi) + self.cov.log_det())


def gaussian_sample(g: GaussianMeasure, rng: np.random.Generator = None, z=None) -> np.ndarray:
    """Draw ``mean + L z``; pass ``z`` explicitly to drive the draw with given noise."""
    if z is None:
        z = rng.standard_normal(g.dim)
    return g.mean + g.cov.factor @ as_vector(z)


def gaussian_log_density(g: GaussianMeasure, x) -> float:
    w = g.cov.solve_factor(as_vector(x) - g.mean)
    return float(-0.5 * w @ w - 0.5 * (g.dim * np.log(2 * np.pi) + g.cov.log_det()))


def affine_pushforward_gaussian(g: GaussianMeasure, A, b) -> GaussianMeasure:
    """Law of ``A X + b`` for ``X ~ g``; ``A`` must be invertible."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape != (g.dim, g.dim):
        raise ValueError(f"A must have shape {(g.dim, g.dim)}")
    if np.linalg.matrix_rank(A) < g.dim:
        raise FactorizationError("affine map is singular")
    # A L is a (non-triangular) square root of A C A^T; re-factorize via QR.
    root = A @ g.cov.factor
    r = np.linalg.qr(root.T, mode="r")
    factor = r.T * np.sign(np.diag(r))
    return GaussianMeasure(A @ g.mean + as_vector(b), SpdMatrix.from_factor(factor))


def central_difference_gradient(f: ScalarFunction, x: np.ndarray) -> np.ndarray:
    x = as_vector(x)
    grad = np.empty_like(x)
    for i in range(x.size):
        h = _FD_STEP * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


def central_difference_hessian(grad: ArrayFunction, x: np.ndarray) -> np.ndarray:
    x = as_vector(x)
    d = x.size
    hess = np.empty((d, d))
    for i in range(d):
        h = _FD_STEP * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        hess[:, i] = (as_vector(grad(x + e)) - as_vector(grad(x - e))) / (2 * h)
    return 0.5 * (hess + hess.T)


@dataclass(frozen=True)
class SmoothFunction:
    """Scalar function with gradient and Hessian.

    Missing derivatives are replaced by central differences, in which case
    ``mode`` reports ``"finite-difference"``.
    """

    value: ScalarFunction
    gradient: Optional[ArrayFunction] = None
    hessian: Optional[ArrayFunction] = None
    mode: str = field(init=False)

    def __post_init__(self):
        analytic = self.gradient is not None and self.hessian is not None
        object.__setattr__(self, "mode", "analytic" if analytic else "finite-difference")

    def __call__(self, x) -> float:
        return float(self.value(x))

    def grad(self, x) -> np.ndarray:
        if self.gradient is not None:
            return as_vector(self.gradient(as_vector(x)))
        return central_difference_gradient(self.value, x)

    def hess(self, x) -> np.ndarray:
        x = as_vector(x)
        if self.hessian is not None:
            h = np.atleast_2d(np.asarray(self.hessian(x), dtype=float))
            return 0.5 * (h + h.T)
        return central_difference_hessian(self.grad, x)


def _everywhere(x) -> bool:
    return True


@dataclass(frozen=True)
class TargetFamily:
    """The family ``pi_n(dx) ∝ exp(-n U(x)) pi_0(dx)`` indexed by concentration ``n``.

    Attributes:
        potential: the potential ``U >= 0``.
        log_prior: log Lebesgue density of the reference measure ``pi_0``.
        dim: state-space dimension.
        support: membership test for ``{pi_0 > 0}``; defaults to all of R^d.
        name: label used in reports.
    """

    potential: SmoothFunction
    log_prior: SmoothFunction
    dim: int
    support: Callable[[np.ndarray], bool] = _everywhere
    name: str = "target"

    def in_support(self, x) -> bool:
        return bool(self.support(x))

    def log_density(self, n: float, x) -> float:
        """``-n U(x) + log pi_0(x)``, or ``-inf`` outside the support."""
        if not self.support(x):
            return -np.inf
        return -n * self.potential.value(x) + self.log_prior.value(x)


def log_unnormalized_density(target: TargetFamily, n: float, x) -> float:
    """Unnormalized log-density of ``pi_n`` at ``x``.

    Raises:
        OutsideSupportError: if ``x`` lies outside the support of ``pi_0``.
    """
    if n <= 0:
        raise ValueError("concentration n must be positive")
    x = as_vector(x)
    if not target.in_support(x):
        raise OutsideSupportError(f"{x} lies outside the support of the reference measure")
    return float(-n * target.potential(x) + target.log_prior(x))


def gaussian_log_prior(mean, cov) -> SmoothFunction:
    """Log-density of ``N(mean, cov)`` packaged with analytic derivatives."""
    g = GaussianMeasure(mean, cov)
    precision = g.cov.inverse().dense
    const = -0.5 * (g.dim * np.log(2 * np.pi) + g.cov.log_det())
    m = g.mean

    def value(x):
        r = x - m
        return const - 0.5 * r @ precision @ r

    def gradient(x):
        return -precision @ (x - m)

    def hessian(x):
        return -precision

    return SmoothFunction(value, gradient, hessian)
