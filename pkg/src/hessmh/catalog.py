"""Built-in models keyed by name.

``gauss_ridge``      pi_0 = N(0, I_2), U = x_2^2 / 2; pi_n = N(0, diag(1, 1/(1+n))) exactly.
``gauss_1d``         pi_0 = N(0, 1),  U = x^2 / 2; pi_n = N(0, 1/(1+n)).
``cubic_1d``         pi_0 = N(0, 1),  U = (x + x^3/3)^2 / 2.
``cor410_2d``        pi_0 = N(0, I_2), U = (exp(x_2) - 1)^2 / 2; depends on x_2 only.
``bayes_nonlin_2d``  pi_0 = N(0, I_2), U = |y - F(x)|^2_Sigma / 2 with a triangular smooth F.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from hessmh.core_measures import GaussianMeasure, SmoothFunction, TargetFamily

_LOG_2PI = math.log(2 * math.pi)


class CatalogError(KeyError):
    """Unknown model name."""


def standard_normal_log_prior(d: int) -> SmoothFunction:
    const = -0.5 * d * _LOG_2PI
    if d == 1:
        def value(x):
            return const - 0.5 * x[0] * x[0]
    else:
        def value(x):
            return const - 0.5 * float(x @ x)
    return SmoothFunction(value, lambda x: -np.asarray(x, dtype=float), lambda x: -np.eye(d))


@dataclass(frozen=True)
class ModelCatalogEntry:
    """A target constructor plus the facts tests and experiments rely on.

    ``informed_subspace`` holds an orthonormal basis (columns) of the directions
    the potential depends on; it is only set for models that concentrate on a
    linear manifold rather than a point.
    """

    name: str
    build: Callable[[], TargetFamily]
    dim: int
    gaussian_exact: bool
    satisfies_thm49: bool
    x_star: np.ndarray
    informed_subspace: Optional[np.ndarray] = None
    exact_posterior: Optional[Callable[[float], GaussianMeasure]] = None
    description: str = ""

    def target(self) -> TargetFamily:
        return self.build()


def _gauss_ridge() -> TargetFamily:
    pot = SmoothFunction(
        lambda x: 0.5 * x[1] * x[1],
        lambda x: np.array([0.0, x[1]]),
        lambda x: np.diag([0.0, 1.0]),
    )
    return TargetFamily(pot, standard_normal_log_prior(2), 2, name="gauss_ridge")


def _gauss_1d() -> TargetFamily:
    pot = SmoothFunction(lambda x: 0.5 * x[0] * x[0], lambda x: np.array([x[0]]),
                         lambda x: np.array([[1.0]]))
    return TargetFamily(pot, standard_normal_log_prior(1), 1, name="gauss_1d")


def _cubic_value(x):
    t = x[0] + x[0] ** 3 / 3.0
    return 0.5 * t * t


def _cubic_grad(x):
    t = x[0] + x[0] ** 3 / 3.0
    return np.array([t * (1.0 + x[0] ** 2)])


def _cubic_hess(x):
    t = x[0] + x[0] ** 3 / 3.0
    dt = 1.0 + x[0] ** 2
    return np.array([[dt * dt + t * 2.0 * x[0]]])


def _cubic_1d() -> TargetFamily:
    pot = SmoothFunction(_cubic_value, _cubic_grad, _cubic_hess)
    return TargetFamily(pot, standard_normal_log_prior(1), 1, name="cubic_1d")


def _cor410_value(x):
    if x[1] > 300.0:
        return math.inf
    t = math.expm1(x[1])
    return 0.5 * t * t


def _cor410_grad(x):
    e = math.exp(x[1])
    return np.array([0.0, (e - 1.0) * e])


def _cor410_hess(x):
    e = math.exp(x[1])
    return np.array([[0.0, 0.0], [0.0, e * e + (e - 1.0) * e]])


def _cor410_2d() -> TargetFamily:
    pot = SmoothFunction(_cor410_value, _cor410_grad, _cor410_hess)
    return TargetFamily(pot, standard_normal_log_prior(2), 2, name="cor410_2d")


_BAYES_X_TRUE = np.array([0.5, -0.3])
_BAYES_SIGMA = np.array([0.5, 1.0])  # diagonal noise covariance


def _forward(x):
    return np.array([x[0] + x[0] ** 3 / 5.0, x[1] + 0.5 * x[0] ** 2])


_BAYES_Y = _forward(_BAYES_X_TRUE)


def _bayes_value(x):
    r0 = _BAYES_Y[0] - (x[0] + x[0] ** 3 / 5.0)
    r1 = _BAYES_Y[1] - (x[1] + 0.5 * x[0] * x[0])
    return 0.5 * (r0 * r0 / _BAYES_SIGMA[0] + r1 * r1 / _BAYES_SIGMA[1])


def _bayes_jacobian(x):
    return np.array([[1.0 + 0.6 * x[0] ** 2, 0.0], [x[0], 1.0]])


def _bayes_grad(x):
    r = (_BAYES_Y - _forward(x)) / _BAYES_SIGMA
    return -_bayes_jacobian(x).T @ r


def _bayes_hess(x):
    j = _bayes_jacobian(x)
    r = (_BAYES_Y - _forward(x)) / _BAYES_SIGMA
    # Second derivatives of F: d2F0/dx0^2 = 1.2 x0, d2F1/dx0^2 = 1.
    curvature = np.array([[1.2 * x[0] * r[0] + 1.0 * r[1], 0.0], [0.0, 0.0]])
    return j.T @ (j / _BAYES_SIGMA[:, None]) - curvature


def _bayes_nonlin_2d() -> TargetFamily:
    pot = SmoothFunction(_bayes_value, _bayes_grad, _bayes_hess)
    return TargetFamily(pot, standard_normal_log_prior(2), 2, name="bayes_nonlin_2d")


def _ridge_posterior(n: float) -> GaussianMeasure:
    return GaussianMeasure(np.zeros(2), np.diag([1.0, 1.0 / (1.0 + n)]))


def _gauss_1d_posterior(n: float) -> GaussianMeasure:
    return GaussianMeasure(np.zeros(1), np.array([[1.0 / (1.0 + n)]]))


CATALOG = {
    e.name: e
    for e in [
        ModelCatalogEntry("gauss_ridge", _gauss_ridge, 2, True, True, np.zeros(2),
                          informed_subspace=np.array([[0.0], [1.0]]),
                          exact_posterior=_ridge_posterior,
                          description="Gaussian ridge concentrating along the x_1 axis"),
        ModelCatalogEntry("gauss_1d", _gauss_1d, 1, True, True, np.zeros(1),
                          exact_posterior=_gauss_1d_posterior,
                          description="conjugate one-dimensional Gaussian"),
        ModelCatalogEntry("cubic_1d", _cubic_1d, 1, False, True, np.zeros(1),
                          description="cubic forward map, point concentration at 0"),
        ModelCatalogEntry("cor410_2d", _cor410_2d, 2, False, True, np.zeros(2),
                          informed_subspace=np.array([[0.0], [1.0]]),
                          description="exponential forward map in x_2 only, manifold concentration"),
        ModelCatalogEntry("bayes_nonlin_2d", _bayes_nonlin_2d, 2, False, True, _BAYES_X_TRUE.copy(),
                          description="two-dimensional nonlinear regression with Gaussian noise"),
    ]
}


def get_model(name: str) -> ModelCatalogEntry:
    try:
        return CATALOG[name]
    except KeyError:
        raise CatalogError(f"unknown model {name!r}; known: {sorted(CATALOG)}") from None
