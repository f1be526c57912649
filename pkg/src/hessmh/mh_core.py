"""Metropolis-Hastings transitions and reproducible chain simulation."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from hessmh.core_measures import TargetFamily, as_vector
from hessmh.proposals import (
    InvalidStateError,
    ProposalKernel,
    acceptance_probability,
    log_acceptance_ratio,
    propose,
)

DEFAULT_BURN_IN = 1000


class ConfigurationError(ValueError):
    """Invalid run configuration (bad seeds, step counts, ...)."""


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based stream for one chain; identical seeds give identical streams."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


@dataclass(frozen=True)
class ChainRecord:
    """Post burn-in trajectory of one chain.

    ``states[k + 1]`` equals ``proposals[k]`` when ``accepted[k]`` and
    ``states[k]`` otherwise; ``alpha_values[k]`` is the realized acceptance
    probability of that step.
    """

    states: np.ndarray
    proposals: np.ndarray
    accepted: np.ndarray
    alpha_values: np.ndarray
    seed: Optional[int]
    n: float
    kernel: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.accepted.size

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def increments(self) -> np.ndarray:
        return np.diff(self.states, axis=0)


def mh_step(target: TargetFamily, n: float, kernel: ProposalKernel, x, rng=None, *, z=None, u=None):
    """One Metropolis-Hastings transition.

    Returns:
        ``(x_next, accepted, y, alpha)``.
    """
    x = as_vector(x)
    y = propose(kernel, x, rng, z=z)
    alpha = acceptance_probability(log_acceptance_ratio(target, n, kernel, x, y))
    if u is None:
        u = rng.random()
    accepted = u < alpha
    return (y if accepted else x), bool(accepted), y, alpha


def _default_start(kernel: ProposalKernel, target: TargetFamily) -> np.ndarray:
    la = getattr(kernel, "laplace", None)
    if la is not None:
        return la.map_point.copy()
    return np.zeros(target.dim)


def run_chain(target: TargetFamily, n: float, kernel: ProposalKernel, x0=None, steps: int = 10_000,
              burn_in: int = DEFAULT_BURN_IN, seed: Optional[int] = 0, *, noise=None,
              uniforms=None) -> ChainRecord:
    """Simulate ``burn_in + steps`` transitions and keep the last ``steps``.

    The whole noise block is drawn up front from :func:`make_rng` (normals
    first, then uniforms), so a record is bit-reproducible from its seed.
    ``noise`` and ``uniforms`` may be passed explicitly instead, with shapes
    ``(burn_in + steps, d)`` and ``(burn_in + steps,)``.

    Starts at the MAP point of a Hessian kernel when ``x0`` is omitted.
    """
    if steps < 1 or burn_in < 0:
        raise ConfigurationError("need steps >= 1 and burn_in >= 0")
    x = _default_start(kernel, target) if x0 is None else as_vector(x0).copy()
    if not target.in_support(x):
        raise InvalidStateError(f"starting state {x} is outside the support")
    total = burn_in + steps
    d = kernel.dim
    if noise is None or uniforms is None:
        rng = make_rng(seed)
        noise = rng.standard_normal((total, d)) if noise is None else noise
        uniforms = rng.random(total) if uniforms is None else uniforms
    noise = np.asarray(noise, dtype=float).reshape(total, d)
    uniforms = np.asarray(uniforms, dtype=float).reshape(total)

    increments = noise @ kernel.noise_factor.T
    in_support = target.support
    pot = target.potential.value
    lp = target.log_prior.value
    center, c = kernel.center, kernel.contraction
    inv = kernel._inv_factor
    autoregressive = center is not None
    exp = math.exp

    states = np.empty((steps + 1, d))
    proposals = np.empty((steps, d))
    accepted = np.zeros(steps, dtype=bool)
    alphas = np.empty(steps)

    ux, lx = pot(x), lp(x)
    qx = 0.0
    if autoregressive:
        w = inv @ (x - center)
        qx = 0.5 * float(w @ w)
    if burn_in == 0:
        states[0] = x
    for k in range(total):
        if autoregressive:
            y = center + c * (x - center) + increments[k]
        else:
            y = x + increments[k]
        if in_support(y):
            uy, ly = pot(y), lp(y)
            log_r = n * (ux - uy) + (ly - lx)
            if autoregressive:
                w = inv @ (y - center)
                qy = 0.5 * float(w @ w)
                log_r += qy - qx
            alpha = 1.0 if log_r >= 0.0 else exp(log_r)
        else:
            alpha = 0.0
        acc = uniforms[k] < alpha
        if acc:
            x, ux, lx = y, uy, ly
            if autoregressive:
                qx = qy
        j = k - burn_in
        if j >= 0:
            proposals[j] = y
            accepted[j] = acc
            alphas[j] = alpha
            states[j + 1] = x
        elif j == -1:
            states[0] = x
    return ChainRecord(states, proposals, accepted, alphas, seed, float(n), kernel.describe())


def run_replicas(target: TargetFamily, n: float, kernel: ProposalKernel, x0=None,
                 steps: int = 10_000, burn_in: int = DEFAULT_BURN_IN,
                 seeds: Sequence[int] = (0,), workers: int = 1) -> list:
    """Independent chains, one per seed, each identical to a separate :func:`run_chain` call."""
    seeds = [int(s) for s in seeds]
    if len(set(seeds)) != len(seeds):
        raise ConfigurationError(f"duplicate seeds in {seeds}")

    def one(seed):
        return run_chain(target, n, kernel, x0, steps, burn_in, seed)

    if workers <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, seeds))
