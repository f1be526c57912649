"""Pushforward of Markov kernels along state maps.

Finite state spaces
    Exact transport of a reversible kernel along an arbitrary surjection, with
    spectral gaps from the symmetrized matrix ``D^{1/2} K D^{-1/2}``.
Continuous state spaces
    Only bijective affine maps ``T(x) = x_n + L x``. The Hessian-preconditioned
    chain on ``N(x_n, C_n)`` is run next to the standard chain on ``N(0, I)``
    with the same noise and uniforms, and the two trajectories are compared.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from hessmh.core_measures import GaussianMeasure, SmoothFunction, TargetFamily
from hessmh.laplace import LaplaceApproximation
from hessmh.mh_core import ConfigurationError, make_rng, run_chain
from hessmh.proposals import HessianRw, ModifiedPcn, Pcn, RandomWalk

TOL = 1e-12


class NonReversibleError(ValueError):
    """Detailed balance fails beyond tolerance."""


class DegenerateFiberError(ValueError):
    """A fiber of the state map carries no stationary mass."""


@dataclass(frozen=True)
class FiniteChain:
    """Row-stochastic ``K`` with stationary distribution ``pi``."""

    K: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        pi = np.asarray(self.pi, dtype=float)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "pi", pi)
        if K.ndim != 2 or K.shape[0] != K.shape[1] or pi.shape != (K.shape[0],):
            raise ValueError("K must be square and match pi")
        if np.any(K < -TOL) or np.max(np.abs(K.sum(axis=1) - 1.0)) > TOL:
            raise ValueError("K is not row-stochastic")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > TOL:
            raise ValueError("pi is not a probability vector")
        if np.max(np.abs(pi @ K - pi)) > TOL:
            raise ValueError("pi is not stationary for K")

    @property
    def size(self) -> int:
        return self.pi.size

    def flow(self) -> np.ndarray:
        """Stationary transition measure ``pi_x K_{x,x'}``."""
        return self.pi[:, None] * self.K

    def reversibility_residual(self) -> float:
        q = self.flow()
        return float(np.max(np.abs(q - q.T)))

    @property
    def reversible(self) -> bool:
        return self.reversibility_residual() <= TOL


@dataclass(frozen=True)
class StateMap:
    """Surjection ``{0..m-1} -> {0..m'-1}`` stored as an index array."""

    index: np.ndarray
    m_out: Optional[int] = None

    def __post_init__(self):
        idx = np.asarray(self.index, dtype=int)
        if idx.ndim != 1 or idx.size == 0 or idx.min() < 0:
            raise ValueError("state map must be a nonempty array of nonnegative indices")
        m_out = int(idx.max()) + 1 if self.m_out is None else int(self.m_out)
        if set(idx.tolist()) != set(range(m_out)):
            raise ValueError("state map is not surjective")
        object.__setattr__(self, "index", idx)
        object.__setattr__(self, "m_out", m_out)

    @property
    def bijective(self) -> bool:
        return self.m_out == self.index.size

    def matrix(self) -> np.ndarray:
        """0/1 matrix ``M`` with ``M[x, T(x)] = 1``."""
        M = np.zeros((self.index.size, self.m_out))
        M[np.arange(self.index.size), self.index] = 1.0
        return M


def pushforward_measure(chain: FiniteChain, T: StateMap) -> np.ndarray:
    return np.bincount(T.index, weights=chain.pi, minlength=T.m_out)


def _push_flow(flow: np.ndarray, T: StateMap) -> np.ndarray:
    M = T.matrix()
    return M.T @ flow @ M


def _check_map(chain: FiniteChain, T: StateMap):
    if T.index.size != chain.size:
        raise ValueError("state map domain does not match the chain")


def pushforward_kernel(chain: FiniteChain, T: StateMap) -> FiniteChain:
    """Conditional-expectation transport ``E[K(X, T^{-1}B) | T(X) = y]``."""
    _check_map(chain, T)
    if not chain.reversible:
        raise NonReversibleError("pushforward requires a reversible chain")
    mu = pushforward_measure(chain, T)
    if np.any(mu <= 0):
        raise DegenerateFiberError(f"fibers {np.flatnonzero(mu <= 0).tolist()} have zero mass")
    KT = _push_flow(chain.flow(), T) / mu[:, None]
    # Rows are stochastic up to rounding; renormalize so the validator sees exact sums.
    KT /= KT.sum(axis=1, keepdims=True)
    return FiniteChain(KT, mu)


def _symmetrized(chain: FiniteChain) -> np.ndarray:
    r = np.sqrt(chain.pi)
    S = r[:, None] * chain.K / r[None, :]
    return 0.5 * (S + S.T)


def exact_spectral_gap(chain: FiniteChain) -> float:
    """``1 - max |lambda|`` over the spectrum on mean-zero functions."""
    if chain.reversibility_residual() > TOL:
        raise NonReversibleError("spectral gap is only defined here for reversible chains")
    if np.any(chain.pi <= 0):
        raise DegenerateFiberError("stationary distribution must be positive")
    r = np.sqrt(chain.pi)
    S = _symmetrized(chain) - np.outer(r, r)
    if chain.size == 1:
        return 1.0
    return float(1.0 - np.max(np.abs(np.linalg.eigvalsh(S))))


def conductance(chain: FiniteChain) -> float:
    """Exact ``min Q(A, A^c) / pi(A)`` over sets with ``pi(A) <= 1/2`` (brute force, m <= 16)."""
    m = chain.size
    if m > 16:
        raise ValueError("brute-force conductance is limited to 16 states")
    q = chain.flow()
    best = np.inf
    for r in range(1, m):
        for A in itertools.combinations(range(m), r):
            A = list(A)
            pa = chain.pi[A].sum()
            if pa > 0.5 + TOL or pa <= 0:
                continue
            Ac = [i for i in range(m) if i not in A]
            best = min(best, q[np.ix_(A, Ac)].sum() / pa)
    return float(best)


# --- finite Metropolis-Hastings chains -------------------------------------------


@dataclass(frozen=True)
class FiniteMH:
    """MH chain built from a proposal matrix ``P`` and target ``pi``."""

    proposal: np.ndarray
    alpha: np.ndarray
    chain: FiniteChain

    @property
    def pi(self) -> np.ndarray:
        return self.chain.pi

    def average_acceptance(self) -> float:
        """``sum_x pi_x sum_y P_xy alpha_xy`` (proposals of the current state count as accepted)."""
        return float(np.sum(self.pi[:, None] * self.proposal * self.alpha))


def _mh_from(pi: np.ndarray, P: np.ndarray, alpha: np.ndarray) -> FiniteChain:
    K = P * alpha
    np.fill_diagonal(K, 0.0)
    np.fill_diagonal(K, 1.0 - K.sum(axis=1))
    return FiniteChain(K, pi)


def mh_acceptance(pi: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``min(1, pi_y P_yx / (pi_x P_xy))``, set to 1 where ``P_xy = 0``."""
    num = pi[None, :] * P.T
    den = pi[:, None] * P
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(den > 0, np.minimum(1.0, num / np.where(den > 0, den, 1.0)), 1.0)
    return a


def finite_mh(pi, P) -> FiniteMH:
    pi = np.asarray(pi, dtype=float)
    P = np.asarray(P, dtype=float)
    alpha = mh_acceptance(pi, P)
    return FiniteMH(P, alpha, _mh_from(pi, P, alpha))


def pushforward_mh(mh: FiniteMH, T: StateMap):
    """Proposal, acceptance and MH kernel on the image space.

    The pushed acceptance is the stationary-proposal-weighted average of
    ``alpha_P`` over each pair of fibers, i.e. the density of the pushed
    accepted flow with respect to the pushed proposal flow. The ratio formula
    ``min(1, pushed reverse flow / pushed flow)`` agrees with it when
    ``alpha_P`` is constant on fiber pairs (always when ``T`` is bijective)
    and is returned separately for comparison.

    Returns:
        ``(FiniteMH, ratio_alpha)``.
    """
    _check_map(mh.chain, T)
    mu = pushforward_measure(mh.chain, T)
    if np.any(mu <= 0):
        raise DegenerateFiberError("fiber with zero mass")
    proposal_flow = _push_flow(mh.pi[:, None] * mh.proposal, T)
    accepted_flow = _push_flow(mh.pi[:, None] * mh.proposal * mh.alpha, T)
    PT = proposal_flow / mu[:, None]
    PT /= PT.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha_T = np.where(proposal_flow > 0,
                           accepted_flow / np.where(proposal_flow > 0, proposal_flow, 1.0), 1.0)
    alpha_T = np.minimum(alpha_T, 1.0)
    ratio_alpha = mh_acceptance(mu, PT)
    return FiniteMH(PT, alpha_T, _mh_from(mu, PT, alpha_T)), ratio_alpha


# --- verification reports ----------------------------------------------------------


@dataclass
class GapReport:
    gap: float
    gap_pushed: float
    bijective: bool
    violation: float  # gap - gap_pushed; must be <= TOL
    equality_residual: Optional[float] = None

    @property
    def ok(self) -> bool:
        if self.violation > TOL:
            return False
        return self.equality_residual is None or self.equality_residual <= TOL


def verify_gap_monotonicity(chain: FiniteChain, T: StateMap) -> GapReport:
    pushed = pushforward_kernel(chain, T)
    g, gp = exact_spectral_gap(chain), exact_spectral_gap(pushed)
    eq = abs(g - gp) if T.bijective else None
    return GapReport(g, gp, T.bijective, g - gp, eq)


@dataclass
class AcceptanceReport:
    abar: float
    abar_pushed: float
    residual: float  # |abar - abar_pushed|
    kernel_residual: float  # max |T_*K - MH(T_*P, alpha_T)|
    ratio_formula_residual: float  # max |alpha_T - min-ratio alpha| on the pushed proposal support

    @property
    def ok(self) -> bool:
        return self.residual <= TOL and self.kernel_residual <= TOL


def verify_acceptance_coincidence(mh: FiniteMH, T: StateMap) -> AcceptanceReport:
    pushed, ratio_alpha = pushforward_mh(mh, T)
    transported = pushforward_kernel(mh.chain, T)
    support = pushed.proposal > 0
    ratio_res = float(np.max(np.abs(pushed.alpha - ratio_alpha)[support], initial=0.0))
    a, ap = mh.average_acceptance(), pushed.average_acceptance()
    return AcceptanceReport(a, ap, abs(a - ap),
                            float(np.max(np.abs(transported.K - pushed.chain.K))), ratio_res)


def off_diagonal_flow(chain: FiniteChain) -> float:
    """Stationary probability of leaving the current state, ``sum_{x != y} pi_x K_xy``.

    Bounds the conductance from above whenever no state carries more than half
    of the mass, since singletons are then admissible sets.
    """
    q = chain.flow()
    return float(q.sum() - np.trace(q))


def lag_one_correlation(chain: FiniteChain, f) -> float:
    """``Corr(f(X_0), f(X_1))`` for the stationary chain, computed exactly."""
    f = np.asarray(f, dtype=float)
    mean = chain.pi @ f
    var = chain.pi @ (f - mean) ** 2
    if var <= 0:
        raise ValueError("f is constant under pi")
    return float(((f - mean) @ chain.flow() @ (f - mean)) / var)


def verify_correlation_identity(chain: FiniteChain, T: StateMap, g) -> float:
    """``|Corr(g∘T(X_k), g∘T(X_{k+1})) - Corr(g(Y_k), g(Y_{k+1}))|`` for ``Y`` the pushed chain."""
    g = np.asarray(g, dtype=float)
    pushed = pushforward_kernel(chain, T)
    return abs(lag_one_correlation(chain, g[T.index]) - lag_one_correlation(pushed, g))


def flow_transport_residual(chain: FiniteChain, T: StateMap) -> float:
    """Pushed stationary transition measure versus that of the pushed chain."""
    pushed = pushforward_kernel(chain, T)
    return float(np.max(np.abs(_push_flow(chain.flow(), T) - pushed.flow())))


# --- fuzz suite ---------------------------------------------------------------------


def random_mh_case(rng: np.random.Generator, m_range=(2, 6)):
    """Random target, random proposal rows and a random surjection (bijective 1 time in 4)."""
    m = int(rng.integers(m_range[0], m_range[1] + 1))
    pi = rng.dirichlet(np.ones(m))
    P = rng.dirichlet(np.ones(m), size=m)
    mh = finite_mh(pi, P)
    if rng.random() < 0.25:
        index = rng.permutation(m)
    else:
        m_out = int(rng.integers(1, m + 1))
        index = np.concatenate([rng.permutation(m_out), rng.integers(0, m_out, m - m_out)])
        index = index[rng.permutation(m)]
    return mh, StateMap(index, int(index.max()) + 1)


@dataclass
class FuzzSummary:
    cases: int
    seed: int
    max_reversibility_residual: float = 0.0
    max_flow_transport_residual: float = 0.0
    max_gap_violation: float = -np.inf
    max_bijective_gap_residual: float = 0.0
    bijective_cases: int = 0
    max_acceptance_residual: float = 0.0
    max_kernel_residual: float = 0.0
    max_ratio_formula_residual: float = 0.0
    max_correlation_residual: float = 0.0
    cheeger_violations: int = 0
    max_cheeger_excess: float = -np.inf
    conductance_violations: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_json(self, config: Optional[dict] = None) -> str:
        d = asdict(self)
        d["ok"] = self.ok
        if config is not None:
            d["config"] = config
        from hessmh.experiments import strict_json_value

        return json.dumps(strict_json_value(d), indent=2, sort_keys=True, allow_nan=False)


def run_fuzz(cases: int = 200, seed: int = 20240901) -> FuzzSummary:
    """Check the finite-state transport identities on random MH chains.

    A case fails when a residual exceeds ``TOL``, the pushed gap is smaller than
    the original one, or the gap exceeds twice the off-diagonal flow. Failing cases are serialized
    into ``failures``.
    """
    rng = make_rng(seed)
    s = FuzzSummary(cases, seed)
    for case in range(cases):
        mh, T = random_mh_case(rng)
        chain = mh.chain
        pushed = pushforward_kernel(chain, T)
        rev = pushed.reversibility_residual()
        flow = flow_transport_residual(chain, T)
        gap = verify_gap_monotonicity(chain, T)
        acc = verify_acceptance_coincidence(mh, T)
        g = rng.standard_normal(T.m_out)
        corr = verify_correlation_identity(chain, T, g) if np.ptp(g[T.index]) > 0 and T.m_out > 1 else 0.0
        abar = mh.average_acceptance()
        moved = off_diagonal_flow(chain)
        cheeger_excess = gap.gap - 2.0 * moved
        phi = conductance(chain) if chain.size > 1 else np.inf

        s.max_reversibility_residual = max(s.max_reversibility_residual, rev)
        s.max_flow_transport_residual = max(s.max_flow_transport_residual, flow)
        s.max_gap_violation = max(s.max_gap_violation, gap.violation)
        if T.bijective:
            s.bijective_cases += 1
            s.max_bijective_gap_residual = max(s.max_bijective_gap_residual, gap.equality_residual)
        s.max_acceptance_residual = max(s.max_acceptance_residual, acc.residual)
        s.max_kernel_residual = max(s.max_kernel_residual, acc.kernel_residual)
        s.max_ratio_formula_residual = max(s.max_ratio_formula_residual, acc.ratio_formula_residual)
        s.max_correlation_residual = max(s.max_correlation_residual, corr)
        s.max_cheeger_excess = max(s.max_cheeger_excess, cheeger_excess)
        s.cheeger_violations += int(cheeger_excess > 0)
        s.conductance_violations += int(gap.gap > 2.0 * phi + TOL)

        bad = [name for name, val in [("reversibility", rev), ("flow", flow),
                                      ("gap", gap.violation), ("acceptance", acc.residual),
                                      ("kernel", acc.kernel_residual), ("correlation", corr),
                                      ("bijective-gap", gap.equality_residual or 0.0)]
               if val > TOL]
        if cheeger_excess > 0:
            bad.append("cheeger")
        if bad:
            s.failures.append({"case": case, "checks": bad, "pi": mh.pi.tolist(),
                               "proposal": mh.proposal.tolist(), "map": T.index.tolist(),
                               "gap": gap.gap, "abar": abar, "off_diagonal_flow": moved})
    return s


# --- continuous affine coupling -----------------------------------------------------


@dataclass
class CouplingReport:
    max_deviation: float
    scale: float
    relative_deviation: float
    same_decisions: bool
    abar: tuple
    esjd: tuple  # (pushed-standard chain, Hessian chain), direction e_1 of the standard space


def standard_gaussian_target(d: int) -> TargetFamily:
    """``N(0, I_d)`` written with a flat prior and quadratic potential at ``n = 1``."""
    pot = SmoothFunction(lambda x: 0.5 * float(x @ x), lambda x: np.asarray(x, dtype=float),
                         lambda x: np.eye(d))
    flat = SmoothFunction(lambda x: 0.0, lambda x: np.zeros(d), lambda x: np.zeros((d, d)))
    return TargetFamily(pot, flat, d, name=f"std_normal_{d}")


def laplace_gaussian_target(la: LaplaceApproximation) -> TargetFamily:
    """``N(x_n, C_n)`` as a target at ``n = 1``."""
    g = la.measure
    L = g.cov.factor

    def value(x):
        w = sla.solve_triangular(L, np.asarray(x, dtype=float) - g.mean, lower=True)
        return 0.5 * float(w @ w)

    flat = SmoothFunction(lambda x: 0.0)
    return TargetFamily(SmoothFunction(value), flat, la.dim, name="laplace_gaussian")


def coupled_affine_chain(la: LaplaceApproximation, variant: str, step: float, steps: int = 10_000,
                         seed: int = 0, x0_std=None, *, target: Optional[TargetFamily] = None,
                         n: float = 1.0, noise=None, uniforms=None) -> CouplingReport:
    """Run the standard chain and the Hessian chain with shared randomness.

    ``T(x) = x_n + L x`` with ``L`` the Cholesky factor of ``C_n``. The standard
    chain uses ``RandomWalk(I, s)`` or ``Pcn(I, s)``; the Hessian chain uses
    ``HessianRw`` or ``ModifiedPcn`` on ``target`` at level ``n``, which
    defaults to ``N(x_n, C_n)`` itself and must equal it for the trajectories
    to agree. Both consume the same normals and uniforms.
    """
    d = la.dim
    if variant == "hessian-rw":
        std_kernel, hess_kernel = RandomWalk(np.eye(d), step), HessianRw(la, step)
    elif variant == "modified-pcn":
        std_kernel, hess_kernel = Pcn(np.eye(d), step), ModifiedPcn(la, step)
    else:
        raise ConfigurationError(f"no coupling defined for proposal {variant!r}")
    L = la.covariance.factor
    x0_std = np.zeros(d) if x0_std is None else np.asarray(x0_std, dtype=float)
    if noise is None or uniforms is None:
        rng = make_rng(seed)
        noise = rng.standard_normal((steps, d))
        uniforms = rng.random(steps)
    std = run_chain(standard_gaussian_target(d), 1.0, std_kernel, x0_std, steps, 0,
                    seed, noise=noise, uniforms=uniforms)
    if target is None:
        target, n = laplace_gaussian_target(la), 1.0
    hess = run_chain(target, n, hess_kernel, la.map_point + L @ x0_std,
                     steps, 0, seed, noise=noise, uniforms=uniforms)
    mapped = la.map_point + std.states @ L.T
    dev = float(np.max(np.linalg.norm(mapped - hess.states, axis=1)))
    scale = float(max(np.max(np.linalg.norm(hess.states, axis=1)), np.sqrt(np.max(np.diag(la.covariance.dense)))))
    mapped_jumps = np.diff(mapped, axis=0)
    hess_jumps = hess.increments()
    return CouplingReport(dev, scale, dev / scale,
                          bool(np.array_equal(std.accepted, hess.accepted)),
                          (float(std.alpha_values.mean()), float(hess.alpha_values.mean())),
                          (float(np.mean(mapped_jumps[:, 0] ** 2)), float(np.mean(hess_jumps[:, 0] ** 2))))
