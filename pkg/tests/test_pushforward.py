import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hessmh.laplace import laplace_approximation
from hessmh.mh_core import ConfigurationError
from hessmh.pushforward import (
    TOL,
    DegenerateFiberError,
    FiniteChain,
    NonReversibleError,
    StateMap,
    conductance,
    coupled_affine_chain,
    exact_spectral_gap,
    finite_mh,
    flow_transport_residual,
    lag_one_correlation,
    off_diagonal_flow,
    pushforward_kernel,
    pushforward_measure,
    random_mh_case,
    run_fuzz,
    verify_acceptance_coincidence,
    verify_correlation_identity,
    verify_gap_monotonicity,
)


def two_state():
    return FiniteChain([[0.9, 0.1], [0.1, 0.9]], [0.5, 0.5])


def birth_death(m=4, p=0.3, q=0.2):
    K = np.zeros((m, m))
    for i in range(m):
        if i + 1 < m:
            K[i, i + 1] = p
        if i > 0:
            K[i, i - 1] = q
        K[i, i] = 1 - K[i].sum()
    w = (p / q) ** np.arange(m)
    return FiniteChain(K, w / w.sum())


def random_reversible(rng, m):
    pi = rng.dirichlet(np.ones(m))
    return finite_mh(pi, rng.dirichlet(np.ones(m), size=m)).chain


class TestMeasureAndKernel:
    def test_pushforward_measure(self):
        chain = FiniteChain(np.tile([0.2, 0.3, 0.5], (3, 1)), [0.2, 0.3, 0.5])
        np.testing.assert_allclose(pushforward_measure(chain, StateMap([0, 1, 2])), chain.pi)
        np.testing.assert_allclose(pushforward_measure(chain, StateMap([0, 0, 0])), [1.0])
        np.testing.assert_allclose(pushforward_measure(chain, StateMap([0, 1, 1])), [0.2, 0.8])

    def test_identity_and_relabeling(self):
        chain = random_reversible(np.random.default_rng(0), 4)
        np.testing.assert_allclose(pushforward_kernel(chain, StateMap(np.arange(4))).K, chain.K, atol=1e-15)
        sigma = np.array([2, 0, 3, 1])
        pushed = pushforward_kernel(chain, StateMap(sigma))
        inv = np.argsort(sigma)
        np.testing.assert_allclose(pushed.K, chain.K[np.ix_(inv, inv)], atol=1e-15)

    def test_merge_by_hand(self):
        chain = random_reversible(np.random.default_rng(1), 3)
        pi, K = chain.pi, chain.K
        pushed = pushforward_kernel(chain, StateMap([0, 1, 1]))
        w = pi[1:] / pi[1:].sum()
        expected = np.array([
            [K[0, 0], K[0, 1] + K[0, 2]],
            [w @ K[1:, 0], w @ K[1:, 1:].sum(axis=1)],
        ])
        np.testing.assert_allclose(pushed.K, expected, atol=1e-14)
        assert pushed.reversible

    def test_validation(self):
        with pytest.raises(ValueError):
            FiniteChain([[0.5, 0.4], [0.1, 0.9]], [0.5, 0.5])
        with pytest.raises(ValueError):
            StateMap([0, 2])
        # stationary but not reversible: a 3-cycle
        cyc = FiniteChain(np.roll(np.eye(3), 1, axis=1), np.ones(3) / 3)
        with pytest.raises(NonReversibleError):
            pushforward_kernel(cyc, StateMap([0, 1, 1]))
        with pytest.raises(NonReversibleError):
            exact_spectral_gap(cyc)

    def test_zero_mass_fiber(self):
        chain = FiniteChain([[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0])
        with pytest.raises(DegenerateFiberError):
            pushforward_kernel(chain, StateMap([0, 1]))


class TestSpectralGap:
    def test_examples(self):
        assert exact_spectral_gap(two_state()) == pytest.approx(0.2, abs=1e-14)
        pi = np.array([0.1, 0.2, 0.7])
        assert exact_spectral_gap(FiniteChain(np.tile(pi, (3, 1)), pi)) == pytest.approx(1.0, abs=1e-14)
        assert exact_spectral_gap(FiniteChain(np.eye(3), np.ones(3) / 3)) == pytest.approx(0.0, abs=1e-14)

    def test_against_eigenvalues(self):
        chain = birth_death()
        ev = np.sort(np.abs(np.linalg.eigvals(chain.K)))[::-1]
        assert exact_spectral_gap(chain) == pytest.approx(1 - ev[1], abs=1e-12)

    def test_bijective_equality(self):
        rep = verify_gap_monotonicity(two_state(), StateMap([1, 0]))
        assert rep.gap == pytest.approx(0.2) and rep.gap_pushed == pytest.approx(0.2)
        assert rep.equality_residual <= TOL and rep.ok

    def test_birth_death_merge(self):
        rep = verify_gap_monotonicity(birth_death(), StateMap([0, 0, 1, 1]))
        assert rep.gap_pushed >= rep.gap - TOL and rep.ok and rep.equality_residual is None

    def test_cheeger_counterexample(self):
        # Deterministic swap proposal: abar = 2 * 0.01 while the gap is 1 - 1/99.
        mh = finite_mh([0.99, 0.01], [[0.0, 1.0], [1.0, 0.0]])
        abar, gap = mh.average_acceptance(), exact_spectral_gap(mh.chain)
        assert abar == pytest.approx(0.02) and gap == pytest.approx(1 - 1 / 99, abs=1e-14)
        assert gap > 2 * abar
        assert gap <= 2 * conductance(mh.chain) + TOL

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 6))
    def test_acceptance_bound_without_heavy_atoms(self, seed, m):
        # singletons are admissible Cheeger sets, so conductance <= off-diagonal flow
        rng = np.random.default_rng(seed)
        # weights in [1, 2) keep every state at mass <= 2 / (m + 1) <= 1/2
        pi = 1.0 + rng.random(m) if m > 2 else np.ones(2)
        pi /= pi.sum()
        mh = finite_mh(pi, rng.dirichlet(np.ones(m), size=m))
        assert exact_spectral_gap(mh.chain) <= 2 * off_diagonal_flow(mh.chain) + TOL

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_conductance_bounds(self, seed):
        rng = np.random.default_rng(seed)
        mh, _ = random_mh_case(rng)
        if mh.chain.size < 2:
            return
        phi = conductance(mh.chain)
        gap = exact_spectral_gap(mh.chain)
        assert phi**2 / 2 - TOL <= gap <= 2 * phi + TOL


class TestTransport:
    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_random_cases(self, seed):
        rng = np.random.default_rng(seed)
        mh, T = random_mh_case(rng)
        pushed = pushforward_kernel(mh.chain, T)
        assert pushed.reversibility_residual() <= TOL
        assert flow_transport_residual(mh.chain, T) <= TOL
        assert verify_gap_monotonicity(mh.chain, T).ok
        acc = verify_acceptance_coincidence(mh, T)
        assert acc.ok
        if T.bijective:
            assert acc.ratio_formula_residual <= TOL

    def test_acceptance_merge(self):
        rng = np.random.default_rng(5)
        mh = finite_mh(rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4), size=4))
        rep = verify_acceptance_coincidence(mh, StateMap([0, 1, 1, 0]))
        assert rep.residual <= TOL and rep.kernel_residual <= TOL
        direct = sum(mh.pi[x] * mh.proposal[x, y] * mh.alpha[x, y] for x in range(4) for y in range(4))
        assert rep.abar == pytest.approx(direct, abs=1e-15)

    def test_correlation_identity(self):
        rng = np.random.default_rng(6)
        chain = random_reversible(rng, 5)
        T = StateMap([0, 1, 2, 1, 0])
        assert verify_correlation_identity(chain, T, rng.standard_normal(3)) <= TOL
        with pytest.raises(ValueError):
            lag_one_correlation(chain, np.ones(5))


def test_fuzz_suite():
    s = run_fuzz()
    assert s.cases == 200
    for name in ("max_reversibility_residual", "max_flow_transport_residual", "max_bijective_gap_residual",
                 "max_acceptance_residual", "max_kernel_residual", "max_correlation_residual"):
        assert getattr(s, name) <= TOL, name
    assert s.max_gap_violation <= TOL
    assert s.bijective_cases > 0
    assert s.conductance_violations == 0
    # only the acceptance-rate form of the Cheeger bound can fail, and only
    # when one state carries more than half of the mass
    assert all(f["checks"] == ["cheeger"] for f in s.failures)
    assert all(max(f["pi"]) > 0.5 for f in s.failures)
    assert s.to_json({"seed": 1}) == run_fuzz().to_json({"seed": 1})
    json.loads(s.to_json())


class TestCoupling:
    @pytest.mark.parametrize("variant, step", [("hessian-rw", 1.0), ("modified-pcn", 0.6)])
    def test_ridge(self, ridge, variant, step):
        la = laplace_approximation(ridge, 1e4)
        rep = coupled_affine_chain(la, variant, step, steps=10_000, seed=3)
        assert rep.relative_deviation <= 1e-10
        assert rep.same_decisions
        # acceptance probabilities are evaluated in different coordinates, so they
        # agree to rounding while the accept/reject decisions agree exactly
        assert rep.abar[0] == pytest.approx(rep.abar[1], rel=1e-12)
        assert rep.esjd[0] == pytest.approx(rep.esjd[1], rel=1e-10)

    def test_zero_noise_holds(self, ridge):
        la = laplace_approximation(ridge, 10.0)
        rep = coupled_affine_chain(la, "hessian-rw", 1.0, steps=1, noise=np.zeros((1, 2)),
                                   uniforms=np.ones(1))
        assert rep.max_deviation == 0.0

    def test_true_posterior_target(self, ridge):
        la = laplace_approximation(ridge, 50.0)
        rep = coupled_affine_chain(la, "modified-pcn", 0.5, steps=2000, target=ridge, n=50.0)
        assert rep.relative_deviation <= 1e-10

    def test_bad_variant(self, ridge):
        with pytest.raises(ConfigurationError):
            coupled_affine_chain(laplace_approximation(ridge, 1.0), "rw", 1.0)
