import math

import numpy as np
import pytest
from scipy import integrate

from hessmh.diagnostics import (
    Estimate,
    acceptance_frequency,
    average_acceptance,
    batch_means_se,
    directional_esjd,
    efficiency_report,
    gaussian_reference_alpha,
    gaussian_reference_esjd,
    gaussian_reference_radial,
    iact,
    iact_series,
    modified_pcn_reference_esjd,
    normalized_esjd,
    pooled,
    target_variance,
)
from hessmh.laplace import laplace_approximation
from hessmh.mh_core import ChainRecord, ConfigurationError, run_chain, run_replicas
from hessmh.proposals import HessianRw, ModifiedPcn, RandomWalk
from hessmh.catalog import get_model

from conftest import HRW_ABAR_D1_S1


def _record(states, alphas=None):
    states = np.asarray(states, dtype=float).reshape(len(states), -1)
    steps = len(states) - 1
    acc = np.any(np.diff(states, axis=0) != 0, axis=1)
    alphas = np.ones(steps) if alphas is None else np.asarray(alphas, dtype=float)
    return ChainRecord(states, states[1:], acc, alphas, 0, 1.0)


def _oracle_2d(s, squared_jump):
    """Independent oracle: nested adaptive quadrature over (xi, x), split at the kink x = -s xi / 2."""
    phi = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)

    def inner(xi):
        k = -0.5 * s * xi
        # log ratio = -s x xi - s^2 xi^2 / 2 is >= 0 exactly on one side of k
        f = lambda x: phi(x) * math.exp(min(0.0, -s * x * xi - 0.5 * s * s * xi * xi))
        return integrate.quad(f, -np.inf, k, epsabs=1e-14)[0] + integrate.quad(f, k, np.inf, epsabs=1e-14)[0]

    w = (lambda xi: s * s * xi * xi) if squared_jump else (lambda xi: 1.0)
    return integrate.quad(lambda xi: phi(xi) * w(xi) * inner(xi), -np.inf, np.inf, epsabs=1e-13)[0]


class TestAcceptance:
    def test_all_accepted(self):
        rec = _record(np.arange(101.0))
        est = average_acceptance(rec)
        assert est.value == 1.0 and est.se == 0.0

    def test_modified_pcn_exact(self, ridge):
        la = laplace_approximation(ridge, 100.0)
        rec = run_chain(ridge, 100.0, ModifiedPcn(la, 0.6), steps=20_000, seed=1)
        assert rec.accepted.all()
        assert abs(average_acceptance(rec).value - 1) <= 1e-12

    def test_hessian_rw_against_oracle(self, gauss1):
        la = laplace_approximation(gauss1, 50.0)
        recs = run_replicas(gauss1, 50.0, HessianRw(la, 1.0), steps=100_000, seeds=range(3))
        est = pooled([average_acceptance(r) for r in recs])
        assert abs(est.value - _oracle_2d(1.0, False)) <= 3 * est.se
        freq = pooled([acceptance_frequency(r) for r in recs])
        assert abs(freq.value - est.value) <= 3 * freq.se

    def test_empty(self):
        rec = ChainRecord(np.zeros((1, 1)), np.zeros((0, 1)), np.zeros(0, bool), np.zeros(0), 0, 1.0)
        with pytest.raises(ValueError):
            average_acceptance(rec)


class TestJumps:
    def test_never_accepting(self):
        rec = _record(np.zeros((50, 2)), alphas=np.zeros(49))
        assert directional_esjd(rec, [1.0, 0.0]).value == 0.0
        assert normalized_esjd(rec, [0.0, 1.0], 2.0).value == 0.0

    def test_translation_invariance(self):
        rng = np.random.default_rng(0)
        states = np.cumsum(rng.standard_normal((300, 2)), axis=0)
        b = np.array([5.0, -7.0])
        v = np.array([0.6, 0.8])
        assert directional_esjd(_record(states), v).value == pytest.approx(
            directional_esjd(_record(states + b), v).value, rel=1e-12)

    def test_unit_direction_required(self):
        with pytest.raises(ValueError):
            directional_esjd(_record(np.zeros((3, 2))), [1.0, 1.0])

    def test_nonpositive_variance(self):
        with pytest.raises(ConfigurationError):
            normalized_esjd(_record(np.zeros((3, 1))), [1.0], 0.0)

    def test_modified_pcn_ridge(self, ridge):
        n = 100.0
        la = laplace_approximation(ridge, n)
        recs = run_replicas(ridge, n, ModifiedPcn(la, 0.6), steps=50_000, seeds=range(2))
        rho = pooled([directional_esjd(r, [0.0, 1.0]) for r in recs])
        assert abs(rho.value - 0.4 / 101) <= 3 * rho.se
        for v, var in (([1.0, 0.0], 1.0), ([0.0, 1.0], 1 / 101)):
            rb = pooled([normalized_esjd(r, v, var) for r in recs])
            assert abs(rb.value - 0.4) <= 3 * rb.se
            assert rb.value <= 1 + 5 * rb.se

    def test_shrinking_random_walk(self, ridge):
        out = {}
        for n in (1.0, 100.0):
            rec = run_chain(ridge, n, RandomWalk(np.eye(2), math.sqrt(1.0 / n)), [0.0, 0.0], steps=50_000, seed=2)
            out[n] = normalized_esjd(rec, [1.0, 0.0], 1.0).value
        assert out[100.0] / out[1.0] < 0.05


class TestIact:
    def test_iid(self):
        x = np.random.default_rng(3).standard_normal(200_000)
        assert iact_series(x).tau == pytest.approx(1.0, abs=0.05)

    def test_ar1(self):
        rng = np.random.default_rng(4)
        e = rng.standard_normal(400_000)
        x = np.empty_like(e)
        x[0] = e[0]
        for i in range(1, x.size):
            x[i] = 0.5 * x[i - 1] + e[i]
        res = iact_series(x)
        assert res.tau == pytest.approx(3.0, rel=0.1)
        assert res.window > 0

    def test_full_refresh(self, ridge):
        la = laplace_approximation(ridge, 10.0)
        rec = run_chain(ridge, 10.0, ModifiedPcn(la, 1.0), steps=100_000, seed=5)
        assert iact(rec, lambda xs: xs[:, 0]).tau == pytest.approx(1.0, abs=0.05)

    def test_constant(self):
        with pytest.raises(ValueError):
            iact_series(np.ones(100))


class TestReferences:
    def test_zero_step(self):
        assert gaussian_reference_alpha(3, 0.0).value == 1.0
        assert gaussian_reference_esjd(3, 0.0).value == 0.0

    def test_small_step(self):
        assert gaussian_reference_radial(2, 1e-6) == pytest.approx(1.0, abs=1e-5)

    def test_d1_s1(self):
        assert gaussian_reference_alpha(1, 1.0).value == pytest.approx(HRW_ABAR_D1_S1, abs=1e-12)
        assert gaussian_reference_alpha(1, 1.0).value == pytest.approx(_oracle_2d(1.0, False), abs=1e-10)
        assert gaussian_reference_esjd(1, 1.0).value == pytest.approx(_oracle_2d(1.0, True), abs=1e-10)

    def test_d2_monte_carlo(self):
        est = gaussian_reference_alpha(2, 0.5, budget=10**7)
        assert est.se <= 1e-3
        assert abs(est.value - gaussian_reference_radial(2, 0.5)) <= 4 * est.se
        jump = gaussian_reference_esjd(2, 0.5, budget=10**6)
        assert abs(jump.value - gaussian_reference_radial(2, 0.5, True)) <= 4 * jump.se

    def test_modified_pcn_closed_form(self):
        assert modified_pcn_reference_esjd(0.6) == pytest.approx(0.4, abs=1e-15)


class TestVariance:
    def test_exact_ridge(self, ridge):
        entry = get_model("gauss_ridge")
        n = 37.0
        r = target_variance(ridge, n, [0.0, 1.0], exact=entry.exact_posterior(n))
        assert r.provenance == "exact" and r.value == pytest.approx(1 / (1 + n), rel=1e-14)
        assert target_variance(ridge, n, [1.0, 0.0], exact=entry.exact_posterior(n)).value == pytest.approx(1.0)

    def test_quadrature_cubic(self, cubic):
        n = 1e4
        r = target_variance(cubic, n, [1.0])
        assert r.provenance == "quadrature"
        assert n * r.value == pytest.approx(1.0, rel=0.02)

    def test_sample_fallback(self):
        from hessmh.catalog import standard_normal_log_prior
        from hessmh.core_measures import SmoothFunction, TargetFamily

        d = 4
        t = TargetFamily(SmoothFunction(lambda x: 0.5 * float(x @ x)), standard_normal_log_prior(d), d)
        rec = run_chain(t, 1.0, RandomWalk(np.eye(d), 0.8), np.zeros(d), steps=50_000, seed=6)
        r = target_variance(t, 1.0, np.eye(d)[0], records=[rec])
        assert r.provenance == "sample" and r.value == pytest.approx(0.5, rel=0.1)

    def test_zero_direction(self, ridge):
        with pytest.raises(ValueError):
            target_variance(ridge, 1.0, [0.0, 0.0])


def test_estimate_and_pooling():
    a, b = Estimate(1.0, 0.3), Estimate(3.0, 0.4)
    p = pooled([a, b])
    assert p.value == 2.0 and p.se == pytest.approx(0.25)
    assert tuple(a) == (1.0, 0.3)
    assert math.isnan(batch_means_se(np.ones(3)))


def test_efficiency_report(ridge):
    from hessmh.diagnostics import VarianceResult

    la = laplace_approximation(ridge, 10.0)
    recs = run_replicas(ridge, 10.0, HessianRw(la, 1.0), steps=20_000, seeds=[0, 1])
    dirs = {"e1": np.array([1.0, 0.0]), "e2": np.array([0.0, 1.0])}
    var = {"e1": VarianceResult(1.0, "exact"), "e2": VarianceResult(1 / 11, "exact")}
    rep = efficiency_report(recs, dirs, var)
    assert 0 <= rep.abar.value <= 1
    for lab in dirs:
        assert 0 <= rep.rhobar[lab].value <= 2 and rep.rhobar[lab].se >= 0 and rep.tau[lab] >= 1
