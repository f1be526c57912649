import math

import numpy as np
import pytest

from hessmh.diagnostics import acceptance_frequency, average_acceptance, iact
from hessmh.distances import posterior_moment
from hessmh.laplace import laplace_approximation
from hessmh.mh_core import ConfigurationError, mh_step, run_chain, run_replicas
from hessmh.proposals import HessianRw, ModifiedPcn, RandomWalk

from conftest import HRW_ABAR_D1_S1


def test_step_same_point(gauss1):
    k = RandomWalk([[1.0]], 1.0)
    x, acc, y, alpha = mh_step(gauss1, 1.0, k, [0.4], z=[0.0], u=0.999)
    assert acc and alpha == 1.0 and np.array_equal(x, [0.4]) and np.array_equal(y, [0.4])


def test_modified_pcn_exact_always_accepts(ridge):
    la = laplace_approximation(ridge, 100.0)
    k = ModifiedPcn(la, 0.6)
    rng = np.random.default_rng(0)
    x = la.map_point
    for _ in range(2000):
        x, acc, _, alpha = mh_step(ridge, 100.0, k, x, rng)
        assert acc and alpha >= 1 - 1e-12


def test_certain_rejection(gauss1):
    k = RandomWalk([[1.0]], 1.0)
    rec = run_chain(gauss1, 1.0, k, [0.5], steps=1, burn_in=0, noise=np.ones((1, 1)), uniforms=[1.0])
    assert np.array_equal(rec.states, [[0.5], [0.5]])
    assert not rec.accepted[0]


def test_zero_noise_unit_uniform_holds(gauss1):
    # y = x has alpha = 1 but u = 1 is not < 1: the chain holds, which is the same state.
    rec = run_chain(gauss1, 1.0, RandomWalk([[1.0]], 1.0), [0.5], steps=1, burn_in=0,
                    noise=np.zeros((1, 1)), uniforms=[1.0])
    assert np.array_equal(rec.states, [[0.5], [0.5]])


def test_record_invariants(cubic):
    la = laplace_approximation(cubic, 10.0)
    rec = run_chain(cubic, 10.0, HessianRw(la, 1.5), steps=5000, seed=3)
    acc = rec.accepted
    assert np.array_equal(rec.states[1:][acc], rec.proposals[acc])
    assert np.array_equal(rec.states[1:][~acc], rec.states[:-1][~acc])
    assert np.all((rec.alpha_values >= 0) & (rec.alpha_values <= 1))


def test_fast_loop_matches_mh_step(cubic):
    la = laplace_approximation(cubic, 30.0)
    for k in (HessianRw(la, 1.2), ModifiedPcn(la, 0.7)):
        rng = np.random.default_rng(9)
        z, u = rng.standard_normal((200, 1)), rng.random(200)
        rec = run_chain(cubic, 30.0, k, [0.05], steps=200, burn_in=0, noise=z, uniforms=u)
        x = np.array([0.05])
        for i in range(200):
            x, acc, _, alpha = mh_step(cubic, 30.0, k, x, z=z[i], u=u[i])
            assert acc == rec.accepted[i]
            assert alpha == pytest.approx(rec.alpha_values[i], rel=1e-12, abs=1e-300)
            assert np.allclose(x, rec.states[i + 1], rtol=0, atol=1e-14)


def test_bitwise_reproducible(ridge):
    la = laplace_approximation(ridge, 10.0)
    a = run_chain(ridge, 10.0, HessianRw(la, 1.0), steps=3000, seed=42)
    b = run_chain(ridge, 10.0, HessianRw(la, 1.0), steps=3000, seed=42)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.alpha_values, b.alpha_values)
    c = run_chain(ridge, 10.0, HessianRw(la, 1.0), steps=3000, seed=43)
    assert not np.array_equal(a.states, c.states)


def test_replicas(ridge):
    la = laplace_approximation(ridge, 10.0)
    k = HessianRw(la, 1.0)
    r1 = run_replicas(ridge, 10.0, k, steps=2000, seeds=[1, 2])
    r2 = run_replicas(ridge, 10.0, k, steps=2000, seeds=[1, 2], workers=2)
    singles = [run_chain(ridge, 10.0, k, steps=2000, seed=s) for s in (1, 2)]
    for a, b, c in zip(r1, r2, singles):
        assert np.array_equal(a.states, b.states) and np.array_equal(a.states, c.states)
    with pytest.raises(ConfigurationError):
        run_replicas(ridge, 10.0, k, steps=10, seeds=[1, 1])


def test_replica_performance(ridge):
    import time

    la = laplace_approximation(ridge, 100.0)
    t = time.perf_counter()
    run_replicas(ridge, 100.0, HessianRw(la, 1.0), steps=100_000, seeds=range(8))
    assert time.perf_counter() - t < 10.0


def test_acceptance_matches_quadrature(gauss1):
    la = laplace_approximation(gauss1, 10.0)
    rec = run_chain(gauss1, 10.0, HessianRw(la, 1.0), steps=100_000, seed=7)
    freq = acceptance_frequency(rec)
    rb = average_acceptance(rec)
    assert abs(freq.value - HRW_ABAR_D1_S1) <= 3 * freq.se
    assert abs(freq.value - rb.value) <= 3 * freq.se


def test_posterior_mean(cubic):
    n = 3.0
    la = laplace_approximation(cubic, n)
    f = lambda xs: (1 + xs[:, 0]) ** 3
    rec = run_chain(cubic, n, HessianRw(la, 1.5), steps=10**6, seed=11)
    vals = f(rec.states)
    tau = iact(rec, f).tau
    exact = posterior_moment(cubic, n, f)
    assert abs(vals.mean() - exact) <= 4 * math.sqrt(tau * vals.var() / vals.size)


def test_no_drift_from_map(ridge):
    n = 1e4
    la = laplace_approximation(ridge, n)
    rec = run_chain(ridge, n, HessianRw(la, 1.0), steps=40_000, seed=5)
    w = np.linalg.solve(la.covariance.factor, (rec.states - la.map_point).T)
    r2 = np.sum(w * w, axis=0)
    first, last = r2[:20_000].mean(), r2[20_000:].mean()
    assert abs(first - 2) < 0.25 and abs(last - 2) < 0.25


def test_stationarity_preserved_1d(cubic):
    """(pi K)(y) = pi(y) on a grid, with the rejection mass added back."""
    from scipy import integrate

    n = 4.0
    la = laplace_approximation(cubic, n)
    k = HessianRw(la, 1.0)
    var = k.proposal_covariance.dense[0, 0]
    logz = math.log(integrate.quad(lambda x: math.exp(cubic.log_density(n, np.array([x]))), -8, 8,
                                   epsabs=1e-14)[0])
    pi = lambda x: math.exp(cubic.log_density(n, np.array([x])) - logz)
    q = lambda x, y: math.exp(-0.5 * (y - x) ** 2 / var) / math.sqrt(2 * math.pi * var)
    a = lambda x, y: min(1.0, pi(y) / pi(x)) if pi(x) > 0 else 0.0

    def reject(x):
        return 1 - integrate.quad(lambda y: q(x, y) * a(x, y), x - 12 * math.sqrt(var), x + 12 * math.sqrt(var),
                                  points=[-x, x], epsabs=1e-13, limit=200)[0]

    grid = np.linspace(-2, 2, 21)
    errs = []
    for y in grid:
        moved = integrate.quad(lambda x: pi(x) * q(x, y) * a(x, y), -8, 8, points=[-y, y],
                               epsabs=1e-13, limit=200)[0]
        errs.append(abs(moved + pi(y) * reject(y) - pi(y)))
    tv = 0.5 * np.sum(errs) * (grid[1] - grid[0])
    assert tv <= 1e-6
