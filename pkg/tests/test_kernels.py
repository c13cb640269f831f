import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from multimodal_mcmc import _loops
from multimodal_mcmc.core import ChainState, RngStream, SamplerError, Space, TargetModel, run_chain
from multimodal_mcmc.diagnostics import build_transition_matrix, independence_matrix, jump_gap_check, spectral_gap
from multimodal_mcmc.kernels import (AdaptiveRwmKernel, AdaptiveRwmState, IndependenceKernel, IndexRandomWalk,
                                     JumpProposal, MetropolisKernel, RandomScanGibbs, RunningCovariance,
                                     gibbs_site_step, gibbs_sweep, independence_jump_step, rwm_adapt, rwm_propose,
                                     rwm_step)
from multimodal_mcmc.targets import (AutologisticParams, GaussianMixtureParams, TabularTarget, autologistic_exact,
                                     autologistic_target, bimodal_table, mixture_target)


def flat(d):
    return TargetModel(d, Space.CONTINUOUS, lambda x: 0.0)


def std_normal(d=1):
    return TargetModel(d, Space.CONTINUOUS, lambda x: -0.5 * float(np.dot(x, x)))


def test_initial_proposal_covariance():
    a = AdaptiveRwmState.initial(5)
    assert np.allclose(a.proposal_covariance, 2.38 ** 2 / 5 * np.eye(5))


def test_flat_target_accepts_everything():
    a = AdaptiveRwmState.initial(3)
    s = ChainState.initial(flat(3), np.zeros(3))
    rng = np.random.default_rng(0)
    for _ in range(200):
        s, info = rwm_step(s, flat(3), a, rng)
        assert info.accepted


def test_optimal_scaling_1d_acceptance():
    t = std_normal()
    a = AdaptiveRwmState.initial(1).frozen()
    s = ChainState.initial(t, np.zeros(1))
    rng = np.random.default_rng(1)
    acc = 0
    for _ in range(20000):
        s, info = rwm_step(s, t, a, rng)
        acc += info.accepted
    assert 0.35 < acc / 20000 < 0.55


def test_proposal_determinism():
    a = AdaptiveRwmState.initial(4)
    x = np.ones(4)
    assert np.array_equal(rwm_propose(x, a, RngStream(3).generator()), rwm_propose(x, a, RngStream(3).generator()))


def test_robbins_monro_alternating_drift():
    a = AdaptiveRwmState.initial(2, adapt_covariance=False)
    start = a.log_scale
    eta = 0.01
    for _ in range(100):
        rwm_adapt(a, True, None, eta)
        rwm_adapt(a, False, None, eta)
    assert a.log_scale - start == pytest.approx(100 * eta * (1 - 2 * 0.234), rel=1e-10)


def test_all_rejections_shrink_scale():
    a = AdaptiveRwmState.initial(2)
    prev = a.scale
    for _ in range(50):
        rwm_adapt(a, False, np.zeros(2))
        assert a.scale < prev
        prev = a.scale


def test_step_size_schedule():
    a = AdaptiveRwmState.initial(1, adapt_covariance=False)
    for t in range(1, 6):
        before = a.log_scale
        rwm_adapt(a, True, None)
        assert a.log_scale - before == pytest.approx(t ** -0.6 * (1 - 0.234), rel=1e-12)


def test_covariance_stays_spd():
    rng = np.random.default_rng(2)
    a = AdaptiveRwmState.initial(4, start=10)
    for _ in range(10000):
        x = rng.normal(size=4) * np.array([1e-6, 1, 10, 1e3])
        rwm_adapt(a, bool(rng.random() < 0.3), x)
    c = a.proposal_covariance
    assert np.allclose(c, c.T) and np.linalg.eigvalsh(c).min() > 0 and a.scale > 0


def test_running_covariance_matches_numpy():
    rng = np.random.default_rng(3)
    xs = rng.normal(size=(500, 3)) @ np.array([[1, 0, 0], [0.5, 1, 0], [0.2, 0.3, 1]])
    rc = RunningCovariance(3, start=5, refresh_every=1)
    for x in xs:
        rc.update(x)
    assert np.allclose(rc.sample_covariance(), np.cov(xs.T), atol=1e-10)


def test_mixture_single_mode_acceptance_near_target():
    p = GaussianMixtureParams.benchmark(8)
    t = mixture_target(p)
    k = AdaptiveRwmKernel(AdaptiveRwmState.initial(8))
    tr = run_chain(t, k, p.means[1], 100_000, RngStream(4))
    assert 0.15 < tr.accepted[-20000:].mean() < 0.35


# -- Gibbs -------------------------------------------------------------------------

def test_gibbs_fair_coin_when_uncoupled():
    p = AutologisticParams(np.zeros((2, 2), int), 0.0, 0.0)
    rng = np.random.default_rng(5)
    ones = sum(int(gibbs_site_step(np.zeros(4, int), 2, p, rng)[2]) for _ in range(20000))
    assert abs(ones / 20000 - 0.5) < 3 * math.sqrt(0.25 / 20000)


def test_gibbs_site_step_touches_one_site():
    p = AutologisticParams(np.array([[1, 0, 1], [0, 1, 1]]))
    rng = np.random.default_rng(6)
    x = rng.integers(0, 2, 6)
    for i in range(6):
        y = gibbs_site_step(x, i, p, rng)
        assert np.array_equal(np.delete(y, i), np.delete(x, i))
    with pytest.raises(IndexError):
        gibbs_site_step(x, 6, p, rng)


def test_systematic_gibbs_3x3_stationary():
    y = np.array([[1, 0, 1], [1, 1, 0], [0, 0, 1]])
    p = AutologisticParams(y, 1.0, 0.7)
    counts = np.zeros(512, np.int64)
    gibbs_sweep(y.reshape(-1), p, np.random.default_rng(7), 10**6, counts)
    tv = 0.5 * np.abs(counts / counts.sum() - autologistic_exact(p)).sum()
    assert tv < 0.02


def test_random_scan_gibbs_detailed_balance():
    p = AutologisticParams(np.array([[1, 0], [0, 1], [1, 0]]), 1.0, 0.7)
    tab = TabularTarget(autologistic_exact(p)).model()
    m = build_transition_matrix(RandomScanGibbs(p), tab)
    assert m.detailed_balance_residual() <= 1e-10 and m.stationarity_residual() <= 1e-10


def test_gibbs_jit_matches_python():
    p = AutologisticParams(np.array([[1, 0, 1], [0, 1, 1], [1, 1, 0]]))
    args = lambda: (p.y_flat.astype(np.int64).copy(), p.y_flat.astype(np.int64), p.nbrs, p.degree, 1.0, 0.7, 50,
                    np.random.default_rng(8), np.zeros(512, np.int64))
    a, b = args(), args()
    _loops.gibbs_sweeps(*a)
    _loops.gibbs_sweeps.py_func(*b)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[-1], b[-1])


# -- Metropolis / independence -----------------------------------------------------------

def test_index_walk_detailed_balance():
    tab = bimodal_table(12).model()
    for step, cyclic in ((1, True), (2, False), (3, True)):
        m = build_transition_matrix(MetropolisKernel(IndexRandomWalk(step, cyclic, 12)), tab)
        assert m.detailed_balance_residual() <= 1e-10


def test_tabular_chain_jit_matches_python():
    lp = np.log(bimodal_table(10).probabilities)
    outs = []
    for fn in (_loops.tabular_rw_chain, _loops.tabular_rw_chain.py_func):
        counts, path = np.zeros(10, np.int64), np.zeros(2000, np.int64)
        fn(lp, 0, 2000, 2, False, np.random.default_rng(9), counts, path)
        outs.append((counts, path))
    assert all(np.array_equal(u, v) for u, v in zip(*outs))


def test_fast_walk_matches_kernel_path():
    # same proposal and acceptance logic, independent implementations, statistically equal
    tab = bimodal_table(8)
    from multimodal_mcmc.kernels import tabular_index_chain
    from multimodal_mcmc.diagnostics import tv_distance
    counts, _, _ = tabular_index_chain(np.log(tab.probabilities), 0, 200_000, np.random.default_rng(1), 2, False)
    assert tv_distance(counts, tab.probabilities) < 0.02


def test_independence_proposal_equal_to_target():
    tab = TabularTarget(np.array([0.1, 0.2, 0.3, 0.4]))
    t = tab.model()
    q = JumpProposal.tabular(tab.probabilities)
    s = ChainState.initial(t, 0)
    rng = np.random.default_rng(10)
    for _ in range(200):
        s, info = independence_jump_step(s, t, q, rng)
        assert info.accepted


def test_independence_2x2_example():
    P = independence_matrix([0.5, 0.5], [0.25, 0.75])
    assert np.allclose(P, [[0.75, 0.25], [0.25, 0.75]], atol=1e-15)
    r = jump_gap_check([0.5, 0.5], [0.25, 0.75])
    assert r.w_star == 2.0 and r.gap == pytest.approx(0.5, abs=1e-12) and r.match


def test_independence_zero_density_raises():
    t = TabularTarget(np.array([0.5, 0.5])).model()
    q = JumpProposal.tabular([1.0, 0.0])
    with pytest.raises(SamplerError):
        independence_jump_step(ChainState.initial(t, 1), t, q, np.random.default_rng(0))


def test_independence_gaussian_acceptance():
    t = std_normal()
    q = JumpProposal.gaussian(np.zeros((1, 1)), np.array([[[1.2]]]))
    s = ChainState.initial(t, np.zeros(1))
    rng = np.random.default_rng(11)
    acc = 0
    for _ in range(5000):
        s, info = independence_jump_step(s, t, q, rng)
        acc += info.accepted
    assert acc / 5000 > 0.8


def test_independence_kernel_detailed_balance():
    rng = np.random.default_rng(12)
    pi = rng.dirichlet(np.ones(7))
    q = rng.dirichlet(np.ones(7))
    m = build_transition_matrix(IndependenceKernel(JumpProposal.tabular(q)), TabularTarget(pi).model())
    assert m.detailed_balance_residual() <= 1e-10


@given(st.integers(2, 8), st.integers(0, 10**6))
def test_jump_gap_equals_inverse_w_star(n, seed):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(n))
    q = rng.dirichlet(np.ones(n))
    r = jump_gap_check(pi, q)
    assert abs(r.gap - 1 / r.w_star) <= 1e-8


@pytest.mark.parametrize("family", ["gaussian", "student-t"])
def test_jump_proposal_density_normalized_1d(family):
    from scipy import integrate
    centers = np.array([[-2.0], [1.5]])
    covs = np.array([[[0.5]], [[1.3]]])
    q = (JumpProposal.gaussian(centers, covs, np.array([0.3, 0.7])) if family == "gaussian"
         else JumpProposal.student_t(centers, covs, 7.0, np.array([0.3, 0.7])))
    val, _ = integrate.quad(lambda z: math.exp(q.log_density(np.array([z]))), -np.inf, np.inf)
    assert abs(val - 1) < 1e-6


def test_student_t_density_matches_scipy():
    rng = np.random.default_rng(13)
    c = rng.normal(size=3)
    A = rng.normal(size=(3, 3))
    S = A @ A.T + np.eye(3)
    q = JumpProposal.student_t(c[None], S[None], 7.0)
    x = rng.normal(size=3)
    assert q.log_density(x) == pytest.approx(stats.multivariate_t(c, S, df=7).logpdf(x), rel=1e-10)


def test_jump_proposal_sampling_moments():
    q = JumpProposal.gaussian(np.array([[0.0, 0.0], [4.0, 4.0]]), np.array([np.eye(2), 0.25 * np.eye(2)]),
                              np.array([0.25, 0.75]))
    rng = np.random.default_rng(14)
    xs = np.array([q.sample(rng) for _ in range(20000)])
    assert np.allclose(xs.mean(0), [3.0, 3.0], atol=0.05)


def test_jump_proposal_rejects_bad_weights():
    with pytest.raises(ValueError):
        JumpProposal.gaussian(np.zeros((2, 1)), np.ones((2, 1, 1)), np.array([0.5, 0.6]))
