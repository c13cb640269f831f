import math

import numpy as np
import pytest
from scipy import optimize
from scipy.special import logsumexp

from multimodal_mcmc import _loops
from multimodal_mcmc.core import ChainState, RngStream, SamplerError, Space, TargetModel
from multimodal_mcmc.diagnostics import build_transition_matrix, tv_distance
from multimodal_mcmc.harness.data import bimodal_sur_data
from multimodal_mcmc.kernels import AdaptiveRwmState, IndexRandomWalk
from multimodal_mcmc.mode_jump import (JamsConfig, JamsState, JamsTabularLocalKernel, ModeAtlas, RamConfig,
                                       _log_down, batch_means_ess, find_modes, find_stationary_points,
                                       gradient_ascent, jams_augmented_logdensity, jams_jump_step,
                                       jams_local_step, jams_run, jump_transport, ram_mixture1d_path,
                                       ram_propose, ram_step, ram_tabular_counts)
from multimodal_mcmc.targets import GaussianMixtureParams, bimodal_table, mixture_target, sur_target


def mix1d(m=2.0, var=0.25):
    return mixture_target(GaussianMixtureParams(np.array([[-m], [m]]), np.array([var, var])))


def flat(d=1):
    return TargetModel(d, Space.CONTINUOUS, lambda x: 0.0, lambda x: np.zeros(d))


def gaussian_atlas(p: GaussianMixtureParams):
    d = p.dimension
    return ModeAtlas(p.means, np.array([v * np.eye(d) for v in p.variances]), np.array([0.5, 0.5]), "gaussian")


# gradient ascent

def test_ascent_at_stationary_point_unchanged():
    t = mixture_target(GaussianMixtureParams.benchmark(2))
    m, _ = gradient_ascent(np.array([2.0, 2.0]), t, tol=1e-10)
    m2, ok = gradient_ascent(m, t, tol=1e-8)
    assert ok and np.array_equal(m, m2)


def test_ascent_1d_basin():
    m, ok = gradient_ascent(np.array([0.5]), mix1d(1.0, 0.25))
    assert ok and m[0] == pytest.approx(1.0, abs=0.05) and m[0] > 0


def test_ascent_benchmark_mixture_against_scipy():
    t = mixture_target(GaussianMixtureParams.benchmark(2))
    m, ok = gradient_ascent(np.array([2.0, 2.0]), t)
    ref = optimize.minimize(lambda x: -t.log_density(x), [2.0, 2.0], jac=lambda x: -t.gradient(x),
                            method="BFGS", options={"gtol": 1e-12}).x
    assert ok
    assert np.allclose(m, ref, atol=1e-6)
    assert np.allclose(m, [1.0, 1.0], atol=1e-2)


def test_ascent_needs_gradient_and_finite_start():
    with pytest.raises(ValueError):
        gradient_ascent(np.zeros(1), TargetModel(1, Space.CONTINUOUS, lambda x: 0.0))
    t = TargetModel(1, Space.CONTINUOUS, lambda x: -math.inf, lambda x: np.zeros(1))
    with pytest.raises(SamplerError):
        gradient_ascent(np.zeros(1), t)


# mode discovery

def test_find_modes_one_basin():
    t = mix1d()
    atlas = find_modes(t, np.array([[1.5], [2.3], [3.0], [1.9]]))
    assert atlas.k == 1 and atlas.modes[0, 0] == pytest.approx(2.0, abs=1e-3)
    assert np.allclose(atlas.weights, 1.0)


def test_find_modes_benchmark_grid():
    p = GaussianMixtureParams.benchmark(2)
    g = np.linspace(-3, 3, 7)
    atlas = find_modes(mixture_target(p), np.array([(a, b) for a in g for b in g]))
    assert atlas.k == 2
    got = atlas.modes[np.argsort(atlas.modes[:, 0])]
    assert np.allclose(got, [[-1, -1], [1, 1]], atol=1e-2)
    for i in range(2):
        assert np.allclose(atlas.covariances[i], p.variances[np.argmin(np.abs(atlas.modes[i, 0] - p.means[:, 0]))] * np.eye(2),
                           rtol=1e-3)


def test_find_modes_permutation_invariant_and_idempotent():
    t = mixture_target(GaussianMixtureParams.benchmark(3))
    starts = np.random.default_rng(0).normal(0, 2, (30, 3))
    a = find_modes(t, starts)
    b = find_modes(t, starts[np.random.default_rng(1).permutation(30)])
    assert np.allclose(a.modes, b.modes)
    c = find_modes(t, a.modes)
    assert np.allclose(a.modes, c.modes, atol=1e-8)


def test_find_modes_dedup_radius():
    t = mix1d()
    starts = np.linspace(0.3, 4.0, 25)[:, None]
    atlas = find_modes(t, starts)
    for i in range(atlas.k):
        for j in range(i):
            assert atlas.whitened_distance(atlas.modes[j], i) >= 1e-3


def test_find_modes_errors():
    with pytest.raises(ValueError):
        find_modes(mix1d(), np.zeros((0, 1)))
    bowl = TargetModel(1, Space.CONTINUOUS, lambda x: float(x[0] ** 2), lambda x: 2 * x)
    with pytest.raises(SamplerError):
        find_modes(bowl, np.zeros((1, 1)))       # converged, but a minimum


def test_sur_modes_and_stationary_points():
    lik = sur_target(bimodal_sur_data(), None)
    g = np.linspace(-6, 6, 7)
    starts = np.array([(a, b) for a in g for b in g])
    atlas = find_modes(lik, starts)
    pts, kinds = find_stationary_points(lik, starts)
    assert atlas.k == 2
    assert kinds.count("max") == 2 and len(pts) <= 5
    for m in atlas.modes:
        assert any(np.linalg.norm(m - p) < 1e-4 for p in pts)


# augmented target

def _random_atlas(k, d, rng, family="student-t"):
    covs = []
    for _ in range(k):
        a = rng.normal(size=(d, d))
        covs.append(a @ a.T + d * np.eye(d))
    w = rng.random(k) + 0.1
    return ModeAtlas(rng.normal(0, 3, (k, d)), np.array(covs), w / w.sum(), family)


@pytest.mark.parametrize("family", ["gaussian", "student-t"])
def test_augmented_sums_to_target(family):
    rng = np.random.default_rng(5)
    t = mixture_target(GaussianMixtureParams.benchmark(3))
    atlas = _random_atlas(4, 3, rng, family)
    for _ in range(50):
        x = rng.normal(0, 4, 3)
        la = [jams_augmented_logdensity(x, i, atlas, t) for i in range(4)]
        assert logsumexp(la) == pytest.approx(t.log_density(x), abs=1e-10)


def test_augmented_single_mode_is_target():
    rng = np.random.default_rng(2)
    t = mixture_target(GaussianMixtureParams.benchmark(2))
    atlas = _random_atlas(1, 2, rng)
    for _ in range(20):
        x = rng.normal(0, 2, 2)
        assert jams_augmented_logdensity(x, 0, atlas, t) == t.log_density(x)


def test_augmented_symmetric_midpoint():
    t = mix1d()
    atlas = ModeAtlas(np.array([[-2.0], [2.0]]), np.array([[[0.3]], [[0.3]]]), np.array([0.5, 0.5]))
    for i in range(2):
        assert jams_augmented_logdensity(np.zeros(1), i, atlas, t) == pytest.approx(t.log_density(np.zeros(1)) - math.log(2))
    with pytest.raises(IndexError):
        jams_augmented_logdensity(np.zeros(1), 2, atlas, t)


def test_atlas_validation_and_json_round_trip():
    rng = np.random.default_rng(7)
    atlas = _random_atlas(3, 4, rng)
    back = ModeAtlas.from_json(atlas.to_json())
    assert np.array_equal(back.modes, atlas.modes)
    assert np.array_equal(back.covariances, atlas.covariances)
    assert np.array_equal(back.weights, atlas.weights)
    assert back.family == atlas.family and back.dof == atlas.dof
    with pytest.raises(ValueError):
        ModeAtlas(np.zeros((2, 1)), np.ones((2, 1, 1)), np.array([0.7, 0.7]))
    with pytest.raises(ValueError):
        ModeAtlas(np.zeros((1, 1)), np.ones((1, 1, 1)), np.ones(1), "cauchy")
    with pytest.raises(SamplerError):
        ModeAtlas(np.zeros((1, 2)), -np.eye(2)[None], np.ones(1))


# jumps

def _state(atlas, target, x, i):
    locs = [AdaptiveRwmState.initial(atlas.dim, cov=atlas.covariances[j]) for j in range(atlas.k)]
    return JamsState(np.asarray(x, dtype=float), i, float(target.log_density(x)), locs)


def test_mirrored_modes_jump_lands_on_centre():
    t = mix1d(2.0, 0.25)
    atlas = ModeAtlas(np.array([[-2.0], [2.0]]), np.array([[[0.25]], [[0.25]]]), np.array([0.5, 0.5]))
    s = _state(atlas, t, np.array([-2.0]), 0)
    assert jams_jump_step(s, atlas, t, np.random.default_rng(0))
    assert s.i == 1 and s.x[0] == pytest.approx(2.0)


def test_matched_gaussian_jump_always_accepted():
    p = GaussianMixtureParams.benchmark(5)
    t = mixture_target(p)
    atlas = gaussian_atlas(p)
    rng = np.random.default_rng(11)
    for _ in range(100):
        i = int(rng.integers(0, 2))
        x = p.means[i] + np.sqrt(p.variances[i]) * rng.normal(size=5) * 2
        y = jump_transport(x, i, 1 - i, atlas)
        la = (jams_augmented_logdensity(y, 1 - i, atlas, t) + atlas.half_logdets[1 - i]
              - jams_augmented_logdensity(x, i, atlas, t) - atlas.half_logdets[i])
        assert abs(la) < 1e-9
        s = _state(atlas, t, x, i)
        assert jams_jump_step(s, atlas, t, rng) and s.i == 1 - i


def test_jump_needs_two_modes():
    t = mix1d()
    atlas = ModeAtlas(np.array([[2.0]]), np.array([[[0.25]]]), np.ones(1))
    with pytest.raises(ValueError):
        jams_jump_step(_state(atlas, t, np.array([2.0]), 0), atlas, t, np.random.default_rng(0))


def test_local_step_tracks_modes_separately():
    p = GaussianMixtureParams.benchmark(2)
    t = mixture_target(p)
    atlas = gaussian_atlas(p)
    s = _state(atlas, t, p.means[0], 0)
    rng = np.random.default_rng(3)
    for _ in range(300):
        jams_local_step(s, atlas, t, rng)
    assert s.n_local[0] == 300 and s.n_local[1] == 0
    assert s.local[1].n_proposed == 0


def test_local_step_single_mode_is_rwm_on_target():
    # with k=1 the augmented ratio is the plain target ratio
    t = TargetModel(1, Space.CONTINUOUS, lambda x: -2.0 * float((x[0] - 2.0) ** 2))
    atlas = ModeAtlas(np.array([[2.0]]), np.array([[[0.25]]]), np.ones(1))
    s = _state(atlas, t, np.array([2.0]), 0)
    rng = np.random.default_rng(4)
    xs = []
    for _ in range(20000):
        jams_local_step(s, atlas, t, rng)
        xs.append(s.x[0])
    xs = np.array(xs[2000:])
    assert np.mean(xs) == pytest.approx(2.0, abs=0.05)
    assert np.var(xs) == pytest.approx(0.25, rel=0.1)
    assert 0.15 < s.local_acceptance[0] < 0.35


def test_jams_tabular_local_detailed_balance():
    tab = bimodal_table(10)
    n = 10
    idx = np.arange(n)
    kappa = np.stack([np.exp(-0.5 * ((idx - 2) / 1.5) ** 2), np.exp(-0.5 * ((idx - 7) / 2.0) ** 2)])
    kappa /= kappa.sum(axis=1, keepdims=True)
    for prop in (IndexRandomWalk(1, True, n), IndexRandomWalk(3, False, n)):
        k = JamsTabularLocalKernel(tab.probabilities, kappa, np.array([0.3, 0.7]), prop)
        m = build_transition_matrix(k, k.target())
        assert m.detailed_balance_residual() <= 1e-10
        assert m.stationarity_residual() <= 1e-10
        assert np.allclose(m.pi.reshape(2, n).sum(axis=0), tab.probabilities)


def test_jams_run_d8_oracle_atlas():
    p = GaussianMixtureParams.benchmark(8)
    r = jams_run(mixture_target(p), p.means, JamsConfig(n_iter=20_000, n_phase2=5000), seed=0)
    assert r.atlas.k == 2
    assert np.all((r.state.local_acceptance > 0.15) & (r.state.local_acceptance < 0.35))
    assert r.trace.aux_index.min() == 0 and r.trace.aux_index.max() == 1
    assert len(r.atlas_history) == 2


def test_jams_run_d64_jump_acceptance():
    p = GaussianMixtureParams.benchmark(64)
    r = jams_run(mixture_target(p), p.means, JamsConfig(n_iter=5000, n_phase2=5000), seed=1)
    assert r.state.jump_acceptance > 0.2


def test_jams_run_deterministic():
    p = GaussianMixtureParams.benchmark(2)
    cfg = JamsConfig(n_iter=500, n_phase2=200, n_starts=10)
    a, b = jams_run(mixture_target(p), None, cfg, 3), jams_run(mixture_target(p), None, cfg, 3)
    assert np.array_equal(a.trace.states, b.trace.states)
    assert np.array_equal(a.trace.aux_index, b.trace.aux_index)


def test_batch_means_ess():
    rng = np.random.default_rng(0)
    iid = rng.normal(size=20000)
    assert 0.5 * 20000 < batch_means_ess(iid) <= 20000
    ar = np.empty(20000)
    ar[0] = 0.0
    for t in range(1, 20000):
        ar[t] = 0.95 * ar[t - 1] + rng.normal()
    # AR(1) with phi=0.95: n (1-phi)/(1+phi) ~ 513
    assert 200 < batch_means_ess(ar) < 1200


# repelling-attracting Metropolis

def test_ram_config_validation():
    with pytest.raises(ValueError):
        RamConfig(scale=0.0)
    with pytest.raises(ValueError):
        RamConfig(max_inner=0)


def test_ram_flat_target_two_step_walk():
    cfg = RamConfig(scale=0.7)
    x = np.array([0.3, -1.0])
    y, z, _, ok = ram_propose(x, flat(2), cfg, np.random.default_rng(9))
    r = np.random.default_rng(9)
    n1 = r.standard_normal(2)
    r.random()
    n2 = r.standard_normal(2)
    assert ok
    assert np.allclose(z, x + 0.7 * n1) and np.allclose(y, z + 0.7 * n2)


def test_ram_downhill_always_accepted():
    assert _log_down(-1.0, -2.0) == 0.0
    assert _log_down(-1.0, -1.0) == 0.0
    assert _log_down(-2.0, -1.0) == -1.0
    assert _log_down(-2.0, -math.inf) == 0.0


def test_ram_crosses_basins_more_than_rwm():
    t = mix1d(2.0, 0.25)
    cfg = RamConfig(scale=1.0)
    rng = np.random.default_rng(0)
    x = np.array([-2.0])
    n = 4000
    ram_cross = sum(ram_propose(x, t, cfg, rng)[0][0] > 0 for _ in range(n)) / n
    rwm_cross = np.mean(x[0] + rng.standard_normal(n) > 0)
    assert ram_cross > rwm_cross


def test_ram_step_unimodal_sanity():
    t = TargetModel(1, Space.CONTINUOUS, lambda x: -0.5 * float(x[0] ** 2))
    cfg = RamConfig(scale=0.5)
    rng = np.random.default_rng(1)
    s = ChainState.initial(t, np.zeros(1))
    xs, acc = [], 0
    for _ in range(20000):
        s, info = ram_step(s, t, cfg, rng)
        acc += info.accepted
        xs.append(s.position[0])
    assert acc > 0
    assert np.mean(xs) == pytest.approx(0.0, abs=0.1)
    assert np.var(xs) == pytest.approx(1.0, abs=0.15)


def test_ram_abandoned_on_budget():
    # a cliff: everything but the current point has zero density, so phase 2 never accepts
    t = TargetModel(1, Space.CONTINUOUS, lambda x: 0.0 if x[0] == 0.0 else -math.inf)
    s, info = ram_step(ChainState.initial(t, np.zeros(1)), t, RamConfig(1.0, max_inner=5), np.random.default_rng(0))
    assert not info.accepted and info.kernel_tag == "ram-abandoned"


@pytest.mark.parametrize("step", [2, 3, 4])
def test_ram_tabular_stationary(step):
    pi = bimodal_table(16).probabilities
    counts, acc, ab = ram_tabular_counts(pi, 10 ** 6, step=step, seed=step)
    assert tv_distance(counts, pi) < 0.02
    assert ab == 0 and acc > 0


def test_ram_mixture_symmetric_occupancy():
    path, acc, ab = ram_mixture1d_path([-2.0, 2.0], [0.5, 0.5], [0.5, 0.5], 1.0, 10 ** 6, seed=1)
    assert abs(np.mean(path > 0) - 0.5) < 0.05


def test_ram_loops_jit_matches_python():
    logp = np.log(bimodal_table(12).probabilities)
    c1, c2 = np.zeros(12, dtype=np.int64), np.zeros(12, dtype=np.int64)
    r1 = _loops.ram_tabular_chain(logp, 0, 3000, 2, 1000, RngStream(4, 0).generator(), c1)
    r2 = _loops.ram_tabular_chain.py_func(logp, 0, 3000, 2, 1000, RngStream(4, 0).generator(), c2)
    assert tuple(r1) == tuple(r2) and np.array_equal(c1, c2)
    o1, o2 = np.empty(2000), np.empty(2000)
    args = (0.0, np.array([-2.0, 2.0]), np.array([0.5, 0.5]), np.log([0.5, 0.5]), 1.0, 2000, 1000)
    a1 = _loops.ram_mixture1d_chain(*args, RngStream(5, 0).generator(), o1)
    a2 = _loops.ram_mixture1d_chain.py_func(*args, RngStream(5, 0).generator(), o2)
    assert tuple(a1) == tuple(a2) and np.array_equal(o1, o2)
