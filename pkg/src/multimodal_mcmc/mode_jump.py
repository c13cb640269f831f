"""Mode discovery, the JAMS augmented-target sampler and repelling-attracting Metropolis.

JAMS samples (x, i) from pi(x) w_i k_i(x) / sum_j w_j k_j(x), whose
x-marginal is pi. Local moves are per-mode adaptive RWM at fixed i; jump
moves change i and carry x across by the affine map between mode frames.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, logsumexp

from . import _loops
from .core import ChainState, NumericalError, RngStream, SamplerError, Space, StepInfo, TargetModel, Trace
from .kernels import AdaptiveRwmState, IndexRandomWalk, robust_cholesky, rwm_adapt, rwm_propose

LOG_2PI = math.log(2 * math.pi)


# -- mode discovery --------------------------------------------------------------

def gradient_ascent(x0, target: TargetModel, tol: float = 1e-8, max_iter: int = 20_000,
                    gradient: Optional[Callable] = None) -> tuple[np.ndarray, bool]:
    """Steepest ascent on log pi with Armijo backtracking.

    Trial step lengths follow the Barzilai-Borwein rule, which keeps plain
    gradient steps fast on ill-conditioned modes; the first trial moves at
    most a unit distance. Stops when the gradient
    norm drops below ``tol``.
    """
    grad = gradient or target.gradient
    if grad is None:
        raise ValueError("gradient ascent needs a gradient")
    x = np.array(x0, dtype=float)
    f = float(target.log_density(x))
    if not math.isfinite(f):
        raise NumericalError("log-density is not finite at the starting point")
    g = np.asarray(grad(x), dtype=float)
    # first trial move has unit length so a steep start does not leap into another basin
    step = 1.0 / max(1.0, float(np.linalg.norm(g)))
    for _ in range(max_iter):
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient during ascent")
        gn = float(np.linalg.norm(g))
        if gn < tol:
            return x, True
        t = step
        while True:
            y = x + t * g
            fy = float(target.log_density(y))
            if math.isfinite(fy) and fy >= f + 1e-4 * t * gn * gn:
                break
            t *= 0.5
            if t * gn < 1e-300 or t < 1e-30:
                return x, gn < tol
        gy = np.asarray(grad(y), dtype=float)
        s, r = y - x, gy - g
        sr = float(s @ r)
        step = float(s @ s) / -sr if sr < 0 else 2.0 * t
        x, f, g = y, fy, gy
    return x, bool(np.linalg.norm(g) < tol)


def fd_hessian(grad: Callable, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    d = len(x)
    H = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h * max(1.0, abs(x[j]))
        H[:, j] = (np.asarray(grad(x + e)) - np.asarray(grad(x - e))) / (2 * e[j])
    return 0.5 * (H + H.T)


@dataclass
class ModeAtlas:
    """Mode centres, local covariances and weights with a kernel family (gaussian or student-t)."""

    modes: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray
    family: str = "student-t"
    dof: float = 7.0
    log_density: Optional[np.ndarray] = None

    def __post_init__(self):
        self.modes = np.atleast_2d(np.asarray(self.modes, dtype=float))
        k, d = self.modes.shape
        self.covariances = np.asarray(self.covariances, dtype=float).reshape(k, d, d)
        self.weights = np.asarray(self.weights, dtype=float).reshape(k)
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mode weights must be positive and sum to 1")
        if self.family not in ("gaussian", "student-t"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        self._refresh()

    def _refresh(self):
        try:
            self.chols = np.array([np.linalg.cholesky(c) for c in self.covariances])
        except np.linalg.LinAlgError as exc:
            raise NumericalError("mode covariance is not positive-definite") from exc
        self.chol_invs = np.array([solve_triangular(L, np.eye(self.dim), lower=True) for L in self.chols])
        self.half_logdets = np.array([np.sum(np.log(np.diag(L))) for L in self.chols])
        self.log_weights = np.log(self.weights)
        d = self.dim
        if self.family == "gaussian":
            self._const = -0.5 * d * LOG_2PI
        else:
            v = self.dof
            self._const = gammaln(0.5 * (v + d)) - gammaln(0.5 * v) - 0.5 * d * math.log(v * math.pi)

    @property
    def k(self) -> int:
        return self.modes.shape[0]

    @property
    def dim(self) -> int:
        return self.modes.shape[1]

    def set_covariance(self, i: int, cov) -> None:
        self.covariances[i] = 0.5 * (np.asarray(cov) + np.asarray(cov).T)
        self._refresh()

    def log_kernels(self, x) -> np.ndarray:
        """log k_i(x) for every mode."""
        diff = np.asarray(x, dtype=float) - self.modes
        z = np.einsum("kij,kj->ki", self.chol_invs, diff)
        q = np.einsum("ki,ki->k", z, z)
        if self.family == "gaussian":
            return self._const - self.half_logdets - 0.5 * q
        v = self.dof
        return self._const - self.half_logdets - 0.5 * (v + self.dim) * np.log1p(q / v)

    def whitened_distance(self, x, i: int) -> float:
        return float(np.linalg.norm(self.chol_invs[i] @ (np.asarray(x, dtype=float) - self.modes[i])))

    def to_json(self) -> str:
        return json.dumps({
            "family": self.family, "dof": self.dof,
            "modes": [{"center": self.modes[i].tolist(),
                       "covariance": self.covariances[i].reshape(-1).tolist(),
                       "weight": float(self.weights[i]), "kernel": self.family}
                      for i in range(self.k)],
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModeAtlas":
        obj = json.loads(text)
        modes = np.array([m["center"] for m in obj["modes"]], dtype=float)
        d = modes.shape[1]
        covs = np.array([np.reshape(m["covariance"], (d, d)) for m in obj["modes"]], dtype=float)
        return cls(modes, covs, np.array([m["weight"] for m in obj["modes"]]), obj["family"], obj["dof"])

    def copy(self) -> "ModeAtlas":
        return ModeAtlas(self.modes.copy(), self.covariances.copy(), self.weights.copy(), self.family,
                         self.dof, None if self.log_density is None else self.log_density.copy())


def find_modes(target: TargetModel, starts, dedup_radius: Optional[float] = None, tol: float = 1e-8,
               max_iter: int = 20_000, family: str = "student-t", dof: float = 7.0) -> ModeAtlas:
    """Ascend from every start, keep the local maxima, merge duplicates.

    Two maxima closer than ``dedup_radius`` (default 1e-3 sqrt(d)) in the
    whitened frame of the higher one are merged, keeping the higher. The
    local covariance is the inverse negative finite-difference Hessian, or
    the identity when that is not positive-definite. Stationary points with
    an ascent direction are discarded.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    if len(starts) == 0:
        raise ValueError("need at least one start")
    d = starts.shape[1]
    radius = 1e-3 * math.sqrt(d) if dedup_radius is None else dedup_radius
    found = []
    for s in starts:
        try:
            x, ok = gradient_ascent(s, target, tol, max_iter)
        except NumericalError:
            continue
        if ok:
            found.append((float(target.log_density(x)), x))
    if not found:
        raise SamplerError("no start converged to a stationary point")
    # deterministic order: highest density first, ties by coordinates
    found.sort(key=lambda t: (-round(t[0], 10), tuple(np.round(t[1], 8))))
    modes, covs, lps = [], [], []
    for lp, x in found:
        H = fd_hessian(target.gradient, x)
        ev = np.linalg.eigvalsh(-H)
        if ev.min() < -1e-6 * max(1.0, abs(ev).max()):
            continue                      # saddle or minimum
        cov = np.linalg.inv(-H) if ev.min() > 0 else np.eye(d)
        cov = 0.5 * (cov + cov.T)
        dup = False
        for m, c in zip(modes, covs):
            Linv = np.linalg.inv(np.linalg.cholesky(c))
            if np.linalg.norm(Linv @ (x - m)) < radius:
                dup = True
                break
        if not dup:
            modes.append(x)
            covs.append(cov)
            lps.append(lp)
    if not modes:
        raise SamplerError("no converged start is a local maximum")
    k = len(modes)
    return ModeAtlas(np.array(modes), np.array(covs), np.full(k, 1.0 / k), family, dof, np.array(lps))


def find_stationary_points(target: TargetModel, starts, tol: float = 1e-8, merge: float = 1e-5,
                           max_norm: Optional[float] = None):
    """Roots of the gradient reached by Newton-type root finding from ``starts``.

    Returns ``(points, kinds)`` with kinds in {"max", "min", "saddle"}
    from the finite-difference Hessian. Targets with polynomial tails have a
    gradient that vanishes at infinity, so roots farther than ``max_norm``
    (default 100 times the largest start norm, at least 100) are escapes,
    not stationary points, and are dropped.
    """
    from scipy.optimize import root
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    bound = max_norm if max_norm is not None else 100.0 * max(1.0, float(np.abs(starts).max()))
    pts = []
    for s in starts:
        sol = root(target.gradient, s, jac=lambda x: fd_hessian(target.gradient, x), method="hybr",
                   options={"xtol": 1e-12})
        x = sol.x
        g = np.asarray(target.gradient(x))
        if not (np.all(np.isfinite(x)) and np.linalg.norm(g) < max(tol, 1e-6)):
            continue
        if np.linalg.norm(x) > bound:
            continue
        if not math.isfinite(target.log_density(x)):
            continue
        if all(np.linalg.norm(x - p) > merge * max(1.0, np.linalg.norm(p)) for p in pts):
            pts.append(x)
    kinds = []
    for x in pts:
        ev = np.linalg.eigvalsh(fd_hessian(target.gradient, x))
        kinds.append("max" if ev.max() < 0 else "min" if ev.min() > 0 else "saddle")
    order = np.lexsort(np.array(pts).T[::-1]) if pts else []
    return [pts[i] for i in order], [kinds[i] for i in order]


# -- JAMS ------------------------------------------------------------------------

def jams_augmented_logdensity(x, i: int, atlas: ModeAtlas, target: TargetModel,
                              log_pi: Optional[float] = None) -> float:
    """log pi(x) + log w_i + log k_i(x) - log sum_j w_j k_j(x)."""
    if not 0 <= i < atlas.k:
        raise IndexError(f"mode index {i} out of range")
    lp = float(target.log_density(x)) if log_pi is None else log_pi
    if lp == -math.inf:
        return -math.inf
    lk = atlas.log_weights + atlas.log_kernels(x)
    if not np.all(np.isfinite(lk)) and not np.all(np.isneginf(lk) | np.isfinite(lk)):
        raise NumericalError("non-finite kernel evaluation")
    return lp + float(lk[i] - logsumexp(lk))


@dataclass
class JamsState:
    x: np.ndarray
    i: int
    log_pi: float
    local: list                  # per-mode AdaptiveRwmState
    n_local: np.ndarray = None
    acc_local: np.ndarray = None
    n_jump: int = 0
    acc_jump: int = 0

    def __post_init__(self):
        k = len(self.local)
        if self.n_local is None:
            self.n_local = np.zeros(k, dtype=np.int64)
            self.acc_local = np.zeros(k, dtype=np.int64)

    @property
    def local_acceptance(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.acc_local / self.n_local

    @property
    def jump_acceptance(self) -> float:
        return self.acc_jump / self.n_jump if self.n_jump else float("nan")


def jams_local_step(s: JamsState, atlas: ModeAtlas, target: TargetModel, rng, adapt: bool = True) -> bool:
    """RWM on x at fixed mode i with the mode's own proposal scale and covariance."""
    a = s.local[s.i]
    y = rwm_propose(s.x, a, rng)
    lpy = float(target.log_density(y))
    u = rng.random()
    acc = False
    if lpy > -math.inf:
        la = (jams_augmented_logdensity(y, s.i, atlas, target, lpy)
              - jams_augmented_logdensity(s.x, s.i, atlas, target, s.log_pi))
        acc = u == 0.0 or math.log(u) < la
    if acc:
        s.x, s.log_pi = y, lpy
    s.n_local[s.i] += 1
    s.acc_local[s.i] += acc
    a.n_proposed += 1
    a.n_accepted += acc
    if adapt:
        rwm_adapt(a, acc, s.x)
    return acc


def jump_transport(x, i: int, j: int, atlas: ModeAtlas) -> np.ndarray:
    """x' = nu_j + L_j L_i^{-1} (x - nu_i)."""
    return atlas.modes[j] + atlas.chols[j] @ (atlas.chol_invs[i] @ (np.asarray(x, dtype=float) - atlas.modes[i]))


def jams_jump_step(s: JamsState, atlas: ModeAtlas, target: TargetModel, rng) -> bool:
    """Propose a different mode uniformly and transport x into its frame."""
    k = atlas.k
    if k < 2:
        raise ValueError("jump moves need at least two modes")
    j = int(rng.integers(0, k - 1))
    j = j + 1 if j >= s.i else j
    y = jump_transport(s.x, s.i, j, atlas)
    lpy = float(target.log_density(y))
    u = rng.random()
    acc = False
    if lpy > -math.inf:
        la = (jams_augmented_logdensity(y, j, atlas, target, lpy) + atlas.half_logdets[j]
              - jams_augmented_logdensity(s.x, s.i, atlas, target, s.log_pi) - atlas.half_logdets[s.i])
        acc = u == 0.0 or math.log(u) < la
    if acc:
        s.x, s.i, s.log_pi = y, j, lpy
    s.n_jump += 1
    s.acc_jump += acc
    return acc


@dataclass
class JamsConfig:
    n_iter: int = 10_000
    n_phase2: int = 5_000
    jump_prob: float = 0.1
    n_starts: int = 100
    start_sd: float = 1.0
    family: str = "student-t"
    dof: float = 7.0
    dedup_radius: Optional[float] = None
    adapt_local: bool = True


@dataclass
class JamsResult:
    trace: Trace
    atlas: ModeAtlas
    atlas_history: list
    state: JamsState
    starts: np.ndarray


def batch_means_ess(v, n_batches: int = 25) -> float:
    """Effective sample size of a scalar chain by non-overlapping batch means."""
    v = np.asarray(v, dtype=float)
    b = len(v) // n_batches
    if b < 2:
        return float(len(v))
    v = v[:b * n_batches]
    var_bm = v.reshape(n_batches, b).mean(axis=1).var(ddof=1)
    if var_bm == 0.0:
        return float(len(v))
    return float(min(len(v), len(v) * v.var() / (b * var_bm)))


def _fresh_local(atlas: ModeAtlas, i: int) -> AdaptiveRwmState:
    return AdaptiveRwmState.initial(atlas.dim, cov=atlas.covariances[i], start=max(2 * atlas.dim, 200))


def jams_run(target: TargetModel, starts=None, config: Optional[JamsConfig] = None, seed: int = 0) -> JamsResult:
    """Mode search, per-mode covariance estimation, then the main augmented chain.

    Stream 0 draws default starts (N(0, start_sd^2 I)), stream 1 drives the
    main chain and stream 2+i the phase-2 chain of mode i. A phase-2
    covariance replaces the Hessian one only when the second half of that
    chain holds at least 2d effective draws of log pi. The atlas is
    frozen during the main phase; the per-mode RWM kernels keep adapting.
    """
    cfg = config or JamsConfig()
    d = target.dimension
    if starts is None:
        starts = cfg.start_sd * RngStream(seed, 0).generator().standard_normal((cfg.n_starts, d))
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    atlas = find_modes(target, starts, cfg.dedup_radius, family=cfg.family, dof=cfg.dof)
    history = [atlas.copy()]

    # phase 2: one chain per mode on pi(x | i)
    locals_ = []
    for i in range(atlas.k):
        rng = RngStream(seed, 2 + i).generator()
        a = _fresh_local(atlas, i)
        s = JamsState(atlas.modes[i].copy(), i, float(target.log_density(atlas.modes[i])), [a] * atlas.k)
        xs = np.empty((cfg.n_phase2, d))
        lps = np.empty(cfg.n_phase2)
        for n in range(cfg.n_phase2):
            jams_local_step(s, atlas, target, rng, adapt=True)
            xs[n] = s.x
            lps[n] = s.log_pi
        # a covariance from too few effective draws is worse than the Hessian one
        if cfg.n_phase2 >= 4 * d and batch_means_ess(lps[cfg.n_phase2 // 2:]) >= 2 * d:
            tail = xs[cfg.n_phase2 // 2:]
            cov = np.cov(tail.T).reshape(d, d) + 1e-10 * np.eye(d)
            locals_.append(a)
            try:
                np.linalg.cholesky(cov)
                atlas.set_covariance(i, cov)
            except np.linalg.LinAlgError:
                pass
        else:
            locals_.append(a)
    history.append(atlas.copy())

    rng = RngStream(seed, 1).generator()
    i0 = int(np.argmax(atlas.log_density)) if atlas.log_density is not None else 0
    x0 = atlas.modes[i0].copy()
    st = JamsState(x0, i0, float(target.log_density(x0)), locals_)
    n = cfg.n_iter
    states = np.empty((n + 1, d))
    states[0] = x0
    accepted = np.zeros(n, dtype=bool)
    aux = np.empty(n, dtype=np.int64)
    tags = []
    for t in range(n):
        if atlas.k > 1 and rng.random() < cfg.jump_prob:
            acc = jams_jump_step(st, atlas, target, rng)
            tags.append("jump")
        else:
            acc = jams_local_step(st, atlas, target, rng, cfg.adapt_local)
            tags.append("local")
        states[t + 1] = st.x
        accepted[t] = acc
        aux[t] = st.i
    trace = Trace(states, accepted, tags, aux, Space.CONTINUOUS)
    return JamsResult(trace, atlas, history, st, starts)


class JamsTabularLocalKernel:
    """Frozen JAMS local move on a tabular target, for exact matrix checks.

    Joint states are ``i * n + x``. At fixed ``i`` an index random walk
    proposes x and the MH ratio uses the augmented target built from the
    tabular kernels ``kappa`` (shape (k, n)) and ``weights``.
    """

    tag = "jams-local"

    def __init__(self, table, kappa, weights=None, proposal=None):
        self.table = np.asarray(table, dtype=float)
        self.kappa = np.asarray(kappa, dtype=float)
        k, n = self.kappa.shape
        self.weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
        self.proposal = proposal or IndexRandomWalk(1, cyclic=True, n_states=n)

    def augmented_table(self) -> np.ndarray:
        wk = self.weights[:, None] * self.kappa
        return (self.table[None, :] * wk / wk.sum(axis=0)).reshape(-1)

    def target(self) -> TargetModel:
        from .targets import TabularTarget
        return TabularTarget(self.augmented_table()).model()

    def proposal_matrix(self, target: TargetModel) -> np.ndarray:
        k, n = self.kappa.shape
        return np.kron(np.eye(k), self.proposal.matrix(n))

    def log_target(self, target: TargetModel) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.augmented_table())

    def __call__(self, state, target, rng):
        k, n = self.kappa.shape
        i, x = divmod(int(state.position), n)
        from .core import mh_step
        prop = lambda s, g: (i * n + self.proposal(int(s) % n, g)[0], 0.0)
        return mh_step(state, prop, target, rng, self.tag)


# -- repelling-attracting Metropolis ---------------------------------------------------

@dataclass(frozen=True)
class RamConfig:
    """Symmetric Gaussian random walk R with standard deviation ``scale``."""

    scale: float = 1.0
    max_inner: int = 10_000

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.max_inner < 1:
            raise ValueError("max_inner must be positive")


def _log_down(lp_from: float, lp_to: float) -> float:
    if lp_to == -math.inf:
        return 0.0
    return min(0.0, lp_from - lp_to)


def _walk(x, cfg: RamConfig, rng):
    x = np.asarray(x, dtype=float)
    return x + cfg.scale * rng.standard_normal(x.shape)


def ram_propose(x, target: TargetModel, cfg: RamConfig, rng, log_pi: Optional[float] = None):
    """Downhill-forced then uphill-forced two-stage proposal.

    Returns ``(y, z, log_pi_y, ok)``; ``ok`` is False when an inner loop
    hit ``cfg.max_inner`` without accepting.
    """
    lpx = float(target.log_density(x)) if log_pi is None else log_pi
    z, lpz = x, lpx
    for _ in range(cfg.max_inner):
        z = _walk(x, cfg, rng)
        lpz = float(target.log_density(z))
        if math.log(rng.random() + 1e-300) < _log_down(lpx, lpz):
            break
    else:
        return z, z, -math.inf, False
    for _ in range(cfg.max_inner):
        y = _walk(z, cfg, rng)
        lpy = float(target.log_density(y))
        if lpy > -math.inf and math.log(rng.random() + 1e-300) < (0.0 if lpz == -math.inf else min(0.0, lpy - lpz)):
            return y, z, lpy, True
    return z, z, -math.inf, False


def ram_step(state: ChainState, target: TargetModel, cfg: RamConfig, rng) -> tuple[ChainState, StepInfo]:
    """One RAM transition on the target extended by an auxiliary downhill point.

    Accepts y with probability
    min{1, pi(y) min(1, pi(x)/pi(w)) / (pi(x) min(1, pi(y)/pi(w')))},
    where w ~ R(x, .) is refreshed each step and w' is a downhill-accepted
    draw from R(y, .). An exhausted inner budget abandons the proposal.
    """
    x, lpx = state.position, state.log_density
    w = _walk(x, cfg, rng)
    log_aw = _log_down(lpx, float(target.log_density(w)))
    y, _, lpy, ok = ram_propose(x, target, cfg, rng, lpx)
    log_aw2 = 0.0
    if ok:
        ok = False
        for _ in range(cfg.max_inner):
            w2 = _walk(y, cfg, rng)
            la = _log_down(lpy, float(target.log_density(w2)))
            if math.log(rng.random() + 1e-300) < la:
                log_aw2, ok = la, True
                break
    nxt = state.iteration + 1
    if not ok:
        return ChainState(x, lpx, nxt), StepInfo(False, "ram-abandoned")
    if math.log(rng.random() + 1e-300) < lpy + log_aw - lpx - log_aw2:
        return ChainState(y, lpy, nxt), StepInfo(True, "ram")
    return ChainState(x, lpx, nxt), StepInfo(False, "ram")


class RamKernel:
    def __init__(self, cfg: RamConfig):
        self.cfg = cfg

    def __call__(self, state, target, rng):
        return ram_step(state, target, self.cfg, rng)


def ram_tabular_counts(table, n_steps: int, step: int = 1, max_inner: int = 10_000, seed: int = 0,
                       x0: int = 0) -> tuple[np.ndarray, int, int]:
    """Histogram of a compiled RAM chain on a tabular target; returns (counts, accepted, abandoned)."""
    with np.errstate(divide="ignore"):
        logp = np.log(np.asarray(table, dtype=float))
    counts = np.zeros(len(logp), dtype=np.int64)
    _, acc, ab = _loops.ram_tabular_chain(logp, int(x0), int(n_steps), int(step), int(max_inner),
                                          RngStream(seed, 0).generator(), counts)
    return counts, int(acc), int(ab)


def ram_mixture1d_path(means, sds, weights, scale: float, n_steps: int, max_inner: int = 10_000,
                       seed: int = 0, x0: float = 0.0) -> tuple[np.ndarray, int, int]:
    """Compiled RAM chain on a 1-d Gaussian mixture; returns (path, accepted, abandoned)."""
    out = np.empty(n_steps)
    acc, ab = _loops.ram_mixture1d_chain(float(x0), np.asarray(means, dtype=float), np.asarray(sds, dtype=float),
                                         np.log(np.asarray(weights, dtype=float)), float(scale), int(n_steps),
                                         int(max_inner), RngStream(seed, 0).generator(), out)
    return out, int(acc), int(ab)
