"""Local and jump transition kernels.

Adaptive random-walk Metropolis, single-site Gibbs for the autologistic
model, and the Metropolized independence (jump) sampler. Kernels used with
:func:`multimodal_mcmc.core.run_chain` are callables
``kernel(state, target, rng) -> (state, StepInfo)``. Kernels that can be
enumerated on tabular spaces also expose ``proposal_matrix(target)`` for
:func:`multimodal_mcmc.diagnostics.build_transition_matrix`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from . import _loops
from .core import ChainState, NumericalError, SamplerError, Space, StepInfo, TargetModel, mh_step
from .targets import AutologisticParams, autologistic_site_conditional, enumerate_binary_states

TARGET_ACCEPTANCE = 0.234
JITTER = 1e-10


def robust_cholesky(cov: np.ndarray, jitter: float = JITTER) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(len(cov)))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Cholesky factorization failed after jitter") from exc


class RunningCovariance:
    """Welford mean/covariance of visited states, feeding a proposal covariance.

    Until ``start`` samples have been seen the proposal covariance stays at
    ``initial``; afterwards it is the sample covariance plus ``jitter * I``,
    refactorized every ``refresh_every`` updates.
    """

    def __init__(self, dim: int, initial: Optional[np.ndarray] = None, start: Optional[int] = None,
                 jitter: float = JITTER, refresh_every: int = 10):
        self.dim = dim
        self.initial = np.eye(dim) if initial is None else np.array(initial, dtype=float)
        self.start = max(2 * dim, 100) if start is None else start
        self.jitter = jitter
        self.refresh_every = refresh_every
        self.count = 0
        self.mean = np.zeros(dim)
        self.scatter = np.zeros((dim, dim))
        self.cov = self.initial.copy()
        self.chol = robust_cholesky(self.cov, jitter)

    def update(self, x) -> None:
        x = np.asarray(x, dtype=float)
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.scatter += np.outer(delta, x - self.mean)
        if self.count >= self.start and self.count % self.refresh_every == 0:
            self.refresh()

    def refresh(self) -> None:
        if self.count < 2:
            return
        cov = self.scatter / (self.count - 1)
        self.cov = 0.5 * (cov + cov.T) + self.jitter * np.eye(self.dim)
        self.chol = robust_cholesky(self.cov, 0.0 if _is_pd(self.cov) else self.jitter)

    def sample_covariance(self) -> np.ndarray:
        if self.count < 2:
            return self.cov.copy()
        return self.scatter / (self.count - 1)


def _is_pd(a: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(a)
        return True
    except np.linalg.LinAlgError:
        return False


@dataclass
class AdaptiveRwmState:
    """Proposal N(x, scale * cov) with Robbins-Monro scale and running covariance.

    ``log_scale`` starts at log(2.38^2 / d) with ``cov`` = I, i.e. proposal
    covariance (2.38^2/d) I. The step size at adaptation step t is
    ``t ** -decay``.
    """

    covariance: RunningCovariance
    log_scale: float
    t: int = 0
    n_accepted: int = 0
    n_proposed: int = 0
    recent: float = TARGET_ACCEPTANCE
    adapt: bool = True
    adapt_covariance: bool = True
    target_rate: float = TARGET_ACCEPTANCE
    decay: float = 0.6
    window: float = 0.01

    @classmethod
    def initial(cls, dim: int, cov: Optional[np.ndarray] = None, scale: Optional[float] = None,
                **kw) -> "AdaptiveRwmState":
        cov_kw = {k: kw.pop(k) for k in ("start", "refresh_every", "jitter") if k in kw}
        rc = RunningCovariance(dim, cov, **cov_kw)
        s = 2.38 ** 2 / dim if scale is None else scale
        return cls(rc, math.log(s), **kw)

    @property
    def scale(self) -> float:
        return math.exp(self.log_scale)

    @property
    def proposal_covariance(self) -> np.ndarray:
        return self.scale * self.covariance.cov

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposed if self.n_proposed else float("nan")

    def frozen(self) -> "AdaptiveRwmState":
        self.adapt = False
        return self


def rwm_propose(x: np.ndarray, a: AdaptiveRwmState, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(len(x))
    return x + math.exp(0.5 * a.log_scale) * (a.covariance.chol @ z)


def rwm_step(state: ChainState, target: TargetModel, a: AdaptiveRwmState, rng: np.random.Generator,
             inverse_temperature: float = 1.0, kernel_tag: str = "rwm") -> tuple[ChainState, StepInfo]:
    """Gaussian random-walk Metropolis step with proposal covariance scale * cov.

    The target is raised to ``inverse_temperature``. Acceptance bookkeeping
    in ``a`` is updated; adaptation is left to :func:`rwm_adapt`.
    """
    if target.space is not Space.CONTINUOUS:
        raise ValueError("rwm_step needs a continuous target")
    new, info = mh_step(state, lambda x, g: (rwm_propose(x, a, g), 0.0), target, rng,
                        kernel_tag, inverse_temperature)
    a.n_proposed += 1
    a.n_accepted += int(info.accepted)
    a.recent += a.window * (float(info.accepted) - a.recent)
    return new, info


def rwm_adapt(a: AdaptiveRwmState, accepted: bool, new_state, eta: Optional[float] = None) -> AdaptiveRwmState:
    """Robbins-Monro update of log scale towards the target rate, plus covariance.

    ``log_scale += eta * (1[accepted] - 0.234)`` with ``eta = t^-0.6``
    unless given. The running covariance absorbs ``new_state``.
    """
    if not a.adapt:
        return a
    a.t += 1
    step = a.t ** -a.decay if eta is None else eta
    a.log_scale += step * (float(accepted) - a.target_rate)
    a.log_scale = min(max(a.log_scale, -50.0), 50.0)
    if a.adapt_covariance and new_state is not None:
        a.covariance.update(new_state)
    return a


class AdaptiveRwmKernel:
    tag = "rwm"

    def __init__(self, a: AdaptiveRwmState, inverse_temperature: float = 1.0):
        self.a = a
        self.inverse_temperature = inverse_temperature

    def __call__(self, state, target, rng):
        new, info = rwm_step(state, target, self.a, rng, self.inverse_temperature, self.tag)
        rwm_adapt(self.a, info.accepted, new.position)
        return new, info


# -- proposals on tabular spaces ----------------------------------------------

class IndexRandomWalk:
    """Symmetric proposal on indices: uniform over +-1..+-step.

    With ``cyclic`` the index wraps; otherwise moves off the ends are
    proposed and rejected (they fall outside the support).
    """

    def __init__(self, step: int = 1, cyclic: bool = True, n_states: Optional[int] = None):
        self.step = step
        self.cyclic = cyclic
        self.n_states = n_states

    def __call__(self, x, rng):
        k = int(rng.integers(0, 2 * self.step))
        off = k - self.step if k < self.step else k - self.step + 1
        y = int(x) + off
        if self.cyclic:
            y %= self.n_states
        return y, 0.0

    def matrix(self, n: int) -> np.ndarray:
        q = np.zeros((n, n))
        p = 1.0 / (2 * self.step)
        for x in range(n):
            for off in range(-self.step, self.step + 1):
                if off == 0:
                    continue
                y = x + off
                if self.cyclic:
                    q[x, y % n] += p
                elif 0 <= y < n:
                    q[x, y] += p
                else:
                    q[x, x] += p     # rejected: stays put
        return q


class IdentityProposal:
    def __call__(self, x, rng):
        return x, 0.0

    def matrix(self, n: int) -> np.ndarray:
        return np.eye(n)


class MetropolisKernel:
    """Plain MH with a given proposal; enumerable when the proposal is."""

    def __init__(self, proposal, tag: str = "mh"):
        self.proposal = proposal
        self.tag = tag

    def __call__(self, state, target, rng):
        if isinstance(self.proposal, IndexRandomWalk) and self.proposal.n_states is None:
            self.proposal.n_states = target.n_states
        return mh_step(state, self.proposal, target, rng, self.tag)

    def proposal_matrix(self, target: TargetModel) -> np.ndarray:
        return self.proposal.matrix(target.n_states)

    def log_target(self, target: TargetModel) -> np.ndarray:
        return target.log_table()


def tabular_index_chain(log_target: np.ndarray, x0: int, n_steps: int, rng, step: int = 1,
                        cyclic: bool = True, record: bool = False):
    """Fast Metropolis index random walk; returns (counts, path or None, accepted)."""
    counts = np.zeros(len(log_target), dtype=np.int64)
    out = np.empty(n_steps if record else 0, dtype=np.int64)
    _, acc = _loops.tabular_rw_chain(np.asarray(log_target, dtype=float), int(x0), int(n_steps),
                                     int(step), bool(cyclic), rng, counts, out)
    return counts, (out if record else None), int(acc)


# -- single-site Gibbs ---------------------------------------------------------

def gibbs_site_step(x, i: int, p: AutologisticParams, rng: np.random.Generator) -> np.ndarray:
    """Resample site ``i`` from its full conditional; other sites untouched."""
    if not 0 <= i < p.n_sites:
        raise IndexError(f"site {i} out of range")
    out = np.array(x, dtype=np.int8).reshape(-1)
    out[i] = 1 if rng.random() < autologistic_site_conditional(out, i, p) else 0
    return out


def gibbs_sweep(x, p: AutologisticParams, rng: np.random.Generator, n_sweeps: int = 1,
                counts: Optional[np.ndarray] = None) -> np.ndarray:
    """Systematic-scan sweeps through the compiled loop; returns the new state."""
    out = np.array(x, dtype=np.int64).reshape(-1)
    c = np.zeros(0, dtype=np.int64) if counts is None else counts
    _loops.gibbs_sweeps(out, p.y_flat.astype(np.int64), p.nbrs, p.degree, float(p.alpha),
                        float(p.beta), int(n_sweeps), rng, c)
    return out.astype(np.int8)


class GibbsSweepKernel:
    """One systematic scan over every site per transition."""

    tag = "gibbs"

    def __init__(self, params: AutologisticParams):
        self.params = params

    def __call__(self, state, target, rng):
        x = gibbs_sweep(state.position, self.params, rng)
        return ChainState(x, float(target.log_density(x)), state.iteration + 1), StepInfo(True, self.tag)


class RandomScanGibbs:
    """Random-scan single-site Gibbs, enumerable over the 2^d lattice states.

    The matching tabular target indexes states by
    :func:`~multimodal_mcmc.targets.binary_state_index`.
    """

    tag = "gibbs-rs"

    def __init__(self, params: AutologisticParams):
        self.params = params

    def __call__(self, state, target, rng):
        i = int(rng.integers(0, self.params.n_sites))
        x = gibbs_site_step(state.position, i, self.params, rng)
        return ChainState(x, float(target.log_density(x)), state.iteration + 1), StepInfo(True, self.tag, i)

    def transition_matrix(self, target: TargetModel) -> np.ndarray:
        # every Gibbs draw is "accepted", so the proposal is the kernel
        return self.proposal_matrix(target)

    def proposal_matrix(self, target: TargetModel) -> np.ndarray:
        p = self.params
        d = p.n_sites
        states = enumerate_binary_states(d)
        n = len(states)
        q = np.zeros((n, n))
        for k, x in enumerate(states):
            for i in range(d):
                p1 = autologistic_site_conditional(x, i, p)
                bit = 1 << (d - 1 - i)
                k1, k0 = k | bit, k & ~bit
                q[k, k1] += p1 / d
                q[k, k0] += (1.0 - p1) / d
        return q

    def log_target(self, target: TargetModel) -> np.ndarray:
        return target.log_table()


# -- independence / jump proposals --------------------------------------------

LOG_2PI = math.log(2 * math.pi)


def mvn_logpdf(x, mean, chol) -> float:
    z = np.linalg.solve(chol, np.asarray(x, dtype=float) - mean) if chol.shape[0] > 1 else \
        (np.asarray(x, dtype=float) - mean) / chol[0, 0]
    d = len(mean)
    return float(-0.5 * d * LOG_2PI - np.sum(np.log(np.diag(chol))) - 0.5 * np.dot(z, z))


def mvt_logpdf(x, mean, chol, dof: float) -> float:
    z = np.linalg.solve(chol, np.asarray(x, dtype=float) - mean)
    d = len(mean)
    return float(gammaln(0.5 * (dof + d)) - gammaln(0.5 * dof) - 0.5 * d * math.log(dof * math.pi)
                 - np.sum(np.log(np.diag(chol))) - 0.5 * (dof + d) * math.log1p(np.dot(z, z) / dof))


@dataclass
class JumpProposal:
    """Mixture proposal Q_J for independence/jump moves.

    ``family`` is ``gaussian``, ``student-t`` or ``tabular``. Tabular
    proposals carry a probability vector in ``table`` and no components.
    """

    weights: np.ndarray
    centers: Optional[np.ndarray] = None
    covariances: Optional[np.ndarray] = None
    family: str = "gaussian"
    dof: float = 7.0
    table: Optional[np.ndarray] = None
    _chols: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if self.family == "tabular":
            self.table = np.asarray(self.table, dtype=float)
            if abs(self.table.sum() - 1.0) > 1e-12 or np.any(self.table < 0):
                raise ValueError("tabular proposal must be a probability vector")
        else:
            self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
            self.covariances = np.asarray(self.covariances, dtype=float).reshape(
                len(self.weights), self.centers.shape[1], self.centers.shape[1])
            self._chols = [robust_cholesky(c, 0.0) for c in self.covariances]

    @classmethod
    def tabular(cls, probs) -> "JumpProposal":
        return cls(np.ones(1), family="tabular", table=np.asarray(probs, dtype=float))

    @classmethod
    def gaussian(cls, centers, covariances, weights=None) -> "JumpProposal":
        centers = np.atleast_2d(centers)
        w = np.full(len(centers), 1.0 / len(centers)) if weights is None else weights
        return cls(w, centers, covariances, "gaussian")

    @classmethod
    def student_t(cls, centers, covariances, dof: float = 7.0, weights=None) -> "JumpProposal":
        centers = np.atleast_2d(centers)
        w = np.full(len(centers), 1.0 / len(centers)) if weights is None else weights
        return cls(w, centers, covariances, "student-t", dof)

    def sample(self, rng: np.random.Generator):
        if self.family == "tabular":
            return int(np.searchsorted(np.cumsum(self.table), rng.random() * self.table.sum(), side="right"))
        k = int(np.searchsorted(np.cumsum(self.weights), rng.random(), side="right"))
        k = min(k, len(self.weights) - 1)
        z = rng.standard_normal(self.centers.shape[1])
        if self.family == "student-t":
            z = z / math.sqrt(rng.chisquare(self.dof) / self.dof)
        return self.centers[k] + self._chols[k] @ z

    def log_density(self, x) -> float:
        if self.family == "tabular":
            i = int(np.asarray(x).reshape(-1)[0]) if np.ndim(x) else int(x)
            p = self.table[i] if 0 <= i < len(self.table) else 0.0
            return math.log(p) if p > 0 else -math.inf
        comp = mvt_logpdf if self.family == "student-t" else mvn_logpdf
        args = (self.dof,) if self.family == "student-t" else ()
        terms = [math.log(w) + comp(x, c, L, *args)
                 for w, c, L in zip(self.weights, self.centers, self._chols)]
        return float(logsumexp(terms))

    def __call__(self, x, rng):
        """Use as an MH proposal: returns (y, log Q(x) - log Q(y))."""
        y = self.sample(rng)
        return y, self.log_density(x) - self.log_density(y)

    def matrix(self, n: int) -> np.ndarray:
        if self.family != "tabular":
            raise ValueError("only tabular proposals can be enumerated")
        return np.tile(self.table, (n, 1))


def independence_jump_step(state: ChainState, target: TargetModel, q: JumpProposal,
                           rng: np.random.Generator, kernel_tag: str = "jump") -> tuple[ChainState, StepInfo]:
    """Metropolized independence sampler step with proposal ``q``."""
    if q.log_density(state.position) == -math.inf:
        raise SamplerError("jump proposal has zero density at the current state")
    return mh_step(state, q, target, rng, kernel_tag)


class IndependenceKernel:
    tag = "jump"

    def __init__(self, q: JumpProposal):
        self.q = q

    def __call__(self, state, target, rng):
        return independence_jump_step(state, target, self.q, rng, self.tag)

    def proposal_matrix(self, target: TargetModel) -> np.ndarray:
        return self.q.matrix(target.n_states)

    def log_target(self, target: TargetModel) -> np.ndarray:
        return target.log_table()


class SiteFlipProposal:
    """Flip one uniformly chosen site of a binary state (symmetric)."""

    def __init__(self, n_sites: int):
        self.n_sites = n_sites

    def __call__(self, x, rng):
        y = np.array(x, dtype=np.int8, copy=True)
        i = int(rng.integers(0, self.n_sites))
        y[i] = 1 - y[i]
        return y, 0.0
