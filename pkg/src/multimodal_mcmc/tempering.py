"""Parallel tempering with reversible and non-reversible swap schedules.

Level 0 is the cold chain (beta = 1); level L-1 is the hottest. Swap pairs
are indexed by their lower level, so pair ``l`` exchanges levels ``l`` and
``l+1``. The "even" set is pairs 0, 2, 4, ... and the deterministic
even/odd (DEO) schedule applies the even set on even sweeps counted from 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ChainState, RngStream, Space, TargetModel, Trace
from .diagnostics import ExactKernelMatrix, metropolize
from .kernels import TARGET_ACCEPTANCE, AdaptiveRwmState, RunningCovariance, rwm_adapt, rwm_step

SCHEDULES = ("uniform", "even", "odd", "deo", "none")
_ALIASES = {"uniform-random-pair": "uniform", "deo-alternating": "deo"}
# widest single gap: beta_l / beta_{l+1} <= 200, the span of the default geometric ladder
MAX_RHO = math.log(math.log(200.0))


@dataclass
class TemperatureLadder:
    """Inverse temperatures 1 = beta_0 > beta_1 > ... > beta_{L-1} > 0.

    Spacing is stored as ``rho[l] = log(log beta_l - log beta_{l+1})`` so any
    real ``rho`` gives a strictly decreasing ladder. Adaptation keeps
    ``rho <= max_rho`` (default: the wider of MAX_RHO and the initial gaps).
    Without the cap the hot pairs, whose acceptance is near 1 for any ratio
    once beta is tiny, push beta_{L-1} toward 0 and the hottest chain drifts off.
    """

    rho: np.ndarray
    decay: float = 0.6
    max_rho: Optional[float] = None
    t: int = 0
    attempts: np.ndarray = None
    accept_sum: np.ndarray = None
    recent: np.ndarray = None

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float).reshape(-1)
        n = len(self.rho)
        if self.max_rho is None:
            self.max_rho = max(MAX_RHO, float(self.rho.max())) if n else MAX_RHO
        if self.attempts is None:
            self.attempts = np.zeros(n, dtype=np.int64)
        if self.accept_sum is None:
            self.accept_sum = np.zeros(n)
        if self.recent is None:
            self.recent = np.full(n, np.nan)

    @classmethod
    def geometric(cls, n_levels: int, beta_min: float = 0.005, **kw) -> "TemperatureLadder":
        if n_levels < 1:
            raise ValueError("need at least one level")
        if not 0 < beta_min < 1:
            raise ValueError("beta_min must lie in (0, 1)")
        if n_levels == 1:
            return cls(np.zeros(0), **kw)
        gap = -math.log(beta_min) / (n_levels - 1)
        return cls(np.full(n_levels - 1, math.log(gap)), **kw)

    @classmethod
    def from_betas(cls, betas, **kw) -> "TemperatureLadder":
        b = np.asarray(betas, dtype=float)
        if b[0] != 1.0 or np.any(b <= 0) or np.any(np.diff(b) >= 0):
            raise ValueError("betas must start at 1 and decrease strictly to a positive value")
        return cls(np.log(-np.diff(np.log(b))), **kw)

    @property
    def n_levels(self) -> int:
        return len(self.rho) + 1

    @property
    def betas(self) -> np.ndarray:
        return np.exp(-np.concatenate([[0.0], np.cumsum(np.exp(self.rho))]))

    def acceptance_rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.attempts > 0, self.accept_sum / np.maximum(self.attempts, 1), np.nan)

    def record(self, pair: int, prob: float, window: float = 0.01) -> None:
        self.attempts[pair] += 1
        self.accept_sum[pair] += prob
        r = self.recent[pair]
        self.recent[pair] = prob if np.isnan(r) else r + window * (prob - r)

    def reset_stats(self) -> None:
        self.attempts[:] = 0
        self.accept_sum[:] = 0.0


def adapt_ladder(ladder: TemperatureLadder, pair_acceptance, t: Optional[int] = None,
                 eta: Optional[float] = None) -> TemperatureLadder:
    """Robbins-Monro spacing update ``rho_l += eta_t (acc_l - 0.234)``.

    ``pair_acceptance`` has one entry per pair; NaN marks pairs not
    attempted this round, which are left alone. A pair with acceptance above
    the target widens its gap.
    """
    acc = np.asarray(pair_acceptance, dtype=float)
    if acc.shape != ladder.rho.shape:
        raise ValueError("one acceptance value per adjacent pair")
    if t is None:
        ladder.t += 1
        t = ladder.t
    step = t ** -ladder.decay if eta is None else eta
    ok = ~np.isnan(acc)
    ladder.rho[ok] += step * (acc[ok] - TARGET_ACCEPTANCE)
    np.clip(ladder.rho, -30.0, ladder.max_rho, out=ladder.rho)
    return ladder


def swap_acceptance(beta_l: float, beta_next: float, logpi_l: float, logpi_next: float) -> float:
    """min{1, exp[(beta_l - beta_next)(logpi_next - logpi_l)]}."""
    s = (beta_l - beta_next) * (logpi_next - logpi_l)
    if math.isnan(s):
        return 0.0
    return 1.0 if s >= 0 else math.exp(s)


def pair_schedule(schedule: str, sweep_index: int, n_levels: int, rng=None) -> list:
    """Lower indices of the adjacent pairs attempted at ``sweep_index``."""
    schedule = _ALIASES.get(schedule, schedule)
    n_pairs = n_levels - 1
    if n_pairs < 1 or schedule == "none":
        return []
    if schedule == "uniform":
        return [int(rng.integers(0, n_pairs))]
    if schedule == "deo":
        schedule = "even" if sweep_index % 2 == 0 else "odd"
    if schedule == "even":
        return list(range(0, n_pairs, 2))
    if schedule == "odd":
        return list(range(1, n_pairs, 2))
    raise ValueError(f"unknown swap schedule {schedule!r}")


@dataclass
class ReplicaEnsemble:
    """One chain per level; ``labels[l]`` is the replica (1..L) at level ``l``."""

    states: list
    kernels: list
    labels: np.ndarray
    ladder: TemperatureLadder
    shared_covariance: Optional[RunningCovariance] = None

    def __post_init__(self):
        L = self.ladder.n_levels
        if len(self.states) != L or len(self.kernels) != L:
            raise ValueError("one state and one kernel state per level")
        if sorted(int(v) for v in self.labels) != list(range(1, L + 1)):
            raise ValueError("labels must be a permutation of 1..L")

    @classmethod
    def create(cls, target: TargetModel, ladder: TemperatureLadder, init, common_covariance: bool = False,
               cov_start: Optional[int] = None) -> "ReplicaEnsemble":
        L = ladder.n_levels
        d = target.dimension
        init = np.asarray(init, dtype=float)
        inits = np.broadcast_to(init, (L, d)) if init.ndim == 1 else init
        shared = RunningCovariance(d, start=cov_start) if common_covariance else None
        kernels = []
        for _ in range(L):
            if shared is None:
                a = AdaptiveRwmState.initial(d, start=cov_start) if cov_start else AdaptiveRwmState.initial(d)
            else:
                a = AdaptiveRwmState(shared, math.log(2.38 ** 2 / d), adapt_covariance=False)
            kernels.append(a)
        states = [ChainState.initial(target, x) for x in inits]
        return cls(states, kernels, np.arange(1, L + 1), ladder, shared)

    @property
    def n_levels(self) -> int:
        return self.ladder.n_levels


def propagate(ensemble: ReplicaEnsemble, target: TargetModel, rngs, adapt: bool = True) -> list:
    """Advance every level by one tempered RWM step; returns the acceptance flags.

    Level ``l`` uses ``rngs[l]`` only, so the result does not depend on the
    order in which levels are processed.
    """
    betas = ensemble.ladder.betas
    flags = []
    for l in range(ensemble.n_levels):
        a = ensemble.kernels[l]
        new, info = rwm_step(ensemble.states[l], target, a, rngs[l], float(betas[l]), "pt")
        if adapt:
            rwm_adapt(a, info.accepted, new.position)
        ensemble.states[l] = new
        flags.append(info.accepted)
    if adapt and ensemble.shared_covariance is not None:
        # common covariance: serialized update from the cold chain
        ensemble.shared_covariance.update(ensemble.states[0].position)
    return flags


def swap_sweep(ensemble: ReplicaEnsemble, schedule: str, sweep_index: int, rng) -> np.ndarray:
    """Attempt swaps for the scheduled pairs; returns per-pair swap probabilities (NaN if not attempted)."""
    L = ensemble.n_levels
    betas = ensemble.ladder.betas
    probs = np.full(max(L - 1, 0), np.nan)
    for l in pair_schedule(schedule, sweep_index, L, rng):
        s0, s1 = ensemble.states[l], ensemble.states[l + 1]
        a = swap_acceptance(betas[l], betas[l + 1], s0.log_density, s1.log_density)
        u = rng.random()
        probs[l] = a
        ensemble.ladder.record(l, a)
        if u < a:
            ensemble.states[l], ensemble.states[l + 1] = s1, s0
            ensemble.labels[[l, l + 1]] = ensemble.labels[[l + 1, l]]
    return probs


@dataclass
class PtResult:
    cold: Trace
    labels: np.ndarray          # (n_sweeps+1, L), replica label per level
    ladder_history: np.ndarray  # (n_sweeps+1, L) betas
    ladder: TemperatureLadder
    ensemble: ReplicaEnsemble
    level_acceptance: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def swap_rates(self) -> np.ndarray:
        return self.ladder.acceptance_rates()


def pt_run(target: TargetModel, ladder: TemperatureLadder, n_sweeps: int, schedule: str = "deo",
           adapt: bool = True, common_covariance: bool = False, seed: int = 0, init=None,
           adapt_ladder_until: Optional[int] = None, stats_from: int = 0,
           cov_start: Optional[int] = None) -> PtResult:
    """Alternate propagation and swap sweeps for ``n_sweeps``.

    Stream 0 drives swaps and the default initial state; level ``l`` uses
    stream ``l + 1``. With ``adapt`` the per-level RWM kernels and the ladder
    spacing adapt (the ladder until ``adapt_ladder_until`` sweeps). Swap
    statistics are reset at sweep ``stats_from`` so reported rates cover the
    tail of the run.
    """
    if target.space is not Space.CONTINUOUS:
        raise ValueError("pt_run drives RWM kernels and needs a continuous target")
    ladder = TemperatureLadder(ladder.rho.copy(), ladder.decay, max_rho=ladder.max_rho)
    swap_rng = RngStream(seed, 0).generator()
    rngs = [RngStream(seed, l + 1).generator() for l in range(ladder.n_levels)]
    if init is None:
        init = swap_rng.standard_normal(target.dimension)
    ens = ReplicaEnsemble.create(target, ladder, init, common_covariance, cov_start)
    L, d = ladder.n_levels, target.dimension
    cold = np.empty((n_sweeps + 1, d))
    cold[0] = ens.states[0].position
    accepted = np.zeros(n_sweeps, dtype=bool)
    aux = np.empty(n_sweeps, dtype=np.int64)
    labels = np.empty((n_sweeps + 1, L), dtype=np.int64)
    labels[0] = ens.labels
    history = np.empty((n_sweeps + 1, L))
    history[0] = ladder.betas
    level_acc = np.zeros(L)
    for s in range(n_sweeps):
        if s == stats_from:
            ladder.reset_stats()
        flags = propagate(ens, target, rngs, adapt)
        level_acc += flags
        probs = swap_sweep(ens, schedule, s, swap_rng)
        if adapt and L > 1 and (adapt_ladder_until is None or s < adapt_ladder_until):
            adapt_ladder(ladder, probs)
        cold[s + 1] = ens.states[0].position
        accepted[s] = flags[0]
        aux[s] = ens.labels[0]
        labels[s + 1] = ens.labels
        history[s + 1] = ladder.betas
    trace = Trace(cold, accepted, ["pt"] * n_sweeps, aux, Space.CONTINUOUS)
    return PtResult(trace, labels, history, ladder, ens, level_acc / max(n_sweeps, 1))


def write_replica_csv(path, labels) -> None:
    labels = np.asarray(labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sweep"] + [f"temp_level_{l + 1}" for l in range(labels.shape[1])])
        for s, row in enumerate(labels):
            w.writerow([s] + [int(v) for v in row])


def read_replica_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[int(v) for v in r[1:]] for r in rows], dtype=np.int64)


# -- exact two-level oracle ------------------------------------------------------

def exact_pt_matrix(proposal: np.ndarray, log_target: np.ndarray, betas) -> ExactKernelMatrix:
    """Exact (propagate then swap) matrix on the joint space of two tabular levels.

    Each level runs MH with ``proposal`` against ``beta_l * log_target``.
    Joint state (x0, x1) has index ``x0 * n + x1``.
    """
    b0, b1 = (float(b) for b in betas)
    lp = np.asarray(log_target, dtype=float)
    n = len(lp)
    M = np.kron(metropolize(proposal, b0 * lp), metropolize(proposal, b1 * lp))
    S = np.zeros((n * n, n * n))
    for x0 in range(n):
        for x1 in range(n):
            k = x0 * n + x1
            a = swap_acceptance(b0, b1, lp[x0], lp[x1])
            S[k, x1 * n + x0] += a
            S[k, k] += 1.0 - a
    joint = b0 * lp[:, None] + b1 * lp[None, :]
    pi = np.exp(joint - joint.max()).reshape(-1)
    return ExactKernelMatrix(M @ S, pi / pi.sum())
