"""Generalized Wang-Landau with parallel interacting chains (PAWL).

The state space is binned along a one-dimensional reaction coordinate xi,
by default the energy -log pi(x). Chains target pi(x) exp(-theta(bin)) and
the bias theta is pushed up in over-visited bins by stochastic
approximation, pooled across all chains. When the epoch's occupancy is flat
the step size halves. Bins whose recorded xi values pile up on one side can
split. Bins are indexed from 0.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _loops
from .core import ChainState, RngStream, SamplerError, Space, StepInfo, TargetModel
from .kernels import AdaptiveRwmState, rwm_adapt, rwm_propose
from .targets import AutologisticParams


@dataclass
class BiasPotential:
    """Bin edges on [z_min, z_max], log-bias ``theta`` and epoch occupancy."""

    edges: np.ndarray
    theta: np.ndarray
    eta: float = 1.0
    c: float = 0.9
    occupancy: np.ndarray = None
    n_epoch: int = 0
    epoch: int = 0
    max_bins: int = 64
    min_epoch: int = 0               # epoch samples required before the flat test (at least J)
    n_splits: int = 0
    values: list = None              # per-bin xi values seen this epoch
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if len(self.theta) < 2 or len(self.edges) != len(self.theta) + 1:
            raise ValueError("need J >= 2 bins and J+1 edges")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if self.occupancy is None:
            self.occupancy = np.zeros(self.n_bins)
        if self.values is None:
            self.values = [[] for _ in range(self.n_bins)]

    @classmethod
    def uniform(cls, z_min: float, z_max: float, n_bins: int = 10, **kw) -> "BiasPotential":
        if not z_max > z_min:
            raise ValueError("z_max must exceed z_min")
        return cls(np.linspace(z_min, z_max, n_bins + 1), np.zeros(n_bins), **kw)

    @property
    def n_bins(self) -> int:
        return len(self.theta)

    @property
    def frequencies(self) -> np.ndarray:
        return self.occupancy / self.n_epoch if self.n_epoch else np.zeros(self.n_bins)

    def snapshot(self) -> list:
        nu = self.frequencies
        return [(self.epoch, self.eta, float(self.edges[j]), float(self.edges[j + 1]),
                 float(self.theta[j]), float(nu[j])) for j in range(self.n_bins)]


def reaction_coordinate(x, target: TargetModel, fn: Optional[Callable] = None) -> float:
    """xi(x) = -log pi(x) up to a constant, unless another function is given."""
    if fn is not None:
        return float(fn(x))
    return -float(target.log_density(x))


def bin_index(z: float, bias: BiasPotential) -> tuple[int, bool]:
    """Half-open bin containing ``z``, clamped to the end bins, and an out-of-range flag."""
    e = bias.edges
    j = bisect.bisect_right(e, z) - 1
    out = z < e[0] or z > e[-1]
    return min(max(j, 0), len(e) - 2), out


def biased_log_density(log_pi: float, z: float, bias: BiasPotential) -> float:
    return log_pi - bias.theta[bin_index(z, bias)[0]]


def wl_step(state: ChainState, target: TargetModel, bias: BiasPotential, propose, rng,
            xi: Optional[Callable] = None, kernel_tag: str = "wl") -> tuple[ChainState, StepInfo]:
    """Metropolis step targeting log pi(x) - theta(bin(xi(x))).

    ``propose(x, rng)`` returns ``(y, log q-ratio)``. The step records the
    new state's bin in ``aux_index``; the bias itself is not modified.
    """
    x = state.position
    y, lqr = propose(x, rng)
    lpy = float(target.log_density(y))
    u = rng.random()
    zx = -state.log_density if xi is None else xi(x)
    jx = bin_index(zx, bias)[0]
    if lpy == -math.inf:
        return ChainState(x, state.log_density, state.iteration + 1), StepInfo(False, kernel_tag, jx)
    zy = -lpy if xi is None else xi(y)
    jy = bin_index(zy, bias)[0]
    log_alpha = (lpy - bias.theta[jy]) - (state.log_density - bias.theta[jx]) + lqr
    if math.isnan(log_alpha):
        raise SamplerError("NaN in Wang-Landau acceptance ratio")
    if u == 0.0 or math.log(u) < log_alpha:
        return ChainState(y, lpy, state.iteration + 1), StepInfo(True, kernel_tag, jy)
    return ChainState(x, state.log_density, state.iteration + 1), StepInfo(False, kernel_tag, jx)


def update_bias(bias: BiasPotential, bins, values=None, mode: str = "sa") -> BiasPotential:
    """Pooled stochastic-approximation update from one batch of visited bins.

    ``sa``: theta += eta * (nu_hat - 1/J) with nu_hat the batch occupancy.
    ``classical``: theta[j] += eta for each visit. theta is recentred to
    mean zero and the epoch occupancy accumulates the batch. ``values``
    (the xi values of the batch) are kept for bin splitting.
    """
    bins = np.asarray(bins, dtype=np.int64).reshape(-1)
    J = bias.n_bins
    counts = np.bincount(bins, minlength=J).astype(float)
    if mode == "sa":
        bias.theta += bias.eta * (counts / len(bins) - 1.0 / J)
    elif mode == "classical":
        bias.theta += bias.eta * counts
    else:
        raise ValueError(f"unknown bias update mode {mode!r}")
    bias.theta -= bias.theta.mean()
    bias.occupancy += counts
    bias.n_epoch += len(bins)
    if values is not None:
        for j, z in zip(bins, np.asarray(values, dtype=float).reshape(-1)):
            bias.values[j].append(float(z))
    return bias


def flat_histogram(bias: BiasPotential, c: Optional[float] = None) -> bool:
    """max_j |nu_j - 1/J| < c/J over the current epoch.

    On success the epoch advances, eta halves and occupancies reset.
    """
    c = bias.c if c is None else c
    J = bias.n_bins
    if bias.n_epoch < max(J, bias.min_epoch):
        return False
    if np.max(np.abs(bias.occupancy / bias.n_epoch - 1.0 / J)) >= c / J:
        return False
    bias.history.extend(bias.snapshot())
    bias.epoch += 1
    bias.eta /= 2.0
    bias.occupancy[:] = 0.0
    bias.n_epoch = 0
    bias.values = [[] for _ in range(J)]
    return True


def maybe_split_bin(bias: BiasPotential, min_count: int = 100, threshold: float = 0.9) -> BiasPotential:
    """Split bins whose recorded values sit mostly on one side of the midpoint.

    A bin with at least ``min_count`` values this epoch, more than
    ``threshold`` of them on one side of its midpoint, is cut at the
    within-bin median; both children inherit the parent's theta. The cut is
    skipped unless each child keeps at least ``1 - threshold`` of the values.
    End bins first stretch their outer edge to cover clamped values.
    """
    j = 0
    while j < bias.n_bins and bias.n_bins < bias.max_bins:
        vals = np.asarray(bias.values[j])
        if len(vals) < min_count:
            j += 1
            continue
        lo, hi = bias.edges[j], bias.edges[j + 1]
        if j == 0 and vals.min() < lo:
            lo = bias.edges[0] = float(vals.min())
        if j == bias.n_bins - 1 and vals.max() > hi:
            hi = bias.edges[-1] = float(np.nextafter(vals.max(), np.inf))
        mid = 0.5 * (lo + hi)
        left = np.mean(vals < mid)
        med = float(np.median(vals))
        n_left = int(np.sum(vals < med))
        frac = n_left / len(vals)
        # ties on a discrete xi can leave one child empty; such a bin could never be filled
        if max(left, 1.0 - left) > threshold and lo < med < hi and min(frac, 1.0 - frac) >= 1.0 - threshold:
            bias.edges = np.insert(bias.edges, j + 1, med)
            bias.theta = np.insert(bias.theta, j, bias.theta[j])
            occ = bias.occupancy[j]
            bias.occupancy = np.insert(bias.occupancy, j, occ * frac)
            bias.occupancy[j + 1] = occ * (1.0 - frac)
            bias.values[j:j + 1] = [list(vals[vals < med]), list(vals[vals >= med])]
            bias.n_splits += 1
        else:
            j += 1
    return bias


@dataclass
class WeightedSamples:
    states: np.ndarray
    weights: np.ndarray
    xi: np.ndarray

    def mean(self, f: Optional[Callable] = None) -> np.ndarray:
        vals = self.states if f is None else np.array([np.atleast_1d(f(s)) for s in self.states], dtype=float)
        vals = np.asarray(vals, dtype=float).reshape(len(self.weights), -1)
        return self.weights @ vals

    @property
    def effective_sample_size(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))


def importance_weights(xi, bias: BiasPotential) -> np.ndarray:
    """Normalized weights proportional to exp(theta(bin(xi))) under the final bias."""
    z = np.asarray(xi, dtype=float).reshape(-1)
    j = np.clip(np.searchsorted(bias.edges, z, side="right") - 1, 0, bias.n_bins - 1)
    lw = bias.theta[j]
    w = np.exp(lw - lw.max())
    return w / w.sum()


def importance_reweight(states, xi, bias: BiasPotential) -> WeightedSamples:
    states = np.asarray(states)
    return WeightedSamples(states, importance_weights(xi, bias), np.asarray(xi, dtype=float).reshape(-1))


class FrozenWangLandauKernel:
    """Wang-Landau step with a fixed bias; enumerable on tabular targets."""

    tag = "wl"

    def __init__(self, bias: BiasPotential, proposal, xi: Optional[Callable] = None):
        self.bias = bias
        self.proposal = proposal
        self.xi = xi

    def __call__(self, state, target, rng):
        if getattr(self.proposal, "n_states", 0) is None:
            self.proposal.n_states = target.n_states
        return wl_step(state, target, self.bias, self.proposal, rng, self.xi, self.tag)

    def proposal_matrix(self, target: TargetModel) -> np.ndarray:
        return self.proposal.matrix(target.n_states)

    def log_target(self, target: TargetModel) -> np.ndarray:
        lp = target.log_table()
        z = -lp if self.xi is None else np.array([self.xi(i) for i in range(len(lp))])
        return np.array([lp[i] - self.bias.theta[bin_index(z[i], self.bias)[0]] for i in range(len(lp))])


@dataclass
class PawlConfig:
    n_chains: int = 10
    n_bins: int = 10
    c: float = 0.9
    n_iter: int = 10_000
    pilot_iter: int = 5_000
    eta0: float = 1.0
    split: bool = True
    split_every: int = 1000
    max_bins: int = 40
    min_epoch_iter: int = 1000   # iterations (x n_chains samples) before an epoch may end
    mode: str = "sa"
    burn_in: float = 0.0         # fraction of main iterations dropped before reweighting
    store_states: bool = True
    proposal: object = None      # tabular targets: proposal with .matrix; continuous: ignored


@dataclass
class PawlResult:
    samples: Optional[WeightedSamples]
    xi: np.ndarray               # (n_iter, M)
    bias: BiasPotential
    bias_history: list
    occupancy_history: list
    pilot_xi: np.ndarray
    flat_epochs: int
    acceptance: float
    final_states: np.ndarray
    epoch_ends: list = field(default_factory=list)


def _pilot_range(pilot_xi: np.ndarray) -> tuple[float, float]:
    z = pilot_xi[len(pilot_xi) // 10:] if len(pilot_xi) > 10 else pilot_xi
    lo, hi = float(np.min(z)), float(np.max(z))
    if not hi - lo > 1e-12:
        raise SamplerError("pilot run saw a constant reaction coordinate; cannot set bin range")
    return lo, hi


def pawl_run(target: TargetModel, config: PawlConfig, seed: int = 0, init=None,
             xi: Optional[Callable] = None) -> PawlResult:
    """Pilot RWM to set [z_min, z_max], then M chains sharing one bias.

    Stream 0 drives the pilot and initial states, chain m uses stream m+1.
    Autologistic targets run through the compiled single-flip kernel.
    """
    if config.n_chains < 1:
        raise ValueError("need at least one chain")
    if target.space is Space.BINARY_LATTICE and isinstance(target.params, AutologisticParams) and xi is None:
        return _pawl_lattice(target, config, seed, init)
    return _pawl_generic(target, config, seed, init, xi)


def _pawl_generic(target, config: PawlConfig, seed, init, xi) -> PawlResult:
    M = config.n_chains
    rng0 = RngStream(seed, 0).generator()
    rngs = [RngStream(seed, m + 1).generator() for m in range(M)]
    tabular = target.space is Space.TABULAR
    if tabular:
        from .kernels import IndexRandomWalk
        proposal = config.proposal or IndexRandomWalk(1, cyclic=False, n_states=target.n_states)
        if getattr(proposal, "n_states", 0) is None:
            proposal.n_states = target.n_states
        adapt_state = None
        propose = proposal
        x0 = int(rng0.integers(0, target.n_states)) if init is None else init
    elif target.space is Space.CONTINUOUS:
        adapt_state = AdaptiveRwmState.initial(target.dimension)
        propose = lambda x, g: (rwm_propose(x, adapt_state, g), 0.0)
        x0 = rng0.standard_normal(target.dimension) if init is None else np.asarray(init, dtype=float)
    else:
        raise ValueError("generic PAWL supports tabular and continuous targets")

    # pilot: plain (unbiased) Metropolis
    from .core import mh_step
    st = ChainState.initial(target, x0)
    pilot = np.empty(config.pilot_iter + 1)
    pilot[0] = reaction_coordinate(st.position, target, xi) if xi else -st.log_density
    for n in range(config.pilot_iter):
        st, info = mh_step(st, propose, target, rng0, "pilot")
        if adapt_state is not None:
            rwm_adapt(adapt_state, info.accepted, st.position)
        pilot[n + 1] = xi(st.position) if xi else -st.log_density
    z_min, z_max = _pilot_range(pilot)
    bias = BiasPotential.uniform(z_min, z_max, config.n_bins, eta=config.eta0, c=config.c,
                                 max_bins=config.max_bins, min_epoch=config.min_epoch_iter * M)

    states = [ChainState(st.position.copy() if not tabular else st.position, st.log_density, 0)
              for _ in range(M)]
    n = config.n_iter
    xi_out = np.empty((n, M))
    d = 1 if tabular else target.dimension
    stored = np.empty((n, M, d), dtype=np.int64 if tabular else float) if config.store_states else None
    occ_hist, ends = [], []
    n_acc = 0
    bins = np.empty(M, dtype=np.int64)
    for it in range(n):
        for m in range(M):
            new, info = wl_step(states[m], target, bias, propose, rngs[m], xi)
            states[m] = new
            n_acc += info.accepted
            if adapt_state is not None:
                rwm_adapt(adapt_state, info.accepted, new.position)   # shared across chains
            z = xi(new.position) if xi else -new.log_density
            xi_out[it, m] = z
            bins[m] = info.aux_index
            if stored is not None:
                stored[it, m] = new.position
        update_bias(bias, bins, xi_out[it] if config.split else None, config.mode)
        if flat_histogram(bias):
            occ_hist.append(bias.history[-bias.n_bins:])
            ends.append(it + 1)
        elif config.split and (it + 1) % config.split_every == 0:
            maybe_split_bin(bias)
    bias.history.extend(bias.snapshot())
    start = int(config.burn_in * n)
    samples = None
    if stored is not None:
        flat_states = stored[start:].reshape(-1, d)
        if tabular:
            flat_states = flat_states[:, 0]
        samples = importance_reweight(flat_states, xi_out[start:].reshape(-1), bias)
    final = np.array([s.position for s in states])
    return PawlResult(samples, xi_out, bias, list(bias.history), occ_hist, pilot, bias.epoch,
                      n_acc / (n * M) if n else float("nan"), final, ends)


def _pawl_lattice(target, config: PawlConfig, seed, init) -> PawlResult:
    p: AutologisticParams = target.params
    M, d = config.n_chains, p.n_sites
    rng0 = RngStream(seed, 0).generator()
    block_rng = RngStream(seed, 1).generator()
    y = p.y_flat.astype(np.int64)
    x0 = rng0.integers(0, 2, size=d).astype(np.int64) if init is None else np.asarray(init, dtype=np.int64).copy()
    lp0 = float(target.log_density(x0.astype(np.int8)))
    pilot = np.empty(config.pilot_iter)
    empty = np.zeros(0)
    _, lp = _loops.flip_chain(x0, lp0, y, p.nbrs, p.degree, float(p.alpha), float(p.beta),
                              config.pilot_iter, rng0, empty, empty, pilot)
    z_min, z_max = _pilot_range(np.concatenate([[-lp0], pilot]))
    bias = BiasPotential.uniform(z_min, z_max, config.n_bins, eta=config.eta0, c=config.c,
                                 max_bins=config.max_bins, min_epoch=config.min_epoch_iter * M)
    xs = np.tile(x0, (M, 1))
    logpis = np.full(M, lp)
    n = config.n_iter
    xi_out = np.empty((n, M))
    accepts = np.zeros(M, dtype=np.int64)
    occ_hist, ends = [], []
    done = 0
    chunk = config.split_every if config.split else n
    while done < n:
        todo = min(chunk, n - done)
        k, flat, n_epoch = _loops.pawl_lattice_block(
            xs, logpis, y, p.nbrs, p.degree, float(p.alpha), float(p.beta), bias.theta, bias.edges,
            bias.eta, bias.occupancy, bias.n_epoch, max(bias.n_bins, bias.min_epoch), bias.c, todo, block_rng, xi_out[done:], accepts)
        if config.split:
            blk = xi_out[done:done + k].reshape(-1)
            jb = np.clip(np.searchsorted(bias.edges, blk, side="right") - 1, 0, bias.n_bins - 1)
            for j, z in zip(jb, blk):
                bias.values[j].append(float(z))
        bias.n_epoch = int(n_epoch)
        done += int(k)
        if flat:
            flat_histogram(bias)
            occ_hist.append(bias.history[-bias.n_bins:])
            ends.append(done)
        elif config.split:
            maybe_split_bin(bias)
    bias.history.extend(bias.snapshot())
    start = int(config.burn_in * n)
    w = importance_weights(xi_out[start:].reshape(-1), bias)
    samples = WeightedSamples(np.zeros((0, d)), w, xi_out[start:].reshape(-1))
    return PawlResult(samples, xi_out, bias, list(bias.history), occ_hist, pilot, bias.epoch,
                      float(accepts.sum()) / (n * M) if n else float("nan"), xs.astype(np.int8), ends)


def rwm_energy_run(target: TargetModel, n_iter: int, n_chains: int = 1, seed: int = 0, init=None) -> np.ndarray:
    """Unbiased single-flip Metropolis on an autologistic target; returns xi per step, shape (n_iter, M)."""
    p: AutologisticParams = target.params
    rng0 = RngStream(seed, 0).generator()
    y = p.y_flat.astype(np.int64)
    x0 = rng0.integers(0, 2, size=p.n_sites).astype(np.int64) if init is None else np.asarray(init, dtype=np.int64)
    out = np.empty((n_iter, n_chains))
    empty = np.zeros(0)
    for m in range(n_chains):
        x = x0.copy()
        lp = float(target.log_density(x.astype(np.int8)))
        col = np.empty(n_iter)
        _loops.flip_chain(x, lp, y, p.nbrs, p.degree, float(p.alpha), float(p.beta), n_iter,
                          RngStream(seed, m + 1).generator(), empty, empty, col)
        out[:, m] = col
    return out


def write_bias_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "eta", "bin_lo", "bin_hi", "theta", "occupancy"])
        for r in rows:
            w.writerow([int(r[0])] + [repr(float(v)) for v in r[1:]])
