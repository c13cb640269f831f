"""Exact small-space oracles and sampling metrics.

Transition matrices are built exactly for kernels whose proposals can be
enumerated on a tabular space. Spectral gaps, conductance and the Cheeger
sandwich are computed from those matrices; RMSE/sqrt(d), total variation and
round-trip rates summarize sampler output.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .core import Trace, TargetModel

ROW_TOL = 1e-12
REVERSIBLE_TOL = 1e-10
MAX_EXACT_CUT = 16


@dataclass
class ExactKernelMatrix:
    """Row-stochastic matrix P with stationary vector pi."""

    P: np.ndarray
    pi: np.ndarray
    reversible: bool = field(init=False)

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.pi = np.asarray(self.pi, dtype=float)
        n = len(self.pi)
        if self.P.shape != (n, n):
            raise ValueError("P must be n x n with n = len(pi)")
        if np.any(self.P < -ROW_TOL) or np.max(np.abs(self.P.sum(axis=1) - 1.0)) > ROW_TOL * max(1, n):
            raise ValueError("P is not row-stochastic")
        self.reversible = self.detailed_balance_residual() <= REVERSIBLE_TOL

    @property
    def n(self) -> int:
        return len(self.pi)

    def flow(self) -> np.ndarray:
        return self.pi[:, None] * self.P

    def detailed_balance_residual(self) -> float:
        f = self.flow()
        return float(np.max(np.abs(f - f.T)))

    def stationarity_residual(self) -> float:
        return float(np.max(np.abs(self.pi @ self.P - self.pi)))


def metropolize(Q: np.ndarray, log_target: np.ndarray) -> np.ndarray:
    """Exact MH matrix: P(x,y) = Q(x,y) min{1, pi(y)Q(y,x) / (pi(x)Q(x,y))} off the diagonal.

    Rejected mass, including proposals into zero-density states, stays on
    the diagonal.
    """
    Q = np.asarray(Q, dtype=float)
    lp = np.asarray(log_target, dtype=float)
    n = len(lp)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = lp[None, :] + np.log(Q.T) - lp[:, None] - np.log(Q)
    acc = np.where(Q > 0, np.minimum(1.0, np.exp(np.minimum(log_ratio, 0.0))), 0.0)
    acc[:, lp == -np.inf] = 0.0
    P = Q * acc
    P[np.arange(n), np.arange(n)] = 0.0
    P[np.arange(n), np.arange(n)] = 1.0 - P.sum(axis=1)
    return P


def build_transition_matrix(kernel, target: TargetModel) -> ExactKernelMatrix:
    """Exact transition matrix of a frozen kernel on a tabular target.

    Kernels expose either ``transition_matrix(target)`` (e.g. Gibbs, where
    the proposal is always accepted) or ``proposal_matrix(target)``, in
    which case the MH acceptance is applied against
    ``kernel.log_target(target)`` (default: the target's log table).
    """
    n = target.n_states
    if n > 4096:
        raise ValueError("exact matrices are limited to 4096 states")
    if hasattr(kernel, "transition_matrix"):
        P = kernel.transition_matrix(target)
    elif hasattr(kernel, "proposal_matrix"):
        lt = kernel.log_target(target) if hasattr(kernel, "log_target") else target.log_table()
        P = metropolize(kernel.proposal_matrix(target), lt)
    else:
        raise TypeError(f"{type(kernel).__name__} is not enumerable on a tabular space")
    pi = stationary_of(kernel, target)
    return ExactKernelMatrix(P, pi)


def stationary_of(kernel, target: TargetModel) -> np.ndarray:
    """The distribution the kernel is built to leave invariant."""
    if hasattr(kernel, "log_target"):
        lt = np.asarray(kernel.log_target(target), dtype=float)
        w = np.exp(lt - lt.max())
        return w / w.sum()
    return target.exact_table


@dataclass
class SpectralResult:
    right_gap: float
    absolute_gap: float
    eigenvalues: np.ndarray


def spectral_gap(m: ExactKernelMatrix) -> SpectralResult:
    """Gaps of P restricted to the mean-zero subspace (constant eigenvector removed).

    Reversible chains use the symmetrized matrix D^{1/2} P D^{-1/2}; other
    chains use complex eigenvalues, with the right gap taken from real parts.
    """
    n = m.n
    if n == 1:
        return SpectralResult(1.0, 1.0, np.zeros(0))
    if m.reversible and np.all(m.pi > 0):
        s = np.sqrt(m.pi)
        S = s[:, None] * m.P / s[None, :]
        S = 0.5 * (S + S.T)
        B = linalg.null_space(s[None, :])
        ev = np.sort(linalg.eigvalsh(B.T @ S @ B))[::-1]
        lam2 = float(ev[0])
        mod = float(np.max(np.abs(ev)))
    else:
        B = linalg.null_space(m.pi[None, :])
        ev = linalg.eigvals(B.T @ m.P @ B)
        ev = ev[np.argsort(-ev.real)]
        lam2 = float(np.max(ev.real))
        mod = float(np.max(np.abs(ev)))
    return SpectralResult(1.0 - lam2, 1.0 - mod, ev)


@dataclass
class ConductanceReport:
    kappa: float
    argmin: tuple
    exact: bool = True
    table: Optional[dict] = None

    @property
    def label(self) -> str:
        return "exact" if self.exact else "estimate"


def _cut_values(flow: np.ndarray, pi: np.ndarray, masks: np.ndarray):
    a = masks.astype(float)
    out = np.einsum("kx,xy,ky->k", a, flow, 1.0 - a)
    pa = a @ pi
    return out, pa


def conductance(m: ExactKernelMatrix, keep_table: bool = False, n_samples: int = 20000,
                rng: Optional[np.random.Generator] = None) -> ConductanceReport:
    """kappa = min_A Q(A, A^c) / (pi(A) pi(A^c)).

    For reversible chains the minimum runs over 0 < pi(A) <= 1/2. Up to 16
    states every cut is enumerated; larger chains get a random-cut estimate
    (an upper bound on the true minimum), flagged ``exact=False``.
    """
    n = m.n
    flow = m.flow()
    if n <= MAX_EXACT_CUT:
        codes = np.arange(1, 2 ** n - 1, dtype=np.int64)
        exact = True
    else:
        g = rng if rng is not None else np.random.default_rng(0)
        codes = None
        exact = False
    if exact:
        masks = ((codes[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    else:
        masks = g.random((n_samples, n)) < 0.5
        masks = masks[(masks.any(axis=1)) & (~masks.all(axis=1))]
    num, pa = _cut_values(flow, m.pi, masks)
    denom = pa * (1.0 - pa)
    ok = denom > 0
    if m.reversible:
        ok &= pa <= 0.5 + 1e-12
    vals = np.full(len(masks), np.inf)
    vals[ok] = num[ok] / denom[ok]
    k = int(np.argmin(vals))
    kappa = float(vals[k]) if np.isfinite(vals[k]) else 0.0
    table = None
    if keep_table:
        table = {tuple(np.flatnonzero(mk)): float(v) for mk, v in zip(masks, vals) if np.isfinite(v)}
    return ConductanceReport(kappa, tuple(int(i) for i in np.flatnonzero(masks[k])), exact, table)


@dataclass
class CheegerResult:
    holds: bool
    kappa: float
    gap: float
    lower_margin: float   # gap - kappa^2/8
    upper_margin: float   # kappa - gap


def cheeger_check(m: ExactKernelMatrix, slack: float = 1e-9) -> CheegerResult:
    """Check kappa^2/8 <= 1 - lambda_2 <= kappa, inclusive with ``slack``."""
    if not m.reversible:
        raise ValueError("the Cheeger sandwich is stated for reversible chains")
    kappa = conductance(m).kappa
    gap = spectral_gap(m).right_gap
    lo = gap - kappa ** 2 / 8
    hi = kappa - gap
    return CheegerResult(lo >= -slack and hi >= -slack, kappa, gap, lo, hi)


@dataclass
class JumpGapResult:
    w_star: float
    inverse_w_star: float
    gap: float
    match: bool


def independence_matrix(pi, q) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore"):
        return metropolize(np.tile(q, (len(q), 1)), np.log(pi))


def jump_gap_check(pi, q, tol: float = 1e-8) -> JumpGapResult:
    """Compare the exact gap of the independence sampler with 1/w*, w* = max pi/q."""
    pi = np.asarray(pi, dtype=float)
    q = np.asarray(q, dtype=float)
    if pi.shape != q.shape:
        raise ValueError("pi and q must have the same support")
    if np.any((q <= 0) & (pi > 0)):
        raise ValueError("proposal has zero mass on a supported state")
    support = pi > 0
    w_star = float(np.max(pi[support] / q[support]))
    m = ExactKernelMatrix(independence_matrix(pi, q), pi)
    gap = spectral_gap(m).right_gap
    return JumpGapResult(w_star, 1.0 / w_star, gap, abs(gap - 1.0 / w_star) <= tol)


def inhomogeneity_factor(sigma_target, sigma_proposal) -> float:
    """b = d sum(l^-1) / (sum(l^-1/2))^2, l the eigenvalues of Sigma_target^{-1} Sigma_proposal."""
    a = np.atleast_2d(np.asarray(sigma_target, dtype=float))
    b = np.atleast_2d(np.asarray(sigma_proposal, dtype=float))
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise ValueError("covariances must be square with equal dimension")
    for mat in (a, b):
        if not np.allclose(mat, mat.T, rtol=1e-10, atol=1e-12):
            raise ValueError("covariance is not symmetric")
        try:
            np.linalg.cholesky(mat)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive-definite") from exc
    lam = linalg.eigh(b, a, eigvals_only=True)
    d = len(lam)
    return float(d * np.sum(1.0 / lam) / np.sum(lam ** -0.5) ** 2)


def rmse_over_sqrt_d(trace, true_mean) -> float:
    """Euclidean error of the ergodic mean, divided by sqrt(d)."""
    states = trace.states if isinstance(trace, Trace) else np.asarray(trace, dtype=float)
    states = np.atleast_2d(states) if states.ndim > 1 else states[:, None]
    if len(states) == 0:
        raise ValueError("empty trace")
    mu = np.asarray(true_mean, dtype=float).reshape(-1)
    err = states.mean(axis=0) - mu
    return float(np.linalg.norm(err) / math.sqrt(len(mu)))


def round_trip_rate(labels, n_levels: Optional[int] = None) -> float:
    """Completed hottest -> coldest -> hottest trips per replica per sweep.

    ``labels[s, l]`` is the replica at level ``l`` (0 = coldest) after
    sweep ``s``; row 0 is the initial assignment.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n_sweeps = len(labels) - 1
    L = labels.shape[1] if n_levels is None else n_levels
    if L < 2 or n_sweeps < 1:
        return 0.0
    ids = np.sort(labels[0])
    index = {int(r): k for k, r in enumerate(ids)}
    phase = np.zeros(L, dtype=np.int8)    # 0 unseen, 1 left hot end, 2 reached cold end
    trips = 0
    for row in labels:
        hot, cold = index[int(row[L - 1])], index[int(row[0])]
        if phase[hot] == 2:
            trips += 1
        phase[hot] = 1
        if phase[cold] == 1:
            phase[cold] = 2
    return trips / (L * n_sweeps)


def tv_distance(hist, probs) -> float:
    """0.5 * sum |p_hat - p|; ``hist`` may be raw counts."""
    h = np.asarray(hist, dtype=float).reshape(-1)
    p = np.asarray(probs, dtype=float).reshape(-1)
    if h.shape != p.shape:
        raise ValueError("support mismatch between histogram and probabilities")
    if h.sum() <= 0:
        raise ValueError("empty histogram")
    return float(0.5 * np.sum(np.abs(h / h.sum() - p / p.sum())))


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        if np.iscomplexobj(v):
            return [[float(z.real), float(z.imag)] for z in v.reshape(-1)]
        return _jsonable(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if hasattr(v, "__dataclass_fields__"):
        return _jsonable({k: getattr(v, k) for k in v.__dataclass_fields__})
    return v


def report_json(**fields) -> str:
    """Serialize named diagnostics (kappa, gaps, b, rmse, tv, ...) to JSON."""
    return json.dumps(_jsonable(fields), indent=2, sort_keys=True)


def write_report(path, **fields) -> None:
    with open(path, "w") as fh:
        fh.write(report_json(**fields) + "\n")
