"""Benchmark target families: Gaussian mixture, autologistic lattice, SUR, tabular."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .core import Space, TargetModel

LOG_2PI = math.log(2.0 * math.pi)


# -- two-component Gaussian mixture ---------------------------------------

@dataclass(frozen=True)
class GaussianMixtureParams:
    """Equal-weight mixture of N(m1, s1^2 I) and N(m2, s2^2 I)."""

    means: np.ndarray          # shape (2, d)
    variances: np.ndarray      # shape (2,)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.asarray(self.variances, dtype=float).reshape(-1)
        if means.shape[0] != 2 or var.shape != (2,):
            raise ValueError("need exactly two components")
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        if np.array_equal(means[0], means[1]):
            raise ValueError("component means must differ")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "_log_norm", -0.5 * means.shape[1] * (LOG_2PI + np.log(var)))

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    @classmethod
    def benchmark(cls, d: int) -> "GaussianMixtureParams":
        """Means -1/+1 in every coordinate, variances 0.5*sqrt(d/100) and sqrt(d/100)."""
        s = math.sqrt(d / 100.0)
        ones = np.ones(d)
        return cls(np.stack([-ones, ones]), np.array([0.5 * s, s]))

    @property
    def mean(self) -> np.ndarray:
        return self.means.mean(axis=0)


def _component_logpdfs(x: np.ndarray, p: GaussianMixtureParams) -> np.ndarray:
    d = p.dimension
    sq = np.sum((x[..., None, :] - p.means) ** 2, axis=-1)
    return -0.5 * d * (LOG_2PI + np.log(p.variances)) - 0.5 * sq / p.variances


def mixture_log_density(x, p: GaussianMixtureParams) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.dimension:
        raise ValueError(f"expected dimension {p.dimension}, got {x.shape[-1]}")
    if x.ndim == 1:
        # hot path for single states
        diff = x - p.means
        lc = p._log_norm - 0.5 * np.einsum("ij,ij->i", diff, diff) / p.variances
        a, b = float(lc[0]), float(lc[1])
        hi = a if a > b else b
        return hi + math.log1p(math.exp(-abs(a - b))) + math.log(0.5)
    return np.logaddexp.reduce(_component_logpdfs(x, p) + math.log(0.5), axis=-1)


def mixture_gradient(x, p: GaussianMixtureParams) -> np.ndarray:
    """Responsibility-weighted sum of the component score functions."""
    x = np.asarray(x, dtype=float)
    lc = _component_logpdfs(x, p)
    resp = np.exp(lc - logsumexp(lc))
    return np.sum(resp[:, None] * (p.means - x) / p.variances[:, None], axis=0)


def mixture_target(p: GaussianMixtureParams) -> TargetModel:
    return TargetModel(
        dimension=p.dimension, space=Space.CONTINUOUS,
        log_density=lambda x: float(mixture_log_density(x, p)),
        gradient=lambda x: mixture_gradient(x, p),
        name=f"mixture-d{p.dimension}", params=p,
    )


# -- autologistic (Ising) model -------------------------------------------

def lattice_pairs(height: int, width: int) -> np.ndarray:
    """Unordered 8-neighbour pairs on an H x W grid, no wrap-around.

    Sites are numbered row-major. Each pair appears once as (i, j), i < j.
    """
    idx = np.arange(height * width).reshape(height, width)
    out = []
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        r0, r1 = 0, height - dr
        c0, c1 = max(0, -dc), width - max(0, dc)
        a = idx[r0:r1, c0:c1]
        b = idx[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        out.append(np.stack([a.ravel(), b.ravel()], axis=1))
    pairs = np.concatenate(out)
    pairs.sort(axis=1)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def neighbour_table(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Padded neighbour lists: ``(nbrs[d, 8] with -1 padding, degree[d])``."""
    d = height * width
    nbrs = np.full((d, 8), -1, dtype=np.int64)
    deg = np.zeros(d, dtype=np.int64)
    for i, j in lattice_pairs(height, width):
        nbrs[i, deg[i]] = j
        deg[i] += 1
        nbrs[j, deg[j]] = i
        deg[j] += 1
    return nbrs, deg


@dataclass(frozen=True)
class AutologisticParams:
    """Observed binary image ``y`` (H x W) with field weight alpha and coupling beta."""

    y: np.ndarray
    alpha: float = 1.0
    beta: float = 0.7
    pairs: np.ndarray = field(init=False, repr=False)
    nbrs: np.ndarray = field(init=False, repr=False)
    degree: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 2:
            raise ValueError("y must be a 2-d image")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("y must be binary")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        object.__setattr__(self, "y", y.astype(np.int8))
        object.__setattr__(self, "pairs", lattice_pairs(*y.shape))
        nbrs, deg = neighbour_table(*y.shape)
        object.__setattr__(self, "nbrs", nbrs)
        object.__setattr__(self, "degree", deg)

    @property
    def shape(self) -> tuple[int, int]:
        return self.y.shape

    @property
    def n_sites(self) -> int:
        return self.y.size

    @property
    def y_flat(self) -> np.ndarray:
        return self.y.ravel()


def _check_sites(x, p: AutologisticParams) -> np.ndarray:
    x = np.asarray(x).reshape(-1)
    if x.size != p.n_sites:
        raise ValueError(f"expected {p.n_sites} sites, got {x.size}")
    return x


def autologistic_suff_stats(x, p: AutologisticParams) -> tuple[int, int]:
    """(s1, s2): agreements with the observed image, agreeing neighbour pairs."""
    x = _check_sites(x, p)
    s1 = int(np.count_nonzero(x == p.y_flat))
    s2 = int(np.count_nonzero(x[p.pairs[:, 0]] == x[p.pairs[:, 1]]))
    return s1, s2


def autologistic_log_density_unnorm(x, p: AutologisticParams) -> float:
    s1, s2 = autologistic_suff_stats(x, p)
    return p.alpha * s1 + p.beta * s2


def autologistic_site_conditional(x, i: int, p: AutologisticParams) -> float:
    """P(x_i = 1 | rest)."""
    x = _check_sites(x, p)
    nb = p.nbrs[i, : p.degree[i]]
    ones = int(np.count_nonzero(x[nb] == 1))
    eta = p.alpha * (2 * int(p.y_flat[i]) - 1) + p.beta * (2 * ones - p.degree[i])
    return float(expit(eta))


def autologistic_target(p: AutologisticParams) -> TargetModel:
    return TargetModel(
        dimension=p.n_sites, space=Space.BINARY_LATTICE,
        log_density=lambda x: autologistic_log_density_unnorm(x, p),
        name=f"autologistic-{p.shape[0]}x{p.shape[1]}", params=p,
    )


def enumerate_binary_states(n_sites: int) -> np.ndarray:
    """All 2^n binary vectors; row k is the binary expansion of k (site 0 = MSB)."""
    k = np.arange(2 ** n_sites)[:, None]
    return ((k >> np.arange(n_sites - 1, -1, -1)) & 1).astype(np.int8)


def binary_state_index(x) -> int:
    x = np.asarray(x).reshape(-1)
    return int(np.dot(x.astype(np.int64), 1 << np.arange(len(x) - 1, -1, -1)))


def autologistic_exact(p: AutologisticParams) -> np.ndarray:
    """Brute-force normalized probabilities over all 2^d states (d <= 16)."""
    if p.n_sites > 16:
        raise ValueError("brute-force enumeration is limited to 16 sites")
    states = enumerate_binary_states(p.n_sites)
    s1 = np.count_nonzero(states == p.y_flat, axis=1)
    s2 = np.count_nonzero(states[:, p.pairs[:, 0]] == states[:, p.pairs[:, 1]], axis=1)
    logp = p.alpha * s1 + p.beta * s2
    return np.exp(logp - logsumexp(logp))


# -- seemingly unrelated regression ----------------------------------------

class SingularCovarianceError(ValueError):
    """Residual covariance is singular (perfect fit)."""


@dataclass(frozen=True)
class SurData:
    """M regression equations sharing n observations.

    ``ys`` has shape (M, n), ``xs`` shape (M, n, J). Coefficients are stacked
    equation by equation into a vector of length M*J.
    """

    ys: np.ndarray
    xs: np.ndarray

    def __post_init__(self):
        ys = np.atleast_2d(np.asarray(self.ys, dtype=float))
        xs = np.asarray(self.xs, dtype=float)
        if xs.ndim == 2:
            xs = xs[:, :, None]
        if xs.shape[:2] != ys.shape:
            raise ValueError("xs must have shape (M, n, J) matching ys (M, n)")
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "xs", xs)

    @property
    def n_equations(self) -> int:
        return self.ys.shape[0]

    @property
    def n_obs(self) -> int:
        return self.ys.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.xs.shape[2]

    @property
    def n_coef(self) -> int:
        return self.n_equations * self.n_covariates

    def residuals(self, beta) -> np.ndarray:
        """Residual matrix of shape (n, M)."""
        b = np.asarray(beta, dtype=float).reshape(self.n_equations, self.n_covariates)
        return (self.ys - np.einsum("mnj,mj->mn", self.xs, b)).T

    def residual_covariance(self, beta) -> np.ndarray:
        r = self.residuals(beta)
        return r.T @ r / self.n_obs

    def swapped(self) -> "SurData":
        """The same system with the equations relabelled."""
        return SurData(self.ys[::-1].copy(), self.xs[::-1].copy())


def sur_profile_loglik(beta, data: SurData) -> float:
    """-(nM/2) log(2 pi) - (n/2) log|S(beta)| - nM/2 with S the ML residual covariance.

    For the bivariate system this is -n log(2 pi) - (n/2) log|S| - n.
    """
    s = data.residual_covariance(beta)
    sign, logdet = np.linalg.slogdet(s)
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularCovarianceError("residual covariance is singular")
    n, m = data.n_obs, data.n_equations
    return -0.5 * n * m * LOG_2PI - 0.5 * n * logdet - 0.5 * n * m


def sur_profile_gradient(beta, data: SurData) -> np.ndarray:
    """d ell / d beta_m = X_m' R S^{-1} e_m."""
    r = data.residuals(beta)
    s = r.T @ r / data.n_obs
    w = np.linalg.solve(s, r.T).T          # R S^{-1}, shape (n, M)
    return np.einsum("mnj,nm->mj", data.xs, w).reshape(-1)


@dataclass
class IglsResult:
    beta: np.ndarray
    sigma: np.ndarray
    iterations: int
    converged: bool


def _gls(data: SurData, sigma: np.ndarray) -> np.ndarray:
    m, j = data.n_equations, data.n_covariates
    w = np.linalg.inv(sigma)
    a = np.zeros((m * j, m * j))
    b = np.zeros(m * j)
    for p in range(m):
        for q in range(m):
            a[p * j:(p + 1) * j, q * j:(q + 1) * j] = w[p, q] * data.xs[p].T @ data.xs[q]
            b[p * j:(p + 1) * j] += w[p, q] * data.xs[p].T @ data.ys[q]
    return np.linalg.solve(a, b)


def zellner_igls(data: SurData, tol: float = 1e-10, max_iter: int = 1000,
                 sigma0: Optional[np.ndarray] = None) -> IglsResult:
    """Iterated feasible GLS.

    Starts from ``sigma0`` (identity by default), alternates the GLS update of
    the coefficients and the ML residual covariance, and stops once the
    coefficient change is below ``tol`` in max-norm. Running out of
    iterations is reported through ``converged=False``.
    """
    for m in range(data.n_equations):
        if np.linalg.matrix_rank(data.xs[m]) < data.n_covariates:
            raise np.linalg.LinAlgError(f"design matrix of equation {m} is rank deficient")
    sigma = np.eye(data.n_equations) if sigma0 is None else np.asarray(sigma0, dtype=float)
    beta = _gls(data, sigma)
    for it in range(1, max_iter + 1):
        sigma = data.residual_covariance(beta)
        new = _gls(data, sigma)
        if np.max(np.abs(new - beta)) < tol:
            return IglsResult(new, data.residual_covariance(new), it, True)
        beta = new
    return IglsResult(beta, data.residual_covariance(beta), max_iter, False)


def sur_target(data: SurData, prior_sd: Optional[float] = 10.0) -> TargetModel:
    """Profile likelihood as a density over the coefficients.

    ``prior_sd`` adds an independent N(0, prior_sd^2) factor per coefficient;
    the profile likelihood has polynomial tails, and the factor keeps every
    tempered power of the target proper. ``None`` disables it.
    """
    def logd(beta):
        try:
            v = sur_profile_loglik(beta, data)
        except SingularCovarianceError:
            return -math.inf
        if prior_sd is not None:
            v -= 0.5 * float(np.dot(beta, beta)) / prior_sd ** 2
        return v

    def grad(beta):
        g = sur_profile_gradient(beta, data)
        if prior_sd is not None:
            g = g - np.asarray(beta, dtype=float) / prior_sd ** 2
        return g

    return TargetModel(dimension=data.n_coef, space=Space.CONTINUOUS, log_density=logd,
                       gradient=grad, name="sur", params=data)


# -- tabular ---------------------------------------------------------------

@dataclass(frozen=True)
class TabularTarget:
    probabilities: np.ndarray
    adjacency: Optional[Sequence[Sequence[int]]] = None

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or np.any(p <= 0):
            raise ValueError("probabilities must be a positive vector")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1 within 1e-12")
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def from_log(cls, logp, adjacency=None) -> "TabularTarget":
        logp = np.asarray(logp, dtype=float)
        p = np.exp(logp - logsumexp(logp))
        return cls(p / p.sum(), adjacency)

    @property
    def n_states(self) -> int:
        return len(self.probabilities)

    def model(self) -> TargetModel:
        logp = np.log(self.probabilities)
        n = len(logp)

        def logd(i):
            i = int(np.asarray(i).reshape(-1)[0]) if np.ndim(i) else int(i)
            return float(logp[i]) if 0 <= i < n else -math.inf

        return TargetModel(dimension=1, space=Space.TABULAR, log_density=logd,
                           exact_table=self.probabilities, name=f"tabular-{n}", params=self)


def bimodal_table(n: int = 16, separation: float = 6.0) -> TabularTarget:
    """Two well separated bumps on ``n`` ordered states, unequal heights."""
    s = np.arange(n, dtype=float)
    a, b = (n - 1) * 0.2, (n - 1) * 0.8
    width = n / separation
    logp = np.logaddexp(-0.5 * ((s - a) / width) ** 2, math.log(0.6) - 0.5 * ((s - b) / (0.7 * width)) ** 2)
    return TabularTarget.from_log(logp)
