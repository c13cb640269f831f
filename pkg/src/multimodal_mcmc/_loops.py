"""Inner loops that dominate runtime, written once for numba and CPython.

Every function takes a ``numpy.random.Generator`` and draws from it in a
fixed order, so the compiled and interpreted versions produce identical
output for the same generator state. Arrays are modified in place where the
docstring says so.
"""

import math

import numpy as np

from ._jit import jit


@jit
def bin_of(z, edges):
    """Half-open bin of ``z`` with clamping; ``edges`` has J+1 entries."""
    j = np.searchsorted(edges, z, side="right") - 1
    if j < 0:
        return 0
    if j > edges.shape[0] - 2:
        return edges.shape[0] - 2
    return j


@jit
def site_logit(x, y, nbrs, deg, alpha, beta, i):
    ones = 0
    for k in range(deg[i]):
        if x[nbrs[i, k]] == 1:
            ones += 1
    return alpha * (2 * y[i] - 1) + beta * (2 * ones - deg[i])


@jit
def gibbs_sweeps(x, y, nbrs, deg, alpha, beta, n_sweeps, rng, counts):
    """Systematic-scan Gibbs sweeps over all sites, updating ``x`` in place.

    When ``counts`` is non-empty, ``counts[k]`` is incremented after each
    sweep where ``k`` is the state's binary index (site 0 most significant).
    """
    d = x.shape[0]
    for _ in range(n_sweeps):
        for i in range(d):
            eta = site_logit(x, y, nbrs, deg, alpha, beta, i)
            p1 = 1.0 / (1.0 + math.exp(-eta))
            x[i] = 1 if rng.random() < p1 else 0
        if counts.shape[0] > 0:
            k = 0
            for i in range(d):
                k = 2 * k + x[i]
            counts[k] += 1


@jit
def flip_delta(x, y, nbrs, deg, alpha, beta, i):
    """Change in alpha*s1 + beta*s2 when site ``i`` is flipped."""
    agree = 0
    for k in range(deg[i]):
        if x[nbrs[i, k]] == x[i]:
            agree += 1
    ds1 = 1 - 2 * (1 if x[i] == y[i] else 0)
    ds2 = deg[i] - 2 * agree
    return alpha * ds1 + beta * ds2


@jit
def flip_chain(x, logpi, y, nbrs, deg, alpha, beta, n_steps, rng, theta, edges, xi_out):
    """Single-site flip Metropolis on the autologistic model, in place.

    Targets ``logpi - theta[bin(-logpi)]``; pass an empty ``theta`` for the
    unbiased chain. ``xi_out[n]`` receives the reaction coordinate -logpi
    after step n. Returns ``(n_accepted, logpi)``.
    """
    d = x.shape[0]
    biased = theta.shape[0] > 0
    acc = 0
    for n in range(n_steps):
        i = rng.integers(0, d)
        u = rng.random()
        delta = flip_delta(x, y, nbrs, deg, alpha, beta, i)
        log_ratio = delta
        if biased:
            log_ratio += theta[bin_of(-logpi, edges)] - theta[bin_of(-(logpi + delta), edges)]
        if log_ratio >= 0.0 or u < math.exp(log_ratio):
            x[i] = 1 - x[i]
            logpi += delta
            acc += 1
        xi_out[n] = -logpi
    return acc, logpi


@jit
def pawl_lattice_block(xs, logpis, y, nbrs, deg, alpha, beta, theta, edges, eta,
                       occupancy, n_epoch, min_epoch, c, n_iter, rng, xi_out, accepts):
    """Iterations of parallel adaptive Wang-Landau on the autologistic model.

    Each iteration moves every chain once (single-site flips targeting the
    biased density), then applies the pooled stochastic-approximation bias
    update, recentres ``theta`` and accumulates epoch occupancy. Stops after
    ``n_iter`` iterations or right after the flat-histogram test first passes;
    the test runs only once the epoch holds ``min_epoch`` samples.
    ``xs``, ``logpis``, ``theta``, ``occupancy``, ``xi_out`` (n_iter, M) and
    ``accepts`` (M,) are updated in place. Returns ``(iterations_done,
    flat, n_epoch)`` where ``n_epoch`` counts epoch samples.
    """
    m_chains, d = xs.shape
    n_bins = theta.shape[0]
    batch = np.zeros(n_bins)
    for it in range(n_iter):
        batch[:] = 0.0
        for m in range(m_chains):
            i = rng.integers(0, d)
            u = rng.random()
            x = xs[m]
            delta = flip_delta(x, y, nbrs, deg, alpha, beta, i)
            lp = logpis[m]
            log_ratio = delta + theta[bin_of(-lp, edges)] - theta[bin_of(-(lp + delta), edges)]
            if log_ratio >= 0.0 or u < math.exp(log_ratio):
                x[i] = 1 - x[i]
                lp += delta
                logpis[m] = lp
                accepts[m] += 1
            xi_out[it, m] = -lp
            batch[bin_of(-lp, edges)] += 1.0
        mean = 0.0
        for j in range(n_bins):
            theta[j] += eta * (batch[j] / m_chains - 1.0 / n_bins)
            mean += theta[j]
        mean /= n_bins
        for j in range(n_bins):
            theta[j] -= mean
            occupancy[j] += batch[j]
        n_epoch += m_chains
        if n_epoch >= min_epoch:
            worst = 0.0
            for j in range(n_bins):
                dev = abs(occupancy[j] / n_epoch - 1.0 / n_bins)
                if dev > worst:
                    worst = dev
            if worst < c / n_bins:
                return it + 1, True, n_epoch
    return n_iter, False, n_epoch


@jit
def _offset(rng, step):
    k = rng.integers(0, 2 * step)
    return k - step if k < step else k - step + 1


@jit
def tabular_rw_chain(log_target, x, n_steps, step, cyclic, rng, counts, out):
    """Metropolis chain on indices with a uniform +-1..+-step proposal.

    Out-of-range proposals wrap when ``cyclic`` else are rejected. Updates the
    histogram ``counts`` (state after each step) and, when non-empty, writes
    the path to ``out``. Returns ``(final_state, n_accepted)``.
    """
    n = log_target.shape[0]
    acc = 0
    for t in range(n_steps):
        yv = x + _offset(rng, step)
        u = rng.random()
        if cyclic:
            yv = yv % n
        if 0 <= yv < n:
            lr = log_target[yv] - log_target[x]
            if lr >= 0.0 or u < math.exp(lr):
                x = yv
                acc += 1
        counts[x] += 1
        if out.shape[0] > 0:
            out[t] = x
    return x, acc


@jit
def _tab_lp(logp, i):
    if i < 0 or i >= logp.shape[0]:
        return -np.inf
    return logp[i]


@jit
def _log_down(lp_from, lp_to):
    # log min{1, pi(from)/pi(to)}
    if lp_to == -np.inf:
        return 0.0
    return min(0.0, lp_from - lp_to)


@jit
def ram_tabular_chain(logp, x, n_steps, step, max_inner, rng, counts):
    """Repelling-attracting Metropolis on indices, R uniform on +-1..+-step.

    States outside ``[0, n)`` have zero density and may be used as
    intermediate points. Returns ``(final_state, n_accepted, n_abandoned)``.
    """
    acc = 0
    abandoned = 0
    lpx = _tab_lp(logp, x)
    for _ in range(n_steps):
        w = x + _offset(rng, step)
        log_aw = _log_down(lpx, _tab_lp(logp, w))
        ok = False
        z = x
        lpz = lpx
        for _k in range(max_inner):
            z = x + _offset(rng, step)
            lpz = _tab_lp(logp, z)
            if math.log(rng.random() + 1e-300) < _log_down(lpx, lpz):
                ok = True
                break
        yv = z
        lpy = -np.inf
        if ok:
            ok = False
            for _k in range(max_inner):
                yv = z + _offset(rng, step)
                lpy = _tab_lp(logp, yv)
                u = rng.random()
                if lpy > -np.inf:
                    lr = 0.0 if lpz == -np.inf else min(0.0, lpy - lpz)
                    if math.log(u + 1e-300) < lr:
                        ok = True
                        break
        log_aw2 = 0.0
        if ok:
            ok = False
            for _k in range(max_inner):
                w2 = yv + _offset(rng, step)
                la = _log_down(lpy, _tab_lp(logp, w2))
                if math.log(rng.random() + 1e-300) < la:
                    log_aw2 = la
                    ok = True
                    break
        if ok:
            log_a = lpy + log_aw - lpx - log_aw2
            if math.log(rng.random() + 1e-300) < log_a:
                x = yv
                lpx = lpy
                acc += 1
        else:
            abandoned += 1
        counts[x] += 1
    return x, acc, abandoned


@jit
def _mix1d_lp(z, means, sds, log_w):
    mx = -np.inf
    for k in range(means.shape[0]):
        v = log_w[k] - math.log(sds[k]) - 0.5 * ((z - means[k]) / sds[k]) ** 2
        if v > mx:
            mx = v
    s = 0.0
    for k in range(means.shape[0]):
        s += math.exp(log_w[k] - math.log(sds[k]) - 0.5 * ((z - means[k]) / sds[k]) ** 2 - mx)
    return mx + math.log(s) - 0.5 * math.log(2.0 * math.pi)


@jit
def ram_mixture1d_chain(x, means, sds, log_w, scale, n_steps, max_inner, rng, out):
    """Repelling-attracting Metropolis on a 1-d Gaussian mixture, Gaussian R.

    Same acceptance construction as :func:`ram_tabular_chain`; writes the
    path to ``out``. Returns ``(n_accepted, n_abandoned)``.
    """
    acc = 0
    abandoned = 0
    lpx = _mix1d_lp(x, means, sds, log_w)
    for t in range(n_steps):
        w = x + scale * rng.standard_normal()
        log_aw = _log_down(lpx, _mix1d_lp(w, means, sds, log_w))
        ok = False
        z = x
        lpz = lpx
        for _k in range(max_inner):
            z = x + scale * rng.standard_normal()
            lpz = _mix1d_lp(z, means, sds, log_w)
            if math.log(rng.random() + 1e-300) < _log_down(lpx, lpz):
                ok = True
                break
        yv = z
        lpy = -np.inf
        if ok:
            ok = False
            for _k in range(max_inner):
                yv = z + scale * rng.standard_normal()
                lpy = _mix1d_lp(yv, means, sds, log_w)
                if math.log(rng.random() + 1e-300) < min(0.0, lpy - lpz):
                    ok = True
                    break
        log_aw2 = 0.0
        if ok:
            ok = False
            for _k in range(max_inner):
                w2 = yv + scale * rng.standard_normal()
                la = _log_down(lpy, _mix1d_lp(w2, means, sds, log_w))
                if math.log(rng.random() + 1e-300) < la:
                    log_aw2 = la
                    ok = True
                    break
        if ok:
            if math.log(rng.random() + 1e-300) < lpy + log_aw - lpx - log_aw2:
                x = yv
                lpx = lpy
                acc += 1
        else:
            abandoned += 1
        out[t] = x
    return acc, abandoned
