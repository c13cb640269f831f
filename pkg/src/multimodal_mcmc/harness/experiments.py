"""Experiment runner and desk-scale benchmarks."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..core import ChainState, RngStream, Space, Trace, run_chain, write_trace_csv
from ..diagnostics import rmse_over_sqrt_d, round_trip_rate, tv_distance, write_report
from ..kernels import (AdaptiveRwmKernel, AdaptiveRwmState, GibbsSweepKernel, IndexRandomWalk,
                       MetropolisKernel, SiteFlipProposal)
from ..mode_jump import JamsConfig, RamConfig, RamKernel, find_modes, find_stationary_points, jams_run
from ..targets import (AutologisticParams, GaussianMixtureParams, TabularTarget, autologistic_target,
                       bimodal_table, mixture_target, sur_target, zellner_igls)
from ..tempering import TemperatureLadder, pt_run, write_replica_csv
from ..wang_landau import PawlConfig, pawl_run, rwm_energy_run, write_bias_csv
from .config import ConfigError, ExperimentConfig, load_config, serialize_config
from .data import bimodal_sur_data, ingest_grid, synth_ice
from .plots import emit_plots, plot_xi_histogram

THREADS_ENV = "MMCMC_THREADS"


def thread_count() -> int:
    v = os.environ.get(THREADS_ENV)
    if v:
        n = int(v)
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer")
        return n
    return os.cpu_count() or 1


def git_blob_sha1(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# -- targets ----------------------------------------------------------------------

def build_target(cfg: ExperimentConfig):
    """Return (target, exact mean or None)."""
    t = cfg.target
    fam = t["family"]
    if fam == "mixture":
        p = GaussianMixtureParams.benchmark(t["dimension"])
        return mixture_target(p), p.mean
    if fam == "autologistic":
        y = ingest_grid(t["grid"]) if t["grid"] else synth_ice(t["height"], t["width"], t["image_seed"])
        return autologistic_target(AutologisticParams(y, t["alpha"], t["beta"])), None
    if fam == "sur":
        return sur_target(bimodal_sur_data(), t["prior_sd"]), None
    if fam == "tabular":
        tab = bimodal_table(t["n_states"], t["separation"])
        return tab.model(), np.array([tab.probabilities @ np.arange(tab.n_states)])
    raise ValueError(fam)


def _initial(target, seed: int):
    g = RngStream(seed, 0).generator()
    if target.space is Space.CONTINUOUS:
        if target.name.startswith("sur"):
            return zellner_igls(target.params).beta
        return g.standard_normal(target.dimension)
    if target.space is Space.BINARY_LATTICE:
        return g.integers(0, 2, target.dimension).astype(np.int8)
    return int(g.integers(0, target.n_states))


# -- single experiment -----------------------------------------------------------------

def run_replicate(cfg: ExperimentConfig, target, true_mean, seed: int, out: Path, tag: str) -> dict:
    """Run one replicate; write its files under ``out``; return diagnostics."""
    s = cfg.sampler
    e = cfg.experiment
    n = e["n_iter"]
    kind = s["kind"]
    diag: dict = {"sampler": kind, "seed": seed}
    t0 = time.perf_counter()
    trace: Optional[Trace] = None
    weights = None
    if kind in ("rwm", "gibbs", "ram"):
        if kind == "gibbs":
            if target.space is not Space.BINARY_LATTICE:
                raise ConfigError("sampler.kind = gibbs needs target.family = autologistic")
            kernel = GibbsSweepKernel(target.params)
        elif kind == "ram":
            if target.space is not Space.CONTINUOUS:
                raise ConfigError("sampler.kind = ram needs a continuous target (mixture or sur)")
            kernel = RamKernel(RamConfig(s["ram_scale"], s["max_inner"]))
        elif target.space is Space.CONTINUOUS:
            kernel = AdaptiveRwmKernel(AdaptiveRwmState.initial(target.dimension))
        elif target.space is Space.BINARY_LATTICE:
            kernel = MetropolisKernel(SiteFlipProposal(target.dimension), "flip")
        else:
            kernel = MetropolisKernel(IndexRandomWalk(s["step"], cyclic=s["cyclic"], n_states=target.n_states), "rw")
        trace = run_chain(target, kernel, _initial(target, seed), n, RngStream(seed, 1))
    elif kind == "apt":
        ladder = TemperatureLadder.geometric(s["n_levels"], s["beta_min"])
        res = pt_run(target, ladder, n, s["schedule"], s["adapt"], s["common_covariance"], seed,
                     init=_initial(target, seed), stats_from=e["burn_in"])
        trace = res.cold
        write_replica_csv(out / f"replicas_{tag}.csv", res.labels)
        diag.update(swap_rates=res.swap_rates, betas=res.ladder.betas,
                    round_trip_rate=round_trip_rate(res.labels[e["burn_in"]:]))
    elif kind == "pawl":
        pc = PawlConfig(n_chains=s["n_chains"], n_bins=s["n_bins"], c=s["flat_c"], n_iter=n,
                        pilot_iter=s["pilot_iter"], split=s["split"], burn_in=e["burn_in"] / n,
                        max_bins=s["max_bins"], min_epoch_iter=s["min_epoch_iter"],
                        store_states=target.space is not Space.BINARY_LATTICE)
        if target.space is Space.TABULAR:
            pc.proposal = IndexRandomWalk(s["step"], cyclic=s["cyclic"], n_states=target.n_states)
        res = pawl_run(target, pc, seed)
        write_bias_csv(out / f"bias_{tag}.csv", res.bias_history)
        diag.update(flat_epochs=res.flat_epochs, n_bins=res.bias.n_bins, acceptance=res.acceptance,
                    xi_range=float(np.ptp(res.xi)))
        # weighted sample set: rows in (iteration, chain) order after burn-in
        samp = res.samples
        if target.space is Space.BINARY_LATTICE:
            states = samp.xi[:, None]
        else:
            states = np.asarray(samp.states, dtype=float).reshape(len(samp.weights), -1)
        m = len(states)
        trace = Trace(states, np.ones(max(m - 1, 0), bool), ["wl"] * max(m - 1, 0),
                      np.full(max(m - 1, 0), -1), Space.CONTINUOUS)
        weights = samp.weights
        if true_mean is not None and target.space is not Space.BINARY_LATTICE:
            diag["rmse_over_sqrt_d"] = float(np.linalg.norm(samp.mean() - true_mean) / np.sqrt(len(true_mean)))
    elif kind == "jams":
        jc = JamsConfig(n_iter=n, n_phase2=s["n_phase2"], jump_prob=s["jump_prob"], n_starts=s["n_starts"],
                        start_sd=s["start_sd"], family=s["kernel_family"], dof=s["dof"])
        res = jams_run(target, None, jc, seed)
        trace = res.trace
        (out / f"atlas_{tag}.json").write_text(res.atlas.to_json() + "\n")
        diag.update(n_modes=res.atlas.k, jump_acceptance=res.state.jump_acceptance,
                    local_acceptance=res.state.local_acceptance)
    else:
        raise ValueError(kind)
    diag["elapsed_seconds"] = time.perf_counter() - t0
    extra = {"weight": weights} if weights is not None else None
    write_trace_csv(out / f"trace_{tag}.csv", trace, extra)
    if kind != "pawl":
        post = trace.states[e["burn_in"]:]
        diag["acceptance_rate"] = trace.acceptance_rate
        if true_mean is not None:
            diag["rmse_over_sqrt_d"] = rmse_over_sqrt_d(post, true_mean)
        if target.space is Space.TABULAR:
            counts = np.bincount(post[:, 0].astype(int), minlength=target.n_states)
            diag["tv_distance"] = tv_distance(counts, target.exact_table)
    write_report(out / f"diagnostics_{tag}.json", **diag)
    return diag


def run_experiment(config_path, output_dir=None) -> Path:
    """Run every replicate of a config; write traces, diagnostics and a manifest."""
    cfg = load_config(config_path)
    out = Path(output_dir or cfg.experiment["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    target, true_mean = build_target(cfg)
    kind, space = cfg.sampler["kind"], target.space
    if kind == "gibbs" and space is not Space.BINARY_LATTICE:
        raise ConfigError("sampler.kind = gibbs needs target.family = autologistic", path=str(config_path))
    if kind in ("ram", "jams") and space is not Space.CONTINUOUS:
        raise ConfigError(f"sampler.kind = {kind} needs a continuous target (mixture or sur)",
                          path=str(config_path))
    base = cfg.experiment["seed"]
    reps = cfg.experiment["replicates"]
    jobs = [(base + r, f"r{r}") for r in range(reps)]
    with ThreadPoolExecutor(max_workers=min(thread_count(), reps)) as pool:
        list(pool.map(lambda j: run_replicate(cfg, target, true_mean, j[0], out, j[1]), jobs))
    write_manifest(cfg, out)
    return out


def write_manifest(cfg: ExperimentConfig, out: Path) -> str:
    """Manifest with the canonical config, per-trace blob hashes and a combined hash."""
    text = serialize_config(cfg)
    traces = sorted(out.glob("trace_*.csv"))
    files = {p.name: git_blob_sha1(p.read_bytes()) for p in traces}
    payload = text.encode() + b"".join(p.read_bytes() for p in traces)
    digest = git_blob_sha1(payload)
    manifest = {"config": text, "files": files, "hash": digest}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return digest


# -- benchmarks ------------------------------------------------------------------------

@dataclass
class BenchmarkResult:
    sampler: str
    dimension: int
    replicate: int
    rmse: float
    seconds: float
    acceptance: float
    extra: dict = field(default_factory=dict)


MIXTURE_BUDGET = {"rwm": 100_000, "apt": 150_000, "pawl": 50_000, "jams": 100_000}
PAWL_PILOT = 10_000


def mixture_run(sampler: str, d: int, seed: int, scale: float = 1.0) -> BenchmarkResult:
    """One replicate of one sampler on the d-dimensional benchmark mixture."""
    p = GaussianMixtureParams.benchmark(d)
    target = mixture_target(p)
    n = max(int(MIXTURE_BUDGET[sampler] * scale), 10)
    x0 = RngStream(seed, 0).generator().standard_normal(d)
    t0 = time.perf_counter()
    extra = {}
    if sampler == "rwm":
        tr = run_chain(target, AdaptiveRwmKernel(AdaptiveRwmState.initial(d)), x0, n, RngStream(seed, 1))
        rmse, acc = rmse_over_sqrt_d(tr, p.mean), tr.acceptance_rate
    elif sampler == "apt":
        res = pt_run(target, TemperatureLadder.geometric(5), n, "deo", True, False, seed, init=x0,
                     stats_from=n // 2)
        rmse, acc = rmse_over_sqrt_d(res.cold, p.mean), res.cold.acceptance_rate
        extra = {"swap_rates": res.swap_rates.tolist()}
    elif sampler == "pawl":
        res = pawl_run(target, PawlConfig(n_chains=4, n_bins=10, n_iter=n,
                                          pilot_iter=max(int(PAWL_PILOT * scale), 100)), seed, init=x0)
        rmse = float(np.linalg.norm(res.samples.mean() - p.mean) / np.sqrt(d))
        acc = res.acceptance
        extra = {"flat_epochs": res.flat_epochs, "n_bins": res.bias.n_bins}
    elif sampler == "jams":
        res = jams_run(target, None, JamsConfig(n_iter=n), seed)
        rmse, acc = rmse_over_sqrt_d(res.trace, p.mean), res.trace.acceptance_rate
        extra = {"n_modes": res.atlas.k, "jump_acceptance": res.state.jump_acceptance}
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    return BenchmarkResult(sampler, d, seed, float(rmse), time.perf_counter() - t0, float(acc), extra)


def mixture_benchmark(out_dir, dims=(2, 4, 8, 16), samplers=("rwm", "apt", "pawl", "jams"),
                      replicates: int = 3, scale: float = 1.0, seed: int = 0) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(s, d, seed + r) for s in samplers for d in dims for r in range(replicates)]
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        results = list(pool.map(lambda j: mixture_run(j[0], j[1], j[2], scale), jobs))
    rows = [dict(asdict(r), extra=json.dumps(r.extra)) for r in results]
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    emit_plots([asdict(r) for r in results], out)
    return results


def ising_benchmark(out_dir, size: int = 40, n_iter: int = 200_000, n_chains: int = 4, grid=None,
                    seed: int = 0, n_bins: int = 10) -> dict:
    """PAWL against single-flip Metropolis on the autologistic model; xi ranges and histogram."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    y = ingest_grid(grid) if grid else synth_ice(size, size, seed)
    target = autologistic_target(AutologisticParams(y, 1.0, 0.7))
    # long epochs keep eta large enough for theta to follow the bins added at the upper edge
    res = pawl_run(target, PawlConfig(n_chains=n_chains, n_bins=n_bins, n_iter=n_iter,
                                      pilot_iter=n_iter // 10, store_states=False, max_bins=100,
                                      min_epoch_iter=max(1000, n_iter // 10)), seed)
    rwm = rwm_energy_run(target, n_iter, n_chains, seed)
    burn = n_iter // 4
    summary = {
        "n_sites": int(y.size), "pawl_xi_range": float(np.ptp(res.xi[burn:])),
        "rwm_xi_range": float(np.ptp(rwm[burn:])), "flat_epochs": res.flat_epochs,
        "n_bins": res.bias.n_bins, "pawl_acceptance": res.acceptance,
    }
    summary["range_ratio"] = summary["pawl_xi_range"] / max(summary["rwm_xi_range"], 1e-300)
    write_bias_csv(out / "bias.csv", res.bias_history)
    np.savetxt(out / "xi_pawl.txt", res.xi[burn:].reshape(-1)[:: max(1, n_chains)], fmt="%.6f")
    np.savetxt(out / "xi_rwm.txt", rwm[burn:].reshape(-1)[:: max(1, n_chains)], fmt="%.6f")
    write_report(out / "ising_summary.json", **summary)
    plot_xi_histogram(res.xi[burn:], rwm[burn:], out / "xi_histogram.svg")
    return summary


def basin_labels(target, atlas, samples, n_max: int = 400) -> np.ndarray:
    """Index of the atlas mode each sample ascends to (thinned to ``n_max`` samples)."""
    from ..mode_jump import gradient_ascent
    idx = np.linspace(0, len(samples) - 1, min(n_max, len(samples))).astype(int)
    labels = []
    for x in np.asarray(samples)[idx]:
        m, _ = gradient_ascent(x, target, tol=1e-6)
        labels.append(int(np.argmin([np.linalg.norm(m - c) for c in atlas.modes])))
    return np.array(labels)


def sur_benchmark(out_dir=None, seed: int = 0, n_sweeps: int = 30_000, prior_sd: float = 10.0) -> dict:
    """Mode count, stationary points, iterative GLS and APT basin occupancy on the bimodal SUR data."""
    data = bimodal_sur_data()
    target = sur_target(data, prior_sd)
    lik = sur_target(data, None)
    g = np.linspace(-6, 6, 13)
    starts = np.array([(a, b) for a in g for b in g])
    atlas = find_modes(lik, starts)
    pts, kinds = find_stationary_points(lik, starts)
    igls = zellner_igls(data)
    res = pt_run(target, TemperatureLadder.geometric(5, 0.05), n_sweeps, "deo", True, False, seed,
                 init=igls.beta, stats_from=n_sweeps // 2)
    post = res.cold.states[n_sweeps // 5:]
    post_atlas = find_modes(target, starts)
    lab = basin_labels(target, post_atlas, post)
    occ = np.bincount(lab, minlength=post_atlas.k) / len(lab)
    summary = {
        "n_maxima": atlas.k, "modes": atlas.modes, "n_stationary": len(pts), "stationary_kinds": kinds,
        "igls_beta": igls.beta, "igls_converged": igls.converged, "igls_iterations": igls.iterations,
        "apt_basin_occupancy": occ, "swap_rates": res.swap_rates,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report(out / "sur_summary.json", **summary)
        (out / "sur_atlas.json").write_text(atlas.to_json() + "\n")
    return summary
