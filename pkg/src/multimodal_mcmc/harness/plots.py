"""Static SVG figures for benchmark results."""

from __future__ import annotations

import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "multimodal-mcmc"
_META = {"Date": None}
MARKERS = {"rwm": "^", "pawl": "x", "apt": "o", "jams": "D", "ram": "s"}
STYLES = {"rwm": "--", "pawl": "--", "apt": ":", "jams": "-.", "ram": "-"}


def _series(results, field: str) -> dict:
    """Mean of ``field`` per (sampler, dimension)."""
    acc = {}
    for r in results:
        acc.setdefault(r["sampler"], {}).setdefault(int(r["dimension"]), []).append(float(r[field]))
    out = {}
    for s, by_d in acc.items():
        dims = sorted(by_d)
        out[s] = (np.array(dims), np.array([np.mean(by_d[d]) for d in dims]))
    return out


def _line_plot(series: dict, path, ylabel: str, logy: bool) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    drawn = 0
    for name in sorted(series):
        x, y = series[name]
        if len(x) == 0:
            warnings.warn(f"empty series for {name}; omitted")
            continue
        ax.plot(x, y, STYLES.get(name, "-"), marker=MARKERS.get(name, "."), label=name.upper())
        drawn += 1
    ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("dimension d")
    ax.set_ylabel(ylabel)
    if drawn:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return Path(path)


def plot_rmse(results, path) -> Path:
    """RMSE/sqrt(d) against dimension, log-scaled horizontal axis."""
    return _line_plot(_series(results, "rmse"), path, "RMSE / sqrt(d)", logy=False)


def plot_elapsed(results, path) -> Path:
    """Wall-clock seconds against dimension, both axes log-scaled."""
    return _line_plot(_series(results, "seconds"), path, "elapsed seconds", logy=True)


def plot_xi_histogram(pawl_xi, rwm_xi, path, bins: int = 60) -> Path:
    """Overlaid histograms of reaction-coordinate values visited by PAWL and RWM."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    data = [(np.ravel(pawl_xi), "PAWL"), (np.ravel(rwm_xi), "RWM")]
    data = [(v, n) for v, n in data if v.size]
    if not data:
        warnings.warn("no reaction-coordinate values to plot")
    else:
        lo = min(v.min() for v, _ in data)
        hi = max(v.max() for v, _ in data)
        edges = np.linspace(lo, hi if hi > lo else lo + 1.0, bins + 1)
        for v, n in data:
            ax.hist(v, bins=edges, alpha=0.55, density=True, label=n)
        ax.legend()
    ax.set_xlabel("xi(x) = -log pi(x) + const")
    ax.set_ylabel("density")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return Path(path)


def emit_plots(results, out_dir, xi: dict | None = None) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if results:
        paths.append(plot_rmse(results, out / "rmse_vs_dimension.svg"))
        paths.append(plot_elapsed(results, out / "elapsed_vs_dimension.svg"))
    else:
        warnings.warn("no benchmark results; skipping RMSE and timing plots")
    if xi:
        paths.append(plot_xi_histogram(xi.get("pawl", []), xi.get("rwm", []), out / "xi_histogram.svg"))
    return paths
