import json
import warnings
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, strategies as st

from multimodal_mcmc.harness.cli import main
from multimodal_mcmc.harness.config import SCHEMA, ConfigError, parse_config, serialize_config
from multimodal_mcmc.harness.data import GridFormatError, format_grid, ingest_grid, parse_grid, synth_ice
from multimodal_mcmc.harness.experiments import git_blob_sha1, run_experiment
from multimodal_mcmc.harness.plots import emit_plots, plot_elapsed, plot_rmse, plot_xi_histogram

MINIMAL = """[experiment]
n_iter = 200
seed = 3
burn_in = 20

[target]
family = mixture
dimension = 1

[sampler]
kind = rwm
"""


# -- config ------------------------------------------------------------------------

def test_config_defaults_and_lookup():
    cfg = parse_config(MINIMAL)
    assert cfg["experiment.n_iter"] == 200
    assert cfg["sampler.n_levels"] == SCHEMA["sampler"]["n_levels"][1]
    assert cfg.target["dimension"] == 1


def test_config_round_trip():
    cfg = parse_config(MINIMAL)
    assert parse_config(serialize_config(cfg)) == cfg


@given(n_iter=st.integers(2, 10**7), seed=st.integers(0, 2**31), dim=st.integers(1, 64),
       flat_c=st.floats(0.01, 0.99), split=st.booleans(),
       kind=st.sampled_from(["rwm", "apt", "pawl", "jams", "ram"]))
def test_config_round_trip_property(n_iter, seed, dim, flat_c, split, kind):
    text = (f"[experiment]\nn_iter = {n_iter}\nseed = {seed}\nburn_in = {n_iter // 2}\n"
            f"[target]\nfamily = mixture\ndimension = {dim}\n"
            f"[sampler]\nkind = {kind}\nflat_c = {flat_c!r}\nsplit = {split}\n")
    cfg = parse_config(text)
    assert parse_config(serialize_config(cfg)) == cfg


def test_unknown_key_names_line():
    text = MINIMAL.replace("kind = rwm", "kind = rwm\nstep_size = 2")
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "x.ini")
    assert exc.value.line == 12
    assert "x.ini:12:" in str(exc.value) and "step_size" in str(exc.value)


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(MINIMAL + "[extra]\na = 1\n")


def test_missing_seed_rejected():
    with pytest.raises(ConfigError, match="experiment.seed"):
        parse_config(MINIMAL.replace("seed = 3\n", ""))


@pytest.mark.parametrize("burn", ["200", "500", "-1"])
def test_burn_in_must_precede_n_iter(burn):
    with pytest.raises(ConfigError, match="burn_in") as exc:
        parse_config(MINIMAL.replace("burn_in = 20", f"burn_in = {burn}"))
    assert exc.value.line == 4


def test_bad_choice_and_type():
    with pytest.raises(ConfigError, match="sampler.kind"):
        parse_config(MINIMAL.replace("kind = rwm", "kind = hmc"))
    with pytest.raises(ConfigError, match="n_iter") as exc:
        parse_config(MINIMAL.replace("n_iter = 200", "n_iter = many"))
    assert exc.value.line == 2


# -- grids -----------------------------------------------------------------------

def test_parse_grid_two_by_two():
    g = parse_grid("01\n10\n")
    assert g.shape == (2, 2)
    assert g.tolist() == [[0, 1], [1, 0]]


def test_parse_grid_ragged_row():
    with pytest.raises(GridFormatError) as exc:
        parse_grid("01\n0\n")
    assert exc.value.row == 2


def test_parse_grid_foreign_character():
    with pytest.raises(GridFormatError) as exc:
        parse_grid("01\n10\n1x\n")
    assert exc.value.row == 3


def test_ingest_forty_by_forty(tmp_path):
    p = tmp_path / "grid.txt"
    p.write_text(format_grid(synth_ice(40, 40, 1)))
    g = ingest_grid(p)
    assert g.shape == (40, 40) and g.size == 1600


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_grid_format_round_trip(h, w, seed):
    g = np.random.default_rng(seed).integers(0, 2, (h, w)).astype(np.int8)
    assert np.array_equal(parse_grid(format_grid(g)), g)


def test_synth_ice_deterministic():
    assert np.array_equal(synth_ice(40, 40, 5), synth_ice(40, 40, 5))
    assert not np.array_equal(synth_ice(40, 40, 5), synth_ice(40, 40, 6))


def test_synth_ice_non_degenerate_over_seeds():
    for seed in range(100):
        img = synth_ice(seed=seed)
        assert img.shape == (40, 40)
        assert 0 < img.sum() < img.size
        assert 0.2 < img.mean() < 0.8


# -- experiments --------------------------------------------------------------------

def write_config(tmp_path, text=MINIMAL):
    p = tmp_path / "exp.ini"
    p.write_text(text)
    return p


def test_run_experiment_trace_length(tmp_path):
    out = run_experiment(write_config(tmp_path), tmp_path / "out")
    rows = (out / "trace_r0.csv").read_text().splitlines()
    assert rows[0].startswith("iter,accepted,kernel_tag,aux_index,x_0")
    assert len(rows) == 1 + 201          # header, initial state, 200 iterations
    diag = json.loads((out / "diagnostics_r0.json").read_text())
    assert 0 < diag["acceptance_rate"] < 1
    assert diag["seed"] == 3


def test_run_experiment_byte_identical_rerun(tmp_path):
    cfg = write_config(tmp_path, MINIMAL.replace("n_iter = 200", "n_iter = 200\nreplicates = 2"))
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    for name in ("trace_r0.csv", "trace_r1.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "trace_r0.csv").read_bytes() != (a / "trace_r1.csv").read_bytes()


def test_manifest_hash_and_config_echo(tmp_path):
    out = run_experiment(write_config(tmp_path), tmp_path / "out")
    m = json.loads((out / "manifest.json").read_text())
    trace = (out / "trace_r0.csv").read_bytes()
    assert m["files"]["trace_r0.csv"] == git_blob_sha1(trace)
    assert m["hash"] == git_blob_sha1(m["config"].encode() + trace)
    assert parse_config(m["config"]) == parse_config(MINIMAL)


def test_git_blob_sha1_matches_git():
    # `printf 'hello\n' | git hash-object --stdin`
    assert git_blob_sha1(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


@pytest.mark.parametrize("kind", ["apt", "pawl", "ram"])
def test_run_experiment_other_samplers(tmp_path, kind):
    text = MINIMAL.replace("kind = rwm", f"kind = {kind}\npilot_iter = 100\nmin_epoch_iter = 10")
    out = run_experiment(write_config(tmp_path, text), tmp_path / "out")
    diag = json.loads((out / "diagnostics_r0.json").read_text())
    assert diag["sampler"] == kind
    assert (out / "manifest.json").exists()


def test_tabular_pawl_experiment(tmp_path):
    text = ("[experiment]\nn_iter = 2000\nseed = 1\n[target]\nfamily = tabular\nn_states = 16\n"
            "[sampler]\nkind = pawl\nn_bins = 4\nsplit = false\nstep = 8\ncyclic = true\npilot_iter = 500\n")
    out = run_experiment(write_config(tmp_path, text), tmp_path / "out")
    header = (out / "trace_r0.csv").read_text().splitlines()[0]
    assert header.endswith(",weight")


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = write_config(tmp_path, MINIMAL + "colour = red\n")
    assert main(["run", str(bad), "-o", str(tmp_path / "out")]) == 2
    err = capsys.readouterr().err
    assert "exp.ini:12:" in err and "colour" in err


def test_cli_incompatible_sampler_exit_code(tmp_path):
    text = MINIMAL.replace("family = mixture", "family = tabular").replace("kind = rwm", "kind = jams")
    assert main(["run", str(write_config(tmp_path, text)), "-o", str(tmp_path / "out")]) == 2


def test_cli_run_success(tmp_path, capsys):
    assert main(["run", str(write_config(tmp_path)), "-o", str(tmp_path / "out")]) == 0
    assert "hash" in capsys.readouterr().out


def test_cli_plot_missing_results(tmp_path):
    assert main(["plot", str(tmp_path)]) == 1


# -- plots -----------------------------------------------------------------------

def svg_root(path):
    root = ET.parse(path).getroot()
    assert root.tag.endswith("svg")
    return root


def test_single_point_series(tmp_path):
    rows = [{"sampler": "jams", "dimension": 4, "rmse": 0.05, "seconds": 1.2}]
    paths = emit_plots(rows, tmp_path)
    assert [p.name for p in paths] == ["rmse_vs_dimension.svg", "elapsed_vs_dimension.svg"]
    for p in paths:
        svg_root(p)


def test_axis_scales(tmp_path, monkeypatch):
    import matplotlib.figure
    seen = []
    orig = matplotlib.figure.Figure.savefig

    def spy(fig, *a, **k):
        ax = fig.axes[0]
        seen.append((ax.get_xscale(), ax.get_yscale()))
        return orig(fig, *a, **k)

    monkeypatch.setattr(matplotlib.figure.Figure, "savefig", spy)
    rows = [{"sampler": s, "dimension": d, "rmse": 0.1 * d, "seconds": d}
            for s in ("rwm", "apt") for d in (2, 4, 8)]
    plot_rmse(rows, tmp_path / "r.svg")
    plot_elapsed(rows, tmp_path / "e.svg")
    assert seen == [("log", "linear"), ("log", "log")]


def test_empty_series_warns_and_is_valid_svg(tmp_path):
    from multimodal_mcmc.harness.plots import _line_plot
    series = {"rwm": (np.array([]), np.array([])), "jams": (np.array([2]), np.array([0.1]))}
    with pytest.warns(UserWarning, match="empty series"):
        p = _line_plot(series, tmp_path / "x.svg", "y", False)
    svg_root(p)


def test_xi_histogram_and_empty(tmp_path):
    rng = np.random.default_rng(0)
    svg_root(plot_xi_histogram(rng.normal(0, 3, 500), rng.normal(0, 1, 500), tmp_path / "h.svg"))
    with pytest.warns(UserWarning):
        p = plot_xi_histogram([], [], tmp_path / "h0.svg")
    svg_root(p)


def test_plots_deterministic(tmp_path):
    rows = [{"sampler": "rwm", "dimension": 2, "rmse": 1.0, "seconds": 3.0}]
    a = emit_plots(rows, tmp_path / "a")
    b = emit_plots(rows, tmp_path / "b")
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()


def test_no_results_warns(tmp_path):
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        assert emit_plots([], tmp_path) == []
    assert any("no benchmark results" in str(x.message) for x in w)
