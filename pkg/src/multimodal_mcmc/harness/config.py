"""INI experiment configuration with strict key checking.

Three sections are recognised: ``[experiment]``, ``[target]`` and
``[sampler]``. Every key has a type and (except the required ones) a
default; unknown sections or keys are errors that name the offending line.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field

SCHEMA = {
    "experiment": {
        "name": (str, "experiment"),
        "n_iter": (int, None),
        "burn_in": (int, 0),
        "seed": (int, None),
        "replicates": (int, 1),
        "output_dir": (str, "results"),
    },
    "target": {
        "family": (str, None),          # mixture | autologistic | sur | tabular
        "dimension": (int, 2),          # mixture
        "grid": (str, ""),              # autologistic: path to a 0/1 grid, else synthetic
        "height": (int, 16),
        "width": (int, 16),
        "image_seed": (int, 0),
        "alpha": (float, 1.0),
        "beta": (float, 0.7),
        "prior_sd": (float, 10.0),      # sur
        "n_states": (int, 16),          # tabular
        "separation": (float, 6.0),
    },
    "sampler": {
        "kind": (str, None),            # rwm | gibbs | apt | pawl | jams | ram
        "n_levels": (int, 5),
        "beta_min": (float, 0.005),
        "schedule": (str, "deo"),
        "adapt": (bool, True),
        "common_covariance": (bool, False),
        "n_chains": (int, 4),
        "n_bins": (int, 10),
        "flat_c": (float, 0.9),
        "pilot_iter": (int, 5000),
        "split": (bool, True),
        "max_bins": (int, 40),
        "min_epoch_iter": (int, 1000),
        "n_phase2": (int, 5000),
        "jump_prob": (float, 0.1),
        "n_starts": (int, 100),
        "start_sd": (float, 1.0),
        "kernel_family": (str, "student-t"),
        "dof": (float, 7.0),
        "ram_scale": (float, 1.0),
        "max_inner": (int, 10000),
        "step": (int, 1),
        "cyclic": (bool, False),
    },
}

CHOICES = {
    ("target", "family"): {"mixture", "autologistic", "sur", "tabular"},
    ("sampler", "kind"): {"rwm", "gibbs", "apt", "pawl", "jams", "ram"},
    ("sampler", "schedule"): {"uniform", "even", "odd", "deo", "none"},
    ("sampler", "kernel_family"): {"gaussian", "student-t"},
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str = "<config>"):
        self.line = line
        loc = f"{path}:{line}: " if line else f"{path}: "
        super().__init__(loc + message)


@dataclass
class ExperimentConfig:
    experiment: dict = field(default_factory=dict)
    target: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return getattr(self, name)

    def __getitem__(self, key: str):
        sec, _, k = key.partition(".")
        return self.section(sec)[k]


def _line_index(text: str) -> dict:
    """Map (section, key) and (section, None) to 1-based line numbers."""
    where, sec = {}, None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            sec = m.group(1).strip()
            where.setdefault((sec, None), n)
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and sec is not None:
            where.setdefault((sec, m.group(1).strip().lower()), n)
    return where


def _convert(kind, raw: str, parser: configparser.ConfigParser):
    if kind is bool:
        v = raw.strip().lower()
        if v not in parser.BOOLEAN_STATES:
            raise ValueError(f"expected a boolean, got {raw!r}")
        return parser.BOOLEAN_STATES[v]
    return kind(raw.strip())


def parse_config(text: str, path: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(str(exc).splitlines()[0], line, path) from exc
    lines = _line_index(text)
    out = {}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", lines.get((sec, None)), path)
    for sec, keys in SCHEMA.items():
        values = {}
        given = parser[sec] if parser.has_section(sec) else {}
        for k in given:
            if k not in keys:
                raise ConfigError(f"unknown key {k!r} in [{sec}]", lines.get((sec, k)), path)
        for k, (kind, default) in keys.items():
            if k in given:
                try:
                    values[k] = _convert(kind, given[k], parser)
                except ValueError as exc:
                    raise ConfigError(f"{sec}.{k}: {exc}", lines.get((sec, k)), path) from exc
                choice = CHOICES.get((sec, k))
                if choice and values[k] not in choice:
                    raise ConfigError(f"{sec}.{k} must be one of {sorted(choice)}", lines.get((sec, k)), path)
            elif default is None:
                raise ConfigError(f"missing required key {sec}.{k}", lines.get((sec, None)), path)
            else:
                values[k] = default
        out[sec] = values
    cfg = ExperimentConfig(**out)
    e = cfg.experiment
    if e["n_iter"] < 1:
        raise ConfigError("experiment.n_iter must be positive", lines.get(("experiment", "n_iter")), path)
    if not 0 <= e["burn_in"] < e["n_iter"]:
        raise ConfigError("experiment.burn_in must satisfy 0 <= burn_in < n_iter",
                          lines.get(("experiment", "burn_in")), path)
    if e["replicates"] < 1:
        raise ConfigError("experiment.replicates must be positive", lines.get(("experiment", "replicates")), path)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical INI text: schema order, every key written."""
    parts = []
    for sec, keys in SCHEMA.items():
        parts.append(f"[{sec}]")
        values = cfg.section(sec)
        for k in keys:
            parts.append(f"{k} = {_fmt(values[k])}")
        parts.append("")
    return "\n".join(parts)
