"""Configs, data, experiments, plots and the CLI."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config, serialize_config
from .data import GridFormatError, bimodal_sur_data, format_grid, ingest_grid, parse_grid, synth_ice

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "serialize_config",
           "GridFormatError", "bimodal_sur_data", "format_grid", "ingest_grid", "parse_grid", "synth_ice"]
