"""Samplers and diagnostics for multimodal targets."""

from .core import (ChainAborted, ChainState, NumericalError, RngStream, SamplerError, Space, StepInfo,
                   TargetModel, Trace, mh_step, run_chain)

__version__ = "0.1.0"
__all__ = ["ChainAborted", "ChainState", "NumericalError", "RngStream", "SamplerError", "Space", "StepInfo",
           "TargetModel", "Trace", "mh_step", "run_chain"]
