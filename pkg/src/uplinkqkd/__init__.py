"""Simulation and post-processing of decoy-state BB84 uplinks to moving receivers."""

from .runner import (PassSummary, RunConfig, compare_to_reference, load_config, replica_config, run_pass,
                     summarize)

__version__ = "0.1.0"

__all__ = ["PassSummary", "RunConfig", "compare_to_reference", "load_config", "replica_config", "run_pass",
           "summarize", "__version__"]
