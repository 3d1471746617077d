"""Distributed multichannel active noise control with compensation filters.

Simulation library for a compensation-filter-based distributed controller,
its centralized multichannel FxLMS baseline, and communication-fault models.
"""

from .compensation import (CompensationFitReport, CompensationSet, compensation_residual,
                           fit_all, fit_compensation)
from .control import (CentralizedState, NodeState, centralized_step, error_expansion_check,
                      filtered_reference_step, global_filter, local_update, node_output)
from .dsp import FirFilter, Signal, bandlimited_noise, convolve, design_bandpass, fir_process
from .errors import ConfigError, ContractViolation, DivergenceError
from .harness import (ExperimentConfig, MseTrace, mse_smooth, run_averaged, run_once,
                      spectra_report, sweep)
from .kernels import BACKEND
from .network import CoefficientBus, CommPolicy, staleness_stats
from .plant import Plant, constructed_plant, interference, plant_step, synthesize_plant

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CentralizedState", "CoefficientBus", "CommPolicy", "CompensationFitReport",
    "CompensationSet", "ConfigError", "ContractViolation", "DivergenceError",
    "ExperimentConfig", "FirFilter", "MseTrace", "NodeState", "Plant", "Signal",
    "bandlimited_noise", "centralized_step", "compensation_residual", "constructed_plant",
    "convolve", "design_bandpass", "error_expansion_check", "filtered_reference_step",
    "fir_process", "fit_all", "fit_compensation", "global_filter", "interference",
    "local_update", "mse_smooth", "node_output", "plant_step", "run_averaged", "run_once",
    "spectra_report", "staleness_stats", "sweep", "synthesize_plant",
]
