"""Batch fermentation kinetics with a substrate delay.

Thin Python layer over the C++ core: simulation, multistart regression,
experiment CSV ingestion, trained DDL/CFM models and the pipeline commands.
"""

from ._calib import (
    PARAM_NAMES,
    CalibError,
    CfmModel,
    DdlModel,
    KineticParams,
    ObservationSeries,
    ParamBounds,
    __version__,
    fit,
    generate_samples,
    load_experiment,
    nrmse,
    run,
    simulate,
    trajectory_nrmse,
    uniform_times,
)

REFERENCE_PARAMS = KineticParams([0.0082, 0.5273, 100.0, 1.361, 0.1381, 32.57, 61.53, 62.5])

__all__ = [
    "PARAM_NAMES",
    "REFERENCE_PARAMS",
    "CalibError",
    "CfmModel",
    "DdlModel",
    "KineticParams",
    "ObservationSeries",
    "ParamBounds",
    "fit",
    "generate_samples",
    "load_experiment",
    "nrmse",
    "run",
    "simulate",
    "trajectory_nrmse",
    "uniform_times",
]
