"""Curvilinear delineation with topology-aware losses and iterative refinement."""

from ._core import (
    ConfigError,
    DataError,
    NumericalError,
    WeightFormatError,
    bce_loss,
    evaluate,
    features,
    gradcheck,
    load_weights,
    save_weights,
    synth,
    thin,
    topo_loss,
    run_eval,
    run_predict,
    run_synth,
    run_train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericalError",
    "WeightFormatError",
    "bce_loss",
    "evaluate",
    "features",
    "gradcheck",
    "load_weights",
    "save_weights",
    "synth",
    "thin",
    "topo_loss",
    "run_eval",
    "run_predict",
    "run_synth",
    "run_train",
]
