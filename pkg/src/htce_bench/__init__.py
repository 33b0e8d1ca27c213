"""Heterogeneous-transfer CATE learners, a synthetic benchmark and an experiment harness.

Everything runs on numpy: ``nn_core`` is the small network engine,
``simbench`` the data simulator, ``htce_blocks`` the shared/private network
pieces, ``learners`` the trainable estimators and ``harness`` the grid runner.
"""

from .harness import EvalReport, ExperimentSpec, emit_report, pehe, run_experiment
from .learners import TrainConfig, load_model, predict_cate, save_model, train_baseline, train_htce
from .simbench import SimConfig, simulate

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "ExperimentSpec",
    "SimConfig",
    "TrainConfig",
    "emit_report",
    "load_model",
    "pehe",
    "predict_cate",
    "run_experiment",
    "save_model",
    "simulate",
    "train_baseline",
    "train_htce",
]
