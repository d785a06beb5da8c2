"""Learned hybrid beamforming for wideband multi-user MIMO-OFDM.

Differentiable pilot sounding, limited feedback, and beamformer networks on
a small from-scratch autodiff engine, next to classical sparse-recovery and
beamforming baselines, driven by the `airbeam` command line tool.
"""

from .channel import SystemConfig, PathSet, ChannelRealization
from .airlink import HybridBeamformer
from .networks import NetworkSpec, TddPipeline, FddPipeline, build_pipeline
from .training import TrainConfig, TrainHistory, DataSplits, gen_splits, train
from .experiment import ExperimentConfig, parse_config, run_experiment
from .io import load_checkpoint, save_checkpoint

__all__ = [
    "SystemConfig", "PathSet", "ChannelRealization", "HybridBeamformer",
    "NetworkSpec", "TddPipeline", "FddPipeline", "build_pipeline",
    "TrainConfig", "TrainHistory", "DataSplits", "gen_splits", "train",
    "ExperimentConfig", "parse_config", "run_experiment",
    "load_checkpoint", "save_checkpoint",
]
