"""Frequency-filtered visual prompt learning on frozen embeddings."""

from .autodiff import Tape, Tensor, finite_diff_check
from .data_io import EmbeddingDataset, make_split, read_dataset, synth_generate, write_dataset
from .evaluation import evaluate_accuracy, harmonic_mean, k_sensitivity_sweep, run_experiment
from .objective import LossConfig, Model, predict
from .spectral import SpectralFilterSpec, build_lowpass_mask, dft_1d, ffb_apply, idft_1d
from .trainer import ModelConfig, TrainConfig, train_run

__all__ = [
    "EmbeddingDataset",
    "LossConfig",
    "Model",
    "ModelConfig",
    "SpectralFilterSpec",
    "Tape",
    "Tensor",
    "TrainConfig",
    "build_lowpass_mask",
    "dft_1d",
    "evaluate_accuracy",
    "ffb_apply",
    "finite_diff_check",
    "harmonic_mean",
    "idft_1d",
    "k_sensitivity_sweep",
    "make_split",
    "predict",
    "read_dataset",
    "run_experiment",
    "synth_generate",
    "train_run",
    "write_dataset",
]

__version__ = "0.1.0"
