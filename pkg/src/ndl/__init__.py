"""Growing stacked denoising autoencoders for continual class learning.

Hidden levels gain nodes when a new class reconstructs poorly, and class
statistics of the top-level codes drive replay of previously learned classes.
"""

from .autoencoder import StackedAutoencoder, TrainConfig, pretrain_stack, reconstruction_error
from .neurogenesis import NeurogenesisConfig, run_ndl
from .replay import ReplayStore, fit_class_stats, generate_replay

__all__ = [
    "StackedAutoencoder",
    "TrainConfig",
    "pretrain_stack",
    "reconstruction_error",
    "NeurogenesisConfig",
    "run_ndl",
    "ReplayStore",
    "fit_class_stats",
    "generate_replay",
]

__version__ = "0.1.0"
