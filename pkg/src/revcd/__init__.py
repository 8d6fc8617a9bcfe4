"""Conditional diffusion over semantic attribute vectors for generalized
zero-shot classification."""

from .autodiff import Tensor, no_grad
from .data import GzslDataset, SyntheticSpec, generate_synthetic, load_dataset
from .diffusion import LossWeights
from .estimator import RevCDClassifier
from .evaluation import GzslMetrics, evaluate, harmonic_mean
from .model import Denoiser, DenoiserConfig
from .rng import RngState
from .sampling import GuidanceConfig, sample
from .schedule import NoiseSchedule, build_linear_schedule
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "no_grad", "GzslDataset", "SyntheticSpec", "generate_synthetic",
    "load_dataset", "LossWeights", "RevCDClassifier", "GzslMetrics",
    "evaluate", "harmonic_mean", "Denoiser", "DenoiserConfig", "RngState",
    "GuidanceConfig", "sample", "NoiseSchedule", "build_linear_schedule",
    "TrainConfig", "train", "__version__",
]
