"""Trivariate-chain Gaussian mixture modelling of mel-spectrograms.

Library + CLI for parameterizing, fitting and sampling per-bin mixtures of
trivariate Gaussians over neighbouring spectrogram bins, together with the
smoothness diagnostics (Laplacian-variance metric, smooth/sharpen filters,
Griffin-Lim reconstruction) and a synthetic multimodal data generator.
"""

from .errors import ConfigError, FormatError, MelmixError, TrainingError
from .spectral import (
    AudioBuffer,
    MelConfig,
    MelSpectrogram,
    StftConfig,
    griffin_lim,
    mel_spectrogram,
    read_wav,
    write_wav,
)
from .tvcgmm import TvcGmmField, chain_targets, mixture_log_density, nll, nll_gradient
from .sampling import SampleConfig, condition_on_first, mean_field, sample_conditional, sample_naive
from .synth import ConditionedDataset, SynthSpec, generate
from .trainer import ModelBundle, TrainConfig, evaluate, fit, init_fields
from .filters import gaussian_kernel, sharpen, smooth, var_laplacian

__version__ = "0.1.0"
