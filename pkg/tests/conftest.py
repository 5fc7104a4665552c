"""Shared fixtures: tone audio, fixture spectrograms, small synthetic datasets."""

import numpy as np
import pytest

from melmix.spectral import DEFAULT_MEL, DEFAULT_STFT, harmonic_tone, mel_spectrogram
from melmix.synth import SynthSpec, generate

# A low fundamental keeps the Griffin-Lim round trip accurate (harmonics fall
# in the high-resolution region of the mel scale), matching the documented
# round-trip tolerance of the vocode path.
TONE_F0 = 82.5


@pytest.fixture(scope="session")
def tone():
    return harmonic_tone(TONE_F0, 3, 1.0)


@pytest.fixture(scope="session")
def tone_mel(tone):
    return mel_spectrogram(tone, DEFAULT_STFT, DEFAULT_MEL)


@pytest.fixture(scope="session")
def default_spec():
    return SynthSpec.default(seed=0)


@pytest.fixture(scope="session")
def small_dataset(default_spec):
    """40 samples per condition of the default bimodal generator."""
    return generate(default_spec, 40)


def _ramp_grid():
    t = np.arange(12)[:, None]
    f = np.arange(10)[None, :]
    return 0.3 * t + 0.1 * f + np.sin(0.7 * t) * np.cos(0.5 * f)


def _noise_grid():
    rng = np.random.default_rng(17)
    return rng.normal(0.0, 1.0, size=(14, 14))


@pytest.fixture(scope="session")
def fixture_grids(tone_mel, default_spec, small_dataset):
    """Five non-constant spectrogram-like grids used by the filter suite."""
    return [
        ("tone-mel", tone_mel.values[:24].copy()),
        ("bump-pattern", default_spec.patterns[0, 0].copy()),
        ("synthetic-sample", small_dataset.for_condition(1)[0].copy()),
        ("ramp", _ramp_grid()),
        ("noise", _noise_grid()),
    ]
