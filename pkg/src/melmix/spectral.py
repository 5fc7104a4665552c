"""Audio <-> mel-spectrogram conversion.

STFT analysis with Hann windowing and reflect center-padding, an HTK-style
triangular mel filterbank (peak-1 triangles), log compression with a floor,
mel inversion via clamped pseudo-inverse or NNLS, fast Griffin-Lim phase
reconstruction with momentum, and 16-bit PCM mono WAV I/O.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np
import scipy.fft
from scipy.optimize import nnls
from scipy.signal.windows import hann

from .errors import ConfigError, FormatError

__all__ = [
    "AudioBuffer",
    "StftConfig",
    "MelConfig",
    "MelSpectrogram",
    "DEFAULT_STFT",
    "DEFAULT_MEL",
    "stft_magnitude",
    "mel_filterbank",
    "mel_spectrogram",
    "mel_to_linear",
    "griffin_lim",
    "log_spectral_distance",
    "harmonic_tone",
    "read_wav",
    "write_wav",
    "hz_to_mel",
    "mel_to_hz",
]


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio: float samples in [-1, 1] plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("audio must be mono (1-D sample array)")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("audio samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 1024
    hop_size: int = 256
    win_size: int = 1024

    def __post_init__(self):
        if min(self.fft_size, self.hop_size, self.win_size) <= 0:
            raise ConfigError("fft_size, hop_size and win_size must be positive")
        if not (self.hop_size <= self.win_size <= self.fft_size):
            raise ConfigError("need hop_size <= win_size <= fft_size")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float = 8000.0
    sample_rate: int = 22050
    log_floor: float = 1e-5

    def __post_init__(self):
        if self.n_mels < 2:
            raise ConfigError("n_mels must be >= 2")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")
        if not (0 <= self.f_min < self.f_max <= self.sample_rate / 2):
            raise ConfigError("need 0 <= f_min < f_max <= sample_rate/2")


DEFAULT_STFT = StftConfig()
DEFAULT_MEL = MelConfig()


@dataclass
class MelSpectrogram:
    """T x F grid of log-mel magnitudes, time-major."""

    values: np.ndarray
    config: MelConfig | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("mel-spectrogram values must be a 2-D grid")
        if not np.all(np.isfinite(values)):
            raise ValueError("mel-spectrogram values must be finite")
        self.values = values

    @property
    def shape(self):
        return self.values.shape


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _window(cfg: StftConfig) -> np.ndarray:
    return hann(cfg.win_size, sym=False)


def _frame(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Reflect-pad by win_size/2 and cut into (n_frames, win_size) rows."""
    if samples.size < cfg.win_size:
        raise ValueError(
            f"audio too short: {samples.size} samples < win_size {cfg.win_size}"
        )
    pad = cfg.win_size // 2
    padded = np.pad(samples, (pad, pad), mode="reflect")
    n_frames = (padded.size - cfg.win_size) // cfg.hop_size + 1
    idx = np.arange(cfg.win_size)[None, :] + cfg.hop_size * np.arange(n_frames)[:, None]
    return padded[idx]


def _stft_complex(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    frames = _frame(samples, cfg) * _window(cfg)
    return scipy.fft.rfft(frames, n=cfg.fft_size, axis=1)


def _istft(spec: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Least-squares overlap-add inverse of _stft_complex, padding trimmed."""
    win = _window(cfg)
    frames = scipy.fft.irfft(spec, n=cfg.fft_size, axis=1)[:, : cfg.win_size]
    n_frames = frames.shape[0]
    length = (n_frames - 1) * cfg.hop_size + cfg.win_size
    out = np.zeros(length)
    norm = np.zeros(length)
    for t in range(n_frames):
        start = t * cfg.hop_size
        out[start : start + cfg.win_size] += frames[t] * win
        norm[start : start + cfg.win_size] += win**2
    out = np.where(norm > 1e-10, out / np.maximum(norm, 1e-10), 0.0)
    pad = cfg.win_size // 2
    return out[pad : length - pad]


def stft_magnitude(audio: AudioBuffer, cfg: StftConfig = DEFAULT_STFT) -> np.ndarray:
    """Linear magnitude grid, shape (n_frames, fft_size//2 + 1)."""
    return np.abs(_stft_complex(audio.samples, cfg))


def mel_filterbank(cfg: MelConfig = DEFAULT_MEL, fft_size: int = 1024) -> np.ndarray:
    """Triangular peak-1 filters on the HTK mel scale, (n_mels, fft_size//2+1)."""
    n_bins = fft_size // 2 + 1
    bin_hz = np.arange(n_bins) * cfg.sample_rate / fft_size
    centers_mel = np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2)
    centers_hz = mel_to_hz(centers_mel)
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, mid, hi = centers_hz[m], centers_hz[m + 1], centers_hz[m + 2]
        rising = (bin_hz - lo) / (mid - lo)
        falling = (hi - bin_hz) / (hi - mid)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    if np.any(fb.sum(axis=1) == 0.0):
        raise ConfigError(
            "mel filterbank has empty filters; reduce n_mels or increase fft_size"
        )
    return fb


def mel_spectrogram(
    audio: AudioBuffer,
    stft_cfg: StftConfig = DEFAULT_STFT,
    mel_cfg: MelConfig = DEFAULT_MEL,
) -> MelSpectrogram:
    """log(max(filterbank @ magnitude, log_floor)), natural log, frames as rows."""
    mag = stft_magnitude(audio, stft_cfg)
    fb = mel_filterbank(mel_cfg, stft_cfg.fft_size)
    mel = mag @ fb.T
    return MelSpectrogram(np.log(np.maximum(mel, mel_cfg.log_floor)), mel_cfg)


def mel_to_linear(
    mel: MelSpectrogram,
    stft_cfg: StftConfig = DEFAULT_STFT,
    method: str = "pinv",
) -> np.ndarray:
    """Invert the mel projection back to a linear magnitude grid (>= 0).

    method 'pinv' uses the clamped pseudo-inverse of the filterbank,
    'nnls' solves a nonnegative least-squares problem per frame.
    """
    cfg = mel.config or DEFAULT_MEL
    fb = mel_filterbank(cfg, stft_cfg.fft_size)
    power = np.exp(mel.values)
    # Treat cells at the log floor as silence rather than tiny energy.
    power = np.where(power <= cfg.log_floor * (1 + 1e-9), 0.0, power)
    if method == "pinv":
        linear = power @ np.linalg.pinv(fb).T
        return np.clip(linear, 0.0, None)
    if method == "nnls":
        out = np.empty((power.shape[0], fb.shape[1]))
        for t in range(power.shape[0]):
            out[t], _ = nnls(fb, power[t])
        return out
    raise ValueError(f"unknown inversion method: {method!r}")


def griffin_lim(
    magnitude: np.ndarray,
    cfg: StftConfig = DEFAULT_STFT,
    n_iter: int = 60,
    momentum: float = 0.99,
    sample_rate: int = 22050,
) -> tuple[AudioBuffer, float]:
    """Fast Griffin-Lim with momentum, zero initial phase.

    Returns the best iterate (lowest spectral convergence) and its
    convergence value ||STFT(x)| - M||_F / ||M||_F.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    if not (0.0 <= momentum < 1.0):
        raise ValueError("momentum must be in [0, 1)")
    magnitude = np.asarray(magnitude, dtype=np.float64)
    norm = np.linalg.norm(magnitude)
    if norm == 0.0:
        length = (magnitude.shape[0] - 1) * cfg.hop_size
        return AudioBuffer(np.zeros(max(length, cfg.win_size)), sample_rate), 0.0

    angles = np.ones_like(magnitude, dtype=np.complex128)
    rebuilt_prev = np.zeros_like(angles)
    best_audio = None
    best_conv = np.inf
    for _ in range(n_iter):
        audio = _istft(magnitude * angles, cfg)
        rebuilt = _stft_complex(audio, cfg)
        conv = np.linalg.norm(np.abs(rebuilt) - magnitude) / norm
        if conv < best_conv:
            best_conv = conv
            best_audio = audio
        accel = rebuilt - (momentum / (1.0 + momentum)) * rebuilt_prev
        rebuilt_prev = rebuilt
        mag = np.abs(accel)
        angles = accel / np.where(mag > 1e-16, mag, 1.0)
    peak = np.max(np.abs(best_audio))
    if peak > 1.0:
        best_audio = best_audio / peak
    return AudioBuffer(best_audio, sample_rate), float(best_conv)


def log_spectral_distance(a: np.ndarray, b: np.ndarray) -> float:
    """RMS difference between two log-mel grids of identical shape."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def harmonic_tone(
    f0: float = 220.0,
    n_harmonics: int = 3,
    duration: float = 1.0,
    sample_rate: int = 22050,
    amplitude: float = 0.5,
) -> AudioBuffer:
    """Sum of n_harmonics sinusoids at multiples of f0, peak-normalized."""
    t = np.arange(int(duration * sample_rate)) / sample_rate
    sig = sum(np.sin(2 * np.pi * f0 * (h + 1) * t) / (h + 1) for h in range(n_harmonics))
    sig = amplitude * sig / np.max(np.abs(sig))
    return AudioBuffer(sig, sample_rate)


def write_wav(path, audio: AudioBuffer) -> None:
    """Write 16-bit PCM mono little-endian RIFF, clipping to [-1, 1]."""
    clipped = np.clip(audio.samples, -1.0, 1.0)
    pcm = np.clip(np.round(clipped * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(pcm.tobytes())


def read_wav(path) -> AudioBuffer:
    """Read a 16-bit PCM mono WAV file."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise FormatError("only mono WAV files are supported")
            if w.getsampwidth() != 2:
                raise FormatError("only 16-bit PCM WAV files are supported")
            if w.getcomptype() != "NONE":
                raise FormatError("compressed WAV files are not supported")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise FormatError(f"not a valid WAV file: {exc}") from exc
    except EOFError as exc:
        raise FormatError("truncated WAV file") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(samples, rate)
