"""Sampling mel-spectrograms from a fitted trivariate-chain mixture field.

Naive sampling draws every chain triplet independently and averages the
overlapping predictions; conditional sampling walks the time axis, fixing
the previously drawn value and sampling the remaining two coordinates from
the bivariate slice of each chain. Both are deterministic given a seed:
every bin owns its own counter-based RNG stream derived from
(seed, purpose, t, f), so results do not depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import MelSpectrogram
from .tvcgmm import BinMixture, TvcGmmField

__all__ = [
    "SampleConfig",
    "BivariateSlice",
    "bin_rng",
    "condition_on_first",
    "draw_triplets",
    "sample_naive",
    "sample_conditional",
    "mean_field",
]

# Stream purposes for per-bin RNG derivation.
_STREAM_NAIVE = 0
_STREAM_COND = 1
_STREAM_INIT = 2


@dataclass(frozen=True)
class SampleConfig:
    mode: str = "naive"  # naive | conditional | mean
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self):
        if self.mode not in ("naive", "conditional", "mean"):
            raise ValueError(f"unknown sampling mode: {self.mode!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class BivariateSlice:
    """Conditional mixture over (y[t+1,f], y[t,f+1]) given a known y[t,f]."""

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, 2)
    covariances: np.ndarray  # (K, 2, 2)


def bin_rng(seed: int, purpose: int, t: int, f: int) -> np.random.Generator:
    """Independent stream for one bin; schedule-invariant by construction."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose, t, f)))


def _categorical(rng: np.random.Generator, weights: np.ndarray) -> int:
    return int(np.searchsorted(np.cumsum(weights), rng.random(), side="right").clip(0, len(weights) - 1))


def condition_on_first(components: BinMixture, y_known: float) -> BivariateSlice:
    """Bivariate Gaussian slices of each component at a fixed first coordinate.

    Posterior mixture weights follow Bayes' rule over the known coordinate:
    proportional to alpha_k * N(y_known; mu_k1, Sigma_k11).
    """
    if not np.isfinite(y_known):
        raise ValueError("y_known must be finite")
    cov = components.covariances()  # (K, 3, 3)
    mu = components.means
    s11 = cov[:, 0, 0]
    s_r1 = cov[:, 1:, 0]  # (K, 2)
    cond_mean = mu[:, 1:] + s_r1 * ((y_known - mu[:, 0]) / s11)[:, None]
    cond_cov = cov[:, 1:, 1:] - s_r1[:, :, None] * s_r1[:, None, :] / s11[:, None, None]
    log_w = (
        np.log(components.weights())
        - 0.5 * (np.log(2.0 * np.pi * s11) + (y_known - mu[:, 0]) ** 2 / s11)
    )
    log_w -= log_w.max()
    w = np.exp(log_w)
    w /= w.sum()
    return BivariateSlice(weights=w, means=cond_mean, covariances=cond_cov)


def _scaled(mixture: BinMixture, temperature: float) -> BinMixture:
    if temperature == 1.0:
        return mixture
    # Scaling L by tau scales the covariance by tau^2; only done at sample time.
    from .tvcgmm import DIAG_FLOOR, diag_preactivation, softplus

    d = (softplus(mixture.diag_raw) + DIAG_FLOOR) * temperature
    return BinMixture(
        logits=mixture.logits,
        means=mixture.means,
        diag_raw=diag_preactivation(np.maximum(d, 2 * DIAG_FLOOR)),
        offdiag=mixture.offdiag * temperature,
    )


def draw_triplets(mixture: BinMixture, n: int, rng) -> np.ndarray:
    """n component-weighted triplet draws from one chain, (n, 3)."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    weights = mixture.weights()
    chol = mixture.cholesky()  # (K, 3, 3)
    ks = np.searchsorted(np.cumsum(weights), rng.random(n), side="right").clip(0, len(weights) - 1)
    eps = rng.standard_normal((n, 3))
    return mixture.means[ks] + np.einsum("nij,nj->ni", chol[ks], eps)


def _overlap_average(draws: np.ndarray) -> np.ndarray:
    """Average own y0 with the time neighbour's y1 and frequency neighbour's y2.

    Draws of y1 in the last time row and y2 in the last frequency column are
    discarded (their chains point outside the grid).
    """
    acc = draws[:, :, 0].copy()
    cnt = np.ones_like(acc)
    acc[1:, :] += draws[:-1, :, 1]
    cnt[1:, :] += 1.0
    acc[:, 1:] += draws[:, :-1, 2]
    cnt[:, 1:] += 1.0
    return acc / cnt


def sample_naive(field: TvcGmmField, cfg: SampleConfig) -> MelSpectrogram:
    """Parallel per-chain triplet draws, overlaps arithmetically averaged."""
    T, F = field.shape
    draws = np.empty((T, F, 3))
    for t in range(T):
        for f in range(F):
            mixture = _scaled(field.bin(t, f), cfg.temperature)
            rng = bin_rng(cfg.seed, _STREAM_NAIVE, t, f)
            draws[t, f] = draw_triplets(mixture, 1, rng)[0]
    return MelSpectrogram(_overlap_average(draws))


def _chol2(cov: np.ndarray) -> np.ndarray:
    """Cholesky of a 2x2 SPD matrix, tolerant of a degenerate Schur complement."""
    a = np.sqrt(max(cov[0, 0], 0.0))
    b = cov[1, 0] / a if a > 0 else 0.0
    c2 = cov[1, 1] - b * b
    c = np.sqrt(max(c2, 0.0))
    return np.array([[a, 0.0], [b, c]])


def sample_conditional(
    field: TvcGmmField, cfg: SampleConfig, return_internals: bool = False
):
    """Iterative sampling conditioned on the previously drawn time value.

    The value handed down the time chain is the raw y1 draw (exact, never
    averaged); only the frequency-direction overlaps are averaged into the
    final output.
    """
    T, F = field.shape
    y_time = np.empty((T, F))
    freq_overlap = np.full((T, F), np.nan)
    for f in range(F):
        mixture = _scaled(field.bin(0, f), cfg.temperature)
        rng = bin_rng(cfg.seed, _STREAM_INIT, 0, f)
        k = _categorical(rng, mixture.weights())
        std0 = mixture.cholesky()[k, 0, 0]
        y_time[0, f] = mixture.means[k, 0] + std0 * rng.standard_normal()
    for t in range(T):
        for f in range(F):
            mixture = _scaled(field.bin(t, f), cfg.temperature)
            piece = condition_on_first(mixture, y_time[t, f])
            rng = bin_rng(cfg.seed, _STREAM_COND, t, f)
            k = _categorical(rng, piece.weights)
            draw = piece.means[k] + _chol2(piece.covariances[k]) @ rng.standard_normal(2)
            if t + 1 < T:
                y_time[t + 1, f] = draw[0]
            if f + 1 < F:
                freq_overlap[t, f + 1] = draw[1]
    out = y_time.copy()
    has_overlap = ~np.isnan(freq_overlap)
    out[has_overlap] = 0.5 * (y_time[has_overlap] + freq_overlap[has_overlap])
    spec = MelSpectrogram(out)
    if return_internals:
        return spec, y_time, freq_overlap
    return spec


def mean_field(field: TvcGmmField) -> MelSpectrogram:
    """Overlap-averaged mixture means; the MSE-style deterministic baseline."""
    weights = field.weights()  # (T, F, K)
    means = np.einsum("tfk,tfkd->tfd", weights, field.means)  # (T, F, 3)
    return MelSpectrogram(_overlap_average(means))
