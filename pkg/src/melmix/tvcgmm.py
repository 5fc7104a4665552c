"""Trivariate-chain Gaussian mixture core.

Each time/frequency bin carries a K-component mixture of trivariate Gaussians
over the triplet (y[t,f], y[t+1,f], y[t,f+1]). Covariances are parameterized
by a lower-triangular Cholesky factor whose diagonal goes through
softplus(.) + DIAG_FLOOR, so every realized covariance is symmetric positive
definite with a variance floor. Mixing weights are softmax of unconstrained
logits.

The negative log-likelihood and its exact analytic gradients with respect to
all parameters are implemented here; the trainer never derives its own
gradient formulas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import MelSpectrogram

__all__ = [
    "DIAG_FLOOR",
    "Chol3",
    "TvcComponent",
    "BinMixture",
    "TvcGmmField",
    "softplus",
    "softplus_inv",
    "diag_preactivation",
    "chain_targets",
    "log_density",
    "mixture_log_density",
    "nll",
    "nll_gradient",
    "nll_and_gradient",
]

DIAG_FLOOR = 1e-4
LOG_2PI = float(np.log(2.0 * np.pi))


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of softplus for y > 0."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("softplus_inv requires positive input")
    # log(exp(y) - 1), stable for large y
    return y + np.log1p(-np.exp(-y))


def diag_preactivation(std):
    """Pre-activation d such that softplus(d) + DIAG_FLOOR == std."""
    std = np.asarray(std, dtype=np.float64)
    return softplus_inv(np.maximum(std - DIAG_FLOOR, 1e-12))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class Chol3:
    """Lower-triangular 3x3 factor in unconstrained parameterization."""

    diag_raw: np.ndarray  # (3,) pre-activations for the diagonal
    offdiag: np.ndarray  # (3,) free entries (l21, l31, l32)

    def matrix(self) -> np.ndarray:
        d = softplus(self.diag_raw) + DIAG_FLOOR
        l21, l31, l32 = np.asarray(self.offdiag, dtype=np.float64)
        return np.array([[d[0], 0.0, 0.0], [l21, d[1], 0.0], [l31, l32, d[2]]])

    def covariance(self) -> np.ndarray:
        L = self.matrix()
        return L @ L.T


@dataclass(frozen=True)
class TvcComponent:
    mean: np.ndarray  # (3,)
    chol: Chol3
    logit: float = 0.0


@dataclass(frozen=True)
class BinMixture:
    """All K components of one bin, struct-of-arrays."""

    logits: np.ndarray  # (K,)
    means: np.ndarray  # (K, 3)
    diag_raw: np.ndarray  # (K, 3)
    offdiag: np.ndarray  # (K, 3)

    @property
    def n_components(self) -> int:
        return self.logits.shape[0]

    def weights(self) -> np.ndarray:
        z = self.logits - np.max(self.logits)
        e = np.exp(z)
        return e / e.sum()

    def component(self, k: int) -> TvcComponent:
        return TvcComponent(
            mean=self.means[k],
            chol=Chol3(self.diag_raw[k], self.offdiag[k]),
            logit=float(self.logits[k]),
        )

    def cholesky(self) -> np.ndarray:
        """Realized lower-triangular factors, (K, 3, 3)."""
        return _build_chol(self.diag_raw, self.offdiag)

    def covariances(self) -> np.ndarray:
        L = self.cholesky()
        return L @ np.swapaxes(L, -1, -2)


@dataclass
class TvcGmmField:
    """Per-bin mixture parameters over a T x F grid."""

    logits: np.ndarray  # (T, F, K)
    means: np.ndarray  # (T, F, K, 3)
    diag_raw: np.ndarray  # (T, F, K, 3)
    offdiag: np.ndarray  # (T, F, K, 3)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.diag_raw = np.asarray(self.diag_raw, dtype=np.float64)
        self.offdiag = np.asarray(self.offdiag, dtype=np.float64)
        T, F, K = self.logits.shape
        if self.means.shape != (T, F, K, 3):
            raise ValueError("means shape must be (T, F, K, 3)")
        if self.diag_raw.shape != (T, F, K, 3) or self.offdiag.shape != (T, F, K, 3):
            raise ValueError("Cholesky parameter shapes must be (T, F, K, 3)")
        if K < 1:
            raise ValueError("need at least one mixture component")

    @property
    def shape(self):
        return self.logits.shape[:2]

    @property
    def n_components(self) -> int:
        return self.logits.shape[2]

    @classmethod
    def zeros(cls, T: int, F: int, K: int) -> "TvcGmmField":
        return cls(
            logits=np.zeros((T, F, K)),
            means=np.zeros((T, F, K, 3)),
            diag_raw=np.zeros((T, F, K, 3)),
            offdiag=np.zeros((T, F, K, 3)),
        )

    def bin(self, t: int, f: int) -> BinMixture:
        return BinMixture(
            logits=self.logits[t, f],
            means=self.means[t, f],
            diag_raw=self.diag_raw[t, f],
            offdiag=self.offdiag[t, f],
        )

    def weights(self) -> np.ndarray:
        return _softmax(self.logits)

    def permuted(self, order) -> "TvcGmmField":
        order = list(order)
        return TvcGmmField(
            logits=self.logits[..., order],
            means=self.means[..., order, :],
            diag_raw=self.diag_raw[..., order, :],
            offdiag=self.offdiag[..., order, :],
        )


def _softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _build_chol(diag_raw, offdiag):
    """Assemble realized factors; broadcasts over leading dims, returns (..., 3, 3)."""
    d = softplus(diag_raw) + DIAG_FLOOR
    L = np.zeros(d.shape[:-1] + (3, 3))
    L[..., 0, 0] = d[..., 0]
    L[..., 1, 1] = d[..., 1]
    L[..., 2, 2] = d[..., 2]
    L[..., 1, 0] = offdiag[..., 0]
    L[..., 2, 0] = offdiag[..., 1]
    L[..., 2, 1] = offdiag[..., 2]
    return L


def chain_targets(spec) -> np.ndarray:
    """Triplets (y[t,f], y[t+1,f], y[t,f+1]) with edge replication, (T, F, 3)."""
    values = spec.values if isinstance(spec, MelSpectrogram) else np.asarray(spec, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 2 or values.shape[1] < 2:
        raise ValueError("chain targets need a grid of at least 2x2")
    y1 = np.concatenate([values[1:, :], values[-1:, :]], axis=0)
    y2 = np.concatenate([values[:, 1:], values[:, -1:]], axis=1)
    return np.stack([values, y1, y2], axis=-1)


def _logpdf_terms(means, diag_raw, offdiag, x):
    """Component log-densities plus the solve intermediates used by gradients.

    All inputs broadcast; the last axis of `means`/`diag_raw`/`offdiag` has
    size 3 (triplet dims) and `x` has a trailing size-3 axis. Returns
    (logpdf, z, w, d) where z solves L z = x - mu, w solves L^T w = z and d
    is the realized Cholesky diagonal.
    """
    d = softplus(diag_raw) + DIAG_FLOOR
    l21 = offdiag[..., 0]
    l31 = offdiag[..., 1]
    l32 = offdiag[..., 2]
    e = x - means
    z1 = e[..., 0] / d[..., 0]
    z2 = (e[..., 1] - l21 * z1) / d[..., 1]
    z3 = (e[..., 2] - l31 * z1 - l32 * z2) / d[..., 2]
    w3 = z3 / d[..., 2]
    w2 = (z2 - l32 * w3) / d[..., 1]
    w1 = (z1 - l21 * w2 - l31 * w3) / d[..., 0]
    logdet = 2.0 * np.log(d).sum(axis=-1)
    logpdf = -0.5 * (3.0 * LOG_2PI + logdet + z1**2 + z2**2 + z3**2)
    z = np.stack([z1, z2, z3], axis=-1)
    w = np.stack([w1, w2, w3], axis=-1)
    return logpdf, z, w, d


def log_density(component: TvcComponent, x) -> float:
    """Trivariate Gaussian log-density of one component at x."""
    x = np.asarray(x, dtype=np.float64)
    logpdf, _, _, _ = _logpdf_terms(
        np.asarray(component.mean, dtype=np.float64),
        np.asarray(component.chol.diag_raw, dtype=np.float64),
        np.asarray(component.chol.offdiag, dtype=np.float64),
        x,
    )
    return float(logpdf)


def mixture_log_density(components: BinMixture, x) -> float:
    """logsumexp_k(log alpha_k + log N_k(x)) with alpha = softmax(logits)."""
    x = np.asarray(x, dtype=np.float64)
    logpdf, _, _, _ = _logpdf_terms(
        components.means, components.diag_raw, components.offdiag, x[..., None, :]
    )
    lj = _log_softmax(components.logits) + logpdf
    m = np.max(lj, axis=-1)
    return float(m + np.log(np.exp(lj - m[..., None]).sum(axis=-1)))


def _mixture_terms(field: TvcGmmField, targets):
    """Per-bin mixture log-density and responsibilities for batched targets.

    targets: (..., T, F, 3) broadcastable against the field grid.
    Returns (mix_logpdf, r, z, w, d, logpdf) with component axis last.
    """
    x = targets[..., None, :]  # (..., T, F, 1, 3)
    logpdf, z, w, d = _logpdf_terms(field.means, field.diag_raw, field.offdiag, x)
    lj = _log_softmax(field.logits) + logpdf
    m = np.max(lj, axis=-1)
    mix = m + np.log(np.exp(lj - m[..., None]).sum(axis=-1))
    r = np.exp(lj - mix[..., None])
    return mix, r, z, w, d


def nll(field: TvcGmmField, spec) -> float:
    """Mean over bins of the negative mixture log-density at the chain targets."""
    targets = spec if (isinstance(spec, np.ndarray) and spec.ndim >= 3 and spec.shape[-1] == 3) else chain_targets(spec)
    if targets.shape[-3:-1] != field.shape:
        raise ValueError(
            f"field grid {field.shape} does not match spectrogram grid {targets.shape[-3:-1]}"
        )
    mix, _, _, _, _ = _mixture_terms(field, targets)
    return float(-np.mean(mix))


def nll_and_gradient(field: TvcGmmField, targets: np.ndarray):
    """NLL and exact analytic gradients, averaged over all leading axes.

    targets: (T, F, 3) or (N, T, F, 3). Gradients are returned as a dict with
    the same keys and shapes as the field parameter arrays.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape[-3:-1] != field.shape:
        raise ValueError(
            f"field grid {field.shape} does not match target grid {targets.shape[-3:-1]}"
        )
    batched = targets.ndim == 4
    n_total = targets[..., 0].size  # N * T * F
    mix, r, z, w, d = _mixture_terms(field, targets)
    loss = float(-np.mean(mix))

    alpha = _softmax(field.logits)
    sum_axis = 0 if batched else None

    def reduce(a):
        return a.sum(axis=0) if batched else a

    # d(per-bin loss)/d logit_j = alpha_j - r_j
    g_logits = (alpha * (targets[..., 0].size // field.logits[..., 0].size) - reduce(r)) / n_total
    # d logpdf / d mu = w  =>  dL/dmu = -r * w
    g_means = -reduce(r[..., None] * w) / n_total
    # d logpdf / d L_ij = w_i z_j - delta_ij / L_ii  (lower triangle)
    g_diag = -reduce(r[..., None] * (w * z - 1.0 / d)) / n_total
    g_diag_raw = g_diag * _sigmoid(field.diag_raw)
    g_off = np.stack(
        [
            w[..., 1] * z[..., 0],  # l21
            w[..., 2] * z[..., 0],  # l31
            w[..., 2] * z[..., 1],  # l32
        ],
        axis=-1,
    )
    g_offdiag = -reduce(r[..., None] * g_off) / n_total
    grads = {
        "logits": g_logits,
        "means": g_means,
        "diag_raw": g_diag_raw,
        "offdiag": g_offdiag,
    }
    return loss, grads


def nll_gradient(field: TvcGmmField, spec) -> dict:
    """Gradient of nll(field, spec) with respect to every field parameter."""
    targets = spec if (isinstance(spec, np.ndarray) and spec.ndim >= 3 and spec.shape[-1] == 3) else chain_targets(spec)
    _, grads = nll_and_gradient(field, targets)
    return grads
