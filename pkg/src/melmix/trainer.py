"""Gradient-descent fitting of per-condition parameter tables.

The tvcgmm head trains a full mixture field by Adam on the analytic NLL
gradient from the tvcgmm module; the mse head trains a per-bin mean table
with squared-error loss as the over-smooth baseline. Per-condition fits are
independent; MELMIX_THREADS caps how many run concurrently.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import formats
from .errors import TrainingError
from .filters import var_laplacian
from .sampling import SampleConfig, mean_field, sample_conditional, sample_naive
from .synth import ConditionedDataset
from .tvcgmm import TvcGmmField, chain_targets, diag_preactivation, nll, nll_and_gradient

__all__ = [
    "TrainConfig",
    "ModelBundle",
    "Adam",
    "init_fields",
    "fit",
    "evaluate",
    "save_bundle",
    "load_bundle",
    "worker_count",
]


def worker_count(n_tasks: int) -> int:
    """Parallelism cap from the MELMIX_THREADS environment variable."""
    raw = os.environ.get("MELMIX_THREADS", "1")
    try:
        cap = max(1, int(raw))
    except ValueError:
        cap = 1
    return max(1, min(cap, n_tasks))


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings. ``learning_rate`` is the initial Adam step
    size; it is annealed linearly to zero over ``steps``."""

    K: int = 1
    steps: int = 2000
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    head: str = "tvcgmm"  # tvcgmm | mse
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.learning_rate <= 0 or self.steps < 1 or self.K < 1 or self.log_every < 1:
            raise ValueError("learning_rate, steps, K and log_every must be positive")
        if self.head not in ("tvcgmm", "mse"):
            raise ValueError(f"unknown head: {self.head!r}")


@dataclass
class ModelBundle:
    head: str
    config: TrainConfig
    fields: dict = dc_field(default_factory=dict)  # condition -> TvcGmmField
    mean_tables: dict = dc_field(default_factory=dict)  # condition -> (T, F) array
    loss_curve: list = dc_field(default_factory=list)  # [(step, mean loss), ...]
    final_losses: dict = dc_field(default_factory=dict)  # condition -> loss

    @property
    def conditions(self):
        keys = self.fields if self.head == "tvcgmm" else self.mean_tables
        return sorted(keys)


class Adam:
    """Plain Adam over a dict of parameter arrays."""

    def __init__(self, params: dict, lr: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for key, g in grads.items():
            self.m[key] = b1 * self.m[key] + (1 - b1) * g
            self.v[key] = b2 * self.v[key] + (1 - b2) * g**2
            m_hat = self.m[key] / bias1
            v_hat = self.v[key] / bias2
            self.params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _init_field(targets: np.ndarray, K: int, rng: np.random.Generator, jitter: float) -> TvcGmmField:
    """Mean-of-targets init with jitter to break component symmetry."""
    T, F = targets.shape[1:3]
    mean = targets.mean(axis=0)  # (T, F, 3)
    std = np.maximum(targets.std(axis=0), 0.05)  # (T, F, 3)
    means = mean[:, :, None, :] + jitter * rng.standard_normal((T, F, K, 3))
    diag_raw = np.broadcast_to(diag_preactivation(std)[:, :, None, :], (T, F, K, 3)).copy()
    return TvcGmmField(
        logits=np.zeros((T, F, K)),
        means=means,
        diag_raw=diag_raw,
        offdiag=np.zeros((T, F, K, 3)),
    )


def init_fields(dataset: ConditionedDataset, K: int, seed: int, jitter: float = 0.1) -> ModelBundle:
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    cfg = TrainConfig(K=K, seed=seed)
    bundle = ModelBundle(head="tvcgmm", config=cfg)
    for cond in dataset.conditions:
        targets = np.stack([chain_targets(v) for v in dataset.for_condition(cond)])
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(cond,)))
        bundle.fields[cond] = _init_field(targets, K, rng, jitter)
    return bundle


def _fit_condition_tvcgmm(targets: np.ndarray, cond: int, cfg: TrainConfig):
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(cond,)))
    field = _init_field(targets, cfg.K, rng, jitter=0.1)
    params = {
        "logits": field.logits,
        "means": field.means,
        "diag_raw": field.diag_raw,
        "offdiag": field.offdiag,
    }
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    curve = []
    last_finite = None
    for step in range(1, cfg.steps + 1):
        loss, grads = nll_and_gradient(field, targets)
        if not np.isfinite(loss):
            raise TrainingError(
                f"non-finite NLL at step {step} for condition {cond}; "
                f"last finite loss {last_finite}"
            )
        last_finite = loss
        # Replicated chain coordinates at the last row/column make the
        # per-bin sample covariance singular there; with a constant step
        # size Adam limit-cycles on those bins and leaves the time-lag
        # regression coefficients far from their optimum, which in turn
        # destabilises conditional sampling. Annealing the step to zero
        # lets every bin settle.
        opt.lr = cfg.learning_rate * (1.0 - (step - 1) / cfg.steps)
        opt.step(grads)
        if step % cfg.log_every == 0:
            curve.append((step, loss))
    final_loss = nll(field, targets)
    return field, curve, final_loss


def _fit_condition_mse(values: np.ndarray, cond: int, cfg: TrainConfig):
    table = np.zeros(values.shape[1:])
    opt = Adam({"table": table}, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    sample_mean = values.mean(axis=0)
    n_bins = table.size
    curve = []
    for step in range(1, cfg.steps + 1):
        loss = float(np.mean((table[None] - values) ** 2))
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite MSE at step {step} for condition {cond}")
        grad = 2.0 * (table - sample_mean) / n_bins
        opt.lr = cfg.learning_rate * (1.0 - (step - 1) / cfg.steps)
        opt.step({"table": grad})
        if step % cfg.log_every == 0:
            curve.append((step, loss))
    final_loss = float(np.mean((table[None] - values) ** 2))
    return table, curve, final_loss


def fit(dataset: ConditionedDataset, cfg: TrainConfig) -> ModelBundle:
    """Full-batch Adam per condition; returns fields (or mean tables) + loss log."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    conditions = dataset.conditions
    shapes = {dataset.for_condition(c).shape[1:] for c in conditions}
    if len(shapes) != 1:
        raise ValueError("all dataset grids must share one shape")

    def run(cond: int):
        if cfg.head == "tvcgmm":
            targets = np.stack([chain_targets(v) for v in dataset.for_condition(cond)])
            return _fit_condition_tvcgmm(targets, cond, cfg)
        return _fit_condition_mse(dataset.for_condition(cond), cond, cfg)

    workers = worker_count(len(conditions))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, conditions))
    else:
        results = [run(c) for c in conditions]

    bundle = ModelBundle(head=cfg.head, config=cfg)
    per_cond_curves = []
    for cond, (model, curve, final_loss) in zip(conditions, results):
        if cfg.head == "tvcgmm":
            bundle.fields[cond] = model
        else:
            bundle.mean_tables[cond] = model
        bundle.final_losses[cond] = final_loss
        per_cond_curves.append(curve)
    # One logged row per log interval: mean loss across conditions.
    for entries in zip(*per_cond_curves):
        step = entries[0][0]
        bundle.loss_curve.append((step, float(np.mean([e[1] for e in entries]))))
    return bundle


def evaluate(
    bundle: ModelBundle,
    dataset: ConditionedDataset,
    eval_seed: int = 0,
    n_eval_samples: int = 5,
) -> dict:
    """Deterministic per-condition metric table.

    For the tvcgmm head: dataset NLL plus smoothness of the mean field and of
    naive/conditional samples (fixed evaluation seeds). For the mse head: MSE
    and smoothness of the mean table. Ground-truth sample smoothness is
    reported for every condition.
    """
    report = {}
    for cond in bundle.conditions:
        values = dataset.for_condition(cond)
        row = {
            "var_l_gt": float(np.mean([var_laplacian(v) for v in values])),
        }
        if bundle.head == "tvcgmm":
            field = bundle.fields[cond]
            targets = np.stack([chain_targets(v) for v in values])
            row["nll"] = nll(field, targets)
            row["var_l_mean_field"] = var_laplacian(mean_field(field).values)
            naive = [
                var_laplacian(sample_naive(field, SampleConfig("naive", eval_seed + i)).values)
                for i in range(n_eval_samples)
            ]
            cond_samples = [
                var_laplacian(
                    sample_conditional(field, SampleConfig("conditional", eval_seed + i)).values
                )
                for i in range(n_eval_samples)
            ]
            row["var_l_naive"] = float(np.mean(naive))
            row["var_l_conditional"] = float(np.mean(cond_samples))
        else:
            table = bundle.mean_tables[cond]
            row["mse"] = float(np.mean((table[None] - values) ** 2))
            row["var_l_mean_field"] = var_laplacian(table)
        report[cond] = row
    return report


def save_bundle(out_dir, bundle: ModelBundle) -> None:
    """One TVCG file per condition plus a JSON manifest and a CSV loss curve."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "head": bundle.head,
        "conditions": bundle.conditions,
        "config": {
            "K": bundle.config.K,
            "steps": bundle.config.steps,
            "learning_rate": bundle.config.learning_rate,
            "beta1": bundle.config.beta1,
            "beta2": bundle.config.beta2,
            "epsilon": bundle.config.epsilon,
            "head": bundle.config.head,
            "seed": bundle.config.seed,
            "log_every": bundle.config.log_every,
        },
        "final_losses": {str(c): bundle.final_losses.get(c) for c in bundle.conditions},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "loss_curve.csv"), "w") as fh:
        fh.write("step,loss\n")
        for step, loss in bundle.loss_curve:
            fh.write(f"{step},{loss:.8f}\n")
    for cond in bundle.conditions:
        if bundle.head == "tvcgmm":
            formats.write_tvcg(os.path.join(out_dir, f"condition_{cond}.tvcg"), bundle.fields[cond])
        else:
            # A mean table is a K=1 field with only the first mean dim meaningful.
            table = bundle.mean_tables[cond]
            field = TvcGmmField.zeros(*table.shape, 1)
            field.means[:, :, 0, :] = chain_targets(table)
            formats.write_tvcg(os.path.join(out_dir, f"condition_{cond}.tvcg"), field)


def load_bundle(model_dir) -> ModelBundle:
    with open(os.path.join(model_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    cfg = TrainConfig(**manifest["config"])
    bundle = ModelBundle(head=manifest["head"], config=cfg)
    for cond in manifest["conditions"]:
        field = formats.read_tvcg(os.path.join(model_dir, f"condition_{cond}.tvcg"))
        if bundle.head == "tvcgmm":
            bundle.fields[cond] = field
        else:
            bundle.mean_tables[cond] = field.means[:, :, 0, 0]
    bundle.final_losses = {int(c): v for c, v in manifest["final_losses"].items()}
    return bundle
