"""Per-condition fitting, evaluation and bundle persistence."""

import numpy as np
import pytest

from melmix.errors import TrainingError
from melmix.synth import SynthSpec, generate
from melmix.trainer import (
    ModelBundle,
    TrainConfig,
    evaluate,
    fit,
    init_fields,
    load_bundle,
    save_bundle,
    worker_count,
)
from melmix.trainer import _fit_condition_tvcgmm
from melmix.tvcgmm import TvcGmmField, chain_targets, nll


@pytest.fixture(scope="module")
def tiny_spec():
    """6x6 bimodal generator, cheap enough for repeated fits."""
    T = F = 6
    t = np.arange(T)[:, None]
    f = np.arange(F)[None, :]
    bump = np.exp(-(((t - 2.5) / 2.0) ** 2 + ((f - 2.5) / 2.0) ** 2) / 2.0)
    patterns = np.stack([[1.0 + bump, 3.5 + bump], [2.0 - bump, 4.5 - bump]])
    return SynthSpec(patterns=patterns, mode_weights=np.full((2, 2), 0.5), seed=3)


@pytest.fixture(scope="module")
def tiny_dataset(tiny_spec):
    return generate(tiny_spec, 80)


@pytest.fixture(scope="module")
def tiny_fit(tiny_dataset):
    return fit(tiny_dataset, TrainConfig(K=2, steps=400, seed=0, log_every=10))


class TestInit:
    def test_mean_of_targets_without_jitter(self, tiny_dataset):
        bundle = init_fields(tiny_dataset, K=1, seed=0, jitter=0.0)
        targets = np.stack([chain_targets(v) for v in tiny_dataset.for_condition(0)])
        assert np.allclose(bundle.fields[0].means[:, :, 0, :], targets.mean(axis=0))

    def test_uniform_initial_weights(self, tiny_dataset):
        bundle = init_fields(tiny_dataset, K=4, seed=0)
        assert np.allclose(bundle.fields[0].weights(), 0.25)

    def test_beats_zero_field(self, tiny_dataset):
        bundle = init_fields(tiny_dataset, K=1, seed=0)
        targets = np.stack([chain_targets(v) for v in tiny_dataset.for_condition(0)])
        zero = TvcGmmField.zeros(6, 6, 1)
        assert nll(bundle.fields[0], targets) <= nll(zero, targets)

    def test_empty_dataset_rejected(self):
        from melmix.synth import ConditionedDataset

        empty = ConditionedDataset(np.zeros(0, dtype=int), np.zeros((0, 4, 4)))
        with pytest.raises(ValueError):
            init_fields(empty, K=1, seed=0)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(beta1=1.0)
        with pytest.raises(ValueError):
            TrainConfig(head="transformer")


class TestMseHead:
    def test_converges_to_sample_mean(self, tiny_dataset):
        cfg = TrainConfig(head="mse", steps=500, learning_rate=0.05, seed=0)
        bundle = fit(tiny_dataset, cfg)
        for c in (0, 1):
            sample_mean = tiny_dataset.for_condition(c).mean(axis=0)
            assert np.max(np.abs(bundle.mean_tables[c] - sample_mean)) < 1e-3

    def test_loss_is_mse(self, tiny_dataset):
        cfg = TrainConfig(head="mse", steps=500, learning_rate=0.05, seed=0)
        bundle = fit(tiny_dataset, cfg)
        values = tiny_dataset.for_condition(0)
        expected = np.mean((bundle.mean_tables[0][None] - values) ** 2)
        assert bundle.final_losses[0] == pytest.approx(expected, rel=1e-9)


class TestTvcgmmHead:
    def test_loss_curve_decreases(self, tiny_fit):
        losses = [loss for _, loss in tiny_fit.loss_curve]
        assert losses[-1] < losses[0]
        # non-increasing over any 50-step window (5 logged entries apart)
        for i in range(len(losses) - 5):
            assert losses[i + 5] <= losses[i] + 1e-9

    def test_final_nll_improves_at_least_20_percent(self, tiny_dataset, tiny_fit):
        bundle0 = init_fields(tiny_dataset, K=2, seed=0)
        for c in (0, 1):
            targets = np.stack([chain_targets(v) for v in tiny_dataset.for_condition(c)])
            start = nll(bundle0.fields[c], targets)
            assert tiny_fit.final_losses[c] < 0.8 * start

    def test_k2_beats_k1(self, tiny_dataset, tiny_fit):
        k1 = fit(tiny_dataset, TrainConfig(K=1, steps=400, seed=0, log_every=10))
        for c in (0, 1):
            assert tiny_fit.final_losses[c] < k1.final_losses[c]

    def test_mode_recovery(self, tiny_spec, tiny_dataset, tiny_fit):
        # Fitted first-dim component means should land near the two true
        # pattern values (after matching), for the bulk of the bins.
        tol = 3 * tiny_spec.noise_std / np.sqrt(80 * 0.5)
        for c in (0, 1):
            mu0 = tiny_fit.fields[c].means[..., 0]  # (T, F, K)
            hits = 0
            for m in range(2):
                d = np.abs(mu0 - tiny_spec.patterns[c, m][:, :, None]).min(axis=-1)
                hits += int((d < tol).sum())
            assert hits / (2 * 36) > 0.9

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_divergence_reported(self):
        targets = np.full((2, 3, 3, 3), np.inf)
        with pytest.raises(TrainingError, match="non-finite"):
            _fit_condition_tvcgmm(targets, 0, TrainConfig(K=1, steps=5))

    def test_component_permutation_leaves_nll_unchanged(self, tiny_dataset, tiny_fit):
        targets = np.stack([chain_targets(v) for v in tiny_dataset.for_condition(0)])
        field = tiny_fit.fields[0]
        assert nll(field.permuted([1, 0]), targets) == pytest.approx(
            nll(field, targets), rel=1e-12
        )


class TestEvaluate:
    def test_deterministic(self, tiny_dataset, tiny_fit):
        a = evaluate(tiny_fit, tiny_dataset, eval_seed=5, n_eval_samples=3)
        b = evaluate(tiny_fit, tiny_dataset, eval_seed=5, n_eval_samples=3)
        assert a == b

    def test_report_keys(self, tiny_dataset, tiny_fit):
        report = evaluate(tiny_fit, tiny_dataset, n_eval_samples=2)
        for c in (0, 1):
            row = report[c]
            assert {"var_l_gt", "nll", "var_l_mean_field", "var_l_naive", "var_l_conditional"} <= set(row)

    def test_mse_bias_matches_intermode_variance(self, tiny_spec, tiny_dataset):
        cfg = TrainConfig(head="mse", steps=500, learning_rate=0.05, seed=0)
        bundle = fit(tiny_dataset, cfg)
        report = evaluate(bundle, tiny_dataset)
        for c in (0, 1):
            pats = tiny_spec.patterns[c]
            mix_mean = pats.mean(axis=0)
            intermode = np.mean(0.5 * ((pats[0] - mix_mean) ** 2 + (pats[1] - mix_mean) ** 2))
            expected = intermode + tiny_spec.noise_std**2
            assert report[c]["mse"] == pytest.approx(expected, rel=0.15)


class TestPersistence:
    def test_tvcgmm_roundtrip(self, tmp_path, tiny_fit):
        save_bundle(tmp_path / "model", tiny_fit)
        back = load_bundle(tmp_path / "model")
        assert back.head == "tvcgmm"
        assert back.conditions == tiny_fit.conditions
        for c in tiny_fit.conditions:
            a, b = tiny_fit.fields[c], back.fields[c]
            assert np.allclose(a.logits, b.logits, atol=1e-6)
            assert np.allclose(a.means, b.means, atol=1e-5)
            assert np.allclose(a.diag_raw, b.diag_raw, atol=1e-5)
            assert np.allclose(a.offdiag, b.offdiag, atol=1e-5)
            assert back.final_losses[c] == pytest.approx(tiny_fit.final_losses[c], rel=1e-6)

    def test_mse_roundtrip(self, tmp_path, tiny_dataset):
        cfg = TrainConfig(head="mse", steps=200, learning_rate=0.05)
        bundle = fit(tiny_dataset, cfg)
        save_bundle(tmp_path / "mse", bundle)
        back = load_bundle(tmp_path / "mse")
        assert back.head == "mse"
        for c in bundle.conditions:
            assert np.allclose(back.mean_tables[c], bundle.mean_tables[c], atol=1e-5)

    def test_loss_curve_file(self, tmp_path, tiny_fit):
        save_bundle(tmp_path / "model", tiny_fit)
        lines = (tmp_path / "model" / "loss_curve.csv").read_text().splitlines()
        assert lines[0] == "step,loss"
        assert len(lines) - 1 == 400 // 10


class TestWorkers:
    def test_env_cap(self, monkeypatch):
        monkeypatch.setenv("MELMIX_THREADS", "3")
        assert worker_count(8) == 3
        assert worker_count(2) == 2

    def test_invalid_env(self, monkeypatch):
        monkeypatch.setenv("MELMIX_THREADS", "lots")
        assert worker_count(8) == 1

    def test_threaded_fit_matches_serial(self, tiny_dataset, tiny_fit, monkeypatch):
        monkeypatch.setenv("MELMIX_THREADS", "2")
        threaded = fit(tiny_dataset, TrainConfig(K=2, steps=400, seed=0, log_every=10))
        for c in (0, 1):
            assert np.array_equal(threaded.fields[c].means, tiny_fit.fields[c].means)
            assert threaded.final_losses[c] == tiny_fit.final_losses[c]
