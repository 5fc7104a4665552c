"""Trivariate-chain mixture math: densities, NLL and analytic gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from melmix.tvcgmm import (
    Chol3,
    DIAG_FLOOR,
    TvcComponent,
    TvcGmmField,
    chain_targets,
    diag_preactivation,
    log_density,
    mixture_log_density,
    nll,
    nll_and_gradient,
    nll_gradient,
    softplus,
    softplus_inv,
)

LOG_2PI = np.log(2 * np.pi)


def random_field(rng, T=4, F=4, K=3, spread=1.0):
    return TvcGmmField(
        logits=rng.normal(0, 1, (T, F, K)),
        means=rng.normal(0, spread, (T, F, K, 3)),
        diag_raw=rng.normal(0, 0.5, (T, F, K, 3)),
        offdiag=rng.normal(0, 0.5, (T, F, K, 3)),
    )


def scipy_mixture_logpdf(mixture, x):
    """Brute-force oracle via scipy multivariate normals."""
    w = mixture.weights()
    covs = mixture.covariances()
    dens = sum(
        w[k] * multivariate_normal(mean=mixture.means[k], cov=covs[k]).pdf(x)
        for k in range(mixture.n_components)
    )
    return np.log(dens)


class TestChainTargets:
    def test_two_by_two(self):
        grid = np.array([[1.0, 2.0], [3.0, 4.0]])
        targets = chain_targets(grid)
        assert np.array_equal(targets[0, 0], [1.0, 3.0, 2.0])
        assert np.array_equal(targets[0, 1], [2.0, 4.0, 2.0])
        assert np.array_equal(targets[1, 0], [3.0, 3.0, 4.0])
        assert np.array_equal(targets[1, 1], [4.0, 4.0, 4.0])

    def test_corner_fully_replicated(self):
        grid = np.random.default_rng(1).normal(size=(5, 6))
        targets = chain_targets(grid)
        y = grid[-1, -1]
        assert np.array_equal(targets[-1, -1], [y, y, y])

    def test_interior_value_appears_three_times(self):
        grid = np.zeros((4, 4))
        grid[2, 2] = 7.0
        targets = chain_targets(grid)
        hits = int((targets == 7.0).sum())
        assert hits == 3
        assert targets[2, 2, 0] == 7.0  # own y0
        assert targets[1, 2, 1] == 7.0  # time predecessor's y1
        assert targets[2, 1, 2] == 7.0  # frequency predecessor's y2

    def test_small_grid_rejected(self):
        with pytest.raises(ValueError):
            chain_targets(np.zeros((1, 5)))


class TestLogDensity:
    def test_peak_value(self):
        comp = TvcComponent(
            mean=np.array([0.3, -0.2, 1.0]),
            chol=Chol3(diag_preactivation(np.ones(3)), np.zeros(3)),
        )
        assert log_density(comp, comp.mean) == pytest.approx(-1.5 * LOG_2PI, abs=1e-12)

    def test_unit_diagonal_logdet_zero(self):
        chol = Chol3(diag_preactivation(np.ones(3)), np.array([0.7, -0.4, 0.2]))
        cov = chol.covariance()
        sign, logdet = np.linalg.slogdet(cov)
        assert sign == 1.0
        assert logdet == pytest.approx(0.0, abs=1e-12)

    def test_diagonal_covariance_oracle(self):
        # Closed-form quadratic for mu=0, Sigma=diag(1,4,9), x=(1,2,3).
        comp = TvcComponent(
            mean=np.zeros(3),
            chol=Chol3(diag_preactivation(np.array([1.0, 2.0, 3.0])), np.zeros(3)),
        )
        expected = -0.5 * (3 * LOG_2PI + np.log(36.0) + 3.0)
        assert log_density(comp, [1.0, 2.0, 3.0]) == pytest.approx(expected, rel=1e-9)
        assert expected == pytest.approx(-6.04858, abs=5e-5)

    def test_matches_scipy(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            chol = Chol3(rng.normal(0, 1, 3), rng.normal(0, 1, 3))
            comp = TvcComponent(mean=rng.normal(0, 2, 3), chol=chol)
            x = rng.normal(0, 2, 3)
            ref = multivariate_normal(mean=comp.mean, cov=chol.covariance()).logpdf(x)
            assert log_density(comp, x) == pytest.approx(ref, rel=1e-10)

    def test_covariance_spd(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            cov = Chol3(rng.normal(0, 2, 3), rng.normal(0, 2, 3)).covariance()
            assert np.all(np.linalg.eigvalsh(cov) > 0)


class TestMixtureLogDensity:
    def test_singleton_equals_component(self):
        rng = np.random.default_rng(2)
        field = random_field(rng, 1, 1, 1)
        mixture = field.bin(0, 0)
        x = rng.normal(0, 1, 3)
        assert mixture_log_density(mixture, x) == pytest.approx(
            log_density(mixture.component(0), x), rel=1e-12
        )

    def test_identical_components_collapse(self):
        chol_params = (np.zeros(3), np.array([0.3, 0.1, -0.2]))
        field = TvcGmmField(
            logits=np.array([[[0.7, -1.2]]]),
            means=np.tile(np.array([1.0, 2.0, 3.0]), (1, 1, 2, 1)),
            diag_raw=np.tile(chol_params[0], (1, 1, 2, 1)),
            offdiag=np.tile(chol_params[1], (1, 1, 2, 1)),
        )
        mixture = field.bin(0, 0)
        x = np.array([0.9, 2.2, 2.7])
        assert mixture_log_density(mixture, x) == pytest.approx(
            log_density(mixture.component(0), x), rel=1e-12
        )

    def test_symmetric_bimodal_oracle(self):
        # Two standard components at +-2 along the first axis, x = 0.
        field = TvcGmmField.zeros(1, 1, 2)
        field.diag_raw[:] = diag_preactivation(np.ones(3))
        field.means[0, 0, 0, 0] = 2.0
        field.means[0, 0, 1, 0] = -2.0
        expected = np.log(np.exp(-0.5 * 4.0) / np.sqrt((2 * np.pi) ** 3))
        assert mixture_log_density(field.bin(0, 0), np.zeros(3)) == pytest.approx(
            expected, rel=1e-12
        )

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(4)
        field = random_field(rng, 1, 1, 3)
        x = rng.normal(0, 1, 3)
        base = mixture_log_density(field.bin(0, 0), x)
        shifted = TvcGmmField(
            field.logits + 13.5, field.means, field.diag_raw, field.offdiag
        )
        assert mixture_log_density(shifted.bin(0, 0), x) == pytest.approx(base, rel=1e-12)

    def test_matches_scipy(self):
        rng = np.random.default_rng(6)
        field = random_field(rng, 2, 2, 3)
        for t in range(2):
            for f in range(2):
                x = rng.normal(0, 1.5, 3)
                mixture = field.bin(t, f)
                assert mixture_log_density(mixture, x) == pytest.approx(
                    scipy_mixture_logpdf(mixture, x), rel=1e-9
                )

    def test_normalization_monte_carlo(self):
        # Importance-sampled integral of the density within 2%.
        rng = np.random.default_rng(12)
        field = random_field(rng, 1, 1, 2, spread=0.5)
        mixture = field.bin(0, 0)
        proposal = multivariate_normal(mean=np.zeros(3), cov=9.0 * np.eye(3))
        xs = proposal.rvs(size=200_000, random_state=np.random.default_rng(99))
        log_q = proposal.logpdf(xs)
        covs = mixture.covariances()
        w = mixture.weights()
        log_p = np.logaddexp.reduce(
            [
                np.log(w[k]) + multivariate_normal(mixture.means[k], covs[k]).logpdf(xs)
                for k in range(2)
            ],
            axis=0,
        )
        integral = np.mean(np.exp(log_p - log_q))
        assert integral == pytest.approx(1.0, rel=0.02)


class TestNll:
    def test_peak_value(self):
        grid = np.random.default_rng(3).normal(size=(4, 5))
        targets = chain_targets(grid)
        field = TvcGmmField.zeros(4, 5, 1)
        field.diag_raw[:] = diag_preactivation(np.ones(3))
        field.means[:, :, 0, :] = targets
        assert nll(field, grid) == pytest.approx(1.5 * LOG_2PI, abs=1e-9)

    def test_decreases_as_mean_approaches_target(self):
        grid = np.zeros((2, 2))
        target = chain_targets(grid)
        losses = []
        for dist in (3.0, 2.0, 1.0, 0.0):
            field = TvcGmmField.zeros(2, 2, 1)
            field.diag_raw[:] = diag_preactivation(np.ones(3))
            field.means[:, :, 0, :] = target + dist
            losses.append(nll(field, grid))
        assert losses == sorted(losses, reverse=True)

    def test_naive_arithmetic_oracle(self):
        # Brute-force per-bin mixture NLL with plain (non-logsumexp) arithmetic.
        rng = np.random.default_rng(21)
        field = random_field(rng, 5, 5, 3, spread=0.8)
        grid = rng.normal(0, 0.8, (5, 5))
        targets = chain_targets(grid)
        total = 0.0
        for t in range(5):
            for f in range(5):
                mixture = field.bin(t, f)
                w = mixture.weights()
                covs = mixture.covariances()
                dens = sum(
                    w[k] * multivariate_normal(mixture.means[k], covs[k]).pdf(targets[t, f])
                    for k in range(3)
                )
                total -= np.log(dens)
        assert nll(field, grid) == pytest.approx(total / 25.0, abs=1e-8)

    def test_shape_mismatch(self):
        field = TvcGmmField.zeros(3, 3, 1)
        with pytest.raises(ValueError, match="match"):
            nll(field, np.zeros((4, 4)))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(8)
        field = random_field(rng, 3, 3, 3)
        grid = rng.normal(0, 1, (3, 3))
        assert nll(field.permuted([2, 0, 1]), grid) == pytest.approx(
            nll(field, grid), rel=1e-12
        )


def finite_difference_gradients(field, targets, h=1e-5):
    """Central finite differences over every field parameter (oracle)."""
    grads = {}
    for key in ("logits", "means", "diag_raw", "offdiag"):
        arr = getattr(field, key)
        g = np.zeros_like(arr)
        flat = arr.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lo_p, _ = nll_and_gradient(field, targets)
            flat[i] = orig - h
            lo_m, _ = nll_and_gradient(field, targets)
            flat[i] = orig
            g.ravel()[i] = (lo_p - lo_m) / (2 * h)
        grads[key] = g
    return grads


class TestGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(100)
        field = random_field(rng, 2, 2, 2, spread=0.8)
        targets = rng.normal(0, 0.8, (2, 2, 3))
        _, analytic = nll_and_gradient(field, targets)
        numeric = finite_difference_gradients(field, targets)
        for key in analytic:
            denom = np.maximum(np.abs(numeric[key]), 1e-3)
            rel = np.abs(analytic[key] - numeric[key]) / denom
            assert rel.max() < 1e-5, key

    def test_single_gaussian_mean_gradient_oracle(self):
        # K=1 closed form: d nll / d mu = -Sigma^{-1} (x - mu) / n_bins.
        rng = np.random.default_rng(33)
        field = random_field(rng, 2, 3, 1)
        targets = rng.normal(0, 1, (2, 3, 3))
        grads = nll_gradient(field, targets)
        for t in range(2):
            for f in range(3):
                cov = field.bin(t, f).covariances()[0]
                expected = -np.linalg.solve(cov, targets[t, f] - field.means[t, f, 0]) / 6
                assert np.allclose(grads["means"][t, f, 0], expected, rtol=1e-9)

    def test_symmetric_logit_gradients(self):
        field = TvcGmmField.zeros(1, 1, 2)
        field.diag_raw[:] = diag_preactivation(np.ones(3))
        field.means[0, 0, 0, 0] = 1.5
        field.means[0, 0, 1, 0] = -1.5
        grads = nll_gradient(field, np.zeros((1, 1, 3)))
        assert grads["logits"][0, 0, 0] == pytest.approx(grads["logits"][0, 0, 1], abs=1e-14)

    def test_batched_targets_average(self):
        rng = np.random.default_rng(44)
        field = random_field(rng, 2, 2, 2)
        batch = rng.normal(0, 1, (3, 2, 2, 3))
        loss, grads = nll_and_gradient(field, batch)
        singles = [nll_and_gradient(field, batch[i]) for i in range(3)]
        assert loss == pytest.approx(np.mean([s[0] for s in singles]), rel=1e-12)
        for key in grads:
            stacked = np.mean([s[1][key] for s in singles], axis=0)
            assert np.allclose(grads[key], stacked, atol=1e-14)


class TestParameterization:
    def test_softplus_inverse_roundtrip(self):
        vals = np.array([1e-3, 0.1, 1.0, 5.0, 30.0])
        assert np.allclose(softplus(softplus_inv(vals)), vals, rtol=1e-9)

    def test_diag_preactivation_hits_target_std(self):
        stds = np.array([0.05, 0.4, 2.0])
        realized = softplus(diag_preactivation(stds)) + DIAG_FLOOR
        assert np.allclose(realized, stds, rtol=1e-9)

    def test_field_validation(self):
        with pytest.raises(ValueError):
            TvcGmmField(
                logits=np.zeros((2, 2, 1)),
                means=np.zeros((2, 2, 2, 3)),
                diag_raw=np.zeros((2, 2, 1, 3)),
                offdiag=np.zeros((2, 2, 1, 3)),
            )

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(5)
        field = random_field(rng, 3, 3, 4)
        assert np.allclose(field.weights().sum(axis=-1), 1.0, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_density_finite_for_random_parameters(seed):
    rng = np.random.default_rng(seed)
    field = random_field(rng, 1, 1, 2, spread=3.0)
    x = rng.normal(0, 3, 3)
    assert np.isfinite(mixture_log_density(field.bin(0, 0), x))
