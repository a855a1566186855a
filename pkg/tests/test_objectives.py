"""Likelihoods, priors, stochastic posterior gradient, distillation losses."""

import numpy as np
import pytest

from bnn_distill import nn, objectives
from bnn_distill.nn import Head, MlpSpec
from bnn_distill.objectives import (
    NoiseModel,
    distill_loss_classification,
    distill_loss_regression,
    log_prior_grad,
    log_softmax,
    nll_data_classification,
    nll_data_regression,
    posterior_grad_estimate,
)

from helpers import assert_grad_close, central_diff_grad


def test_log_softmax_symmetry():
    np.testing.assert_allclose(log_softmax(np.array([0.0, 0.0])), np.log([0.5, 0.5]))


def test_log_softmax_extreme_logits_stable():
    out = log_softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(0.0, abs=1e-12)
    assert out[1] == pytest.approx(-1000.0, rel=1e-12)


def test_log_softmax_normalizes():
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = rng.normal(scale=5.0, size=5)
        assert np.exp(log_softmax(z)).sum() == pytest.approx(1.0, abs=1e-12)


def test_nll_classification_uniform():
    lp = np.full(10, -np.log(10.0))
    assert nll_data_classification(lp, 3) == pytest.approx(2.302585092994046)


def test_nll_classification_certain():
    lp = np.array([0.0, -np.inf, -np.inf])
    assert nll_data_classification(np.where(np.isfinite(lp), lp, -1e30), 0) == 0.0


def test_nll_classification_direct():
    lp = np.log([0.8, 0.2])
    assert nll_data_classification(lp, 1) == pytest.approx(-np.log(0.2))
    with pytest.raises(ValueError):
        nll_data_classification(lp, 2)


def test_nll_regression_residual_free():
    assert nll_data_regression(1.0, 1.0, NoiseModel(1.0)) == pytest.approx(0.9189385332046727)


def test_nll_regression_toy1d_noise():
    # residual 3 with precision 1/9: 0.5 + 0.5*ln 9 + 0.5*ln 2pi
    v = nll_data_regression(0.0, 3.0, NoiseModel(1.0 / 9.0))
    assert v == pytest.approx(2.5175508218727825, rel=1e-12)


def test_nll_regression_housing_precision():
    v = nll_data_regression(2.0, 2.0, NoiseModel(1.25))
    assert v == pytest.approx(0.8073667575475679, rel=1e-12)


def test_log_prior_flat():
    lp, g = log_prior_grad(np.array([3.0, -4.0]), 0.0)
    assert lp == 0.0
    assert np.all(g == 0.0)


def test_log_prior_hand_case():
    lp, g = log_prior_grad(np.array([1.0, 1.0]), 2.0)
    assert lp == pytest.approx(-2.0)
    np.testing.assert_allclose(g, [-2.0, -2.0])


def test_log_prior_grad_finite_difference():
    rng = np.random.default_rng(4)
    p = rng.normal(size=17)
    _, g = log_prior_grad(p, 0.7)
    fd = central_diff_grad(lambda q: log_prior_grad(q, 0.7)[0], p, h_scale=1e-6)
    assert_grad_close(g, fd, 1e-9)


@pytest.fixture
def tiny_class_problem():
    rng = np.random.default_rng(21)
    spec = MlpSpec((2, 4, 3), Head.SOFTMAX)
    params = nn.init_params(spec, rng) + rng.normal(0, 0.1, size=nn.num_params(spec))
    x = rng.normal(size=(5, 2))
    y = rng.integers(0, 3, size=5)
    return spec, params, x, y


def test_posterior_grad_full_batch_equals_exact(tiny_class_problem):
    spec, params, x, y = tiny_class_problem
    g = posterior_grad_estimate(spec, params, x, y, n_total=5, prior_precision=0.5)

    def log_post(p):
        out, _ = nn.forward(spec, p, x)
        lp = objectives.minibatch_log_lik(spec, out, y, None)
        return lp + log_prior_grad(p, 0.5)[0]

    assert_grad_close(g, central_diff_grad(log_post, params), 1e-6)


def test_posterior_grad_minibatch_enumeration_unbiased(tiny_class_problem):
    # averaging the estimator over every size-1 minibatch reproduces the
    # full-batch gradient exactly
    spec, params, x, y = tiny_class_problem
    full = posterior_grad_estimate(spec, params, x, y, n_total=5, prior_precision=0.5)
    acc = np.zeros_like(full)
    for i in range(5):
        acc += posterior_grad_estimate(spec, params, x[i : i + 1], y[i : i + 1],
                                       n_total=5, prior_precision=0.5)
    np.testing.assert_allclose(acc / 5.0, full, rtol=1e-10, atol=1e-12)


def test_posterior_grad_zero_at_regression_stationary_point():
    # single linear unit fitting zero residuals with no prior: gradient vanishes
    spec = MlpSpec((1, 1), Head.REG_MEAN)
    params = np.array([2.0, 0.5])  # y = 2x + 0.5
    x = np.array([[0.0], [1.0], [-1.0]])
    y = 2.0 * x[:, 0] + 0.5
    g = posterior_grad_estimate(spec, params, x, y, n_total=3, prior_precision=0.0,
                                noise=NoiseModel(4.0))
    np.testing.assert_allclose(g, 0.0, atol=1e-14)


def test_posterior_grad_rejects_empty_and_bad_n():
    spec = MlpSpec((1, 1), Head.REG_MEAN)
    with pytest.raises(ValueError):
        posterior_grad_estimate(spec, np.zeros(2), np.zeros((0, 1)), np.zeros(0), 1, 0.0,
                                NoiseModel(1.0))
    with pytest.raises(ValueError):
        posterior_grad_estimate(spec, np.zeros(2), np.zeros((3, 1)), np.zeros(3), 2, 0.0,
                                NoiseModel(1.0))


def test_distill_classification_self_is_entropy():
    p = np.array([0.2, 0.5, 0.3])
    loss, _ = distill_loss_classification(p, np.log(p))
    assert loss == pytest.approx(float(-(p * np.log(p)).sum()))


def test_distill_classification_one_hot():
    beta = np.log([0.6, 0.3, 0.1])
    loss, g = distill_loss_classification(np.array([0.0, 1.0, 0.0]), beta)
    assert loss == pytest.approx(-beta[1])
    np.testing.assert_allclose(g, [0.0, -1.0, 0.0])


def test_distill_classification_hand_case():
    loss, g = distill_loss_classification(np.array([0.3, 0.7]), np.log([0.5, 0.5]))
    assert loss == pytest.approx(np.log(2.0))
    np.testing.assert_allclose(g, [-0.3, -0.7])


def test_distill_classification_rejects_non_simplex():
    with pytest.raises(ValueError):
        distill_loss_classification(np.array([0.5, 0.6]), np.log([0.5, 0.5]))


def test_distill_classification_gibbs_inequality():
    # loss(p, log q) - loss(p, log p) = KL(p || q) >= 0
    rng = np.random.default_rng(17)
    for _ in range(200):
        p = rng.dirichlet(np.ones(4))
        q = rng.dirichlet(np.ones(4))
        ce, _ = distill_loss_classification(p, np.log(q))
        ent, _ = distill_loss_classification(p, np.log(p))
        kl = float((p * (np.log(p) - np.log(q))).sum())
        assert ce - ent == pytest.approx(kl, rel=1e-9, abs=1e-12)
        assert ce - ent >= -1e-12


def test_distill_regression_stationary_point():
    noise = NoiseModel(0.5)
    _, dmu, dalpha = distill_loss_regression(1.3, 1.3, np.log(1.0 / 0.5), noise)
    assert dmu == pytest.approx(0.0, abs=1e-15)
    assert dalpha == pytest.approx(0.0, abs=1e-15)


def test_distill_regression_hand_case():
    loss, dmu, dalpha = distill_loss_regression(1.0, 0.0, 0.0, NoiseModel(1.0))
    assert loss == pytest.approx(1.0)
    assert dmu == pytest.approx(-1.0)
    assert dalpha == pytest.approx(-0.5)


def test_distill_regression_gradients_finite_difference():
    rng = np.random.default_rng(33)
    for _ in range(1000):
        f = rng.normal(scale=2.0)
        mu = rng.normal(scale=2.0)
        alpha = rng.normal(scale=1.5)
        lam = float(rng.uniform(0.2, 5.0))
        noise = NoiseModel(lam)
        _, dmu, dalpha = distill_loss_regression(f, mu, alpha, noise)
        fd = central_diff_grad(
            lambda v: distill_loss_regression(f, v[0], v[1], noise)[0],
            np.array([mu, alpha]), h_scale=1e-6)
        assert_grad_close(np.array([dmu, dalpha]), fd, 1e-8)


def test_distill_regression_grid_search_minimum():
    # coarse grid: the minimum sits at mu = f, alpha = -ln(lambda_n)
    f, noise = 0.8, NoiseModel(1.0 / 3.0)
    mus = np.linspace(f - 2.0, f + 2.0, 41)
    alphas = np.linspace(-3.0, 4.0, 71)
    losses = np.array([[distill_loss_regression(f, m, a, noise)[0] for a in alphas] for m in mus])
    i, j = np.unravel_index(np.argmin(losses), losses.shape)
    assert mus[i] == pytest.approx(f, abs=np.diff(mus)[0])
    assert alphas[j] == pytest.approx(-np.log(noise.lambda_n), abs=np.diff(alphas)[0])


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(0.0)
    with pytest.raises(ValueError):
        NoiseModel(-1.0)
