"""Log-likelihoods, Gaussian priors, and the two distillation losses.

All gradients here are closed-form; the finite-difference suite in the tests
checks every one of them. Conventions: lambda_n is the observation noise
precision for regression, log densities are fully normalized (the 0.5*ln(2*pi)
term is kept) so test log-likelihoods are comparable across models, while the
regression distillation loss drops additive constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import Head, MlpSpec

LOG_2PI = float(np.log(2.0 * np.pi))


class NonFiniteOutputs(ValueError):
    """Network outputs overflowed; chains translate this into a divergence error."""


@dataclass(frozen=True)
class NoiseModel:
    """Fixed observation-noise precision for regression likelihoods."""

    lambda_n: float

    def __post_init__(self):
        if not self.lambda_n > 0:
            raise ValueError(f"noise precision must be > 0, got {self.lambda_n}")

    @property
    def variance(self) -> float:
        return 1.0 / self.lambda_n


@dataclass(frozen=True)
class CategoricalPredictive:
    """Distribution over K classes, stored as log-probabilities."""

    log_probs: np.ndarray

    def __post_init__(self):
        lp = np.asarray(self.log_probs, dtype=np.float64)
        object.__setattr__(self, "log_probs", lp)
        z = logsumexp(lp)
        if abs(z) > 1e-10:
            raise ValueError(f"log-probs not normalized: logsumexp = {z}")

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


@dataclass(frozen=True)
class GaussianPredictive:
    """Gaussian with unconstrained log-variance (alpha)."""

    mu: float
    log_var: float

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.log_var)):
            raise ValueError("Gaussian predictive fields must be finite")

    @property
    def std(self) -> float:
        return float(np.exp(0.5 * self.log_var))


def logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) if axis is not None else float(out.squeeze())


def logmeanexp(a: np.ndarray, axis=None) -> np.ndarray:
    """log(mean(exp(a))). Exact (bitwise) for identical entries: reduces to max + log(1)."""
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.mean(np.exp(a - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) if axis is not None else float(out.squeeze())


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted log-softmax along axis; exp of the result sums to 1."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteOutputs("logits must be finite")
    m = np.max(z, axis=axis, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(logits, axis=axis))


def nll_data_classification(log_probs: np.ndarray, label: int) -> float:
    lp = np.asarray(log_probs)
    if not 0 <= label < lp.shape[-1]:
        raise ValueError(f"label {label} out of range for {lp.shape[-1]} classes")
    return float(-lp[..., label])


def nll_data_regression(f: float, y: float, noise: NoiseModel) -> float:
    """Normalized Gaussian NLL: 0.5*lambda_n*(y-f)^2 - 0.5*ln(lambda_n) + 0.5*ln(2*pi)."""
    r = y - f
    return float(0.5 * noise.lambda_n * r * r - 0.5 * np.log(noise.lambda_n) + 0.5 * LOG_2PI)


def log_prior_grad(params: np.ndarray, precision: float) -> tuple[float, np.ndarray]:
    """Spherical Gaussian prior: unnormalized log density and its gradient."""
    if precision < 0:
        raise ValueError(f"prior precision must be >= 0, got {precision}")
    p = np.asarray(params, dtype=np.float64)
    return float(-0.5 * precision * np.dot(p, p)), -precision * p


def _loglik_output_grad(spec: MlpSpec, outputs: np.ndarray, y: np.ndarray,
                        noise: NoiseModel | None) -> np.ndarray:
    """Rows of d log p(y_i | x_i, theta) / d outputs_i for the teacher heads."""
    if spec.head is Head.SOFTMAX:
        probs = softmax(outputs, axis=1)
        g = -probs
        g[np.arange(outputs.shape[0]), np.asarray(y, dtype=int)] += 1.0
        return g
    if spec.head is Head.REG_MEAN:
        if noise is None:
            raise ValueError("regression likelihood needs a NoiseModel")
        resid = np.asarray(y, dtype=np.float64).reshape(-1, 1) - outputs
        return noise.lambda_n * resid
    raise ValueError(f"head {spec.head} has no data likelihood (teacher heads only)")


def minibatch_log_lik(spec: MlpSpec, outputs: np.ndarray, y: np.ndarray,
                      noise: NoiseModel | None) -> float:
    """Sum over the batch of log p(y_i | x_i, theta), from raw outputs."""
    if spec.head is Head.SOFTMAX:
        lp = log_softmax(outputs, axis=1)
        return float(lp[np.arange(outputs.shape[0]), np.asarray(y, dtype=int)].sum())
    if spec.head is Head.REG_MEAN:
        if noise is None:
            raise ValueError("regression likelihood needs a NoiseModel")
        r = np.asarray(y, dtype=np.float64) - outputs[:, 0]
        n = r.shape[0]
        return float(-0.5 * noise.lambda_n * np.dot(r, r)
                     + 0.5 * n * (np.log(noise.lambda_n) - LOG_2PI))
    raise ValueError(f"head {spec.head} has no data likelihood (teacher heads only)")


def posterior_grad_estimate(spec: MlpSpec, params: np.ndarray,
                            x_mb: np.ndarray, y_mb: np.ndarray, n_total: int,
                            prior_precision: float,
                            noise: NoiseModel | None = None) -> np.ndarray:
    """Stochastic log-posterior gradient with the N/M likelihood rescaling.

    grad log p(theta | lambda) + (N/M) * sum_{i in batch} grad log p(y_i|x_i,theta).
    Unbiased over uniform minibatches; equals the exact full-batch gradient
    when the minibatch is the whole dataset.
    """
    x_mb = np.asarray(x_mb, dtype=np.float64)
    m = x_mb.shape[0]
    if m < 1:
        raise ValueError("minibatch must be nonempty")
    if n_total < m:
        raise ValueError(f"n_total={n_total} smaller than minibatch size {m}")
    outputs, trace = nn.forward(spec, params, x_mb)
    gout = _loglik_output_grad(spec, outputs, y_mb, noise)
    _, prior_g = log_prior_grad(params, prior_precision)
    return prior_g + (n_total / m) * nn.backward(spec, params, trace, gout)


def make_log_posterior(spec: MlpSpec, x: np.ndarray, y: np.ndarray,
                       prior_precision: float, noise: NoiseModel | None = None):
    """Full-batch log posterior and gradient closures (for HMC and diagnostics)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]

    def logp(params: np.ndarray) -> float:
        outputs, _ = nn.forward(spec, params, x)
        lp_prior, _ = log_prior_grad(params, prior_precision)
        return lp_prior + minibatch_log_lik(spec, outputs, y, noise)

    def grad(params: np.ndarray) -> np.ndarray:
        return posterior_grad_estimate(spec, params, x, y, n, prior_precision, noise)

    return logp, grad


def distill_loss_classification(teacher_probs: np.ndarray,
                                student_log_probs: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross-entropy of student log-probs under teacher probs, and d loss / d log-probs.

    The returned gradient is w.r.t. the student's log-probabilities beta;
    composing with the log-softmax Jacobian gives the logit gradient
    softmax(student) - teacher_probs.
    """
    p = np.asarray(teacher_probs, dtype=np.float64)
    if abs(p.sum() - 1.0) > 1e-8 or np.any(p < 0):
        raise ValueError(f"teacher probabilities must lie on the simplex, sum={p.sum()}")
    loss = float(-np.dot(p, np.asarray(student_log_probs, dtype=np.float64)))
    return loss, -p


def distill_loss_regression(f_teacher, mu, alpha, noise: NoiseModel):
    """Heteroscedastic-Gaussian distillation loss and its (mu, alpha) gradients.

    loss   = 0.5 * [alpha + exp(-alpha) * ((f - mu)^2 + 1/lambda_n)]
    dmu    = exp(-alpha) * (mu - f)
    dalpha = 0.5 * [1 - exp(-alpha) * ((f - mu)^2 + 1/lambda_n)]

    Additive constants are dropped. Scalar or elementwise on arrays.
    """
    f = np.asarray(f_teacher, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    inv_var = np.exp(-alpha)
    sq = (f - mu) ** 2 + noise.variance
    loss = 0.5 * (alpha + inv_var * sq)
    dmu = inv_var * (mu - f)
    dalpha = 0.5 * (1.0 - inv_var * sq)
    if loss.ndim == 0:
        return float(loss), float(dmu), float(dalpha)
    return loss, dmu, dalpha
