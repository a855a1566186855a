"""Posterior-predictive construction and the metrics reported by experiments:
grid KL, per-example test log-likelihood, misclassification rate, predictive
bands.

Predictors wrap either a sample ensemble or a single student/plugin network
behind two small interfaces: classifiers expose class_log_probs(x), regressors
expose mean_std(x) and log_density(x, y). Ensemble regression log-likelihoods
use the exact mixture density (log-mean-exp over components), not a
moment-matched Gaussian.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import Head, MlpSpec
from .objectives import (
    LOG_2PI,
    CategoricalPredictive,
    NoiseModel,
    log_softmax,
    logmeanexp,
)
from .samplers import PosteriorEnsemble

KL_EPSILON = 1e-12  # clamp on approximating probabilities inside KL terms


@dataclass(frozen=True)
class MetricsReport:
    """One named metric with its spread over trials."""

    name: str
    value: float
    standard_error: float = 0.0
    n_trials: int = 1

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.standard_error < 0:
            raise ValueError("standard error must be >= 0")


def aggregate_metric(name: str, per_trial: list[float]) -> MetricsReport:
    """Mean over trials with standard error of the mean (0 for one trial)."""
    vals = np.asarray(per_trial, dtype=np.float64)
    n = vals.shape[0]
    se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return MetricsReport(name, float(vals.mean()), se, n)


class EnsembleClassifier:
    """Monte Carlo posterior predictive: average of per-sample softmaxes."""

    def __init__(self, spec: MlpSpec, ensemble: PosteriorEnsemble):
        if spec.head is not Head.SOFTMAX:
            raise ValueError("EnsembleClassifier needs a SOFTMAX head")
        if len(ensemble) == 0:
            raise ValueError("ensemble is empty")
        self.spec = spec
        self.ensemble = ensemble

    def class_probs(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        acc = np.zeros((x.shape[0], self.spec.out_width))
        for theta in self.ensemble.samples:
            logits, _ = nn.forward(self.spec, theta, x)
            acc += np.exp(log_softmax(logits, axis=1))
        return acc / len(self.ensemble)

    def class_log_probs(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):  # an averaged prob can underflow to 0
            return np.log(self.class_probs(x))


class StudentClassifier:
    """A single softmax network (student or plugin point estimate)."""

    def __init__(self, spec: MlpSpec, params: np.ndarray):
        if spec.head is not Head.SOFTMAX:
            raise ValueError("StudentClassifier needs a SOFTMAX head")
        self.spec = spec
        self.params = np.asarray(params, dtype=np.float64)

    def class_log_probs(self, x: np.ndarray) -> np.ndarray:
        logits, _ = nn.forward(self.spec, self.params, np.asarray(x, dtype=np.float64))
        return log_softmax(logits, axis=1)

    def class_probs(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.class_log_probs(x))


class EnsembleRegressor:
    """Equal-weight Gaussian mixture over teacher samples, width 1/lambda_n.

    With a single sample this is the plugin predictive: std exactly
    sqrt(1/lambda_n) everywhere.
    """

    def __init__(self, spec: MlpSpec, ensemble: PosteriorEnsemble, noise: NoiseModel):
        if spec.head is not Head.REG_MEAN:
            raise ValueError("EnsembleRegressor needs a REG_MEAN head")
        if len(ensemble) == 0:
            raise ValueError("ensemble is empty")
        self.spec = spec
        self.ensemble = ensemble
        self.noise = noise

    def _means(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.empty((len(self.ensemble), x.shape[0]))
        for s, theta in enumerate(self.ensemble.samples):
            f, _ = nn.forward(self.spec, theta, x)
            out[s] = f[:, 0]
        return out

    def mean_std(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        f = self._means(x)
        mean = f.mean(axis=0)
        var = f.var(axis=0) + self.noise.variance  # epistemic spread + observation noise
        return mean, np.sqrt(var)

    def log_density(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        f = self._means(x)
        y = np.asarray(y, dtype=np.float64)
        comp = (-0.5 * self.noise.lambda_n * (y[None, :] - f) ** 2
                + 0.5 * (np.log(self.noise.lambda_n) - LOG_2PI))
        return logmeanexp(comp, axis=0)


class StudentRegressor:
    """Heteroscedastic student: mean mu(x) and variance exp(alpha(x))."""

    def __init__(self, spec: MlpSpec, params: np.ndarray):
        if spec.head is not Head.REG_MEAN_LOGVAR:
            raise ValueError("StudentRegressor needs a REG_MEAN_LOGVAR head")
        self.spec = spec
        self.params = np.asarray(params, dtype=np.float64)

    def _mu_alpha(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out, _ = nn.forward(self.spec, self.params, np.asarray(x, dtype=np.float64))
        return out[:, 0], out[:, 1]

    def mean_std(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mu, alpha = self._mu_alpha(x)
        return mu, np.exp(0.5 * alpha)

    def log_density(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        mu, alpha = self._mu_alpha(x)
        y = np.asarray(y, dtype=np.float64)
        return -0.5 * (alpha + np.exp(-alpha) * (y - mu) ** 2 + LOG_2PI)


def ensemble_predict_class(spec: MlpSpec, ensemble: PosteriorEnsemble,
                           x: np.ndarray) -> CategoricalPredictive:
    """Posterior predictive at one input: the per-sample probability average."""
    probs = EnsembleClassifier(spec, ensemble).class_probs(np.atleast_2d(x))[0]
    return CategoricalPredictive(np.log(probs))


def ensemble_predict_reg(spec: MlpSpec, ensemble: PosteriorEnsemble, x: np.ndarray,
                         noise: NoiseModel) -> tuple[float, float]:
    """Exact mean and std of the predictive mixture at one input."""
    mean, std = EnsembleRegressor(spec, ensemble, noise).mean_std(np.atleast_2d(x))
    return float(mean[0]), float(std[0])


def test_loglik_class(predictor, x: np.ndarray, y: np.ndarray) -> MetricsReport:
    """Mean over examples of log q(y_true | x) under the predictor."""
    if len(y) == 0:
        raise ValueError("test set is empty")
    lp = predictor.class_log_probs(x)
    vals = lp[np.arange(lp.shape[0]), np.asarray(y, dtype=int)]
    return MetricsReport("test_loglik", float(vals.mean()))


def test_loglik_reg(predictor, x: np.ndarray, y: np.ndarray) -> MetricsReport:
    """Mean over examples of the predictive log density at the true target."""
    if len(y) == 0:
        raise ValueError("test set is empty")
    vals = predictor.log_density(x, y)
    return MetricsReport("test_loglik", float(np.mean(vals)))


def misclass_rate(predictor, x: np.ndarray, y: np.ndarray) -> MetricsReport:
    """Fraction of argmax misclassifications; ties break toward the lowest class."""
    if len(y) == 0:
        raise ValueError("test set is empty")
    pred = np.argmax(predictor.class_log_probs(x), axis=1)
    return MetricsReport("misclass_rate", float(np.mean(pred != np.asarray(y, dtype=int))))


@dataclass
class Grid2D:
    """Class probabilities evaluated at the cell centers of a regular 2-D grid.

    Cells are stored row-major over (iy, ix): index = iy * nx + ix. Centers sit
    at lo + (i + 0.5) * (hi - lo) / n per axis.
    """

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    nx: int
    ny: int
    probs: np.ndarray  # (ny * nx, K)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid resolution must be >= 2 per axis")
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape[0] != self.nx * self.ny:
            raise ValueError("probability rows do not match grid size")

    def geometry(self) -> tuple:
        return (tuple(self.x_range), tuple(self.y_range), self.nx, self.ny)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = cell_centers(*self.x_range, self.nx)
        ys = cell_centers(*self.y_range, self.ny)
        return xs, ys

    def points(self) -> np.ndarray:
        return grid_points(self.x_range, self.y_range, self.nx, self.ny)


def cell_centers(lo: float, hi: float, n: int) -> np.ndarray:
    step = (hi - lo) / n
    return lo + (np.arange(n) + 0.5) * step


def grid_points(x_range, y_range, nx: int, ny: int) -> np.ndarray:
    gx, gy = np.meshgrid(cell_centers(*x_range, nx), cell_centers(*y_range, ny))
    return np.stack([gx.ravel(), gy.ravel()], axis=1)  # row-major over (iy, ix)


def predictive_grid(predictor, x_range: tuple[float, float], y_range: tuple[float, float],
                    nx: int, ny: int | None = None) -> Grid2D:
    """Evaluate a 2-D-input classifier at every cell center."""
    ny = nx if ny is None else ny
    pts = grid_points(x_range, y_range, nx, ny)
    probs = np.exp(predictor.class_log_probs(pts))
    return Grid2D(x_range, y_range, nx, ny, probs)


def kl_grid(reference: Grid2D, approx: Grid2D, eps: float = KL_EPSILON) -> float:
    """Mean per-cell KL(reference || approx), approx probabilities clamped at eps.

    Zero reference probabilities contribute nothing (0 log 0 = 0); the clamp
    keeps a confidently wrong approximation finite rather than infinite.
    """
    if reference.geometry() != approx.geometry():
        raise ValueError(
            f"grid geometries differ: {reference.geometry()} vs {approx.geometry()}"
        )
    p = reference.probs
    q = np.maximum(approx.probs, eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return float(terms.sum(axis=1).mean())


def write_grid_csv(grid: Grid2D, path, meta: dict | None = None) -> None:
    """Columns x, y, p0..p{K-1}, one row per cell, plus a JSON metadata sidecar
    recording geometry and the fixed KL conventions."""
    pts = grid.points()
    k = grid.probs.shape[1]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y"] + [f"p{i}" for i in range(k)])
        for row, probs in zip(pts, grid.probs):
            writer.writerow([repr(float(row[0])), repr(float(row[1]))]
                            + [repr(float(v)) for v in probs])
    sidecar = {
        "x_range": list(grid.x_range),
        "y_range": list(grid.y_range),
        "nx": grid.nx,
        "ny": grid.ny,
        "n_classes": k,
        "kl_direction": "KL(reference || this), reference listed first",
        "kl_epsilon": KL_EPSILON,
        "cell_order": "row-major over (iy, ix)",
    }
    if meta:
        sidecar.update(meta)
    with open(str(path) + ".meta.json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def read_grid_csv(path) -> Grid2D:
    meta_path = str(path) + ".meta.json"
    if not os.path.exists(meta_path):
        raise ValueError(f"missing grid metadata sidecar {meta_path}")
    with open(meta_path) as f:
        meta = json.load(f)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header, data = rows[0], rows[1:]
    k = len(header) - 2
    probs = np.array([[float(v) for v in row[2:]] for row in data])
    if k != meta["n_classes"] or probs.shape[0] != meta["nx"] * meta["ny"]:
        raise ValueError(f"grid file {path} inconsistent with its sidecar")
    return Grid2D(tuple(meta["x_range"]), tuple(meta["y_range"]), meta["nx"], meta["ny"], probs)


def write_band_csv(xs: np.ndarray, mean: np.ndarray, std: np.ndarray, path,
                   meta: dict | None = None) -> None:
    """1-D predictive band: columns x, mu, std, with a JSON sidecar."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "mu", "std"])
        for row in zip(xs, mean, std):
            writer.writerow([repr(float(v)) for v in row])
    sidecar = {"n_points": int(len(xs)), "band_halfwidth_stds": 3}
    if meta:
        sidecar.update(meta)
    with open(str(path) + ".meta.json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")
