"""Config-driven experiment recipes: build the dataset, run the requested
method over n_trials, and write every artifact (metrics CSV, checkpoints,
grids/bands with figures, resolved config, metadata) into the output directory.

Per-trial seeds derive from the master seed; reruns with the same config file
and seed produce byte-identical delimited outputs.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
import time
from pathlib import Path

import numpy as np

from . import figures, nn
from .config import ConfigError, ExperimentConfig, derive_seed
from .datasets import (
    CANONICAL_SEED,
    Dataset,
    destandardize,
    gen_toy1d,
    gen_toy2d,
    load_csv_regression,
    load_mnist_idx,
)
from .distill import DistillHistory, distill_from_ensemble, run_distilled_sgld
from .evaluation import (
    EnsembleClassifier,
    EnsembleRegressor,
    MetricsReport,
    StudentClassifier,
    StudentRegressor,
    aggregate_metric,
    kl_grid,
    misclass_rate,
    predictive_grid,
    read_grid_csv,
    test_loglik_class,
    test_loglik_reg,
    write_band_csv,
    write_grid_csv,
)
from .nn import Head, MlpSpec
from .objectives import NoiseModel, make_log_posterior
from .samplers import (
    ChainKind,
    PosteriorEnsemble,
    hmc_sample,
    run_chain,
    save_ensemble,
    sgld_step,
)


def _atomic_bytes(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_text(path: Path, text: str) -> None:
    _atomic_bytes(path, text.encode())


def write_metrics_csv(path: Path, aggregates: list[MetricsReport],
                      per_trial: dict[str, list[float]]) -> None:
    """Aggregate rows first, then one row per trial value."""
    lines = ["metric,value,std_error,n_trials"]
    for r in aggregates:
        lines.append(f"{r.name},{float(r.value)!r},{float(r.standard_error)!r},{r.n_trials}")
    for name in sorted(per_trial):
        for i, v in enumerate(per_trial[name]):
            lines.append(f"{name}/trial{i},{float(v)!r},0.0,1")
    _atomic_text(path, "\n".join(lines) + "\n")


def read_metrics_csv(path) -> dict[str, float]:
    values = {}
    with open(path) as f:
        header = f.readline().strip()
        if header.split(",")[:2] != ["metric", "value"]:
            raise ConfigError(f"{path}: not a metrics file (header {header!r})")
        for line in f:
            parts = line.strip().split(",")
            if len(parts) >= 2:
                values[parts[0]] = float(parts[1])
    return values


def _save_params_atomic(path: Path, spec: MlpSpec, params: np.ndarray) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    nn.save_params(tmp, spec, params)
    os.replace(tmp, path)


def _save_ensemble_atomic(path: Path, ensemble: PosteriorEnsemble) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    save_ensemble(tmp, ensemble)
    os.replace(tmp, path)


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run one experiment end to end; returns the process exit code (0 = ok)."""
    runners = {
        "toy2d": _run_toy2d,
        "toy1d": _run_toy1d,
        "boston": _run_boston,
        "mnist": _run_mnist,
        "conjugate-check": _run_conjugate,
    }
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    per_trial, metadata = runners[cfg.experiment](cfg, out)
    aggregates = [aggregate_metric(name, vals) for name, vals in sorted(per_trial.items())]
    write_metrics_csv(out / "metrics.csv", aggregates, per_trial)
    metadata.update({
        "experiment": cfg.experiment,
        "method": cfg.method,
        "seed": cfg.seed,
        "n_trials": cfg.n_trials,
        "note": cfg.note,
        "wall_seconds": round(time.perf_counter() - started, 3),
        "config": cfg.as_dict(),
    })
    _atomic_text(out / "metadata.json", json.dumps(metadata, indent=2, sort_keys=True) + "\n")
    _atomic_text(out / "resolved.cfg", cfg.resolved_text())
    return 0


def _spec_counts(spec: MlpSpec) -> dict:
    # the weights-only count is what compact "number of parameters" tables use
    return {"widths": list(spec.layer_widths), "head": spec.head.value,
            "n_params_with_biases": nn.num_params(spec),
            "n_weights_without_biases": nn.num_weights(spec)}


def _wants_figures(cfg: ExperimentConfig) -> bool:
    return cfg.get("output", "figures", bool, True)


# ---------------------------------------------------------------------------
# toy 2-D classification


def _fit_classifier(cfg: ExperimentConfig, spec: MlpSpec, ds: Dataset, seed: int):
    """Returns (predictor, artifacts_fn(out_dir), seconds_per_iter)."""
    method = cfg.method
    t0 = time.perf_counter()
    if method == "sgd":
        params = run_chain(ChainKind.SGD, spec, ds.x, ds.y, cfg.chain_config(seed))
        dt = (time.perf_counter() - t0) / cfg.chain_config(seed).n_iters

        def save(out):
            _save_params_atomic(out / "plugin.params", spec, params)

        return StudentClassifier(spec, params), save, dt
    if method == "sgld":
        cc = cfg.chain_config(seed)
        ensemble = run_chain(ChainKind.SGLD, spec, ds.x, ds.y, cc)
        dt = (time.perf_counter() - t0) / cc.n_iters

        def save(out):
            _save_ensemble_atomic(out / "posterior.ensemble", ensemble)

        return EnsembleClassifier(spec, ensemble), save, dt
    if method == "hmc":
        logp, grad = make_log_posterior(spec, ds.x, ds.y,
                                        cfg.get("hmc", "prior_precision", float, 1.0))
        init_ss, chain_ss = np.random.SeedSequence(seed).spawn(2)
        init = nn.init_params(spec, np.random.default_rng(init_ss))
        n_samples = cfg.get("hmc", "n_samples", int)
        ensemble = hmc_sample(logp, grad, init,
                              step_size=cfg.get("hmc", "step_size", float),
                              leapfrog_steps=cfg.get("hmc", "leapfrog_steps", int),
                              n_samples=n_samples,
                              burn_in=cfg.get("hmc", "burn_in", int, 0),
                              rng=np.random.default_rng(chain_ss), spec=spec)
        dt = (time.perf_counter() - t0) / max(1, n_samples)

        def save(out):
            _save_ensemble_atomic(out / "posterior.ensemble", ensemble)

        return EnsembleClassifier(spec, ensemble), save, dt
    if method == "distill":
        student_spec = MlpSpec(cfg.widths("student"), Head.SOFTMAX)
        w, ensemble, history, n_steps = _distill(cfg, spec, student_spec, ds, seed, None)
        dt = (time.perf_counter() - t0) / n_steps

        def save(out):
            _save_params_atomic(out / "student.params", student_spec, w)
            _save_ensemble_atomic(out / "teacher.ensemble", ensemble)
            history.write_csv(out / "history.csv")
            if _wants_figures(cfg):
                figures.plot_history(history.iterations, history.teacher_nll,
                                     history.student_loss, out / "history.png")

        return StudentClassifier(student_spec, w), save, dt
    raise ConfigError(f"[experiment] method: {method!r} not valid here")


def _run_toy2d(cfg: ExperimentConfig, out: Path):
    ds = gen_toy2d(cfg.get("data", "seed", int, CANONICAL_SEED))
    spec = cfg.model_spec(Head.SOFTMAX)
    ref_path = cfg.get("output", "reference_grid", str, "")
    reference = read_grid_csv(ref_path) if ref_path else None
    if reference is not None:
        geom = {"x_range": reference.x_range, "y_range": reference.y_range,
                "nx": reference.nx, "ny": reference.ny}
    else:
        lo = cfg.get("output", "grid_lo", float, -10.0)
        hi = cfg.get("output", "grid_hi", float, 10.0)
        res = cfg.get("output", "grid_resolution", int, 100)
        geom = {"x_range": (lo, hi), "y_range": (lo, hi), "nx": res, "ny": res}

    per_trial: dict[str, list[float]] = {}
    metadata = {"dataset": "toy2d", "n_train": ds.n, "model": _spec_counts(spec)}
    for trial in range(cfg.n_trials):
        seed = derive_seed(cfg.seed, trial)
        predictor, save_artifacts, dt = _fit_classifier(cfg, spec, ds, seed)
        grid = predictive_grid(predictor, geom["x_range"], geom["y_range"],
                               geom["nx"], geom["ny"])
        vals = {
            "train_misclass": misclass_rate(predictor, ds.x, ds.y).value,
            "train_loglik": test_loglik_class(predictor, ds.x, ds.y).value,
        }
        if reference is not None:
            vals["kl_vs_reference"] = kl_grid(reference, grid)
        for k, v in vals.items():
            per_trial.setdefault(k, []).append(v)
        if trial == 0:
            save_artifacts(out)
            write_grid_csv(grid, out / "grid.csv", meta={"method": cfg.method})
            if _wants_figures(cfg):
                figures.plot_class_grid(grid, ds, out / "grid.png",
                                        title=f"toy2d {cfg.method}")
            metadata["seconds_per_iter"] = dt
            if cfg.method == "distill":
                metadata["student"] = _spec_counts(MlpSpec(cfg.widths("student"), Head.SOFTMAX))
            if cfg.method == "hmc":
                metadata["acceptance_rate"] = predictor.ensemble.acceptance_rate
    return per_trial, metadata


# ---------------------------------------------------------------------------
# toy 1-D regression


def _fit_regressor(cfg: ExperimentConfig, spec: MlpSpec, ds: Dataset,
                   noise: NoiseModel, seed: int):
    method = cfg.method
    t0 = time.perf_counter()
    if method == "sgd":
        params = run_chain(ChainKind.SGD, spec, ds.x, ds.y, cfg.chain_config(seed), noise)
        single = PosteriorEnsemble(params[None, :], spec)
        dt = (time.perf_counter() - t0) / cfg.chain_config(seed).n_iters

        def save(out):
            _save_params_atomic(out / "plugin.params", spec, params)

        return EnsembleRegressor(spec, single, noise), save, dt
    if method == "sgld":
        cc = cfg.chain_config(seed)
        ensemble = run_chain(ChainKind.SGLD, spec, ds.x, ds.y, cc, noise)
        dt = (time.perf_counter() - t0) / cc.n_iters

        def save(out):
            _save_ensemble_atomic(out / "posterior.ensemble", ensemble)

        return EnsembleRegressor(spec, ensemble, noise), save, dt
    if method == "hmc":
        logp, grad = make_log_posterior(spec, ds.x, ds.y,
                                        cfg.get("hmc", "prior_precision", float, 1.0), noise)
        init_ss, chain_ss = np.random.SeedSequence(seed).spawn(2)
        init = nn.init_params(spec, np.random.default_rng(init_ss))
        n_samples = cfg.get("hmc", "n_samples", int)
        ensemble = hmc_sample(logp, grad, init,
                              step_size=cfg.get("hmc", "step_size", float),
                              leapfrog_steps=cfg.get("hmc", "leapfrog_steps", int),
                              n_samples=n_samples,
                              burn_in=cfg.get("hmc", "burn_in", int, 0),
                              rng=np.random.default_rng(chain_ss), spec=spec)
        dt = (time.perf_counter() - t0) / max(1, n_samples)

        def save(out):
            _save_ensemble_atomic(out / "posterior.ensemble", ensemble)

        return EnsembleRegressor(spec, ensemble, noise), save, dt
    if method == "distill":
        student_spec = MlpSpec(cfg.widths("student"), Head.REG_MEAN_LOGVAR)
        w, ensemble, history, n_steps = _distill(cfg, spec, student_spec, ds, seed, noise)
        dt = (time.perf_counter() - t0) / n_steps

        def save(out):
            _save_params_atomic(out / "student.params", student_spec, w)
            _save_ensemble_atomic(out / "teacher.ensemble", ensemble)
            history.write_csv(out / "history.csv")
            if _wants_figures(cfg):
                figures.plot_history(history.iterations, history.teacher_nll,
                                     history.student_loss, out / "history.png")

        return StudentRegressor(student_spec, w), save, dt
    raise ConfigError(f"[experiment] method: {method!r} not valid here")


def _distill(cfg: ExperimentConfig, teacher_spec: MlpSpec, student_spec: MlpSpec,
             ds: Dataset, seed: int, noise: NoiseModel | None):
    """Run distillation in the configured mode.

    joint (default): Algorithm-style interleaved loop, one fresh teacher sample
    per student step. ensemble: finish the teacher chain first, then train the
    student against uniformly resampled retained samples; the right choice when
    the teacher chain mixes slowly relative to the student's averaging window.
    """
    mode = cfg.get("student", "mode", str, "joint")
    dconf = cfg.distill_config(seed, ds.x)
    if mode == "joint":
        w, ensemble, history = run_distilled_sgld(teacher_spec, student_spec,
                                                  ds.x, ds.y, dconf, noise)
        return w, ensemble, history, dconf.n_iters
    if mode != "ensemble":
        raise ConfigError(f"[student] mode: unknown mode {mode!r}, expected joint|ensemble")
    ensemble = run_chain(ChainKind.SGLD, teacher_spec, ds.x, ds.y, dconf.teacher, noise)
    n_iters = cfg.get("student", "iters", int, dconf.teacher.n_iters)
    w, history = distill_from_ensemble(teacher_spec, student_spec, ensemble,
                                       dconf.gen, dconf.student, n_iters,
                                       seed=dconf.seed, noise=noise,
                                       history_every=dconf.history_every)
    return w, ensemble, history, dconf.teacher.n_iters + n_iters


def _run_toy1d(cfg: ExperimentConfig, out: Path):
    ds = gen_toy1d(cfg.get("data", "seed", int, CANONICAL_SEED))
    spec = cfg.model_spec(Head.REG_MEAN)
    noise = NoiseModel(cfg.get("model", "noise_precision", float))
    band_lo = cfg.get("output", "band_lo", float, -6.0)
    band_hi = cfg.get("output", "band_hi", float, 6.0)
    band_n = cfg.get("output", "band_points", int, 121)
    probe = cfg.get("output", "std_probe", float, 6.0)
    xs = np.linspace(band_lo, band_hi, band_n)

    per_trial: dict[str, list[float]] = {}
    metadata = {"dataset": "toy1d", "n_train": ds.n, "model": _spec_counts(spec),
                "noise_precision": noise.lambda_n}
    for trial in range(cfg.n_trials):
        seed = derive_seed(cfg.seed, trial)
        predictor, save_artifacts, dt = _fit_regressor(cfg, spec, ds, noise, seed)
        probe_x = np.array([[0.0], [-probe], [probe]])
        _, probe_std = predictor.mean_std(probe_x)
        vals = {
            "std_at_0": float(probe_std[0]),
            "std_at_neg": float(probe_std[1]),
            "std_at_pos": float(probe_std[2]),
            "train_loglik": test_loglik_reg(predictor, ds.x, ds.y).value,
        }
        for k, v in vals.items():
            per_trial.setdefault(k, []).append(v)
        if trial == 0:
            mean, std = predictor.mean_std(xs[:, None])
            save_artifacts(out)
            write_band_csv(xs, mean, std, out / "band.csv", meta={"method": cfg.method})
            if _wants_figures(cfg):
                figures.plot_band(xs, mean, std, ds, out / "band.png",
                                  title=f"toy1d {cfg.method}")
            metadata["seconds_per_iter"] = dt
            if cfg.method == "hmc":
                metadata["acceptance_rate"] = predictor.ensemble.acceptance_rate
    return per_trial, metadata


# ---------------------------------------------------------------------------
# Boston housing (or any numeric regression CSV)


def _run_boston(cfg: ExperimentConfig, out: Path):
    path = cfg.data_path("train_csv")
    target_col = cfg.get("data", "target_column", int, -1)
    train_n = cfg.get("data", "train_n", int, 456)
    test_n = cfg.get("data", "test_n", int, 50)
    standardize_targets = cfg.get("data", "standardize_targets", bool, True)
    spec = cfg.model_spec(Head.REG_MEAN)
    noise = NoiseModel(cfg.get("model", "noise_precision", float))

    per_trial: dict[str, list[float]] = {}
    metadata = {"dataset": str(path), "model": _spec_counts(spec),
                "noise_precision": noise.lambda_n,
                "target_standardization":
                    "log-likelihoods reported in original units via -log(y_std)"
                    if standardize_targets else "targets in original units"}
    for trial in range(cfg.n_trials):
        split_seed = derive_seed(cfg.seed, trial)
        train, test = load_csv_regression(path, target_col, train_n, test_n,
                                          seed=split_seed,
                                          standardize_targets=standardize_targets)
        predictor, save_artifacts, dt = _fit_regressor(cfg, spec, train, noise,
                                                       derive_seed(split_seed, 1))
        loglik = test_loglik_reg(predictor, test.x, test.y).value
        mu, std = predictor.mean_std(test.x)
        if train.y_stats is not None:
            y_scale = float(train.y_stats.std[0])
            loglik -= np.log(y_scale)  # density change of variables back to original units
            mu_orig = destandardize(mu.reshape(-1, 1), train.y_stats)[:, 0]
            y_orig = destandardize(np.asarray(test.y).reshape(-1, 1), train.y_stats)[:, 0]
        else:
            mu_orig, y_orig = mu, np.asarray(test.y)
        vals = {
            "test_loglik": float(loglik),
            "test_rmse": float(np.sqrt(np.mean((mu_orig - y_orig) ** 2))),
        }
        for k, v in vals.items():
            per_trial.setdefault(k, []).append(v)
        if trial == 0:
            save_artifacts(out)
            lines = ["y_true,mu,std"]
            scale = float(train.y_stats.std[0]) if train.y_stats is not None else 1.0
            for yt, m, s in zip(y_orig, mu_orig, std * scale):
                lines.append(f"{float(yt)!r},{float(m)!r},{float(s)!r}")
            _atomic_text(out / "predictions.csv", "\n".join(lines) + "\n")
            if _wants_figures(cfg):
                _plot_pred_vs_true(y_orig, mu_orig, std * scale, out / "pred_vs_true.png")
            metadata["seconds_per_iter"] = dt
            metadata["n_train"], metadata["n_test"] = train.n, test.n
    return per_trial, metadata


def _plot_pred_vs_true(y_true, mu, std, path):
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.6, 4.4))
    ax.errorbar(y_true, mu, yerr=3 * std, fmt="o", ms=3.5, lw=0.7, alpha=0.8)
    lims = [min(y_true.min(), mu.min()), max(y_true.max(), mu.max())]
    ax.plot(lims, lims, color="black", lw=1, ls="--")
    ax.set_xlabel("true target")
    ax.set_ylabel("predicted mean ± 3 std")
    fig.savefig(path, dpi=figures.DPI, bbox_inches="tight")
    plt.close(fig)


# ---------------------------------------------------------------------------
# MNIST-format image classification


def _run_mnist(cfg: ExperimentConfig, out: Path):
    train_images = cfg.data_path("images")
    train_labels = cfg.data_path("labels")
    test_images = cfg.data_path("test_images")
    test_labels = cfg.data_path("test_labels")
    train_n = cfg.get("data", "train_n", int, 50000)
    valid_n = cfg.get("data", "valid_n", int, 10000)
    subset = cfg.get("data", "train_subset", int, 0) or None
    test_subset = cfg.get("data", "test_subset", int, 0) or None
    spec = cfg.model_spec(Head.SOFTMAX)

    train, valid = load_mnist_idx(train_images, train_labels, subset=subset,
                                  split=(train_n, valid_n), seed=cfg.seed)
    test = load_mnist_idx(test_images, test_labels, subset=test_subset)

    per_trial: dict[str, list[float]] = {}
    metadata = {"dataset": "mnist-idx", "n_train": train.n, "n_valid": valid.n,
                "n_test": test.n, "model": _spec_counts(spec),
                "scale": "desk (not paper scale)" if subset else "full training split"}
    for trial in range(cfg.n_trials):
        seed = derive_seed(cfg.seed, trial)
        predictor, save_artifacts, dt = _fit_classifier(cfg, spec, train, seed)
        vals = {
            "test_misclass": misclass_rate(predictor, test.x, test.y).value,
            "test_loglik": test_loglik_class(predictor, test.x, test.y).value,
            "valid_misclass": misclass_rate(predictor, valid.x, valid.y).value,
        }
        for k, v in vals.items():
            per_trial.setdefault(k, []).append(v)
        if trial == 0:
            save_artifacts(out)
            _per_class_report(predictor, test, out, render=_wants_figures(cfg))
            metadata["seconds_per_iter"] = dt
            if cfg.method == "distill":
                metadata["student"] = _spec_counts(MlpSpec(cfg.widths("student"), Head.SOFTMAX))
    return per_trial, metadata


def _per_class_report(predictor, test: Dataset, out: Path, render: bool) -> None:
    import matplotlib.pyplot as plt

    pred = np.argmax(predictor.class_log_probs(test.x), axis=1)
    y = np.asarray(test.y, dtype=int)
    k = int(y.max()) + 1
    lines = ["class,n,errors,error_rate"]
    rates = []
    for c in range(k):
        mask = y == c
        n = int(mask.sum())
        err = int((pred[mask] != c).sum())
        rate = err / n if n else 0.0
        rates.append(rate)
        lines.append(f"{c},{n},{err},{float(rate)!r}")
    _atomic_text(out / "per_class_error.csv", "\n".join(lines) + "\n")
    if render:
        fig, ax = plt.subplots(figsize=(5, 3.4))
        ax.bar(range(k), rates)
        ax.set_xlabel("class")
        ax.set_ylabel("error rate")
        fig.savefig(out / "per_class_error.png", dpi=figures.DPI, bbox_inches="tight")
        plt.close(fig)


# ---------------------------------------------------------------------------
# conjugate 1-D Gaussian check


def _run_conjugate(cfg: ExperimentConfig, out: Path):
    n_obs = cfg.get("conjugate", "n_obs", int, 100)
    data_mean = cfg.get("conjugate", "data_mean", float, 1.0)
    lam_n = cfg.get("conjugate", "noise_precision", float, 1.0)
    lam_0 = cfg.get("conjugate", "prior_precision", float, 1.0)

    per_trial: dict[str, list[float]] = {}
    metadata = {"dataset": f"conjugate({n_obs} obs)", "posterior": "closed form"}
    for trial in range(cfg.n_trials):
        seed = derive_seed(cfg.seed, trial)
        data_rng, chain_rng = (np.random.default_rng(s)
                               for s in np.random.SeedSequence(seed).spawn(2))
        y = data_rng.normal(data_mean, 1.0 / np.sqrt(lam_n), size=n_obs)
        post_prec = lam_0 + n_obs * lam_n
        true_mean = lam_n * y.sum() / post_prec
        true_var = 1.0 / post_prec

        if cfg.method == "sgld":
            eta = cfg.get("conjugate", "eta", float, 1e-3)
            iters = cfg.get("conjugate", "iters", int, 200000)
            burn = cfg.get("conjugate", "burn_in", int, 10000)
            thin = cfg.get("conjugate", "thin", int, 10)
            theta = np.zeros(1)
            kept = []
            for t in range(1, iters + 1):
                grad = -lam_0 * theta + lam_n * (y.sum() - n_obs * theta)
                theta = sgld_step(theta, grad, eta, chain_rng)
                if t > burn and (t - burn) % thin == 0:
                    kept.append(theta[0])
            samples = np.asarray(kept)
        else:  # hmc
            def logp(q):
                return float(-0.5 * lam_0 * q[0] ** 2 - 0.5 * lam_n * np.sum((y - q[0]) ** 2))

            def grad(q):
                return np.array([-lam_0 * q[0] + lam_n * (y.sum() - n_obs * q[0])])

            ens = hmc_sample(logp, grad, np.zeros(1),
                             step_size=cfg.get("hmc", "step_size", float, 0.05),
                             leapfrog_steps=cfg.get("hmc", "leapfrog_steps", int, 10),
                             n_samples=cfg.get("hmc", "n_samples", int, 20000),
                             burn_in=cfg.get("hmc", "burn_in", int, 500),
                             rng=chain_rng, spec=None)
            samples = ens.samples[:, 0]
            metadata["acceptance_rate"] = ens.acceptance_rate

        vals = {
            "sample_mean": float(samples.mean()),
            "sample_var": float(samples.var()),
            "true_mean": float(true_mean),
            "true_var": float(true_var),
            "var_ratio": float(samples.var() / true_var),
            "abs_mean_error_in_post_stds": float(abs(samples.mean() - true_mean) / np.sqrt(true_var)),
        }
        for k, v in vals.items():
            per_trial.setdefault(k, []).append(v)
        if trial == 0:
            _atomic_text(out / "samples.csv",
                         "sample\n" + "\n".join(repr(float(v)) for v in samples) + "\n")
            if _wants_figures(cfg):
                figures.plot_conjugate(samples, true_mean, float(np.sqrt(true_var)),
                                       out / "samples.png")
    return per_trial, metadata


# ---------------------------------------------------------------------------
# grid emission and run comparison (CLI verbs beyond `run`)


def emit_grid(checkpoint_path, out_path, x_range, y_range, nx: int, ny: int | None = None,
              render: bool = True) -> None:
    """Evaluate a stored classifier (single net or ensemble) on a fresh grid."""
    with open(checkpoint_path, "rb") as f:
        magic = f.read(4)
    if magic == nn.PARAMS_MAGIC:
        spec, params = nn.load_params(checkpoint_path)
        predictor = StudentClassifier(spec, params)
    elif magic == nn.ENSEMBLE_MAGIC:
        from .samplers import load_ensemble

        ensemble = load_ensemble(checkpoint_path)
        predictor = EnsembleClassifier(ensemble.spec, ensemble)
    else:
        raise ConfigError(f"{checkpoint_path}: unrecognized checkpoint magic {magic!r}")
    grid = predictive_grid(predictor, x_range, y_range, nx, ny)
    write_grid_csv(grid, out_path, meta={"checkpoint": str(checkpoint_path)})
    if render:
        figures.plot_class_grid(grid, None, str(out_path) + ".png")


_TERM_RE = re.compile(r"^(?:(?P<coef>[-+0-9.eE]+)\s*\*\s*)?(?P<alias>[A-Za-z_]\w*)\.(?P<metric>[\w./\[\]-]+)$")


def _eval_term(term: str, tables: dict[str, dict[str, float]]) -> float:
    term = term.strip()
    m = _TERM_RE.match(term)
    if m:
        alias, metric = m.group("alias"), m.group("metric")
        if alias not in tables:
            raise ConfigError(f"assertion references unknown run alias {alias!r}")
        if metric not in tables[alias]:
            raise ConfigError(f"run {alias!r} has no metric {metric!r}")
        coef = float(m.group("coef")) if m.group("coef") else 1.0
        return coef * tables[alias][metric]
    try:
        return float(term)
    except ValueError:
        raise ConfigError(f"cannot parse assertion term {term!r}") from None


_CMP = {
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
}


def evaluate_assertion(expr: str, tables: dict[str, dict[str, float]]) -> tuple[bool, str]:
    m = re.match(r"^\s*(.+?)\s*(<=|>=|==|<|>)\s*(.+?)\s*$", expr)
    if not m:
        raise ConfigError(f"assertion {expr!r} must look like 'lhs <op> rhs'")
    lhs, op, rhs = _eval_term(m.group(1), tables), m.group(2), _eval_term(m.group(3), tables)
    ok = _CMP[op](lhs, rhs)
    return ok, f"{expr}  [{lhs!r} {op} {rhs!r}] -> {'ok' if ok else 'FAILED'}"


def compare_runs(named_files: list[tuple[str, str]], assertions: list[str] | None = None,
                 out_csv=None) -> tuple[str, bool]:
    """Align shared metrics across metric files; evaluate optional assertions.

    Returns (report text, all assertions passed). Raises ConfigError when the
    files share no metrics.
    """
    if len(named_files) < 2:
        raise ConfigError("compare needs at least two metric files")
    tables = {alias: read_metrics_csv(path) for alias, path in named_files}
    aliases = [a for a, _ in named_files]
    shared = sorted(set.intersection(*(set(t) for t in tables.values())))
    if not shared:
        raise ConfigError("metric files share no metric names")
    width = max(len(s) for s in shared + ["metric"]) + 2
    lines = ["metric".ljust(width) + "".join(a.rjust(16) for a in aliases) + "delta".rjust(16)]
    csv_lines = ["metric," + ",".join(aliases) + ",delta"]
    for name in shared:
        vals = [tables[a][name] for a in aliases]
        delta = vals[-1] - vals[0]
        lines.append(name.ljust(width) + "".join(f"{v:16.6g}" for v in vals) + f"{delta:16.6g}")
        csv_lines.append(f"{name}," + ",".join(repr(v) for v in vals) + f",{delta!r}")
    ok = True
    for expr in assertions or []:
        passed, desc = evaluate_assertion(expr, tables)
        ok = ok and passed
        lines.append(desc)
    text = "\n".join(lines)
    if out_csv:
        _atomic_text(Path(out_csv), "\n".join(csv_lines) + "\n")
    return text, ok
