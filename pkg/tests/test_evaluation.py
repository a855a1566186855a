"""Predictive wrappers and metrics: averages, mixtures, log scores, grid KL."""

import numpy as np
import pytest

from bnn_distill import nn
from bnn_distill.evaluation import (
    EnsembleClassifier,
    EnsembleRegressor,
    Grid2D,
    MetricsReport,
    StudentClassifier,
    StudentRegressor,
    aggregate_metric,
    ensemble_predict_class,
    ensemble_predict_reg,
    kl_grid,
    misclass_rate,
    predictive_grid,
    read_grid_csv,
    test_loglik_class as loglik_class,
    test_loglik_reg as loglik_reg,
    write_band_csv,
    write_grid_csv,
)
from bnn_distill.nn import Head, MlpSpec
from bnn_distill.objectives import LOG_2PI, NoiseModel
from bnn_distill.samplers import PosteriorEnsemble

CLASS_SPEC = MlpSpec((2, 3, 2), Head.SOFTMAX)
REG_SPEC = MlpSpec((1, 3, 1), Head.REG_MEAN)


def _random_ensemble(spec, s, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    base = [nn.init_params(spec, rng) + rng.normal(0, scale, nn.num_params(spec))
            for _ in range(s)]
    return PosteriorEnsemble(np.stack(base), spec)


class TableClassifier:
    """Fixed log-prob table, indexed by row; inputs are just row indices."""

    def __init__(self, log_probs):
        self.table = np.asarray(log_probs, dtype=np.float64)

    def class_log_probs(self, x):
        return self.table[np.asarray(x, dtype=int)[:, 0]]


class ConstantClassifier:
    """Same log-prob row at every input (any input dimension)."""

    def __init__(self, log_probs_row):
        self.row = np.asarray(log_probs_row, dtype=np.float64)

    def class_log_probs(self, x):
        return np.tile(self.row, (np.asarray(x).shape[0], 1))


def test_single_sample_ensemble_equals_plain_softmax():
    ens = _random_ensemble(CLASS_SPEC, 1, seed=3)
    x = np.random.default_rng(1).normal(size=(6, 2))
    a = EnsembleClassifier(CLASS_SPEC, ens).class_log_probs(x)
    b = StudentClassifier(CLASS_SPEC, ens.samples[0]).class_log_probs(x)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_two_certain_models_average_to_half():
    # linear 1->2 nets whose biases force a one-hot softmax each way
    spec = MlpSpec((1, 2), Head.SOFTMAX)
    up = nn.pack(spec, [(np.zeros((1, 2)), np.array([1000.0, -1000.0]))])
    down = nn.pack(spec, [(np.zeros((1, 2)), np.array([-1000.0, 1000.0]))])
    ens = PosteriorEnsemble(np.stack([up, down]), spec)
    pred = ensemble_predict_class(spec, ens, np.array([0.3]))
    np.testing.assert_allclose(pred.probs, [0.5, 0.5], atol=1e-15)


def test_ensemble_average_matches_brute_force():
    ens = _random_ensemble(CLASS_SPEC, 3, seed=9)
    x = np.random.default_rng(2).normal(size=(5, 2))
    got = EnsembleClassifier(CLASS_SPEC, ens).class_probs(x)
    acc = np.zeros((5, 2))
    for theta in ens.samples:
        logits, _ = nn.forward(CLASS_SPEC, theta, x)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        acc += e / e.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(got, acc / 3.0, rtol=1e-12, atol=1e-12)


def test_ensemble_class_output_on_simplex():
    ens = _random_ensemble(CLASS_SPEC, 7, seed=4, scale=2.0)
    x = np.random.default_rng(3).normal(size=(40, 2))
    probs = EnsembleClassifier(CLASS_SPEC, ens).class_probs(x)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-10)
    assert np.all(probs >= 0)


def test_empty_ensemble_rejected():
    empty = PosteriorEnsemble(np.empty((0, nn.num_params(CLASS_SPEC))), CLASS_SPEC)
    with pytest.raises(ValueError):
        EnsembleClassifier(CLASS_SPEC, empty)


def test_reg_single_sample_std_is_noise_floor():
    ens = _random_ensemble(REG_SPEC, 1, seed=5)
    noise = NoiseModel(4.0)
    _, std = ensemble_predict_reg(REG_SPEC, ens, np.array([0.7]), noise)
    assert std == 0.5  # exactly sqrt(1/4)


def test_reg_two_point_mixture():
    # components at -1 and +1 with negligible observation noise: mean 0, std 1
    spec = MlpSpec((1, 1), Head.REG_MEAN)
    minus = nn.pack(spec, [(np.zeros((1, 1)), np.array([-1.0]))])
    plus = nn.pack(spec, [(np.zeros((1, 1)), np.array([1.0]))])
    ens = PosteriorEnsemble(np.stack([minus, plus]), spec)
    mean, std = ensemble_predict_reg(spec, ens, np.array([0.0]), NoiseModel(1e12))
    assert mean == pytest.approx(0.0, abs=1e-12)
    assert std == pytest.approx(1.0, rel=1e-9)


def test_reg_mixture_moments_against_monte_carlo():
    ens = _random_ensemble(REG_SPEC, 5, seed=8)
    noise = NoiseModel(2.0)
    x = np.array([0.4])
    mean, std = ensemble_predict_reg(REG_SPEC, ens, x, noise)
    f = np.array([nn.forward(REG_SPEC, th, x[None, :])[0][0, 0] for th in ens.samples])
    rng = np.random.default_rng(123)
    n = 1_000_000
    draws = f[rng.integers(0, 5, size=n)] + rng.normal(0, np.sqrt(noise.variance), size=n)
    se_mean = draws.std() / np.sqrt(n)
    assert abs(mean - draws.mean()) < 3 * se_mean
    m2 = draws.var()
    se_var = np.sqrt((np.mean((draws - draws.mean()) ** 4) - m2**2) / n)
    assert abs(std**2 - m2) < 3 * se_var


def test_reg_mixture_variance_at_least_noise_floor():
    ens = _random_ensemble(REG_SPEC, 6, seed=10, scale=2.0)
    noise = NoiseModel(0.5)
    reg = EnsembleRegressor(REG_SPEC, ens, noise)
    _, std = reg.mean_std(np.random.default_rng(0).normal(size=(30, 1)))
    assert np.all(std**2 >= noise.variance - 1e-15)


def test_loglik_class_perfect_and_uniform():
    table = np.log(np.array([[1.0 - 1e-300, 1e-300]] * 3))
    perfect = loglik_class(TableClassifier(table), np.arange(3)[:, None], np.zeros(3, int))
    assert perfect.value == pytest.approx(0.0, abs=1e-12)
    uniform = TableClassifier(np.full((4, 10), -np.log(10.0)))
    rep = loglik_class(uniform, np.arange(4)[:, None], np.arange(4) % 10)
    assert rep.value == pytest.approx(-np.log(10.0))


def test_loglik_class_hand_case():
    table = np.log(np.array([[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]]))
    rep = loglik_class(TableClassifier(table), np.arange(3)[:, None],
                            np.array([0, 1, 1]))
    expected = (np.log(0.7) + np.log(0.8) + np.log(0.5)) / 3.0
    assert rep.value == pytest.approx(expected, rel=1e-12)


def test_loglik_reg_single_sample_consistency():
    from bnn_distill.objectives import nll_data_regression

    ens = _random_ensemble(REG_SPEC, 1, seed=6)
    noise = NoiseModel(3.0)
    x = np.array([[0.2], [-1.0]])
    y = np.array([0.5, 1.5])
    rep = loglik_reg(EnsembleRegressor(REG_SPEC, ens, noise), x, y)
    f = nn.forward(REG_SPEC, ens.samples[0], x)[0][:, 0]
    expected = -np.mean([nll_data_regression(f[i], y[i], noise) for i in range(2)])
    assert rep.value == pytest.approx(expected, rel=1e-12)


def test_loglik_reg_distant_components():
    spec = MlpSpec((1, 1), Head.REG_MEAN)
    near = nn.pack(spec, [(np.zeros((1, 1)), np.array([0.0]))])
    far = nn.pack(spec, [(np.zeros((1, 1)), np.array([100.0]))])
    ens = PosteriorEnsemble(np.stack([near, far]), spec)
    reg = EnsembleRegressor(spec, ens, NoiseModel(1.0))
    got = reg.log_density(np.array([[0.0]]), np.array([0.0]))[0]
    assert got == pytest.approx(-0.5 * LOG_2PI - np.log(2.0), rel=1e-12)


def test_loglik_reg_student_exact_fit():
    # mu = y, alpha = 0 gives -0.5 ln 2pi
    spec = MlpSpec((1, 2), Head.REG_MEAN_LOGVAR)
    params = nn.pack(spec, [(np.zeros((1, 2)), np.array([0.7, 0.0]))])
    student = StudentRegressor(spec, params)
    rep = loglik_reg(student, np.array([[9.9]]), np.array([0.7]))
    assert rep.value == pytest.approx(-0.5 * LOG_2PI, rel=1e-12)


def test_loglik_reg_replicated_ensemble_exact():
    base = _random_ensemble(REG_SPEC, 1, seed=12)
    rep4 = PosteriorEnsemble(np.repeat(base.samples, 4, axis=0), REG_SPEC)
    noise = NoiseModel(1.3)
    x = np.random.default_rng(1).normal(size=(10, 1))
    y = np.random.default_rng(2).normal(size=10)
    a = loglik_reg(EnsembleRegressor(REG_SPEC, base, noise), x, y).value
    b = loglik_reg(EnsembleRegressor(REG_SPEC, rep4, noise), x, y).value
    assert a == b  # exact: log-mean-exp of identical terms


def test_misclass_rate_cases():
    always_right = TableClassifier(np.log([[0.9, 0.1], [0.1, 0.9]]))
    x = np.arange(2)[:, None]
    assert misclass_rate(always_right, x, np.array([0, 1])).value == 0.0
    # uniform predictor, tie-break to class 0: wrong on every class-1 example
    uniform = TableClassifier(np.full((4, 2), np.log(0.5)))
    rep = misclass_rate(uniform, np.arange(4)[:, None], np.array([0, 0, 1, 1]))
    assert rep.value == 0.5
    one_wrong = TableClassifier(np.log([[0.9, 0.1], [0.9, 0.1], [0.1, 0.9], [0.9, 0.1]]))
    rep = misclass_rate(one_wrong, np.arange(4)[:, None], np.array([0, 0, 1, 1]))
    assert rep.value == 0.25


def test_grid_cell_centers():
    grid = predictive_grid(ConstantClassifier(np.log([0.5, 0.5])),
                           (-1.0, 1.0), (-1.0, 1.0), 2)
    np.testing.assert_allclose(
        grid.points(),
        [[-0.5, -0.5], [0.5, -0.5], [-0.5, 0.5], [0.5, 0.5]])


def test_grid_constant_predictor():
    grid = predictive_grid(ConstantClassifier(np.log([0.3, 0.7])),
                           (-2.0, 2.0), (-2.0, 2.0), 10)
    np.testing.assert_allclose(grid.probs, np.tile([0.3, 0.7], (100, 1)), rtol=1e-12)


def test_grid_matches_per_cell_ensemble_prediction():
    ens = _random_ensemble(CLASS_SPEC, 3, seed=14)
    clf = EnsembleClassifier(CLASS_SPEC, ens)
    grid = predictive_grid(clf, (-2.0, 2.0), (-2.0, 2.0), 3)
    for i, pt in enumerate(grid.points()):
        pred = ensemble_predict_class(CLASS_SPEC, ens, pt)
        np.testing.assert_allclose(grid.probs[i], pred.probs, rtol=1e-12)


def test_kl_identical_grids_is_zero():
    ens = _random_ensemble(CLASS_SPEC, 2, seed=15)
    grid = predictive_grid(EnsembleClassifier(CLASS_SPEC, ens), (-1, 1), (-1, 1), 4)
    assert kl_grid(grid, grid) == 0.0


def test_kl_hand_computed_value():
    ref = Grid2D((-1, 1), (-1, 1), 2, 2, np.tile([0.5, 0.5], (4, 1)))
    approx = Grid2D((-1, 1), (-1, 1), 2, 2, np.tile([0.25, 0.75], (4, 1)))
    expected = 0.5 * np.log(0.5 / 0.25) + 0.5 * np.log(0.5 / 0.75)
    assert kl_grid(ref, approx) == pytest.approx(expected, rel=1e-12)
    assert kl_grid(ref, approx) == pytest.approx(0.1438, abs=5e-5)


def test_kl_nonnegative_on_random_grids():
    rng = np.random.default_rng(16)
    for _ in range(50):
        p = rng.dirichlet(np.ones(3), size=16)
        q = rng.dirichlet(np.ones(3), size=16)
        a = Grid2D((-1, 1), (-1, 1), 4, 4, p)
        b = Grid2D((-1, 1), (-1, 1), 4, 4, q)
        assert kl_grid(a, b) >= 0.0


def test_kl_geometry_mismatch():
    a = Grid2D((-1, 1), (-1, 1), 2, 2, np.tile([0.5, 0.5], (4, 1)))
    b = Grid2D((-2, 2), (-1, 1), 2, 2, np.tile([0.5, 0.5], (4, 1)))
    with pytest.raises(ValueError, match="geometr"):
        kl_grid(a, b)


def test_kl_epsilon_clamp_keeps_confident_wrong_finite():
    ref = Grid2D((-1, 1), (-1, 1), 2, 2, np.tile([1.0, 0.0], (4, 1)))
    approx = Grid2D((-1, 1), (-1, 1), 2, 2, np.tile([0.0, 1.0], (4, 1)))
    v = kl_grid(ref, approx)
    assert np.isfinite(v)
    assert v == pytest.approx(-np.log(1e-12), rel=1e-12)


def test_grid_csv_roundtrip(tmp_path):
    ens = _random_ensemble(CLASS_SPEC, 2, seed=17)
    grid = predictive_grid(EnsembleClassifier(CLASS_SPEC, ens), (-3, 3), (-1, 2), 5, 4)
    path = tmp_path / "grid.csv"
    write_grid_csv(grid, path, meta={"method": "test"})
    back = read_grid_csv(path)
    assert back.geometry() == grid.geometry()
    np.testing.assert_array_equal(back.probs, grid.probs)  # repr round-trip is exact
    write_grid_csv(grid, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_band_csv(tmp_path):
    xs = np.linspace(-1, 1, 5)
    write_band_csv(xs, xs**2, np.ones(5), tmp_path / "band.csv", meta={"method": "t"})
    text = (tmp_path / "band.csv").read_text()
    assert text.splitlines()[0] == "x,mu,std"
    assert len(text.splitlines()) == 6
    assert (tmp_path / "band.csv.meta.json").exists()


def test_metrics_report_and_aggregation():
    with pytest.raises(ValueError):
        MetricsReport("x", 1.0, -0.1)
    with pytest.raises(ValueError):
        MetricsReport("x", 1.0, 0.0, 0)
    single = aggregate_metric("m", [2.0])
    assert single.standard_error == 0.0 and single.n_trials == 1
    multi = aggregate_metric("m", [1.0, 2.0, 3.0])
    assert multi.value == pytest.approx(2.0)
    assert multi.standard_error == pytest.approx(1.0 / np.sqrt(3.0))
