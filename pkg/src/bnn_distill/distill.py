"""Joint teacher/student training: one Langevin teacher step, one SGD student
step per iteration, with the student batch drawn fresh from a data generator.

The student never sees ground-truth labels; its targets are the teacher's
predictive outputs at the sampled inputs. Classification students match the
teacher's softmax, regression students output (mu, alpha) with variance
exp(alpha) and are fit to the single-sample teacher mean under the fixed
observation noise.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import Head, MlpSpec
from .objectives import (
    NoiseModel,
    NonFiniteOutputs,
    distill_loss_regression,
    log_softmax,
    minibatch_log_lik,
    softmax,
)
from .samplers import (
    ChainConfig,
    ChainKind,
    DivergedChainError,
    PosteriorEnsemble,
    StepSchedule,
    iterate_chain,
)


@dataclass(frozen=True)
class UniformBox:
    """I.i.d. uniform inputs inside an axis-aligned box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("box needs lower < upper per dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


@dataclass(frozen=True)
class PerturbTrain:
    """Training inputs resampled with replacement plus Gaussian feature noise."""

    source: np.ndarray
    sigma: float

    def __post_init__(self):
        src = np.asarray(self.source, dtype=np.float64)
        if src.ndim != 2 or src.shape[0] < 1:
            raise ValueError("source inputs must be a nonempty (n, d) matrix")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        object.__setattr__(self, "source", src)

    @property
    def dim(self) -> int:
        return self.source.shape[1]


StudentDataGen = UniformBox | PerturbTrain


def gen_student_batch(gen: StudentDataGen, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw an (m, d) input batch from the generator."""
    if m < 1:
        raise ValueError("batch size must be >= 1")
    if isinstance(gen, UniformBox):
        return rng.uniform(gen.lower, gen.upper, size=(m, gen.dim))
    rows = gen.source[rng.integers(0, gen.source.shape[0], size=m)]
    if gen.sigma > 0:
        rows = rows + rng.normal(0.0, gen.sigma, size=rows.shape)
    return rows


@dataclass(frozen=True)
class StudentConfig:
    """Student-side optimizer settings: rho schedule, prior precision gamma, batch size.

    alpha_bias_init seeds the log-variance output bias of a heteroscedastic
    student. Starting the predicted variance high keeps the early
    squared-residual gradients bounded on large-scale targets; the loss then
    anneals alpha down on its own.
    """

    step_size: StepSchedule  # rho_t
    prior_precision: float  # gamma
    batch_size: int
    alpha_bias_init: float | None = None

    def __post_init__(self):
        if self.prior_precision < 0:
            raise ValueError("student prior precision must be >= 0")
        if self.batch_size < 1:
            raise ValueError("student batch size must be >= 1")


def _init_student(student_spec: MlpSpec, rng: np.random.Generator,
                  student: StudentConfig) -> np.ndarray:
    w = nn.init_params(student_spec, rng)
    if student.alpha_bias_init is not None:
        if student_spec.head is not Head.REG_MEAN_LOGVAR:
            raise ValueError("alpha_bias_init only applies to REG_MEAN_LOGVAR students")
        # alpha starts flat at the requested level: random output weights would
        # otherwise swing the initial log-variance negative somewhere in the
        # input domain and blow up e^{-alpha}
        w_last, b_last = nn.unpack(student_spec, w)[-1]
        w_last[:, 1] = 0.0
        b_last[1] = student.alpha_bias_init
    return w


@dataclass(frozen=True)
class DistillConfig:
    """Everything the joint loop needs. n_iters defaults to the teacher's T."""

    teacher: ChainConfig
    student: StudentConfig
    gen: StudentDataGen
    seed: int = 0
    n_iters: int | None = None
    history_every: int = 100

    def __post_init__(self):
        t = self.teacher.n_iters if self.n_iters is None else self.n_iters
        if t not in (0, self.teacher.n_iters):
            raise ValueError(
                f"joint iteration count {t} must be 0 or match the teacher's {self.teacher.n_iters}"
            )
        object.__setattr__(self, "n_iters", t)
        if self.history_every < 1:
            raise ValueError("history_every must be >= 1")
        if self.student.prior_precision >= self.teacher.prior_precision:
            warnings.warn(
                "student prior precision is not smaller than the teacher's; "
                "the student usually sees far more data and wants a weaker prior",
                stacklevel=2,
            )


def student_streams(config: DistillConfig) -> tuple[np.random.Generator, np.random.Generator]:
    """(init, datagen) generators for the student seed, decorrelated from the
    teacher's streams (which derive from the teacher config seed)."""
    init_ss, gen_ss = np.random.SeedSequence(config.seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(gen_ss)


def _check_heads(teacher_spec: MlpSpec, student_spec: MlpSpec) -> None:
    t, s = teacher_spec.head, student_spec.head
    if t is Head.SOFTMAX and s is Head.SOFTMAX:
        if teacher_spec.out_width != student_spec.out_width:
            raise ValueError(
                f"class counts differ: teacher {teacher_spec.out_width}, student {student_spec.out_width}"
            )
        return
    if t is Head.REG_MEAN and s is Head.REG_MEAN_LOGVAR:
        return
    raise ValueError(
        f"unsupported teacher/student head pair ({t.value}, {s.value}); "
        "use softmax->softmax or reg_mean->reg_mean_logvar"
    )


def _student_grad(student_spec: MlpSpec, w: np.ndarray, teacher_spec: MlpSpec,
                  theta: np.ndarray, batch: np.ndarray,
                  noise: NoiseModel | None) -> tuple[np.ndarray, float]:
    """Batch-averaged distillation gradient w.r.t. w, and the batch-mean loss."""
    _check_heads(teacher_spec, student_spec)
    m = batch.shape[0]
    teacher_out, _ = nn.forward(teacher_spec, theta, batch)
    student_out, trace = nn.forward(student_spec, w, batch)
    if teacher_spec.head is Head.SOFTMAX:
        teacher_probs = softmax(teacher_out, axis=1)
        student_lp = log_softmax(student_out, axis=1)
        # d(cross-entropy)/d(logits) composed through log-softmax
        gout = (softmax(student_out, axis=1) - teacher_probs) / m
        loss = float(-(teacher_probs * student_lp).sum() / m)
    else:
        if noise is None:
            raise ValueError("regression distillation needs a NoiseModel")
        f = teacher_out[:, 0]
        mu, alpha = student_out[:, 0], student_out[:, 1]
        losses, dmu, dalpha = distill_loss_regression(f, mu, alpha, noise)
        gout = np.stack([dmu, dalpha], axis=1) / m
        loss = float(np.mean(losses))
    return nn.backward(student_spec, w, trace, gout), loss


def student_step(student_spec: MlpSpec, w: np.ndarray, theta_current: np.ndarray,
                 teacher_spec: MlpSpec, batch: np.ndarray, rho: float, gamma: float,
                 noise: NoiseModel | None = None) -> np.ndarray:
    """One descent step on the batch-averaged distillation loss plus weight decay:

        w' = w - rho * (mean_batch grad_w L(w, theta | x') + gamma * w)

    The teacher is evaluated forward-only; theta is never modified.
    """
    if batch.shape[0] < 1:
        raise ValueError("student batch must be nonempty")
    grad, _ = _student_grad(student_spec, w, teacher_spec, theta_current, batch, noise)
    return w - rho * (grad + gamma * w)


@dataclass
class DistillHistory:
    """Sparse loss curves from the joint loop."""

    iterations: list[int] = field(default_factory=list)
    teacher_nll: list[float] = field(default_factory=list)
    student_loss: list[float] = field(default_factory=list)

    def append(self, t: int, nll: float, loss: float) -> None:
        self.iterations.append(t)
        self.teacher_nll.append(nll)
        self.student_loss.append(loss)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iteration", "teacher_nll", "student_loss"])
            for row in zip(self.iterations, self.teacher_nll, self.student_loss):
                writer.writerow([row[0], repr(float(row[1])), repr(float(row[2]))])


def run_distilled_sgld(teacher_spec: MlpSpec, student_spec: MlpSpec,
                       x: np.ndarray, y: np.ndarray, config: DistillConfig,
                       noise: NoiseModel | None = None,
                       ) -> tuple[np.ndarray, PosteriorEnsemble, DistillHistory]:
    """Interleaved loop: per iteration one SGLD teacher step, then one student
    step against the fresh teacher sample. Teacher iterates are additionally
    retained under the teacher's (burn_in, thin) rule so the same run yields
    both the distilled student and the plain SGLD ensemble.
    """
    _check_heads(teacher_spec, student_spec)
    init_rng, gen_rng = student_streams(config)
    w = _init_student(student_spec, init_rng, config.student)
    history = DistillHistory()
    kept = []
    tc = config.teacher
    sc = config.student
    if config.n_iters == 0:
        empty = PosteriorEnsemble(np.empty((0, nn.num_params(teacher_spec))), teacher_spec)
        return w, empty, history
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    for t, theta, mb_idx in iterate_chain(ChainKind.SGLD, teacher_spec, x, y, tc, noise):
        batch = gen_student_batch(config.gen, sc.batch_size, gen_rng)
        rho = sc.step_size.at(t - 1)
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                grad, loss = _student_grad(student_spec, w, teacher_spec, theta, batch, noise)
            except NonFiniteOutputs:
                raise DivergedChainError("student", t) from None
            w = w - rho * (grad + sc.prior_precision * w)
        if not np.all(np.isfinite(w)):
            raise DivergedChainError("student", t)
        if t > tc.burn_in and (t - tc.burn_in) % tc.thin == 0:
            kept.append(theta.copy())
        if t % config.history_every == 0 or t == tc.n_iters:
            outputs, _ = nn.forward(teacher_spec, theta, x[mb_idx])
            nll = -minibatch_log_lik(teacher_spec, outputs, y[mb_idx], noise) / mb_idx.shape[0]
            history.append(t, nll, loss)
    ensemble = PosteriorEnsemble(
        samples=np.stack(kept) if kept else np.empty((0, nn.num_params(teacher_spec))),
        spec=teacher_spec,
        provenance={"kind": "sgld", "n_iters": tc.n_iters, "burn_in": tc.burn_in,
                    "thin": tc.thin, "batch_size": tc.batch_size,
                    "prior_precision": tc.prior_precision, "seed": tc.seed},
    )
    return w, ensemble, history


def distill_from_ensemble(teacher_spec: MlpSpec, student_spec: MlpSpec,
                          ensemble: PosteriorEnsemble, gen: StudentDataGen,
                          student: StudentConfig, n_iters: int, seed: int = 0,
                          noise: NoiseModel | None = None,
                          history_every: int = 100) -> tuple[np.ndarray, DistillHistory]:
    """Train a student against a finished chain: each step pairs a fresh input
    batch with one teacher sample drawn uniformly from the ensemble."""
    _check_heads(teacher_spec, student_spec)
    if len(ensemble) == 0:
        raise ValueError("ensemble must be nonempty")
    init_ss, gen_ss, pick_ss = np.random.SeedSequence(seed).spawn(3)
    init_rng = np.random.default_rng(init_ss)
    gen_rng = np.random.default_rng(gen_ss)
    pick_rng = np.random.default_rng(pick_ss)
    w = _init_student(student_spec, init_rng, student)
    history = DistillHistory()
    for t in range(1, n_iters + 1):
        theta = ensemble.samples[pick_rng.integers(0, len(ensemble))]
        batch = gen_student_batch(gen, student.batch_size, gen_rng)
        rho = student.step_size.at(t - 1)
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                grad, loss = _student_grad(student_spec, w, teacher_spec, theta, batch, noise)
            except NonFiniteOutputs:
                raise DivergedChainError("student", t) from None
            w = w - rho * (grad + student.prior_precision * w)
        if not np.all(np.isfinite(w)):
            raise DivergedChainError("student", t)
        if t % history_every == 0 or t == n_iters:
            history.append(t, float("nan"), loss)
    return w, history
