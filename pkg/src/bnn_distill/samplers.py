"""Parameter-space samplers: plugin SGD, vanilla SGLD, and an HMC reference.

SGLD follows the standard update
    theta' = theta + (eta/2) * grad_log_posterior_estimate + z,  z ~ N(0, eta I)
with burn-in/thinning applied to the iterate stream. HMC is the small-scale
gold-standard sampler used to produce reference predictives on toy problems.

Seeding discipline: a chain derives three child streams (init, noise,
minibatch) from its seed via SeedSequence spawning, so reruns are bit-identical
and interleaving other consumers (the distillation loop) cannot perturb them.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import nn
from .nn import MlpSpec
from .objectives import NoiseModel, NonFiniteOutputs, posterior_grad_estimate


class DivergedChainError(RuntimeError):
    """Raised when a chain hits non-finite parameters; names the iteration."""

    def __init__(self, what: str, iteration: int):
        super().__init__(f"{what} diverged (non-finite parameters) at iteration {iteration}")
        self.iteration = iteration


class ChainKind(enum.Enum):
    SGD = "sgd"
    SGLD = "sgld"


@dataclass(frozen=True)
class StepSchedule:
    """Constant or step-decay step size: initial * factor**(t // every).

    every = 0 means constant. t is the 0-based iteration index.
    """

    initial: float
    factor: float = 1.0
    every: int = 0

    def __post_init__(self):
        if not self.initial > 0:
            raise ValueError(f"step size must be > 0, got {self.initial}")
        if not self.factor > 0:
            raise ValueError(f"decay factor must be > 0, got {self.factor}")
        if self.every < 0:
            raise ValueError("decay interval must be >= 0")

    def at(self, t: int) -> float:
        if self.every == 0:
            return self.initial
        return self.initial * self.factor ** (t // self.every)


@dataclass(frozen=True)
class ChainConfig:
    """Hyperparameters of one SGD/SGLD chain."""

    step_size: StepSchedule
    n_iters: int  # T
    burn_in: int  # B
    thin: int  # tau
    batch_size: int  # M
    prior_precision: float  # lambda
    seed: int = 0

    def __post_init__(self):
        if not (self.n_iters > self.burn_in >= 0):
            raise ValueError(f"need n_iters > burn_in >= 0, got T={self.n_iters} B={self.burn_in}")
        if self.thin < 1:
            raise ValueError("thinning interval must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.prior_precision < 0:
            raise ValueError("prior precision must be >= 0")

    def retained_count(self) -> int:
        return (self.n_iters - self.burn_in) // self.thin


@dataclass
class PosteriorEnsemble:
    """Thinned sample set from a chain: samples[s] is one flat parameter vector.

    spec is None for targets that are not networks (conjugate checks, raw
    densities); prediction helpers require it.
    """

    samples: np.ndarray  # (S, P)
    spec: MlpSpec | None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.spec is not None and self.samples.size and self.samples.shape[1] != nn.num_params(self.spec):
            raise ValueError("ensemble sample length does not match spec")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def acceptance_rate(self) -> float | None:
        return self.provenance.get("acceptance_rate")


def chain_streams(config: ChainConfig) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """(init, noise, minibatch) generators for a chain seed. Public so callers
    can reproduce a chain step-by-step in tests."""
    init_ss, noise_ss, batch_ss = np.random.SeedSequence(config.seed).spawn(3)
    return (np.random.default_rng(init_ss), np.random.default_rng(noise_ss),
            np.random.default_rng(batch_ss))


def sgd_step(params: np.ndarray, grad_log_post: np.ndarray, eta: float) -> np.ndarray:
    """Plain ascent step on the log posterior."""
    if not eta > 0:
        raise ValueError("step size must be > 0")
    return params + eta * grad_log_post


def sgld_step(params: np.ndarray, grad_log_post: np.ndarray, eta: float,
              rng: np.random.Generator) -> np.ndarray:
    """One Langevin step: half-step gradient plus N(0, eta) noise per coordinate."""
    if not eta > 0:
        raise ValueError("step size must be > 0")
    z = rng.normal(0.0, np.sqrt(eta), size=np.shape(params))
    return params + (0.5 * eta) * grad_log_post + z


def iterate_chain(kind: ChainKind, spec: MlpSpec, x: np.ndarray, y: np.ndarray,
                  config: ChainConfig, noise: NoiseModel | None = None,
                  ) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Yield (t, params_after_step, minibatch_indices) for t = 1..T.

    Minibatches are drawn uniformly with replacement each iteration. All
    randomness comes from streams derived from config.seed, so a consumer that
    interleaves its own work between steps sees the identical trajectory.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 1:
        raise ValueError("dataset must be nonempty")
    init_rng, noise_rng, batch_rng = chain_streams(config)
    params = nn.init_params(spec, init_rng)
    y = np.asarray(y)
    for t in range(1, config.n_iters + 1):
        idx = batch_rng.integers(0, n, size=config.batch_size)
        # overflow here means the chain blew up; detected and raised explicitly
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                grad = posterior_grad_estimate(spec, params, x[idx], y[idx], n,
                                               config.prior_precision, noise)
            except NonFiniteOutputs:
                raise DivergedChainError(f"{kind.value} chain", t) from None
            eta = config.step_size.at(t - 1)
            if kind is ChainKind.SGLD:
                params = sgld_step(params, grad, eta, noise_rng)
            else:
                params = sgd_step(params, grad, eta)
        if not np.all(np.isfinite(params)):
            raise DivergedChainError(f"{kind.value} chain", t)
        yield t, params, idx


def run_chain(kind: ChainKind, spec: MlpSpec, x: np.ndarray, y: np.ndarray,
              config: ChainConfig, noise: NoiseModel | None = None):
    """Run a full chain. SGLD returns a PosteriorEnsemble (iterates with t > B
    and (t - B) % thin == 0 retained, so exactly (T-B)//thin samples); SGD
    returns the final parameter vector."""
    kept = []
    params = None
    for t, params, _ in iterate_chain(kind, spec, x, y, config, noise):
        if kind is ChainKind.SGLD and t > config.burn_in and (t - config.burn_in) % config.thin == 0:
            kept.append(params.copy())
    if kind is ChainKind.SGD:
        return params
    return PosteriorEnsemble(
        samples=np.stack(kept) if kept else np.empty((0, nn.num_params(spec))),
        spec=spec,
        provenance={"kind": "sgld", "n_iters": config.n_iters, "burn_in": config.burn_in,
                    "thin": config.thin, "batch_size": config.batch_size,
                    "prior_precision": config.prior_precision, "seed": config.seed},
    )


def hmc_sample(log_posterior_fn: Callable[[np.ndarray], float],
               grad_fn: Callable[[np.ndarray], np.ndarray],
               init: np.ndarray, step_size: float, leapfrog_steps: int,
               n_samples: int, burn_in: int, rng: np.random.Generator,
               spec: MlpSpec | None = None) -> PosteriorEnsemble:
    """Standard HMC: Gaussian momenta, leapfrog trajectories, Metropolis accept.

    Returns the n_samples post-burn-in positions. Non-finite Hamiltonians
    reject the proposal rather than aborting. The acceptance rate is recorded
    in the ensemble provenance.
    """
    if not step_size > 0:
        raise ValueError("step size must be > 0")
    if leapfrog_steps < 1:
        raise ValueError("need at least one leapfrog step")
    q = np.asarray(init, dtype=np.float64).copy()
    logp = log_posterior_fn(q)
    kept = []
    accepted = 0
    total = burn_in + n_samples
    for it in range(total):
        p0 = rng.normal(size=q.shape)
        q_new, p_new = _leapfrog(grad_fn, q, p0, step_size, leapfrog_steps)
        logp_new = log_posterior_fn(q_new)
        h0 = -logp + 0.5 * np.dot(p0, p0)
        h1 = -logp_new + 0.5 * np.dot(p_new, p_new)
        accept = np.isfinite(h1) and (np.log(rng.uniform()) < h0 - h1)
        if accept:
            q, logp = q_new, logp_new
            accepted += 1
        if it >= burn_in:
            kept.append(q.copy())
    return PosteriorEnsemble(
        samples=np.stack(kept) if kept else np.empty((0, q.shape[0])),
        spec=spec,
        provenance={"kind": "hmc", "acceptance_rate": accepted / total,
                    "step_size": step_size, "leapfrog_steps": leapfrog_steps,
                    "burn_in": burn_in},
    )


def _leapfrog(grad_fn, q, p, eps, n_steps):
    # overflow inside a trajectory is fine: the non-finite Hamiltonian rejects it
    with np.errstate(over="ignore", invalid="ignore"):
        q = q.copy()
        p = p + 0.5 * eps * grad_fn(q)  # grad of log posterior = -grad U
        for i in range(n_steps):
            q = q + eps * p
            g = grad_fn(q)
            p = p + (eps if i < n_steps - 1 else 0.5 * eps) * g
    return q, -p  # negate for reversibility; kinetic energy is symmetric


def save_ensemble(path, ensemble: PosteriorEnsemble) -> None:
    """Checkpoint: magic 'BDKE', spec header, uint64 count, then the samples."""
    with open(path, "wb") as f:
        f.write(nn.ENSEMBLE_MAGIC)
        f.write(nn._spec_header(ensemble.spec))
        f.write(struct.pack("<Q", len(ensemble)))
        f.write(np.ascontiguousarray(ensemble.samples, dtype="<f8").tobytes())


def load_ensemble(path) -> PosteriorEnsemble:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != nn.ENSEMBLE_MAGIC:
        raise ValueError(f"bad magic {buf[:4]!r}, expected {nn.ENSEMBLE_MAGIC!r}")
    spec, off = nn._read_spec_header(buf, 4)
    (count,) = struct.unpack_from("<Q", buf, off)
    off += 8
    p = nn.num_params(spec)
    values = np.frombuffer(buf, dtype="<f8", offset=off)
    if values.shape[0] != count * p:
        raise ValueError(f"ensemble holds {values.shape[0]} values, header promises {count * p}")
    return PosteriorEnsemble(samples=values.reshape(count, p).astype(np.float64), spec=spec)
