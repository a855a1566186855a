"""Experiment configuration: INI-style files with typed, validated access.

Files are flat key = value pairs under [sections]; command-line overrides are
applied before validation. The fully resolved configuration is echoed into the
output directory of every run so results are reproducible from the artifacts
alone.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distill import DistillConfig, PerturbTrain, StudentConfig, UniformBox
from .nn import Head, MlpSpec
from .samplers import ChainConfig, StepSchedule

DATA_DIR_ENV = "BNN_DISTILL_DATA_DIR"

EXPERIMENTS = ("toy2d", "toy1d", "boston", "mnist", "conjugate-check")
METHODS = ("sgd", "sgld", "hmc", "distill")

# hmc is only tractable on the small problems
_ALLOWED = {
    "toy2d": ("sgd", "sgld", "hmc", "distill"),
    "toy1d": ("sgd", "sgld", "hmc", "distill"),
    "boston": ("sgd", "sgld", "distill"),
    "mnist": ("sgd", "sgld", "distill"),
    "conjugate-check": ("sgld", "hmc"),
}


class ConfigError(ValueError):
    """Invalid or missing configuration value; message names field and reason."""


@dataclass
class ExperimentConfig:
    """Typed view over one parsed config file plus overrides."""

    raw: configparser.ConfigParser
    path: str
    experiment: str = ""
    method: str = ""
    seed: int = 0
    n_trials: int = 1
    note: str = ""
    out_dir: Path = field(default_factory=lambda: Path("runs/out"))

    def __post_init__(self):
        self.experiment = self._get("experiment", "name", str)
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"[experiment] name: unknown experiment {self.experiment!r}, "
                              f"expected one of {', '.join(EXPERIMENTS)}")
        self.method = self._get("experiment", "method", str)
        if self.method not in METHODS:
            raise ConfigError(f"[experiment] method: unknown method {self.method!r}, "
                              f"expected one of {', '.join(METHODS)}")
        if self.method not in _ALLOWED[self.experiment]:
            raise ConfigError(f"[experiment] method: {self.method!r} not supported for "
                              f"{self.experiment!r} (allowed: {', '.join(_ALLOWED[self.experiment])})")
        self.seed = self._get("experiment", "seed", int, 0)
        self.n_trials = self._get("experiment", "n_trials", int, 1)
        if self.n_trials < 1:
            raise ConfigError("[experiment] n_trials: must be >= 1")
        self.note = self._get("experiment", "note", str, "")
        self.out_dir = Path(self._get("output", "dir", str, "runs/" + Path(self.path).stem))

    def _get(self, section: str, key: str, cast, default=None):
        if not self.raw.has_option(section, key):
            if default is None:
                raise ConfigError(f"[{section}] {key}: required but missing")
            return default
        value = self.raw.get(section, key)
        try:
            if cast is bool:
                return value.strip().lower() in ("1", "true", "yes", "on")
            return cast(value)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot parse {value!r} as {cast.__name__}") from None

    def get(self, section: str, key: str, cast=str, default=None):
        return self._get(section, key, cast, default)

    def widths(self, section: str, key: str = "widths", default: str | None = None) -> tuple[int, ...]:
        text = self._get(section, key, str, default)
        try:
            return tuple(int(v) for v in text.split(","))
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot parse {text!r} as comma-separated ints") from None

    def floats(self, section: str, key: str, default: str | None = None) -> np.ndarray:
        text = self._get(section, key, str, default)
        try:
            return np.array([float(v) for v in text.split(",")])
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot parse {text!r} as comma-separated floats") from None

    def schedule(self, section: str, prefix: str) -> StepSchedule:
        try:
            return StepSchedule(
                initial=self._get(section, prefix, float),
                factor=self._get(section, f"{prefix}_decay_factor", float, 1.0),
                every=self._get(section, f"{prefix}_decay_every", int, 0),
            )
        except ValueError as e:
            raise ConfigError(f"[{section}] {prefix}: {e}") from None

    def chain_config(self, seed: int, section: str = "teacher") -> ChainConfig:
        try:
            return ChainConfig(
                step_size=self.schedule(section, "eta"),
                n_iters=self._get(section, "iters", int),
                burn_in=self._get(section, "burn_in", int, 0),
                thin=self._get(section, "thin", int, 1),
                batch_size=self._get(section, "batch_size", int),
                prior_precision=self._get(section, "prior_precision", float),
                seed=seed,
            )
        except ValueError as e:
            raise ConfigError(f"[{section}]: {e}") from None

    def model_spec(self, head: Head, section: str = "model") -> MlpSpec:
        try:
            return MlpSpec(self.widths(section), head)
        except ValueError as e:
            raise ConfigError(f"[{section}] widths: {e}") from None

    def student_gen(self, train_x: np.ndarray | None):
        kind = self._get("student", "generator", str)
        try:
            if kind == "uniform":
                return UniformBox(self.floats("student", "box_lower"),
                                  self.floats("student", "box_upper"))
            if kind == "perturb":
                if train_x is None:
                    raise ConfigError("[student] generator: perturb needs training inputs")
                return PerturbTrain(train_x, self._get("student", "perturb_sigma", float))
        except ValueError as e:
            raise ConfigError(f"[student] generator: {e}") from None
        raise ConfigError(f"[student] generator: unknown kind {kind!r}, expected uniform|perturb")

    def distill_config(self, seed: int, train_x: np.ndarray | None) -> DistillConfig:
        teacher = self.chain_config(seed, "teacher")
        try:
            alpha_init = self._get("student", "alpha_bias_init", float, float("nan"))
            student = StudentConfig(
                step_size=self.schedule("student", "rho"),
                prior_precision=self._get("student", "prior_precision", float),
                batch_size=self._get("student", "batch_size", int),
                alpha_bias_init=None if np.isnan(alpha_init) else alpha_init,
            )
            return DistillConfig(
                teacher=teacher,
                student=student,
                gen=self.student_gen(train_x),
                seed=derive_seed(seed, 1),
                history_every=self._get("experiment", "history_every", int, 1000),
            )
        except ValueError as e:
            raise ConfigError(f"[student]: {e}") from None

    def data_path(self, key: str, default: str | None = None) -> Path:
        """Resolve a [data] path against the data directory env var if relative."""
        value = self._get("data", key, str, default)
        p = Path(value)
        if not p.is_absolute():
            p = Path(os.environ.get(DATA_DIR_ENV, "data")) / p
        if not p.exists():
            raise ConfigError(f"[data] {key}: file not found: {p} "
                              f"(set ${DATA_DIR_ENV} or use an absolute path)")
        return p

    def resolved_text(self) -> str:
        lines = [f"# resolved from {self.path}"]
        for section in self.raw.sections():
            lines.append(f"[{section}]")
            for key, value in self.raw.items(section):
                lines.append(f"{key} = {value}")
            lines.append("")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {s: dict(self.raw.items(s)) for s in self.raw.sections()}


def derive_seed(master: int, index: int) -> int:
    """Stable per-trial / per-role seed from (master, index)."""
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1, dtype=np.uint64)[0])


def load_config(path, overrides: list[str] | None = None,
                seed: int | None = None, out_dir: str | None = None) -> ExperimentConfig:
    """Parse a config file and apply `section.key=value` overrides."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not Path(path).exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section.strip(), key.strip(), value.strip())
    if seed is not None:
        if not parser.has_section("experiment"):
            parser.add_section("experiment")
        parser.set("experiment", "seed", str(seed))
    if out_dir is not None:
        if not parser.has_section("output"):
            parser.add_section("output")
        parser.set("output", "dir", out_dir)
    return ExperimentConfig(raw=parser, path=str(path))
