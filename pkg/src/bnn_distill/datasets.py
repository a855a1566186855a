"""Dataset generators and loaders.

Two synthetic generators (a 2-cluster 2-D classification set and a cubic 1-D
regression set), a generic CSV regression loader with train-statistics
standardization, and a big-endian IDX image/label reader. Loaders are pure
functions of (path/seed, options); returned arrays are marked read-only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
PIXEL_SCALE = 126.0  # raw byte values are divided by 126, not 255

# Seed used by the shipped experiment recipes so runs are bit-reproducible.
CANONICAL_SEED = 20150607

TOY2D_CLASS0_MEAN = (-2.0, -2.0)
TOY2D_CLASS1_MEAN = (2.0, 2.0)
TOY1D_X_RANGE = (-4.0, 4.0)
TOY1D_NOISE_STD = 3.0  # y = x^3 + eps, eps ~ N(0, 9)


@dataclass(frozen=True)
class ColumnStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class Dataset:
    """Inputs (n, d) with class-index or real targets, plus any standardization
    stats (always the training split's) needed to map back to original units."""

    x: np.ndarray
    y: np.ndarray
    x_stats: ColumnStats | None = None
    y_stats: ColumnStats | None = None

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y)
        if self.x.ndim != 2 or self.x.shape[0] < 1:
            raise ValueError("inputs must be a nonempty (n, d) matrix")
        if self.y.shape[0] != self.x.shape[0]:
            raise ValueError("target length does not match inputs")
        if not np.all(np.isfinite(self.x)) or not np.all(np.isfinite(self.y.astype(np.float64))):
            raise ValueError("dataset contains non-finite values")
        self.x.flags.writeable = False
        self.y.flags.writeable = False

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def gen_toy2d(seed: int = CANONICAL_SEED) -> Dataset:
    """Two unit-variance Gaussian clusters at (-2,-2) and (2,2), 10 points each."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x0 = rng.normal(TOY2D_CLASS0_MEAN, 1.0, size=(10, 2))
    x1 = rng.normal(TOY2D_CLASS1_MEAN, 1.0, size=(10, 2))
    x = np.concatenate([x0, x1])
    y = np.concatenate([np.zeros(10, dtype=np.int64), np.ones(10, dtype=np.int64)])
    return Dataset(x, y)


def gen_toy1d(seed: int = CANONICAL_SEED, noise_std: float = TOY1D_NOISE_STD) -> Dataset:
    """20 points of y = x^3 + noise with x uniform on [-4, 4].

    noise_std=0 gives the clean cubic (test hook); the modeling noise precision
    that matches the default is 1/9.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = rng.uniform(*TOY1D_X_RANGE, size=(20, 1))
    eps = rng.normal(0.0, 1.0, size=20) * noise_std
    y = x[:, 0] ** 3 + eps
    return Dataset(x, y)


def _column_stats(a: np.ndarray) -> ColumnStats:
    std = a.std(axis=0)
    std = np.where(std > 0, std, 1.0)  # constant columns pass through unscaled
    return ColumnStats(mean=a.mean(axis=0), std=std)


def standardize(a: np.ndarray, stats: ColumnStats) -> np.ndarray:
    return (a - stats.mean) / stats.std


def destandardize(a: np.ndarray, stats: ColumnStats) -> np.ndarray:
    return a * stats.std + stats.mean


def _parse_csv_matrix(path) -> np.ndarray:
    """Numeric CSV body; a non-numeric first row is treated as a header."""
    rows = []
    n_cols = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if lineno == 1:
                try:
                    rows.append([float(v) for v in fields])
                except ValueError:
                    continue  # header row
                n_cols = len(fields)
                continue
            if n_cols is None:
                n_cols = len(fields)
            if len(fields) != n_cols:
                raise ValueError(f"{path}:{lineno}: expected {n_cols} columns, found {len(fields)}")
            try:
                rows.append([float(v) for v in fields])
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: non-numeric field ({e})") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def load_csv_regression(path, target_column: int, train_n: int, test_n: int,
                        seed: int = 0, standardize_targets: bool = True,
                        ) -> tuple[Dataset, Dataset]:
    """Shuffle, split, and standardize a numeric CSV regression table.

    Standardization statistics come from the training split only and are
    attached to both returned datasets; reported log-likelihoods can be mapped
    back to original target units by subtracting log(y_std).
    """
    table = _parse_csv_matrix(path)
    n, d = table.shape
    if not -d <= target_column < d:
        raise ValueError(f"target column {target_column} out of range for {d} columns")
    if train_n + test_n > n:
        raise ValueError(f"split {train_n}+{test_n} exceeds {n} rows")
    if train_n < 1 or test_n < 1:
        raise ValueError("both splits must be nonempty")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    order = rng.permutation(n)
    y = table[:, target_column]
    x = np.delete(table, target_column % d, axis=1)
    tr, te = order[:train_n], order[train_n : train_n + test_n]
    x_stats = _column_stats(x[tr])
    y_stats = _column_stats(y[tr].reshape(-1, 1)) if standardize_targets else None

    def build(idx):
        xs = standardize(x[idx], x_stats)
        ys = y[idx]
        if y_stats is not None:
            ys = standardize(ys.reshape(-1, 1), y_stats)[:, 0]
        return Dataset(xs, ys, x_stats=x_stats, y_stats=y_stats)

    return build(tr), build(te)


def _read_idx(path, expected_magic: int) -> tuple[np.ndarray, tuple[int, ...]]:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 4:
        raise ValueError(f"{path}: truncated header")
    (magic,) = struct.unpack_from(">I", buf, 0)
    if magic != expected_magic:
        raise ValueError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    n_dims = magic & 0xFF
    header = 4 + 4 * n_dims
    if len(buf) < header:
        raise ValueError(f"{path}: truncated dimension header")
    dims = struct.unpack_from(f">{n_dims}I", buf, 4)
    count = int(np.prod(dims))
    payload = np.frombuffer(buf, dtype=np.uint8, offset=header)
    if payload.shape[0] != count:
        raise ValueError(f"{path}: payload holds {payload.shape[0]} bytes, dims promise {count}")
    return payload, dims


def load_mnist_idx(images_path, labels_path, subset: int | None = None,
                   split: tuple[int, int] | None = None, seed: int = 0):
    """Read an IDX image/label pair; pixels come back as float64 / 126.

    Without split: one Dataset (optionally truncated to the first `subset`
    rows). With split=(train_n, valid_n): rows are shuffled with `seed`, the
    first train_n become training (truncated to `subset` if given) and the
    last valid_n validation.
    """
    pixels, idims = _read_idx(images_path, IDX_IMAGE_MAGIC)
    labels, ldims = _read_idx(labels_path, IDX_LABEL_MAGIC)
    if idims[0] != ldims[0]:
        raise ValueError(f"image count {idims[0]} != label count {ldims[0]}")
    n = idims[0]
    d = int(np.prod(idims[1:]))
    x = pixels.reshape(n, d).astype(np.float64) / PIXEL_SCALE
    y = labels.astype(np.int64)
    if split is None:
        if subset is not None:
            x, y = x[:subset], y[:subset]
        return Dataset(x, y)
    train_n, valid_n = split
    if train_n + valid_n > n:
        raise ValueError(f"split {train_n}+{valid_n} exceeds {n} examples")
    order = np.random.default_rng(np.random.SeedSequence(seed)).permutation(n)
    tr = order[:train_n]
    va = order[n - valid_n :]
    if subset is not None:
        tr = tr[:subset]
    return Dataset(x[tr], y[tr]), Dataset(x[va], y[va])
