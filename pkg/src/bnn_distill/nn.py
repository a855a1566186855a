"""Dense ReLU networks with exact reverse-mode gradients on flat parameter vectors.

Everything here works on a single 1-D float64 parameter vector whose layout is
(W_0, b_0, W_1, b_1, ...) with W_l stored row-major as (fan_in, fan_out).
Keeping parameters flat makes the Langevin/HMC samplers and checkpoint format
trivial; per-layer matrices are exposed as views into the flat vector.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

PARAMS_MAGIC = b"BDK1"
ENSEMBLE_MAGIC = b"BDKE"


class Head(enum.Enum):
    """Output head of a network.

    SOFTMAX: K raw logits, interpreted through log-softmax.
    REG_MEAN: single output, the predictive mean of a Gaussian with fixed noise.
    REG_MEAN_LOGVAR: two outputs (mu, log-variance) for a heteroscedastic Gaussian.
    """

    SOFTMAX = "softmax"
    REG_MEAN = "reg_mean"
    REG_MEAN_LOGVAR = "reg_mean_logvar"


_HEAD_TAGS = {Head.SOFTMAX: 0, Head.REG_MEAN: 1, Head.REG_MEAN_LOGVAR: 2}
_TAG_HEADS = {v: k for k, v in _HEAD_TAGS.items()}


@dataclass(frozen=True)
class MlpSpec:
    """Architecture description: layer widths (input, hidden..., output) and head."""

    layer_widths: tuple[int, ...]
    head: Head

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be >= 1, got {widths}")
        out = widths[-1]
        if self.head is Head.REG_MEAN and out != 1:
            raise ValueError(f"REG_MEAN head requires 1 output, spec has {out}")
        if self.head is Head.REG_MEAN_LOGVAR and out != 2:
            raise ValueError(f"REG_MEAN_LOGVAR head requires 2 outputs, spec has {out}")

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_classes(self) -> int:
        if self.head is not Head.SOFTMAX:
            raise ValueError("n_classes only meaningful for SOFTMAX head")
        return self.layer_widths[-1]

    def layer_shapes(self) -> list[tuple[int, int]]:
        w = self.layer_widths
        return [(w[i], w[i + 1]) for i in range(len(w) - 1)]

    def describe(self) -> str:
        return "-".join(str(w) for w in self.layer_widths) + f" ({self.head.value})"


def num_params(spec: MlpSpec) -> int:
    """Total flat-vector length, biases included."""
    return sum(a * b + b for a, b in spec.layer_shapes())


def num_weights(spec: MlpSpec) -> int:
    """Weight count excluding biases (reported alongside num_params in run metadata)."""
    return sum(a * b for a, b in spec.layer_shapes())


def unpack(spec: MlpSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer (W, b) views into the flat vector. Views, not copies."""
    params = np.asarray(params)
    if params.shape != (num_params(spec),):
        raise ValueError(
            f"parameter vector has length {params.shape}, spec needs ({num_params(spec)},)"
        )
    layers = []
    off = 0
    for a, b in spec.layer_shapes():
        w = params[off : off + a * b].reshape(a, b)
        off += a * b
        bias = params[off : off + b]
        off += b
        layers.append((w, bias))
    return layers


def pack(spec: MlpSpec, layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Inverse of unpack."""
    parts = []
    for (a, b), (w, bias) in zip(spec.layer_shapes(), layers, strict=True):
        if w.shape != (a, b) or bias.shape != (b,):
            raise ValueError(f"layer shapes {w.shape}/{bias.shape} do not match spec ({a},{b})")
        parts.append(np.asarray(w, dtype=np.float64).reshape(-1))
        parts.append(np.asarray(bias, dtype=np.float64))
    return np.concatenate(parts)


def init_params(spec: MlpSpec, rng: np.random.Generator, scale: float = np.sqrt(2.0)) -> np.ndarray:
    """Gaussian fan-in init: weights ~ N(0, scale^2 / fan_in), biases zero.

    The default scale sqrt(2) gives variance 2/fan_in, the usual choice for
    ReLU layers. Deterministic given the generator state.
    """
    if not scale > 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    params = np.zeros(num_params(spec))
    for w, _ in unpack(spec, params):
        fan_in = w.shape[0]
        w[...] = rng.normal(0.0, scale / np.sqrt(fan_in), size=w.shape)
    return params


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All dense products route through here so the kernel can be swapped out."""
    return a @ b


@dataclass
class ForwardTrace:
    """Per-layer intermediates from one forward pass, consumed by backward."""

    activations: list[np.ndarray] = field(default_factory=list)  # inputs to each layer
    pre_activations: list[np.ndarray] = field(default_factory=list)  # z_l before ReLU/output


def forward(spec: MlpSpec, params: np.ndarray, x_batch: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Run the net on a (batch, in_width) matrix.

    Returns raw final-layer outputs (logits for SOFTMAX, (mu, alpha) columns for
    REG_MEAN_LOGVAR) and the trace needed for backward.
    """
    x = np.asarray(x_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.in_width:
        raise ValueError(f"input batch shape {x.shape} does not match input width {spec.in_width}")
    layers = unpack(spec, params)
    trace = ForwardTrace(activations=[x])
    h = x
    for i, (w, b) in enumerate(layers):
        z = matmul(h, w) + b
        trace.pre_activations.append(z)
        if i < len(layers) - 1:
            h = np.maximum(z, 0.0)
            trace.activations.append(h)
    return trace.pre_activations[-1], trace


def backward(spec: MlpSpec, params: np.ndarray, trace: ForwardTrace, output_grad: np.ndarray) -> np.ndarray:
    """Exact gradient of sum-over-batch loss w.r.t. the flat parameter vector.

    output_grad holds d(loss_i)/d(outputs_i) row per batch element; the result
    is d(sum_i loss_i)/d(params). ReLU subgradient at exactly 0 is taken as 0.
    """
    layers = unpack(spec, params)
    gout = np.asarray(output_grad, dtype=np.float64)
    if gout.shape != trace.pre_activations[-1].shape:
        raise ValueError(
            f"output_grad shape {gout.shape} != outputs shape {trace.pre_activations[-1].shape}"
        )
    grad = np.zeros_like(np.asarray(params, dtype=np.float64))
    gviews = unpack(spec, grad)
    delta = gout
    for l in range(len(layers) - 1, -1, -1):
        a_prev = trace.activations[l]
        gw, gb = gviews[l]
        gw[...] = matmul(a_prev.T, delta)
        gb[...] = delta.sum(axis=0)
        if l > 0:
            w, _ = layers[l]
            delta = matmul(delta, w.T) * (trace.pre_activations[l - 1] > 0)
    return grad


def _spec_header(spec: MlpSpec) -> bytes:
    widths = spec.layer_widths
    return struct.pack("<I", len(widths)) + struct.pack(f"<{len(widths)}I", *widths) + struct.pack(
        "<I", _HEAD_TAGS[spec.head]
    )


def _read_spec_header(buf: bytes, off: int) -> tuple[MlpSpec, int]:
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    widths = struct.unpack_from(f"<{n}I", buf, off)
    off += 4 * n
    (tag,) = struct.unpack_from("<I", buf, off)
    off += 4
    if tag not in _TAG_HEADS:
        raise ValueError(f"unknown head tag {tag} in checkpoint")
    return MlpSpec(tuple(widths), _TAG_HEADS[tag]), off


def save_params(path, spec: MlpSpec, params: np.ndarray) -> None:
    """Checkpoint: magic 'BDK1', width list, head tag, little-endian float64 values."""
    params = np.ascontiguousarray(params, dtype=np.float64)
    if params.shape != (num_params(spec),):
        raise ValueError("parameter vector does not match spec")
    with open(path, "wb") as f:
        f.write(PARAMS_MAGIC)
        f.write(_spec_header(spec))
        f.write(params.astype("<f8").tobytes())


def load_params(path) -> tuple[MlpSpec, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != PARAMS_MAGIC:
        raise ValueError(f"bad magic {buf[:4]!r}, expected {PARAMS_MAGIC!r}")
    spec, off = _read_spec_header(buf, 4)
    n = num_params(spec)
    values = np.frombuffer(buf, dtype="<f8", count=-1, offset=off)
    if values.shape != (n,):
        raise ValueError(f"checkpoint holds {values.shape[0]} values, spec needs {n}")
    return spec, values.astype(np.float64)
