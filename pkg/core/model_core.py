"""
Model Core
Small differentiable models (linear-softmax and tanh MLP), cross-entropy
loss, flat parameter arithmetic and parameter-vector serialization.

Parameter layout is layer-major, weights before biases, with row-major
weight matrices of shape (out, in). All arithmetic is float64.
"""
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Sequence

import numpy as np

import sys
sys.path.insert(0, str(Path(__file__).parent.parent))
from config import MODEL_KINDS, DEFAULT_MODEL_KIND, DEFAULT_INPUT_DIM, DEFAULT_NUM_CLASSES

from core.errors import ConfigurationError, NumericError

# Flat float64 model parameters or gradients.
ParamVector = np.ndarray


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of a small classifier."""
    kind: str = DEFAULT_MODEL_KIND
    input_dim: int = DEFAULT_INPUT_DIM
    hidden_dims: Tuple[int, ...] = ()
    num_classes: int = DEFAULT_NUM_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(f"Unknown model kind '{self.kind}'. Choose from: {MODEL_KINDS}")
        if self.input_dim < 1:
            raise ConfigurationError(f"input_dim must be positive, got {self.input_dim}")
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.kind == "linear-softmax" and self.hidden_dims:
            raise ConfigurationError("linear-softmax takes no hidden layers")
        if self.kind == "mlp" and not self.hidden_dims:
            raise ConfigurationError("mlp needs at least one hidden layer")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigurationError(f"hidden sizes must be positive, got {list(self.hidden_dims)}")

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        """(out, in) shape of every weight matrix, input to output."""
        sizes = [self.input_dim, *self.hidden_dims, self.num_classes]
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]

    @property
    def param_count(self) -> int:
        return sum(out * inp + out for out, inp in self.layer_shapes)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "num_classes": self.num_classes,
        }


@dataclass
class Batch:
    """A mini-batch of features and integer labels."""
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ConfigurationError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise ConfigurationError(
                f"labels shape {self.labels.shape} does not match {len(self.features)} feature rows"
            )
        if len(self.labels) < 1:
            raise ConfigurationError("batch must contain at least one sample")

    @property
    def size(self) -> int:
        return len(self.labels)


# ---- parameter layout ----

def unflatten(spec: ModelSpec, params: ParamVector) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into per-layer (W, b) views."""
    _check_params(spec, params)
    layers = []
    offset = 0
    for out, inp in spec.layer_shapes:
        w = params[offset:offset + out * inp].reshape(out, inp)
        offset += out * inp
        b = params[offset:offset + out]
        offset += out
        layers.append((w, b))
    return layers


def flatten(layers: Sequence[Tuple[np.ndarray, np.ndarray]]) -> ParamVector:
    """Concatenate per-layer (W, b) into a flat float64 vector."""
    parts = []
    for w, b in layers:
        parts.append(np.asarray(w, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def zero_params(spec: ModelSpec) -> ParamVector:
    return np.zeros(spec.param_count, dtype=np.float64)


def init_params(spec: ModelSpec, rng: np.random.Generator) -> ParamVector:
    """Per-layer uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    layers = []
    for out, inp in spec.layer_shapes:
        bound = 1.0 / np.sqrt(inp)
        w = rng.uniform(-bound, bound, size=(out, inp))
        b = rng.uniform(-bound, bound, size=out)
        layers.append((w, b))
    return flatten(layers)


def _check_params(spec: ModelSpec, params: ParamVector):
    if params.ndim != 1 or params.shape[0] != spec.param_count:
        raise ConfigurationError(
            f"parameter vector has shape {params.shape}, model expects ({spec.param_count},)"
        )


def _check_batch(spec: ModelSpec, batch: Batch):
    if batch.features.shape[1] != spec.input_dim:
        raise ConfigurationError(
            f"batch has {batch.features.shape[1]} features, model expects {spec.input_dim}"
        )
    if batch.labels.min() < 0 or batch.labels.max() >= spec.num_classes:
        raise ConfigurationError(f"labels must lie in [0, {spec.num_classes})")
    if not np.all(np.isfinite(batch.features)):
        raise NumericError("batch contains non-finite features")


# ---- forward / backward ----

def _forward(spec: ModelSpec, params: ParamVector, features: np.ndarray):
    """Return (layers, layer inputs, logits)."""
    layers = unflatten(spec, params)
    inputs = []
    h = features
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        inputs.append(h)
        z = h @ w.T + b
        if i < last:
            z = np.tanh(z)
        if not np.all(np.isfinite(z)):
            raise NumericError("non-finite activation", layer=i)
        h = z
    return layers, inputs, h


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def logits(spec: ModelSpec, params: ParamVector, features: np.ndarray) -> np.ndarray:
    _check_params(spec, params)
    return _forward(spec, params, np.asarray(features, dtype=np.float64))[2]


def forward_loss(spec: ModelSpec, params: ParamVector, batch: Batch) -> float:
    """Mean cross-entropy of the model on the batch."""
    _check_params(spec, params)
    _check_batch(spec, batch)
    _, _, out = _forward(spec, params, batch.features)
    logp = _log_softmax(out)
    loss = -float(np.mean(logp[np.arange(batch.size), batch.labels]))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss", layer=len(spec.layer_shapes) - 1)
    return max(loss, 0.0) + 0.0


def loss_and_gradient(spec: ModelSpec, params: ParamVector, batch: Batch) -> Tuple[float, ParamVector]:
    """Mean cross-entropy and its gradient w.r.t. the flat parameters."""
    _check_params(spec, params)
    _check_batch(spec, batch)
    layers, inputs, out = _forward(spec, params, batch.features)
    logp = _log_softmax(out)
    rows = np.arange(batch.size)
    loss = max(-float(np.mean(logp[rows, batch.labels])), 0.0) + 0.0

    # d(mean CE)/d(logits) = (softmax - onehot) / b
    delta = np.exp(logp)
    delta[rows, batch.labels] -= 1.0
    delta /= batch.size

    grads: List[Tuple[np.ndarray, np.ndarray]] = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        h_in = inputs[i]
        grads[i] = (delta.T @ h_in, delta.sum(axis=0))
        if i > 0:
            # h_in = tanh(z_prev)
            delta = (delta @ w) * (1.0 - h_in * h_in)
    grad = flatten(grads)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient", layer=_first_bad_layer(spec, grad))
    return loss, grad


def gradient(spec: ModelSpec, params: ParamVector, batch: Batch) -> ParamVector:
    """Gradient of forward_loss at params."""
    return loss_and_gradient(spec, params, batch)[1]


def _first_bad_layer(spec: ModelSpec, vec: ParamVector) -> int:
    for i, (w, b) in enumerate(unflatten(spec, vec)):
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            return i
    return -1


def axpy(dst: ParamVector, scale: float, src: ParamVector) -> ParamVector:
    """Element-wise dst + scale * src (new vector)."""
    if dst.shape != src.shape:
        raise ConfigurationError(f"length mismatch: {dst.shape} vs {src.shape}")
    return dst + scale * src


def ensure_finite(params: ParamVector, what: str = "parameters", **context):
    if not np.all(np.isfinite(params)):
        raise NumericError(f"non-finite {what}", **context)


# ---- full-batch objectives ----

class Objective:
    """Loss and gradient of a flat parameter vector."""

    dim: int = 0

    def loss(self, params: ParamVector) -> float:
        raise NotImplementedError

    def grad(self, params: ParamVector) -> ParamVector:
        raise NotImplementedError

    def sample_point(self, rng: np.random.Generator) -> ParamVector:
        return rng.standard_normal(self.dim)


@dataclass(eq=False)
class PooledObjective(Objective):
    """Full-data mean cross-entropy of a model on fixed features/labels."""
    spec: ModelSpec
    features: np.ndarray
    labels: np.ndarray
    _batch: Batch = field(init=False, repr=False)

    def __post_init__(self):
        self._batch = Batch(self.features, self.labels)
        self.dim = self.spec.param_count

    def loss(self, params: ParamVector) -> float:
        return forward_loss(self.spec, params, self._batch)

    def grad(self, params: ParamVector) -> ParamVector:
        return gradient(self.spec, params, self._batch)

    def loss_and_grad(self, params: ParamVector) -> Tuple[float, ParamVector]:
        return loss_and_gradient(self.spec, params, self._batch)

    def sample_point(self, rng: np.random.Generator) -> ParamVector:
        return init_params(self.spec, rng)


# ---- serialization ----

_LENGTH = struct.Struct("<Q")


def param_vector_to_bytes(params: ParamVector) -> bytes:
    """Length-prefixed little-endian float64 encoding."""
    data = np.ascontiguousarray(params, dtype="<f8")
    return _LENGTH.pack(data.shape[0]) + data.tobytes()


def param_vector_from_bytes(blob: bytes) -> ParamVector:
    if len(blob) < _LENGTH.size:
        raise ConfigurationError("truncated parameter blob")
    (count,) = _LENGTH.unpack_from(blob)
    expected = _LENGTH.size + 8 * count
    if len(blob) != expected:
        raise ConfigurationError(f"parameter blob has {len(blob)} bytes, header implies {expected}")
    return np.frombuffer(blob, dtype="<f8", offset=_LENGTH.size, count=count).astype(np.float64)


def save_param_vector(path: Path, params: ParamVector) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(param_vector_to_bytes(params))
    return path


def load_param_vector(path: Path) -> ParamVector:
    return param_vector_from_bytes(Path(path).read_bytes())
