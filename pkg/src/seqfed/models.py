"""Flat-parameter multilayer perceptron and the vector arithmetic built on it.

A model is a 1-D float64 array of length ``P``. The mapping between that
vector and layer matrices is fixed: layers in order, and within each layer
the weight matrix ``W`` of shape ``(fan_in, fan_out)`` flattened row-major,
followed by the bias of length ``fan_out``. So for ``layer_sizes``
``[4, 8, 3]``: ``P = (4+1)*8 + (8+1)*3 = 67``, with ``params[0:32]`` the
first weight matrix, ``params[32:40]`` its bias, and so on.

Everything here is a pure function of its inputs; arrays passed in are never
mutated.
"""

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import backend
from .errors import DimensionMismatchError, EmptyDataError

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: layer widths plus hidden activation."""

    layer_sizes: tuple = field(default=(32, 64, 10))
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least an input and an output width")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer widths must be positive, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def class_count(self) -> int:
        return self.layer_sizes[-1]

    @property
    def param_count(self) -> int:
        return sum((fi + 1) * fo for fi, fo in zip(self.layer_sizes, self.layer_sizes[1:]))

    def unpack(self, params: np.ndarray):
        """Split a flat vector into per-layer (weights, bias) views."""
        layers = []
        off = 0
        for fi, fo in zip(self.layer_sizes, self.layer_sizes[1:]):
            w = params[off:off + fi * fo].reshape(fi, fo)
            off += fi * fo
            b = params[off:off + fo]
            off += fo
            layers.append((w, b))
        return layers


def init_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases, drawn layer by layer."""
    parts = []
    for fi, fo in zip(spec.layer_sizes, spec.layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fi + fo))
        parts.append(rng.uniform(-bound, bound, size=fi * fo))
        parts.append(np.zeros(fo))
    return np.concatenate(parts)


def _check_params(spec: ModelSpec, params: np.ndarray):
    if params.ndim != 1 or params.shape[0] != spec.param_count:
        raise DimensionMismatchError("params", spec.param_count, params.shape)


def _check_features(spec: ModelSpec, features: np.ndarray):
    if features.ndim != 2:
        raise DimensionMismatchError("features", "2-d matrix", f"{features.ndim}-d")
    if features.shape[1] != spec.input_dim:
        raise DimensionMismatchError("features columns", spec.input_dim, features.shape[1])
    if features.shape[0] < 1:
        raise EmptyDataError("empty batch")


def _check_labels(labels: np.ndarray, class_count: int):
    if labels.shape[0] < 1:
        raise EmptyDataError("empty batch")
    if labels.min() < 0 or labels.max() >= class_count:
        raise DimensionMismatchError("labels", f"indices in [0, {class_count})",
                                     f"range [{labels.min()}, {labels.max()}]")


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def forward(spec: ModelSpec, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Logits for a batch; hidden layers activated, output layer linear."""
    _check_params(spec, params)
    _check_features(spec, features)
    layers = spec.unpack(params)
    h = features
    for w, b in layers[:-1]:
        h = _activate(h @ w + b, spec.activation)
    w, b = layers[-1]
    return h @ w + b


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-softmax of the true class, max-shifted for stability."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise DimensionMismatchError("logits", "2-d matrix", f"{logits.ndim}-d")
    if logits.shape[0] != labels.shape[0]:
        raise DimensionMismatchError("batch rows", logits.shape[0], labels.shape[0])
    if logits.shape[0] < 1:
        raise EmptyDataError("empty batch")
    _check_labels(labels, logits.shape[1])
    loss, _ = backend.softmax_xent_grad(np.ascontiguousarray(logits), labels)
    return loss


def backward(spec: ModelSpec, params: np.ndarray, features: np.ndarray,
             labels: np.ndarray):
    """Loss and its flat gradient, by backpropagation.

    Returns ``(loss, grad)`` with ``grad`` packed in the same layout as
    ``params``. ReLU takes derivative 0 at exactly 0.
    """
    _check_params(spec, params)
    _check_features(spec, features)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != features.shape[0]:
        raise DimensionMismatchError("batch rows", features.shape[0], labels.shape[0])
    _check_labels(labels, spec.class_count)

    layers = spec.unpack(params)
    inputs = [features]
    h = features
    for w, b in layers[:-1]:
        h = _activate(h @ w + b, spec.activation)
        inputs.append(h)
    w, b = layers[-1]
    logits = h @ w + b

    loss, delta = backend.softmax_xent_grad(np.ascontiguousarray(logits), labels)

    grad = np.empty_like(params)
    offsets = []
    off = 0
    for fi, fo in zip(spec.layer_sizes, spec.layer_sizes[1:]):
        offsets.append(off)
        off += (fi + 1) * fo
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        x = inputs[li]
        dw = x.T @ delta
        db = delta.sum(axis=0)
        o = offsets[li]
        grad[o:o + dw.size] = dw.ravel()
        grad[o + dw.size:o + dw.size + db.size] = db
        if li > 0:
            dh = delta @ w.T
            if spec.activation == "relu":
                delta = dh * (x > 0.0)
            else:
                delta = dh * (1.0 - x * x)
    return loss, grad


def average_params(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise arithmetic mean of same-length parameter vectors.

    Sums are exactly rounded (fsum), so the result is independent of the
    order of the inputs, bit for bit.
    """
    if len(vectors) == 0:
        raise EmptyDataError("cannot average an empty collection of vectors")
    length = vectors[0].shape[0]
    for v in vectors[1:]:
        if v.shape[0] != length:
            raise DimensionMismatchError("vector length", length, v.shape[0])
    if len(vectors) == 1:
        return np.array(vectors[0], dtype=np.float64)
    columns = np.stack(vectors).T.tolist()
    sums = np.fromiter((math.fsum(col) for col in columns), dtype=np.float64,
                       count=length)
    return sums / len(vectors)


def l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatchError("vector length", a.shape[0], b.shape[0])
    return float(backend.pair_dist(np.ascontiguousarray(a, dtype=np.float64),
                                   np.ascontiguousarray(b, dtype=np.float64),
                                   backend.MEASURE_L2, 0.0))


def evaluate_accuracy(spec: ModelSpec, params: np.ndarray, features: np.ndarray,
                      labels: np.ndarray, chunk: int = 8192) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] < 1:
        raise EmptyDataError("empty evaluation set")
    if features.shape[0] != labels.shape[0]:
        raise DimensionMismatchError("rows", features.shape[0], labels.shape[0])
    hits = 0
    for start in range(0, features.shape[0], chunk):
        logits = forward(spec, params, features[start:start + chunk])
        hits += int((np.argmax(logits, axis=1) == labels[start:start + chunk]).sum())
    return hits / features.shape[0]
