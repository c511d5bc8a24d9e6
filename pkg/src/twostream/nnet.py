"""Small trainable softmax classifiers, one per stream.

A deliberately compact stack: convolution (valid padding), fully-connected,
ReLU, inverted dropout and a softmax head, trained with minibatch SGD plus
momentum and weight decay. Everything is float64 numpy; the goal is exact
reproducibility and testability at desk scale, not throughput.

Layout conventions: activations are (batch, height, width, channels) or
(batch, dims); conv weights are (out_channels, k, k, in_channels); fully
connected weights are (in_dims, out_dims).
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imagery import Image
from .seeding import derive_rng

log = logging.getLogger(__name__)

MODEL_MAGIC = b"TSNM"
MODEL_VERSION = 1

# Final classifier layer starts as N(0, 0.01): variance 0.01, std 0.1.
FINAL_LAYER_STD = 0.1


# ---------------------------------------------------------------------------
# Architecture description

@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1

    def __post_init__(self):
        if self.out_channels < 1 or self.kernel < 1 or self.stride < 1:
            raise ValueError("conv out_channels, kernel and stride must be >= 1")


@dataclass(frozen=True)
class FullyConnected:
    out_dims: int

    def __post_init__(self):
        if self.out_dims < 1:
            raise ValueError("fc out_dims must be >= 1")


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Dropout:
    rate: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class Softmax:
    pass


@dataclass(frozen=True)
class NetworkSpec:
    """Input shape (height, width, channels) plus an ordered layer stack.

    The stack must end in Softmax fed by a flat logit vector, so at least one
    fully-connected layer has to appear before it.
    """

    input_shape: tuple[int, int, int]
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 3 or any(v < 1 for v in self.input_shape):
            raise ValueError(f"input_shape must be (H, W, C) >= 1, got {self.input_shape}")
        if not self.layers:
            raise ValueError("network needs at least one layer")
        if not isinstance(self.layers[-1], Softmax):
            raise ValueError("last layer must be Softmax")
        self.activation_shapes()

    def activation_shapes(self) -> list[tuple]:
        """Shape after each layer, starting with the input; validates the chain."""
        shapes = [self.input_shape]
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: conv needs (H, W, C) input, got {shape}")
                h, w, _ = shape
                if h < layer.kernel or w < layer.kernel:
                    raise ValueError(f"layer {i}: kernel {layer.kernel} exceeds input {h}x{w}")
                shape = ((h - layer.kernel) // layer.stride + 1,
                         (w - layer.kernel) // layer.stride + 1,
                         layer.out_channels)
            elif isinstance(layer, FullyConnected):
                shape = (layer.out_dims,)
            elif isinstance(layer, (Relu, Dropout)):
                pass
            elif isinstance(layer, Softmax):
                if i != len(self.layers) - 1:
                    raise ValueError("softmax must be the final layer")
                if len(shape) != 1:
                    raise ValueError("softmax needs flat logits; add a fully-connected "
                                     "layer before it")
            else:
                raise TypeError(f"unknown layer descriptor {layer!r}")
            shapes.append(shape)
        return shapes

    @property
    def num_classes(self) -> int:
        return self.activation_shapes()[-1][0]


def default_network_spec(num_classes: int, input_shape=(64, 64, 3),
                         dropout: float = 0.5) -> NetworkSpec:
    """The stock per-stream architecture: two strided convs, fc-64, softmax."""
    return NetworkSpec(input_shape=input_shape, layers=(
        Conv(8, 3, stride=2), Relu(),
        Conv(16, 3, stride=2), Relu(),
        FullyConnected(64), Relu(), Dropout(dropout),
        FullyConnected(num_classes), Softmax(),
    ))


def _param_shapes(spec: NetworkSpec) -> list:
    """Per layer: (w_shape, b_shape, fan_in), or None for stateless layers."""
    out = []
    shape = spec.input_shape
    for layer in spec.layers:
        if isinstance(layer, Conv):
            h, w, c = shape
            out.append(((layer.out_channels, layer.kernel, layer.kernel, c),
                        (layer.out_channels,), layer.kernel * layer.kernel * c))
            shape = ((h - layer.kernel) // layer.stride + 1,
                     (w - layer.kernel) // layer.stride + 1, layer.out_channels)
        elif isinstance(layer, FullyConnected):
            fan_in = int(np.prod(shape))
            out.append(((fan_in, layer.out_dims), (layer.out_dims,), fan_in))
            shape = (layer.out_dims,)
        else:
            out.append(None)
    return out


def _last_param_index(spec: NetworkSpec) -> int:
    shapes = _param_shapes(spec)
    idx = [i for i, s in enumerate(shapes) if s is not None]
    if not idx:
        raise ValueError("network has no trainable layers")
    return idx[-1]


# ---------------------------------------------------------------------------
# Parameters

@dataclass
class Params:
    """Per-layer weight/bias tensors plus same-shaped momentum state."""

    spec: NetworkSpec
    layers: list
    velocity: list


def init_params(spec: NetworkSpec, seed: int) -> Params:
    """Deterministic init: He-scaled hidden layers, N(0, 0.01) final layer."""
    rng = derive_rng(seed, "init")
    shapes = _param_shapes(spec)
    last = _last_param_index(spec)
    layers, velocity = [], []
    for i, entry in enumerate(shapes):
        if entry is None:
            layers.append(None)
            velocity.append(None)
            continue
        w_shape, b_shape, fan_in = entry
        std = FINAL_LAYER_STD if i == last else math.sqrt(2.0 / fan_in)
        layers.append({"w": rng.normal(0.0, std, w_shape),
                       "b": np.zeros(b_shape)})
        velocity.append({"w": np.zeros(w_shape), "b": np.zeros(b_shape)})
    return Params(spec=spec, layers=layers, velocity=velocity)


# ---------------------------------------------------------------------------
# Forward / backward engine

def _stable_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _conv_forward(x, w, b, stride):
    k = w.shape[1]
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    out = np.einsum("nhwcij,oijc->nhwo", windows, w) + b
    return out, (x.shape, windows, w, stride)


def _conv_backward(d, cache):
    x_shape, windows, w, stride = cache
    dw = np.einsum("nhwcij,nhwo->oijc", windows, d)
    db = d.sum(axis=(0, 1, 2))
    dx = np.zeros(x_shape)
    k = w.shape[1]
    n, ho, wo, _ = d.shape
    for i in range(k):
        for j in range(k):
            dx[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += \
                np.einsum("nhwo,oc->nhwc", d, w[:, i, j, :])
    return dx, dw, db


def _run_forward(params: Params, x: np.ndarray, training: bool,
                 rng: np.random.Generator | None):
    """Full pass; returns (probs, features, caches) with features the flat
    activations entering the final trainable layer."""
    spec = params.spec
    last = _last_param_index(spec)
    caches = []
    features = None
    h = x
    for i, layer in enumerate(spec.layers):
        if i == last:
            features = h.reshape(h.shape[0], -1)
        p = params.layers[i]
        if isinstance(layer, Conv):
            h, cache = _conv_forward(h, p["w"], p["b"], layer.stride)
        elif isinstance(layer, FullyConnected):
            in_shape = h.shape
            flat = h.reshape(h.shape[0], -1)
            h = flat @ p["w"] + p["b"]
            cache = (flat, in_shape, p["w"])
        elif isinstance(layer, Relu):
            cache = h > 0
            h = np.maximum(h, 0.0)
        elif isinstance(layer, Dropout):
            if training and layer.rate > 0.0:
                if rng is None:
                    raise ValueError("training-mode dropout needs an rng")
                mask = rng.random(h.shape) >= layer.rate
                h = h * mask / (1.0 - layer.rate)
                cache = (mask, layer.rate)
            else:
                cache = None
        else:  # Softmax
            cache = None
            h = _stable_softmax(h)
        caches.append(cache)
    return h, features, caches


def _as_batch(images, input_shape):
    if isinstance(images, Image):
        images = images.data
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != tuple(input_shape):
        raise ValueError(f"expected input shape {tuple(input_shape)}, got {x.shape[1:]}")
    return x, single


@dataclass(frozen=True)
class TrainedModel:
    """Frozen result of training: architecture, weights and class names.

    ``evaluation`` marks that dropout is disabled in :func:`forward`.
    """

    spec: NetworkSpec
    params: Params
    class_names: tuple[str, ...]
    evaluation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if len(self.class_names) != self.spec.num_classes:
            raise ValueError(f"{len(self.class_names)} class names for a "
                             f"{self.spec.num_classes}-way network")


def forward(model: TrainedModel, images):
    """Evaluation-mode pass; returns (penultimate features, posterior).

    Accepts one (H, W, C) image or a (N, H, W, C) batch; the posterior rows
    sum to 1.
    """
    x, single = _as_batch(images, model.spec.input_shape)
    probs, features, _ = _run_forward(model.params, x, training=False, rng=None)
    if single:
        return features[0], probs[0]
    return features, probs


def predict(model: TrainedModel, images) -> np.ndarray:
    """Argmax class indices (lowest index wins ties)."""
    _, probs = forward(model, images)
    probs = np.atleast_2d(probs)
    return np.argmax(probs, axis=1)


def loss_and_grad(params: Params, batch, rng=None, training: bool = True):
    """Mean cross-entropy and its gradient for one minibatch.

    ``batch`` is (images, labels). Dropout masks come from ``rng`` when
    training; weight decay is not part of these gradients (the optimizer adds
    it). Returns (loss, grads) with grads shaped like ``params.layers``.
    """
    images, labels = batch
    x, _ = _as_batch(images, params.spec.input_shape)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = x.shape[0]
    if n == 0:
        raise ValueError("batch must be non-empty")
    if y.shape[0] != n:
        raise ValueError(f"{n} images but {y.shape[0]} labels")
    num_classes = params.spec.num_classes
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError(f"labels must be in [0, {num_classes}), got range "
                         f"[{y.min()}, {y.max()}]")

    probs, _, caches = _run_forward(params, x, training=training, rng=rng)
    # log-softmax on the cached pre-softmax logits would be cleaner, but the
    # clipped log of the stable softmax is exact except when a probability
    # underflows to 0, where the loss is +inf anyway.
    with np.errstate(divide="ignore"):
        logp = np.log(probs[np.arange(n), y])
    loss = float(-logp.mean())

    grads = [None] * len(params.spec.layers)
    d = probs.copy()
    d[np.arange(n), y] -= 1.0
    d /= n
    for i in reversed(range(len(params.spec.layers) - 1)):  # softmax folded in
        layer = params.spec.layers[i]
        cache = caches[i]
        if isinstance(layer, Conv):
            d, dw, db = _conv_backward(d, cache)
            grads[i] = {"w": dw, "b": db}
        elif isinstance(layer, FullyConnected):
            flat, in_shape, w = cache
            grads[i] = {"w": flat.T @ d, "b": d.sum(axis=0)}
            d = (d @ w.T).reshape(in_shape)
        elif isinstance(layer, Relu):
            d = d * cache
        elif isinstance(layer, Dropout):
            if cache is not None:
                mask, rate = cache
                d = d * mask / (1.0 - rate)
    return loss, grads


# ---------------------------------------------------------------------------
# Optimizer

@dataclass(frozen=True)
class TrainConfig:
    """SGD hyperparameters; ``dropout`` is the rate used by the stock spec."""

    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    dropout: float = 0.5
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def sgd_step(params: Params, grads, config: TrainConfig) -> Params:
    """Heavy-ball update: v <- mom*v - lr*(g + decay*w); w <- w + v.

    Biases are exempt from weight decay. Returns new Params; inputs untouched.
    """
    new_layers, new_vel = [], []
    for p, v, g in zip(params.layers, params.velocity, grads):
        if p is None:
            new_layers.append(None)
            new_vel.append(None)
            continue
        vw = config.momentum * v["w"] - config.learning_rate * (
            g["w"] + config.weight_decay * p["w"])
        vb = config.momentum * v["b"] - config.learning_rate * g["b"]
        new_layers.append({"w": p["w"] + vw, "b": p["b"] + vb})
        new_vel.append({"w": vw, "b": vb})
    return Params(spec=params.spec, layers=new_layers, velocity=new_vel)


def train(dataset, spec: NetworkSpec, config: TrainConfig,
          class_names=None, on_epoch=None) -> TrainedModel:
    """Epochs of shuffled minibatches; returns an evaluation-mode model.

    ``dataset`` is (images, labels). Shuffling, init and dropout all derive
    from ``config.seed``, so identical calls give identical parameters.
    ``on_epoch(epoch_index, mean_loss)`` is called after each epoch when given.
    """
    images, labels = dataset
    x = np.asarray(images, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if x.ndim != 4 or x.shape[0] != y.shape[0]:
        raise ValueError(f"dataset shapes do not line up: {x.shape} vs {y.shape}")
    num_classes = spec.num_classes
    if class_names is None:
        class_names = tuple(str(i) for i in range(num_classes))
    present = set(int(v) for v in np.unique(y))
    missing = [c for c in range(num_classes) if c not in present]
    if missing:
        raise ValueError(f"classes with no training samples: {missing}")

    params = init_params(spec, config.seed)
    rng = derive_rng(config.seed, "train")
    n = x.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_grad(params, (x[idx], y[idx]), rng=rng)
            if not math.isfinite(loss):
                raise ValueError(f"non-finite loss at epoch {epoch}, step "
                                 f"{start // config.batch_size}; reduce the "
                                 "learning rate")
            params = sgd_step(params, grads, config)
            total += loss * len(idx)
        log.info("epoch %d: mean loss %.6f", epoch, total / n)
        if on_epoch is not None:
            on_epoch(epoch, total / n)
    return TrainedModel(spec=spec, params=params, class_names=class_names)


# ---------------------------------------------------------------------------
# Serialization

def _spec_to_dict(spec: NetworkSpec) -> dict:
    layers = []
    for layer in spec.layers:
        if isinstance(layer, Conv):
            layers.append({"type": "conv", "out_channels": layer.out_channels,
                           "kernel": layer.kernel, "stride": layer.stride})
        elif isinstance(layer, FullyConnected):
            layers.append({"type": "fc", "out_dims": layer.out_dims})
        elif isinstance(layer, Relu):
            layers.append({"type": "relu"})
        elif isinstance(layer, Dropout):
            layers.append({"type": "dropout", "rate": layer.rate})
        else:
            layers.append({"type": "softmax"})
    return {"input_shape": list(spec.input_shape), "layers": layers}


def _spec_from_dict(d: dict) -> NetworkSpec:
    layers = []
    for entry in d["layers"]:
        kind = entry["type"]
        if kind == "conv":
            layers.append(Conv(entry["out_channels"], entry["kernel"], entry["stride"]))
        elif kind == "fc":
            layers.append(FullyConnected(entry["out_dims"]))
        elif kind == "relu":
            layers.append(Relu())
        elif kind == "dropout":
            layers.append(Dropout(entry["rate"]))
        elif kind == "softmax":
            layers.append(Softmax())
        else:
            raise ValueError(f"unknown layer type {kind!r}")
    return NetworkSpec(input_shape=tuple(d["input_shape"]), layers=tuple(layers))


def save_model(model: TrainedModel, path) -> None:
    """Versioned binary container: JSON header + raw little-endian float64.

    Tensors are written in layer order, weight then bias. Optimizer momentum
    is not persisted; a loaded model starts with zero velocity.
    """
    tensors = []
    for p in model.params.layers:
        if p is not None:
            tensors.extend([p["w"], p["b"]])
    header = {
        "class_names": list(model.class_names),
        "spec": _spec_to_dict(model.spec),
        "tensor_shapes": [list(t.shape) for t in tensors],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<IQ", MODEL_VERSION, len(blob)))
        f.write(blob)
        for t in tensors:
            f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_model(path) -> TrainedModel:
    """Read a container written by :func:`save_model`; bit-exact round trip."""
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic)")
    version, header_len = struct.unpack_from("<IQ", data, 4)
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    start = 4 + struct.calcsize("<IQ")
    header = json.loads(data[start:start + header_len].decode("utf-8"))
    spec = _spec_from_dict(header["spec"])
    shapes = [tuple(s) for s in header["tensor_shapes"]]

    offset = start + header_len
    expected = _param_shapes(spec)
    layers, velocity = [], []
    it = iter(shapes)
    for entry in expected:
        if entry is None:
            layers.append(None)
            velocity.append(None)
            continue
        w_shape, b_shape, _ = entry
        tensors = []
        for shape in (w_shape, b_shape):
            stored = next(it, None)
            if stored != tuple(shape):
                raise ValueError(f"{path}: tensor shape {stored} does not match "
                                 f"spec shape {tuple(shape)}")
            count = int(np.prod(shape))
            arr = np.frombuffer(data, dtype="<f8", count=count,
                                offset=offset).reshape(shape).copy()
            offset += count * 8
            tensors.append(arr)
        layers.append({"w": tensors[0], "b": tensors[1]})
        velocity.append({"w": np.zeros(w_shape), "b": np.zeros(b_shape)})
    if next(it, None) is not None:
        raise ValueError(f"{path}: more tensors in header than the architecture declares")
    params = Params(spec=spec, layers=layers, velocity=velocity)
    return TrainedModel(spec=spec, params=params,
                        class_names=tuple(header["class_names"]))
