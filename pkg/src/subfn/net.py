"""Minimal fully-connected ReLU network: training, inference, pattern capture.

Only what the toy experiments need: plain numpy forward/backward, SGD with
momentum and weight decay, deterministic given a seed. Deep models are
expected to feed the scorer through the pattern-exchange file instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .patterns import ActivationPattern, pack_bits

__all__ = [
    "Layer",
    "MlpModel",
    "LabeledDataset",
    "TrainConfig",
    "ModelFileError",
    "make_mlp",
    "forward",
    "forward_batch",
    "capture_pattern",
    "capture_patterns",
    "relu_layer_indices",
    "last_relu_layer",
    "train_sgd",
    "loss_and_grads",
    "make_halfmoons",
    "save_model",
    "load_model",
    "save_dataset",
    "load_dataset",
]

RELU = "relu"
IDENTITY = "identity"

MODEL_FILE_HEADER = "#subfn-model v1"


class ModelFileError(ValueError):
    """Malformed model file."""


@dataclass
class Layer:
    w: np.ndarray  # [out, in]
    b: np.ndarray  # [out]
    activation: str  # "relu" | "identity"


@dataclass
class MlpModel:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for t, layer in enumerate(self.layers):
            if layer.activation not in (RELU, IDENTITY):
                raise ValueError(f"layer {t}: unknown activation {layer.activation!r}")
            if layer.w.ndim != 2 or layer.b.ndim != 1:
                raise ValueError(f"layer {t}: w must be 2-D and b 1-D")
            if layer.w.shape[0] != layer.b.shape[0]:
                raise ValueError(f"layer {t}: w rows {layer.w.shape[0]} != b size {layer.b.shape[0]}")
            if t > 0 and layer.w.shape[1] != self.layers[t - 1].w.shape[0]:
                raise ValueError(
                    f"layer {t}: input width {layer.w.shape[1]} does not chain "
                    f"with previous output {self.layers[t - 1].w.shape[0]}"
                )
            if not (np.isfinite(layer.w).all() and np.isfinite(layer.b).all()):
                raise ValueError(f"layer {t}: non-finite parameters")
        if self.layers[-1].activation != IDENTITY:
            raise ValueError("final layer must be identity (logits)")

    @property
    def input_dim(self) -> int:
        return self.layers[0].w.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].w.shape[0]


@dataclass
class LabeledDataset:
    inputs: np.ndarray  # [N, input_dim]
    labels: np.ndarray  # [N] int class ids

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("inputs must be [N, d], labels [N]")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels differ in length")
        if self.inputs.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if (self.labels < 0).any():
            raise ValueError("labels must be non-negative class ids")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1


@dataclass
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 150
    batch_size: int = 64
    seed: int = 0


def make_mlp(input_dim: int, hidden: list[int], n_classes: int, seed: int = 0) -> MlpModel:
    """Hidden ReLU layers of the given widths, identity logits layer.

    Weights uniform in +-1/sqrt(fan_in), deterministic given the seed.
    """
    if input_dim < 1 or n_classes < 1:
        raise ValueError("input_dim and n_classes must be positive")
    if any(h < 1 for h in hidden):
        raise ValueError(f"hidden widths must be positive, got {hidden}")
    rng = np.random.default_rng(seed)
    dims = [input_dim] + list(hidden) + [n_classes]
    layers = []
    for t in range(len(dims) - 1):
        fan_in, out = dims[t], dims[t + 1]
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(out, fan_in))
        b = rng.uniform(-bound, bound, size=out)
        act = RELU if t < len(dims) - 2 else IDENTITY
        layers.append(Layer(w=w, b=b, activation=act))
    return MlpModel(layers=layers)


def _check_input(model: MlpModel, x: np.ndarray, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    expect = model.input_dim
    if x.shape[-1] != expect:
        raise ValueError(f"{name} has {x.shape[-1]} features, model expects {expect}")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    return x


def forward_batch(model: MlpModel, xs: np.ndarray) -> np.ndarray:
    """Logits for a [N, input_dim] batch."""
    a = _check_input(model, xs, "inputs")
    for layer in model.layers:
        z = a @ layer.w.T + layer.b
        a = np.maximum(z, 0.0) if layer.activation == RELU else z
    return a


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Logits for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward expects a 1-D input; use forward_batch for matrices")
    return forward_batch(model, x[None, :])[0]


def relu_layer_indices(model: MlpModel) -> list[int]:
    return [t for t, layer in enumerate(model.layers) if layer.activation == RELU]


def last_relu_layer(model: MlpModel) -> int:
    idxs = relu_layer_indices(model)
    if not idxs:
        raise ValueError("model has no ReLU layer")
    return idxs[-1]


def _preactivations(model: MlpModel, xs: np.ndarray, layer_index: int) -> np.ndarray:
    if not 0 <= layer_index < len(model.layers):
        raise ValueError(f"layer_index {layer_index} outside [0, {len(model.layers)})")
    if model.layers[layer_index].activation != RELU:
        raise ValueError(f"layer {layer_index} is not a ReLU layer")
    a = _check_input(model, xs, "inputs")
    for t, layer in enumerate(model.layers):
        z = a @ layer.w.T + layer.b
        if t == layer_index:
            return z
        a = np.maximum(z, 0.0) if layer.activation == RELU else z
    raise AssertionError("unreachable")


def capture_patterns(model: MlpModel, xs: np.ndarray, layer_index: int) -> np.ndarray:
    """Packed activation patterns [N, ceil(M/8)] for the designated ReLU layer.

    Bit j is 1 iff pre-activation j > 0; exact zeros map to 0, matching the
    zero branch of ReLU.
    """
    z = _preactivations(model, xs, layer_index)
    return pack_bits((z > 0.0).astype(np.uint8))


def capture_pattern(model: MlpModel, x: np.ndarray, layer_index: int) -> ActivationPattern:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("capture_pattern expects a 1-D input")
    packed = capture_patterns(model, x[None, :], layer_index)
    m = model.layers[layer_index].w.shape[0]
    return ActivationPattern(bits=packed[0].tobytes(), m=m)


# --- training ---------------------------------------------------------------


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grads(model: MlpModel, xs: np.ndarray, ys: np.ndarray):
    """Mean softmax cross-entropy over the batch and gradients per layer.

    Returns (loss, [(dw, db), ...]) in layer order. Weight decay is not
    included here; the trainer adds it as an L2 term on update.
    """
    xs = _check_input(model, xs, "inputs")
    n = xs.shape[0]
    acts = [xs]
    zs = []
    a = xs
    for layer in model.layers:
        z = a @ layer.w.T + layer.b
        zs.append(z)
        a = np.maximum(z, 0.0) if layer.activation == RELU else z
        acts.append(a)
    probs = _softmax(acts[-1])
    eps_clip = np.clip(probs[np.arange(n), ys], 1e-300, None)
    loss = float(-np.mean(np.log(eps_clip)))

    delta = probs
    delta[np.arange(n), ys] -= 1.0
    delta /= n
    grads = [None] * len(model.layers)
    for t in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[t]
        grads[t] = (delta.T @ acts[t], delta.sum(axis=0))
        if t > 0:
            delta = delta @ layer.w
            if model.layers[t - 1].activation == RELU:
                delta = delta * (zs[t - 1] > 0.0)
    return loss, grads


def train_sgd(model: MlpModel, data: LabeledDataset, config: TrainConfig) -> MlpModel:
    """SGD with momentum and L2 weight decay; deterministic given config.seed."""
    if config.lr <= 0:
        raise ValueError(f"lr must be positive, got {config.lr}")
    if len(data) < 1:
        raise ValueError("empty dataset")
    if data.labels.max() >= model.output_dim:
        raise ValueError(
            f"label {int(data.labels.max())} outside model's {model.output_dim} classes"
        )
    rng = np.random.default_rng(config.seed)
    layers = [Layer(w=l.w.copy(), b=l.b.copy(), activation=l.activation) for l in model.layers]
    trained = MlpModel(layers=layers)
    vel = [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in layers]
    n = len(data)
    bs = max(1, min(config.batch_size, n))
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            loss, grads = loss_and_grads(trained, data.inputs[idx], data.labels[idx])
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {start // bs}"
                )
            for t, layer in enumerate(layers):
                dw, db = grads[t]
                vw, vb = vel[t]
                vw *= config.momentum
                vw += dw + config.weight_decay * layer.w
                vb *= config.momentum
                vb += db + config.weight_decay * layer.b
                layer.w -= config.lr * vw
                layer.b -= config.lr * vb
    return trained


def accuracy(model: MlpModel, data: LabeledDataset) -> float:
    preds = forward_batch(model, data.inputs).argmax(axis=1)
    return float(np.mean(preds == data.labels))


# --- halfmoons generator ----------------------------------------------------


def make_halfmoons(n: int, noise_sigma: float, seed: int) -> LabeledDataset:
    """Two interleaving half circles.

    Class 0: upper half of the unit circle centred at the origin.
    Class 1: lower half of the unit circle centred at (1, 0.5), flipped.
    Gaussian noise with the given sigma is added per coordinate.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    n0 = n // 2
    n1 = n - n0
    t0 = np.linspace(0.0, math.pi, n0)
    t1 = np.linspace(0.0, math.pi, n1)
    xs = np.concatenate(
        [
            np.stack([np.cos(t0), np.sin(t0)], axis=1),
            np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1),
        ]
    )
    ys = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    rng = np.random.default_rng(seed)
    if noise_sigma > 0:
        xs = xs + rng.normal(0.0, noise_sigma, size=xs.shape)
    return LabeledDataset(inputs=xs, labels=ys)


# --- model and dataset files ------------------------------------------------


def save_model(path, model: MlpModel) -> None:
    """Versioned self-describing text format; floats at 17 significant digits."""
    with open(path, "w") as fh:
        fh.write(MODEL_FILE_HEADER + "\n")
        fh.write(f"input_dim={model.input_dim}\n")
        fh.write(f"output_dim={model.output_dim}\n")
        fh.write(f"layers={len(model.layers)}\n")
        for t, layer in enumerate(model.layers):
            out, fan_in = layer.w.shape
            fh.write(f"layer={t} activation={layer.activation} out={out} in={fan_in}\n")
            fh.write("w=" + " ".join(f"{v:.17g}" for v in layer.w.ravel()) + "\n")
            fh.write("b=" + " ".join(f"{v:.17g}" for v in layer.b) + "\n")


def _expect_line(lines: list[str], i: int, prefix: str, path) -> str:
    if i >= len(lines):
        raise ModelFileError(f"{path}: truncated file, expected {prefix!r} at line {i + 1}")
    if not lines[i].startswith(prefix):
        raise ModelFileError(
            f"{path}: line {i + 1}: expected {prefix!r}, got {lines[i][:40]!r}"
        )
    return lines[i][len(prefix) :]


def load_model(path) -> MlpModel:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MODEL_FILE_HEADER:
        raise ModelFileError(f"{path}: line 1: expected header {MODEL_FILE_HEADER!r}")
    try:
        input_dim = int(_expect_line(lines, 1, "input_dim=", path))
        output_dim = int(_expect_line(lines, 2, "output_dim=", path))
        n_layers = int(_expect_line(lines, 3, "layers=", path))
    except ValueError as exc:
        raise ModelFileError(f"{path}: bad header field: {exc}") from exc
    layers = []
    i = 4
    for t in range(n_layers):
        meta = _expect_line(lines, i, "layer=", path).split()
        fields = dict(kv.split("=") for kv in [f"layer={meta[0]}"] + meta[1:])
        try:
            act = fields["activation"]
            out = int(fields["out"])
            fan_in = int(fields["in"])
        except (KeyError, ValueError) as exc:
            raise ModelFileError(f"{path}: line {i + 1}: bad layer header") from exc
        wtxt = _expect_line(lines, i + 1, "w=", path)
        btxt = _expect_line(lines, i + 2, "b=", path)
        try:
            w = np.array([float(v) for v in wtxt.split()]).reshape(out, fan_in)
            b = np.array([float(v) for v in btxt.split()])
        except ValueError as exc:
            raise ModelFileError(f"{path}: layer {t}: bad parameter block: {exc}") from exc
        if b.shape[0] != out:
            raise ModelFileError(f"{path}: layer {t}: bias length {b.shape[0]} != out {out}")
        layers.append(Layer(w=w, b=b, activation=act))
        i += 3
    try:
        model = MlpModel(layers=layers)
    except ValueError as exc:
        raise ModelFileError(f"{path}: inconsistent model: {exc}") from exc
    if model.input_dim != input_dim or model.output_dim != output_dim:
        raise ModelFileError(f"{path}: declared dims do not match layer shapes")
    return model


def save_dataset(path, data: LabeledDataset) -> None:
    d = data.inputs.shape[1]
    with open(path, "w") as fh:
        fh.write(",".join(f"x{j}" for j in range(d)) + ",label\n")
        for row, label in zip(data.inputs, data.labels):
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{int(label)}\n")


def load_dataset(path) -> LabeledDataset:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    start = 1 if lines[0].split(",")[-1].strip() == "label" else 0
    xs, ys = [], []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        fields = line.split(",")
        if len(fields) < 2:
            raise ValueError(f"{path}: line {lineno}: expected x0,...,label")
        try:
            xs.append([float(v) for v in fields[:-1]])
            ys.append(int(fields[-1]))
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return LabeledDataset(inputs=np.array(xs), labels=np.array(ys, dtype=np.int64))
