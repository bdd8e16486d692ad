"""Toy classifiers, activation capture, structured masks and training."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import (
    Conv2d,
    Dense,
    DivergenceError,
    Flatten,
    InsufficientSamplesError,
    MaxPool2d,
    Network,
    Optimizer,
    SgdConfig,
    ShapeError,
)


@dataclass
class PruneMask:
    """Keep vector for one hidden layer (0 = first hidden layer)."""

    layer_index: int
    keep: np.ndarray

    def __post_init__(self):
        self.keep = np.asarray(self.keep, dtype=np.uint8)
        if self.keep.ndim != 1 or not np.isin(self.keep, (0, 1)).all():
            raise ShapeError("keep must be a 1-d 0/1 vector")

    @property
    def n_dropped(self) -> int:
        return int(self.keep.size - self.keep.sum())


@dataclass
class CollapseReport:
    collapsed: bool
    layers: list[int] = field(default_factory=list)


def detect_layer_collapse(masks) -> CollapseReport:
    """A network has collapsed when some layer keeps no unit at all."""
    layers = sorted(m.layer_index for m in masks if m.keep.sum() == 0)
    return CollapseReport(bool(layers), layers)


class ToyModel:
    """A small classifier. Hidden layers are the parameterized layers other
    than the last; they are addressed by their ordinal (0 = first hidden)."""

    def __init__(self, net: Network, name: str = "model"):
        self.net = net
        self.name = name
        self.param_layers = [i for i, layer in enumerate(net.layers) if layer.has_params]
        self.masks: dict[int, np.ndarray] = {}

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.net.input_shape

    @property
    def n_hidden(self) -> int:
        return len(self.param_layers) - 1

    def hidden_layer(self, ordinal: int):
        return self.net.layers[self.param_layers[ordinal]]

    def layer_widths(self) -> list[int]:
        return [self.hidden_layer(k).params[0].shape[0] for k in range(self.n_hidden)]

    def copy(self) -> "ToyModel":
        new = ToyModel(self.net.copy(), self.name)
        new.masks = {k: v.copy() for k, v in self.masks.items()}
        return new

    def forward(self, x: np.ndarray, batch: int = 512) -> np.ndarray:
        x = self._shape_inputs(x)
        outs = [self.net.forward(x[i : i + batch]) for i in range(0, x.shape[0], batch)]
        return np.concatenate(outs) if outs else np.zeros((0,), self.net.dtype)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x).argmax(axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        y = np.asarray(y)
        if y.ndim == 2:
            y = y.argmax(axis=1)
        return float(np.mean(self.predict(x) == y))

    def _shape_inputs(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.net.dtype)
        return x.reshape((x.shape[0],) + self.input_shape)

    def mask_slices(self, ordinal: int, unit: int) -> list[tuple[int, tuple]]:
        """(layer index, array index) pairs that carry unit ``unit``'s weights.

        Covers the unit's incoming weights and bias and the matching input
        weights of the next parameterized layer.
        """
        li = self.param_layers[ordinal]
        nj = self.param_layers[ordinal + 1]
        width = self.net.layers[li].params[0].shape[0]
        out = [(li, (0, unit)), (li, (1, unit))]
        next_in = self.net.shapes[nj]
        if len(next_in) == 3:
            out.append((nj, (0, (slice(None), unit))))
        else:
            block = next_in[0] // width
            out.append((nj, (0, (slice(None), slice(unit * block, (unit + 1) * block)))))
        return out


def apply_masks(model: ToyModel, masks) -> ToyModel:
    """Return a copy with dropped units structurally removed.

    Zeroes each dropped unit's incoming row and bias and the next layer's
    input weights from it, and freezes those parameters for re-training.
    Layers without a mask keep every unit.
    """
    new = model.copy()
    net = new.net
    if net.trainable is None:
        net.trainable = np.ones_like(net.params)
    for mask in masks:
        if not 0 <= mask.layer_index < new.n_hidden:
            raise ShapeError(f"no hidden layer {mask.layer_index}")
        width = new.layer_widths()[mask.layer_index]
        if mask.keep.size != width:
            raise ShapeError(f"mask for layer {mask.layer_index} has {mask.keep.size} entries, layer has {width}")
        prev = new.masks.get(mask.layer_index)
        keep = mask.keep.copy() if prev is None else prev & mask.keep
        new.masks[mask.layer_index] = keep
        for unit in np.flatnonzero(keep == 0):
            for li, (pi, idx) in new.mask_slices(mask.layer_index, int(unit)):
                net.layers[li].params[pi][idx] = 0
                sl = net.param_slices(li)[pi]
                tview = net.trainable[sl].reshape(net.layers[li].params[pi].shape)
                tview[idx] = 0
    return new


def masks_from_model(model: ToyModel) -> list[PruneMask]:
    widths = model.layer_widths()
    return [
        PruneMask(k, model.masks.get(k, np.ones(widths[k], dtype=np.uint8)))
        for k in range(model.n_hidden)
    ]


# -- activation capture ---------------------------------------------------


@dataclass
class ActivationCapture:
    """Jointly sampled activations of one batch.

    ``inputs`` are flattened to samples x features. ``hidden[k]`` is the
    post-activation output of hidden layer k: samples x units for dense
    layers, samples x filters x H x W for conv layers.
    """

    inputs: np.ndarray
    hidden: list[np.ndarray]
    output: np.ndarray
    sample_index: np.ndarray | None = None

    @property
    def sample_count(self) -> int:
        return self.inputs.shape[0]

    @property
    def layers(self) -> list[np.ndarray]:
        """Inputs, every hidden layer, then the model output."""
        return [self.inputs, *self.hidden, self.output]

    @property
    def layer_shapes(self) -> list[tuple[int, ...]]:
        return [a.shape[1:] for a in self.layers]


def capture_activations(model: ToyModel, inputs: np.ndarray, n_samples: int = 2048, seed: int = 0) -> ActivationCapture:
    if n_samples < 2:
        raise InsufficientSamplesError("need at least 2 samples to capture activations")
    inputs = np.asarray(inputs)
    if n_samples > inputs.shape[0]:
        raise InsufficientSamplesError(f"asked for {n_samples} samples, only {inputs.shape[0]} inputs available")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(inputs.shape[0], n_samples, replace=False))
    x = model._shape_inputs(inputs[idx])
    hidden: list[list[np.ndarray]] = [[] for _ in range(model.n_hidden)]
    outputs = []
    for start in range(0, n_samples, 512):
        outs = model.net.forward_all(x[start : start + 512])
        for k, li in enumerate(model.param_layers[:-1]):
            hidden[k].append(outs[li])
        outputs.append(outs[-1])
    return ActivationCapture(
        inputs=x.reshape(n_samples, -1).copy(),
        hidden=[np.concatenate(h) for h in hidden],
        output=np.concatenate(outputs),
        sample_index=idx,
    )


# -- training -------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_accuracy: float
    test_accuracy: float


def train_classifier(model: ToyModel, data, epochs: int, cfg: SgdConfig) -> tuple[ToyModel, list[EpochStats]]:
    """Cross-entropy training with SGD; returns a trained copy and a trace.

    ``data`` needs ``x_train, y_train, x_test, y_test``. Masked parameters
    stay frozen at zero.
    """
    model = model.copy()
    trace: list[EpochStats] = []
    if epochs == 0:
        return model, trace
    x = model._shape_inputs(data.x_train)
    y = np.asarray(data.y_train)
    if y.ndim == 2:
        y = y.argmax(axis=1)
    opt = Optimizer(model.net, cfg)
    rng = np.random.default_rng(cfg.seed)
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(x.shape[0])
        losses = []
        for start in range(0, x.shape[0], cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            value = model.net.loss_and_grad(x[idx], y[idx], "ce")
            if not np.isfinite(value):
                raise DivergenceError(step, value)
            opt.step()
            losses.append(value)
            step += 1
        trace.append(
            EpochStats(
                epoch=epoch,
                loss=float(np.mean(losses)),
                train_accuracy=model.accuracy(data.x_train, data.y_train),
                test_accuracy=model.accuracy(data.x_test, data.y_test),
            )
        )
    return model, trace


# -- zoo ------------------------------------------------------------------


def dense_model(sizes: list[int], seed: int = 0, name: str = "dense") -> ToyModel:
    """Fully connected relu net; ``sizes`` = [inputs, hidden..., classes]."""
    layers = [Dense(s, "relu") for s in sizes[1:-1]]
    layers.append(Dense(sizes[-1], "identity"))
    return ToyModel(Network(layers, (sizes[0],), seed=seed), name)


def conv_model(input_shape=(1, 28, 28), filters=(8, 16), dense=32, classes=10, seed: int = 0, name: str = "conv") -> ToyModel:
    """Two conv3x3 + maxpool stages, one hidden dense layer, linear head."""
    layers = []
    for f in filters:
        layers += [Conv2d(f, 3, "relu"), MaxPool2d(2)]
    layers.append(Flatten())
    if dense:
        layers.append(Dense(dense, "relu"))
    layers.append(Dense(classes, "identity"))
    return ToyModel(Network(layers, tuple(input_shape), seed=seed), name)


ZOO = {
    "dense-mnist": lambda seed=0: dense_model([784, 64, 32, 10], seed, "dense-mnist"),
    "dense-digits": lambda seed=0: dense_model([64, 32, 16, 10], seed, "dense-digits"),
    "conv-mnist": lambda seed=0: conv_model((1, 28, 28), seed=seed, name="conv-mnist"),
}


def build_model(model_id: str, seed: int = 0) -> ToyModel:
    """Zoo lookup; ``dense:64,32,10`` builds an ad hoc dense stack."""
    if model_id.startswith("dense:"):
        try:
            sizes = [int(v) for v in model_id[6:].split(",")]
        except ValueError:
            raise KeyError(f"bad dense spec {model_id!r}") from None
        if len(sizes) < 3 or min(sizes) < 1:
            raise KeyError(f"{model_id!r}: need input, at least one hidden and an output size")
        return dense_model(sizes, seed, model_id)
    try:
        return ZOO[model_id](seed)
    except KeyError:
        raise KeyError(f"unknown model {model_id!r}; choose from {sorted(ZOO)}") from None


def duplicate_hidden_nodes(model: ToyModel) -> ToyModel:
    """Double every hidden dense layer with exact copies of its units.

    Each copy gets the same incoming weights and bias; outgoing weights are
    split evenly between original and copy, so the function is unchanged
    and half the hidden units are redundant.
    """
    widths = model.layer_widths()
    net = model.net
    dense_idx = model.param_layers
    if any(net.layers[i].kind != "dense" for i in dense_idx):
        raise ValueError("duplication only supports dense models")
    sizes = [net.input_shape[0]] + [w * 2 for w in widths] + [net.layers[dense_idx[-1]].params[0].shape[0]]
    dup = dense_model(sizes, name=f"{model.name}-dup")
    for k, li in enumerate(dense_idx):
        W, b = (p.astype(np.float32) for p in net.layers[li].params)
        if k > 0:
            W = np.concatenate([W, W], axis=1) / 2
        if k < len(widths):
            W = np.concatenate([W, W], axis=0)
            b = np.concatenate([b, b])
        dW, db = dup.net.layers[li].params
        dW[...] = W
        db[...] = b
    return dup
