"""Dense math and hand-written backprop for small feed-forward nets.

Every network keeps its parameters in one contiguous float32 buffer, with
each layer holding reshaped views into it. Optimizer steps then touch a
single array, which keeps per-iteration Python overhead small enough to
train hundreds of probes on a CPU.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

DTYPE = np.float32
ACTIVATIONS = ("relu", "identity")


class ShapeError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss


class InsufficientSamplesError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class SgdConfig:
    """Optimizer settings shared by probe and classifier training.

    ``optimizer`` selects plain momentum SGD or Adam; ``momentum`` doubles as
    Adam's first-moment decay when Adam is selected.
    """

    learning_rate: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 100
    seed: int = 0
    optimizer: str = "sgd"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def with_seed(self, seed: int) -> "SgdConfig":
        return replace(self, seed=seed)


def _activate(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0)
    if act == "identity":
        return z
    raise ConfigError(f"unknown activation {act!r}")


def forward_dense(W: np.ndarray, b: np.ndarray, x: np.ndarray, act: str = "relu") -> np.ndarray:
    """Compute ``act(x @ W.T + b)`` row by row."""
    W = np.asarray(W)
    b = np.asarray(b)
    x = np.asarray(x)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"cannot apply weights {W.shape} to input {x.shape}")
    if b.shape != (W.shape[0],):
        raise ShapeError(f"bias {b.shape} does not match {W.shape[0]} outputs")
    return _activate(x @ W.T + b, act)


# -- layers ---------------------------------------------------------------


class Layer:
    """Base layer. Parameterized layers get views bound by :class:`Network`."""

    kind = "layer"
    activation = "identity"

    def param_shapes(self, in_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
        return []

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def bind(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.params = params
        self.grads = grads

    @property
    def has_params(self) -> bool:
        return False

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad, cache):
        raise NotImplementedError


class Dense(Layer):
    kind = "dense"

    def __init__(self, units: int, activation: str = "relu"):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.units = units
        self.activation = activation

    @property
    def has_params(self) -> bool:
        return True

    @property
    def W(self) -> np.ndarray:
        return self.params[0]

    @property
    def b(self) -> np.ndarray:
        return self.params[1]

    def param_shapes(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"dense layer needs flat input, got {in_shape}")
        return [(self.units, in_shape[0]), (self.units,)]

    def out_shape(self, in_shape):
        return (self.units,)

    def forward(self, x):
        z = x @ self.W.T + self.b
        out = _activate(z, self.activation)
        return out, (x, out)

    def backward(self, grad, cache):
        x, out = cache
        if self.activation == "relu":
            grad = grad * (out > 0)
        self.grads[0] += grad.T @ x
        self.grads[1] += grad.sum(axis=0)
        return grad @ self.W


class Conv2d(Layer):
    """3x3-style convolution, stride 1, zero padding that preserves H and W."""

    kind = "conv2d"

    def __init__(self, filters: int, kernel: int = 3, activation: str = "relu"):
        if kernel % 2 != 1:
            raise ConfigError("kernel size must be odd")
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.filters = filters
        self.kernel = kernel
        self.activation = activation

    @property
    def has_params(self) -> bool:
        return True

    @property
    def W(self) -> np.ndarray:
        return self.params[0]

    @property
    def b(self) -> np.ndarray:
        return self.params[1]

    def param_shapes(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"conv layer needs (C, H, W) input, got {in_shape}")
        return [(self.filters, in_shape[0], self.kernel, self.kernel), (self.filters,)]

    def out_shape(self, in_shape):
        return (self.filters, in_shape[1], in_shape[2])

    def _cols(self, x):
        k = self.kernel
        p = k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        # win: (N, C, H, W, k, k) -> (N*H*W, C*k*k)
        n, c, h, w = x.shape
        return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)

    def forward(self, x):
        n, _, h, w = x.shape
        cols = self._cols(x)
        z = cols @ self.W.reshape(self.filters, -1).T + self.b
        z = z.reshape(n, h, w, self.filters).transpose(0, 3, 1, 2)
        out = _activate(z, self.activation)
        return np.ascontiguousarray(out), (x.shape, cols, out)

    def backward(self, grad, cache):
        x_shape, cols, out = cache
        n, c, h, w = x_shape
        k = self.kernel
        p = k // 2
        if self.activation == "relu":
            grad = grad * (out > 0)
        g = grad.transpose(0, 2, 3, 1).reshape(n * h * w, self.filters)
        self.grads[0] += (g.T @ cols).reshape(self.W.shape)
        self.grads[1] += g.sum(axis=0)
        gcols = (g @ self.W.reshape(self.filters, -1)).reshape(n, h, w, c, k, k)
        gx = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                gx[:, :, i : i + h, j : j + w] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return gx[:, :, p : p + h, p : p + w]


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, size: int = 2):
        self.size = size

    def out_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h // self.size, w // self.size)

    def forward(self, x):
        s = self.size
        n, c, h, w = x.shape
        ho, wo = h // s, w // s
        x = x[:, :, : ho * s, : wo * s]
        blocks = x.reshape(n, c, ho, s, wo, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, s * s)
        arg = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return out, ((n, c, h, w), arg)

    def backward(self, grad, cache):
        (n, c, h, w), arg = cache
        s = self.size
        ho, wo = grad.shape[2], grad.shape[3]
        blocks = np.zeros((n, c, ho, wo, s * s), dtype=grad.dtype)
        np.put_along_axis(blocks, arg[..., None], grad[..., None], axis=-1)
        gx = np.zeros((n, c, h, w), dtype=grad.dtype)
        gx[:, :, : ho * s, : wo * s] = (
            blocks.reshape(n, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * s, wo * s)
        )
        return gx


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, cache):
        return grad.reshape(cache)


# -- network --------------------------------------------------------------


class Network:
    """A stack of layers over one flat parameter buffer.

    ``trainable`` is a 0/1 buffer aligned with ``params``; gradient entries
    where it is zero are discarded before every optimizer step, so frozen
    (pruned) parameters never move.
    """

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...], seed: int = 0, dtype=DTYPE):
        self.layers = layers
        self.input_shape = tuple(int(s) for s in input_shape)
        self.dtype = np.dtype(dtype)
        shapes = []
        shape = self.input_shape
        self.shapes = [shape]
        for layer in layers:
            shapes.append(layer.param_shapes(shape))
            shape = layer.out_shape(shape)
            self.shapes.append(shape)
        sizes = [int(np.prod(s)) for group in shapes for s in group]
        self.params = np.zeros(sum(sizes), dtype=self.dtype)
        self.grads = np.zeros_like(self.params)
        self.trainable = None
        self._param_shapes = shapes
        self._bind()
        self.reset_parameters(seed)

    def _bind(self):
        offset = 0
        self._slices = []
        for layer, group in zip(self.layers, self._param_shapes):
            pviews, gviews, slices = [], [], []
            for s in group:
                size = int(np.prod(s))
                pviews.append(self.params[offset : offset + size].reshape(s))
                gviews.append(self.grads[offset : offset + size].reshape(s))
                slices.append(slice(offset, offset + size))
                offset += size
            layer.bind(pviews, gviews)
            self._slices.append(slices)

    def reset_parameters(self, seed: int) -> None:
        """Uniform init in +-sqrt(1/fan_in) for weights and biases."""
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if not layer.has_params:
                continue
            W, b = layer.params
            fan_in = int(np.prod(W.shape[1:]))
            bound = np.sqrt(1.0 / fan_in)
            W[...] = rng.uniform(-bound, bound, size=W.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)

    def param_slices(self, layer_index: int) -> list[slice]:
        return self._slices[layer_index]

    @property
    def n_params(self) -> int:
        return self.params.size

    def copy(self) -> "Network":
        new = copy.copy(self)
        new.layers = [copy.copy(layer) for layer in self.layers]
        new.params = self.params.copy()
        new.grads = np.zeros_like(new.params)
        new.trainable = None if self.trainable is None else self.trainable.copy()
        new._bind()
        return new

    def astype(self, dtype) -> "Network":
        new = self.copy()
        new.dtype = np.dtype(dtype)
        new.params = new.params.astype(dtype)
        new.grads = np.zeros_like(new.params)
        if new.trainable is not None:
            new.trainable = new.trainable.astype(dtype)
        new._bind()
        return new

    def forward(self, x: np.ndarray, upto: int | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        for layer in self.layers[:upto]:
            x, _ = layer.forward(x)
        return x

    def forward_all(self, x: np.ndarray) -> list[np.ndarray]:
        """Outputs of every layer, in order."""
        x = np.asarray(x, dtype=self.dtype)
        outs = []
        for layer in self.layers:
            x, _ = layer.forward(x)
            outs.append(x)
        return outs

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray, loss: str = "mse") -> float:
        """Forward + backward. Fills ``self.grads`` and returns the loss."""
        x = np.asarray(x, dtype=self.dtype)
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        value, grad = loss_fn(x, y, loss)
        self.grads.fill(0)
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            grad = layer.backward(grad, cache)
        return value

    def loss(self, x: np.ndarray, y: np.ndarray, loss: str = "mse") -> float:
        value, _ = loss_fn(self.forward(x), y, loss, need_grad=False)
        return value


def loss_fn(pred: np.ndarray, y: np.ndarray, kind: str, need_grad: bool = True):
    """Mean loss (float64 reduction) and its gradient w.r.t. ``pred``.

    ``mse`` averages over every element. ``ce`` takes integer class ids and
    returns the mean negative log-likelihood in nats.
    """
    n = pred.shape[0]
    if kind == "mse":
        diff = pred - y
        value = float(np.mean(np.square(diff, dtype=np.float64)))
        grad = (2.0 / diff.size) * diff if need_grad else None
        return value, grad
    if kind == "ce":
        y = np.asarray(y).astype(np.int64).ravel()
        z = pred - pred.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z, dtype=np.float64).sum(axis=1))
        value = float(np.mean(logsum - z[np.arange(n), y]))
        if not need_grad:
            return value, None
        p = np.exp(z - logsum[:, None].astype(pred.dtype))
        p[np.arange(n), y] -= 1
        return value, (p / n).astype(pred.dtype)
    raise ConfigError(f"unknown loss {kind!r}")


# -- optimizers -----------------------------------------------------------


class Optimizer:
    def __init__(self, net: Network, cfg: SgdConfig):
        self.net = net
        self.cfg = cfg
        self.state = np.zeros_like(net.params)
        self.state2 = np.zeros_like(net.params) if cfg.optimizer == "adam" else None
        self.t = 0

    def clone(self, net: Network) -> "Optimizer":
        """Copy of this optimizer's moment estimates, driving ``net``."""
        new = copy.copy(self)
        new.net = net
        new.state = self.state.copy()
        new.state2 = None if self.state2 is None else self.state2.copy()
        return new

    def step(self) -> None:
        cfg = self.cfg
        net = self.net
        g = net.grads
        if cfg.weight_decay:
            g += cfg.weight_decay * net.params
        if net.trainable is not None:
            g *= net.trainable
        self.t += 1
        if cfg.optimizer == "sgd":
            self.state *= cfg.momentum
            self.state += g
            net.params -= cfg.learning_rate * self.state
        else:
            b1, b2 = cfg.momentum, 0.999
            self.state *= b1
            self.state += (1 - b1) * g
            self.state2 *= b2
            self.state2 += (1 - b2) * (g * g)
            lr = cfg.learning_rate * np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
            net.params -= (lr * self.state / (np.sqrt(self.state2) + 1e-8)).astype(net.dtype)


# -- probes ---------------------------------------------------------------


def make_mlp(in_width: int, out_width: int, hidden=(256, 256), seed: int = 0, dtype=DTYPE) -> Network:
    """Dense regressor: relu hidden layers, identity output."""
    layers: list[Layer] = [Dense(h, "relu") for h in hidden]
    layers.append(Dense(out_width, "identity"))
    return Network(layers, (in_width,), seed=seed, dtype=dtype)


@dataclass
class TrainResult:
    net: Network
    final_loss: float
    losses: list[float] = field(repr=False)

    @property
    def initial_loss(self) -> float:
        return self.losses[0]


FULL_BATCH_ROWS = 1024


def batch_iterator(n_rows: int, batch_size: int, rng: np.random.Generator):
    """Yield row-index batches forever; ``None`` means use every row."""
    if n_rows <= FULL_BATCH_ROWS or batch_size >= n_rows:
        while True:
            yield None
    while True:
        order = rng.permutation(n_rows)
        for start in range(0, n_rows - batch_size + 1, batch_size):
            yield order[start : start + batch_size]


def train_regressor(
    net: Network,
    X: np.ndarray,
    Y: np.ndarray,
    iters: int,
    cfg: SgdConfig,
    loss: str = "mse",
    optimizer: Optimizer | None = None,
) -> TrainResult:
    """Fit ``net`` in place on (X, Y) for ``iters`` steps.

    ``final_loss`` is the mean batch loss over the last 10% of iterations.
    Pass an existing ``optimizer`` to continue training with its moment
    estimates.
    """
    if X.shape[0] != Y.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    if iters < 1:
        raise ConfigError("iters must be >= 1")
    X = np.asarray(X, dtype=net.dtype)
    if loss == "mse":
        Y = np.asarray(Y, dtype=net.dtype)
    opt = optimizer or Optimizer(net, cfg)
    rng = np.random.default_rng(cfg.seed)
    batches = batch_iterator(X.shape[0], cfg.batch_size, rng)
    losses = []
    for it in range(iters):
        idx = next(batches)
        if idx is None:
            value = net.loss_and_grad(X, Y, loss)
        else:
            value = net.loss_and_grad(X[idx], Y[idx], loss)
        if not np.isfinite(value):
            raise DivergenceError(it, value)
        opt.step()
        losses.append(value)
    tail = max(1, iters // 10)
    return TrainResult(net, float(np.mean(losses[-tail:])), losses)


def grad_check(net: Network, X: np.ndarray, Y: np.ndarray, loss: str = "mse", step: float = 1e-3) -> float:
    """Max relative error between backprop and central finite differences.

    Runs on a float64 copy so the comparison measures the gradient code, not
    float32 round-off. Relative error is ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    net = net.astype(np.float64)
    X = np.asarray(X, dtype=np.float64)
    if loss == "mse":
        Y = np.asarray(Y, dtype=np.float64)
    net.loss_and_grad(X, Y, loss)
    analytic = net.grads.copy()
    worst = 0.0
    for k in range(net.n_params):
        orig = net.params[k]
        net.params[k] = orig + step
        up = net.loss(X, Y, loss)
        net.params[k] = orig - step
        down = net.loss(X, Y, loss)
        net.params[k] = orig
        numeric = (up - down) / (2 * step)
        denom = max(abs(numeric), abs(analytic[k]), 1e-8)
        worst = max(worst, abs(numeric - analytic[k]) / denom)
    return worst
