"""A small numpy neural network engine with hand-written backpropagation.

Tensors are plain float64 numpy arrays.  Images use the (batch, channel,
height, width) layout.  Every layer caches what its backward pass needs during
``forward`` and accumulates nothing: ``backward`` overwrites the parameter
gradients of the layer.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64
CHECKPOINT_MAGIC = b"G2PPCAL-CHECKPOINT v1\n"


class ShapeError(ValueError):
    pass


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


def conv_output_size(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


class Layer:
    training = False

    def params(self) -> list[np.ndarray]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def spec(self) -> dict:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.W = _glorot(rng, (n_out, n_in), n_in, n_out)
        self.b = np.zeros(n_out, dtype=DTYPE)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        # the first layer of a network never needs d(loss)/d(input)
        self.needs_input_grad = True
        self._x = None

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.W.shape[1]:
            raise ShapeError(f"Dense expects (B, {self.W.shape[1]}), got {x.shape}")
        self._x = x
        out = x @ self.W.T
        out += self.b
        return out

    def backward(self, grad):
        if grad.shape != (self._x.shape[0], self.W.shape[0]):
            raise ShapeError(f"Dense backward expects {(self._x.shape[0], self.W.shape[0])}, "
                             f"got {grad.shape}")
        np.matmul(grad.T, self._x, out=self.dW)
        np.sum(grad, axis=0, out=self.db)
        return grad @ self.W if self.needs_input_grad else None

    def output_shape(self, shape):
        if shape != (self.W.shape[1],):
            raise ShapeError(f"Dense expects ({self.W.shape[1]},) inputs, got {shape}")
        return (self.W.shape[0],)

    def spec(self):
        return {"type": "dense", "n_in": self.W.shape[1], "n_out": self.W.shape[0]}


class Conv2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int = 7, stride: int = 2,
                 padding: int = 3, rng=None):
        if stride < 1 or kernel < 1 or padding < 0:
            raise ValueError(f"bad conv geometry k={kernel} s={stride} p={padding}")
        rng = np.random.default_rng() if rng is None else rng
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        self.W = _glorot(rng, (out_channels, in_channels, kernel, kernel), fan_in, fan_out)
        self.b = np.zeros(out_channels, dtype=DTYPE)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self.needs_input_grad = True
        self._cache = None

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.dW, self.db]

    def _windows(self, x):
        p, k, s = self.padding, self.kernel, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        # (B, C, Ho, Wo, k, k) view, no copy
        return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s], xp.shape

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.W.shape[1]:
            raise ShapeError(f"Conv2d expects (B, {self.W.shape[1]}, H, W), got {x.shape}")
        win, padded_shape = self._windows(x)
        B, C, Ho, Wo = win.shape[:4]
        if Ho < 1 or Wo < 1:
            raise ShapeError(f"input {x.shape} too small for kernel {self.kernel}")
        # im2col, materialised once and reused for dW
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, -1)
        out = cols @ self.W.reshape(self.W.shape[0], -1).T
        out += self.b
        self._cache = (cols, (B, Ho, Wo), x.shape, padded_shape)
        return np.ascontiguousarray(out.reshape(B, Ho, Wo, -1).transpose(0, 3, 1, 2))

    def backward(self, grad):
        cols, (B, Ho, Wo), in_shape, padded_shape = self._cache
        if grad.shape != (B, self.W.shape[0], Ho, Wo):
            raise ShapeError(f"Conv2d backward expects {(B, self.W.shape[0], Ho, Wo)}, "
                             f"got {grad.shape}")
        g = grad.transpose(0, 2, 3, 1)  # (B, Ho, Wo, O)
        g_flat = g.reshape(B * Ho * Wo, -1)
        self.dW[...] = (g_flat.T @ cols).reshape(self.W.shape)
        self.db[...] = g_flat.sum(axis=0)
        if not self.needs_input_grad:
            return None
        k, s, p = self.kernel, self.stride, self.padding
        dxp = np.zeros(padded_shape, dtype=DTYPE)
        for i in range(k):
            for j in range(k):
                contrib = g @ self.W[:, :, i, j]  # (B, Ho, Wo, C)
                dxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += contrib.transpose(0, 3, 1, 2)
        H, W = in_shape[2:]
        return dxp[:, :, p:p + H, p:p + W]

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.W.shape[1]:
            raise ShapeError(f"Conv2d expects {self.W.shape[1]} channels, got {c}")
        ho = conv_output_size(h, self.kernel, self.stride, self.padding)
        wo = conv_output_size(w, self.kernel, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"input {shape} collapses below 1 cell under kernel {self.kernel}")
        return (self.W.shape[0], ho, wo)

    def spec(self):
        return {"type": "conv2d", "in_channels": self.W.shape[1],
                "out_channels": self.W.shape[0], "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding}


class MaxPool2d(Layer):
    """Max pooling without padding; ties go to the first cell in row-major order."""

    def __init__(self, kernel: int = 7, stride: int = 2):
        self.kernel, self.stride = kernel, stride
        self._cache = None

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"MaxPool2d expects (B, C, H, W), got {x.shape}")
        k, s = self.kernel, self.stride
        if x.shape[2] < k or x.shape[3] < k:
            raise ShapeError(f"input {x.shape} too small for pool kernel {k}")
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        flat = win.reshape(win.shape[:4] + (k * k,))
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, arg)
        return out

    def backward(self, grad):
        in_shape, arg = self._cache
        if grad.shape != arg.shape:
            raise ShapeError(f"MaxPool2d backward expects {arg.shape}, got {grad.shape}")
        B, C, H, W = in_shape
        k, s = self.kernel, self.stride
        Ho, Wo = arg.shape[2:]
        rows = s * np.arange(Ho)[:, None] + arg // k
        cols = s * np.arange(Wo)[None, :] + arg % k
        plane = (np.arange(B * C).reshape(B, C, 1, 1)) * (H * W)
        flat_idx = (plane + rows * W + cols).ravel()
        dx = np.bincount(flat_idx, weights=grad.ravel(), minlength=B * C * H * W)
        return dx.reshape(in_shape)

    def output_shape(self, shape):
        c, h, w = shape
        ho = conv_output_size(h, self.kernel, self.stride, 0)
        wo = conv_output_size(w, self.kernel, self.stride, 0)
        if ho < 1 or wo < 1:
            raise ShapeError(f"input {shape} collapses below 1 cell under pool {self.kernel}")
        return (c, ho, wo)

    def spec(self):
        return {"type": "maxpool2d", "kernel": self.kernel, "stride": self.stride}


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0.0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)

    def spec(self):
        return {"type": "relu"}


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time only."""

    def __init__(self, p: float = 0.25, rng=None):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p
        self.rng = np.random.default_rng() if rng is None else rng
        self._scale = None

    def forward(self, x):
        if not self.training or self.p == 0.0:
            self._scale = None
            return x
        keep = self.rng.random(x.shape) >= self.p
        self._scale = keep / (1.0 - self.p)
        return x * self._scale

    def backward(self, grad):
        return grad if self._scale is None else grad * self._scale

    def spec(self):
        return {"type": "dropout", "p": self.p}


class Flatten(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def spec(self):
        return {"type": "flatten"}


class Sequential:
    def __init__(self, layers: list[Layer], input_shape: tuple):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        self.output_shape = shape
        # skip the (unused) input gradient of the first trainable layer
        for layer in self.layers:
            if hasattr(layer, "needs_input_grad"):
                layer.needs_input_grad = False
                break
        self.eval()

    def train(self):
        for layer in self.layers:
            layer.training = True
        return self

    def eval(self):
        for layer in self.layers:
            layer.training = False
        return self

    @property
    def training(self) -> bool:
        return any(layer.training for layer in self.layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=DTYPE)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"model expects (B, {', '.join(map(str, self.input_shape))}), "
                             f"got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def predict(self, x: np.ndarray, batch_size: int | None = None) -> np.ndarray:
        was_training = self.training
        self.eval()
        try:
            if batch_size is None:
                return self.forward(x)
            return np.concatenate([self.forward(x[i:i + batch_size])
                                   for i in range(0, len(x), batch_size)])
        finally:
            if was_training:
                self.train()

    def backward(self, grad: np.ndarray):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
            if grad is None:
                break
        return grad

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads()]

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def spec(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [layer.spec() for layer in self.layers]}

    @classmethod
    def from_spec(cls, spec: dict, rng=None) -> "Sequential":
        rng = np.random.default_rng(0) if rng is None else rng
        layers = []
        for s in spec["layers"]:
            kind = s["type"]
            if kind == "dense":
                layers.append(Dense(s["n_in"], s["n_out"], rng))
            elif kind == "conv2d":
                layers.append(Conv2d(s["in_channels"], s["out_channels"], s["kernel"],
                                     s["stride"], s["padding"], rng))
            elif kind == "maxpool2d":
                layers.append(MaxPool2d(s["kernel"], s["stride"]))
            elif kind == "relu":
                layers.append(ReLU())
            elif kind == "dropout":
                layers.append(Dropout(s["p"], rng))
            elif kind == "flatten":
                layers.append(Flatten())
            else:
                raise ValueError(f"unknown layer type {kind!r}")
        return cls(layers, tuple(spec["input_shape"]))


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over all entries and its gradient w.r.t. pred."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


class Adam:
    """Bias-corrected Adam without weight decay."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeError(f"{len(grads)} gradient blocks for {len(self.params)} parameters")
        for g, p in zip(grads, self.params):
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} vs parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient passed to Adam")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            p -= self.lr * (m / c1) / denom


def loss_and_grads(model: Sequential, x, target):
    pred = model.forward(x)
    loss, g = mse(pred, target)
    model.backward(g)
    return loss, [g.copy() for g in model.grads()]


def grad_check(model: Sequential, x, target, eps: float = 1e-6, atol: float = 1e-8) -> float:
    """Worst relative error between backprop gradients and central differences of the loss.

    The relative error of one entry is |a - n| / max(|a|, |n|, atol).
    """
    was_training = model.training
    model.eval()
    try:
        _, analytic = loss_and_grads(model, x, target)
        worst = 0.0
        for p, a in zip(model.params(), analytic):
            flat = p.reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + eps
                up, _ = mse(model.forward(x), target)
                flat[idx] = orig - eps
                down, _ = mse(model.forward(x), target)
                flat[idx] = orig
                num = (up - down) / (2.0 * eps)
                ana = a.reshape(-1)[idx]
                err = abs(ana - num) / max(abs(ana), abs(num), atol)
                worst = max(worst, err)
        return worst
    finally:
        if was_training:
            model.train()


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def save_checkpoint(model: Sequential, path, metadata: dict | None = None) -> None:
    """Text JSON header (architecture, shapes, metadata) then raw little-endian FP64 blocks."""
    header = {
        "architecture": model.spec(),
        "blocks": [list(p.shape) for p in model.params()],
        "metadata": _to_jsonable(metadata or {}),
    }
    text = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(f"{len(text)}\n".encode("ascii"))
        fh.write(text + b"\n")
        for p in model.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[Sequential, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        size = int(fh.readline().decode("ascii"))
        header = json.loads(fh.read(size).decode("utf-8"))
        fh.readline()
        payload = fh.read()
    model = Sequential.from_spec(header["architecture"])
    data = np.frombuffer(payload, dtype="<f8")
    offset = 0
    params = model.params()
    if [list(p.shape) for p in params] != header["blocks"]:
        raise ValueError(f"{path}: parameter blocks do not match the architecture")
    for p in params:
        n = p.size
        if offset + n > data.size:
            raise ValueError(f"{Path(path).name}: truncated parameter payload")
        p[...] = data[offset:offset + n].reshape(p.shape)
        offset += n
    if offset != data.size:
        raise ValueError(f"{path}: {data.size - offset} trailing values after parameters")
    return model, header["metadata"]
