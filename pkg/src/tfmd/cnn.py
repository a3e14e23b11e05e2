"""Compact convolutional classifier for 64x64 RGB time-frequency images.

Implemented directly on numpy so every gradient can be verified against
central finite differences.  Training is a single-threaded deterministic
loop: a fixed seed fixes initialization, shuffling, and the final
parameters bit-for-bit.

Default stack (the source study names no interior layer sizes; this is the
smallest one that trains in minutes on a CPU):

    Conv 3x3 x16 + ReLU -> MaxPool 2x2 -> Conv 3x3 x32 + ReLU ->
    MaxPool 2x2 -> Flatten -> Dense 64 + ReLU -> Dense 5

Softmax is folded into the loss (max-subtracted, log clamped at 1e-12).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "TrainConfig",
    "TrainingHistory",
    "TrainingDiverged",
    "Network",
    "build_default_network",
    "forward",
    "loss_and_grad",
    "train",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
]


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss or activation shows up during training."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    optimizer: str = "adam"  # "adam" or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


# ---------------------------------------------------------------------------
# Layers.  Each layer exposes params/grads lists (possibly empty), forward,
# and backward.  The public batch layout is (batch, channels, height, width);
# internally the conv stack runs channels-last, (batch, height, width,
# channels), which keeps the im2col buffers contiguous and the whole conv in
# one gemm.  Shape bookkeeping for the audit stays in (C, H, W) terms.
# ---------------------------------------------------------------------------


class Conv2D:
    """Odd-sized conv, stride 1, same padding.

    Runs as one gemm per kernel offset on patch matrices gathered from a
    flattened padded buffer, so every copy moves width-contiguous runs
    (slicing the width axis directly would shuffle tiny channel-sized
    chunks and dominate the runtime).  Weight shape is (k*k, c_in, c_out),
    offset-major.
    """

    def __init__(self, c_in, c_out, ksize=3):
        if ksize % 2 != 1:
            raise ValueError("kernel size must be odd for same padding")
        self.c_in, self.c_out, self.ksize = c_in, c_out, ksize
        self.weight = np.zeros((ksize * ksize, c_in, c_out))
        self.bias = np.zeros(c_out)
        self.d_weight = np.zeros_like(self.weight)
        self.d_bias = np.zeros_like(self.bias)
        self._patches = None
        # first layer of a stack can skip the input gradient entirely
        self.needs_input_grad = True

    @property
    def params(self):
        return [self.weight, self.bias]

    @property
    def grads(self):
        return [self.d_weight, self.d_bias]

    def init(self, rng, dtype):
        fan_in = self.ksize * self.ksize * self.c_in
        bound = np.sqrt(6.0 / fan_in)
        self.weight = rng.uniform(-bound, bound, self.weight.shape).astype(dtype)
        self.bias = np.zeros(self.c_out, dtype=dtype)

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.c_in:
            raise ValueError(f"Conv2D expects {self.c_in} input channels, got {c}")
        return (self.c_out, h, w)

    def _patch_view(self, flat, ky, kx, b, h, w, c):
        """(b, h, w*c) view of the padded buffer for one kernel offset."""
        wp = w + 2 * (self.ksize // 2)
        start = (ky * wp + kx) * c
        block = flat[:, start : start + h * wp * c].reshape(b, h, wp * c)
        return block[:, :, : w * c]

    def forward(self, x):
        b, h, w, c = x.shape
        k, p = self.ksize, self.ksize // 2
        hp, wp = h + 2 * p, w + 2 * p
        # tail margin so the shifted flat views of the last offsets stay in bounds
        flat = np.zeros((b, hp * wp * c + 2 * p * c), dtype=x.dtype)
        flat[:, : hp * wp * c].reshape(b, hp, wp, c)[:, p : p + h, p : p + w, :] = x
        n = b * h * w
        patches = np.empty((k * k, n, c), dtype=x.dtype)
        for i, (ky, kx) in enumerate((ky, kx) for ky in range(k) for kx in range(k)):
            patches[i] = self._patch_view(flat, ky, kx, b, h, w, c).reshape(n, c)
        self._patches = patches
        self._shape = (b, h, w, c)
        out = patches[0] @ self.weight[0]
        for i in range(1, k * k):
            out += patches[i] @ self.weight[i]
        out += self.bias
        return out.reshape(b, h, w, self.c_out)

    def backward(self, dy):
        b, h, w, c = self._shape
        k, p = self.ksize, self.ksize // 2
        hp, wp = h + 2 * p, w + 2 * p
        dy2 = dy.reshape(-1, self.c_out)
        self.d_bias = dy2.sum(axis=0)
        self.d_weight = np.empty_like(self.weight)
        for i in range(k * k):
            self.d_weight[i] = self._patches[i].T @ dy2
        if not self.needs_input_grad:
            return None
        # one gemm for all offsets' input gradients, then scatter-add per offset
        dpatches = (dy2 @ self.weight.reshape(k * k * c, self.c_out).T).reshape(-1, k * k, c)
        dflat = np.zeros((b, hp * wp * c + 2 * p * c), dtype=dy.dtype)
        for i, (ky, kx) in enumerate((ky, kx) for ky in range(k) for kx in range(k)):
            view = self._patch_view(dflat, ky, kx, b, h, w, c)
            view += dpatches[:, i, :].reshape(b, h, w * c)
        dxp = dflat[:, : hp * wp * c].reshape(b, hp, wp, c)
        return dxp[:, p : p + h, p : p + w, :]


class ReLU:
    params = ()
    grads = ()

    def init(self, rng, dtype):
        pass

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        out = np.maximum(x, 0)
        self._mask = out > 0
        return out

    def backward(self, dy):
        return dy * self._mask


class MaxPool2:
    """2x2 max pooling, stride 2; on ties the gradient is split equally
    among the tied inputs (a valid subgradient, and deterministic)."""

    params = ()
    grads = ()

    def init(self, rng, dtype):
        pass

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if h % 2 or w % 2:
            raise ValueError(f"MaxPool2 needs even spatial dims, got {h}x{w}")
        return (c, h // 2, w // 2)

    def forward(self, x):
        self._x = x
        q = (x[:, 0::2, 0::2, :], x[:, 0::2, 1::2, :],
             x[:, 1::2, 0::2, :], x[:, 1::2, 1::2, :])
        self._q = q
        out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
        self._out = out
        return out

    def backward(self, dy):
        out = self._out
        masks = [qi == out for qi in self._q]
        cnt = masks[0].astype(np.uint8)
        for m in masks[1:]:
            cnt += m
        g = dy / cnt
        dx = np.empty_like(self._x)
        dx[:, 0::2, 0::2, :] = masks[0] * g
        dx[:, 0::2, 1::2, :] = masks[1] * g
        dx[:, 1::2, 0::2, :] = masks[2] * g
        dx[:, 1::2, 1::2, :] = masks[3] * g
        return dx


class Flatten:
    params = ()
    grads = ()

    def init(self, rng, dtype):
        pass

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._in_shape)


class Dense:
    def __init__(self, n_in, n_out):
        self.n_in, self.n_out = n_in, n_out
        self.weight = np.zeros((n_in, n_out))
        self.bias = np.zeros(n_out)
        self.d_weight = np.zeros_like(self.weight)
        self.d_bias = np.zeros_like(self.bias)

    @property
    def params(self):
        return [self.weight, self.bias]

    @property
    def grads(self):
        return [self.d_weight, self.d_bias]

    def init(self, rng, dtype):
        bound = np.sqrt(6.0 / self.n_in)
        self.weight = rng.uniform(-bound, bound, self.weight.shape).astype(dtype)
        self.bias = np.zeros(self.n_out, dtype=dtype)

    def out_shape(self, in_shape):
        if in_shape != (self.n_in,):
            raise ValueError(f"Dense expects {(self.n_in,)}, got {in_shape}")
        return (self.n_out,)

    def forward(self, x):
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, dy):
        self.d_weight = self._x.T @ dy
        self.d_bias = dy.sum(axis=0)
        return dy @ self.weight.T


class Network:
    """Ordered layer stack with a validated shape chain."""

    def __init__(self, layers, input_shape, n_classes, seed=0, dtype=np.float32):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.n_classes = n_classes
        self.seed = seed
        self.dtype = dtype
        self.epoch = 0
        shape = self.input_shape
        for layer in layers:
            shape = layer.out_shape(shape)
        if shape != (n_classes,):
            raise ValueError(f"network maps {input_shape} to {shape}, expected ({n_classes},)")
        rng = np.random.default_rng(seed)
        for layer in layers:
            layer.init(rng, dtype)
        if layers and isinstance(layers[0], Conv2D):
            layers[0].needs_input_grad = False  # nothing below to propagate to

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self):
        return [g for layer in self.layers for g in layer.grads]

    def set_params(self, values):
        i = 0
        for layer in self.layers:
            n = len(layer.params)
            if n == 0:
                continue
            if isinstance(layer, (Conv2D, Dense)):
                layer.weight = values[i]
                layer.bias = values[i + 1]
            i += n


def build_default_network(seed=0, dtype=np.float32, input_shape=(3, 64, 64),
                          n_classes=5) -> Network:
    c, h, w = input_shape
    flat = 32 * (h // 4) * (w // 4)
    layers = [
        Conv2D(c, 16), ReLU(), MaxPool2(),
        Conv2D(16, 32), ReLU(), MaxPool2(),
        Flatten(), Dense(flat, 64), ReLU(), Dense(64, n_classes),
    ]
    return Network(layers, input_shape, n_classes, seed=seed, dtype=dtype)


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    """Run the stack, returning logits of shape (batch, n_classes)."""
    x = np.asarray(batch, dtype=net.dtype)
    if x.shape[1:] != net.input_shape:
        raise ValueError(f"batch shape {x.shape[1:]} != network input {net.input_shape}")
    x = np.ascontiguousarray(x.transpose(0, 2, 3, 1))  # conv stack runs channels-last
    for layer in net.layers:
        x = layer.forward(x)
    if not np.all(np.isfinite(x)):
        raise TrainingDiverged("non-finite activation in forward pass")
    return x


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(net: Network, batch, labels):
    """Mean softmax cross-entropy and gradients for every parameter.

    Returns (loss, grads) with grads aligned with ``net.params``.
    """
    loss, grads, _ = _loss_grad_logits(net, batch, labels)
    return loss, grads


def _loss_grad_logits(net, batch, labels):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= net.n_classes:
        raise ValueError(f"labels must be in 0..{net.n_classes - 1}")
    logits = forward(net, batch)
    probs = _softmax(logits)
    b = logits.shape[0]
    picked = np.clip(probs[np.arange(b), labels], 1e-12, None)
    loss = float(-np.mean(np.log(picked)))
    if not np.isfinite(loss):
        raise TrainingDiverged("non-finite loss", state={"logits": logits})
    dlogits = probs.astype(net.dtype)
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    dy = dlogits
    for layer in reversed(net.layers):
        dy = layer.backward(dy)
    return loss, [g.copy() for g in net.grads], logits


@dataclass
class TrainingHistory:
    epochs: list = field(default_factory=list)  # rows of dicts

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
        for row in self.epochs:
            lines.append(
                f"{row['epoch']},{row['train_loss']:.6f},{row['train_acc']:.6f},"
                f"{row['val_loss']:.6f},{row['val_acc']:.6f}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


class _Adam:
    def __init__(self, params, cfg):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            mhat = m / (1 - c.beta1**self.t)
            vhat = v / (1 - c.beta2**self.t)
            p -= (c.learning_rate * mhat / (np.sqrt(vhat) + c.eps)).astype(p.dtype)


class _SGD:
    def __init__(self, params, cfg):
        self.cfg = cfg

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= (self.cfg.learning_rate * g).astype(p.dtype)


def _eval(net, images, labels, batch_size):
    total_loss = 0.0
    correct = 0
    n = len(labels)
    for start in range(0, n, batch_size):
        xb = images[start : start + batch_size]
        yb = labels[start : start + batch_size]
        logits = forward(net, xb)
        probs = _softmax(logits)
        picked = np.clip(probs[np.arange(len(yb)), yb], 1e-12, None)
        total_loss += float(-np.sum(np.log(picked)))
        correct += int(np.sum(np.argmax(logits, axis=1) == yb))
    return total_loss / n, correct / n


def train(net: Network, images, labels, cfg: TrainConfig,
          val_images=None, val_labels=None) -> TrainingHistory:
    """Deterministic mini-batch training loop.

    Shuffling is driven by ``cfg.seed`` alone; with a fixed seed the final
    parameters are bit-identical across runs.  A non-finite loss aborts with
    a :class:`TrainingDiverged` carrying the epoch/batch state.
    """
    images = np.asarray(images, dtype=net.dtype)
    labels = np.asarray(labels)
    if len(images) == 0:
        raise ValueError("training set is empty")
    opt = (_Adam if cfg.optimizer == "adam" else _SGD)(net.params, cfg)
    rng = np.random.default_rng(cfg.seed)
    history = TrainingHistory()
    n = len(labels)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = images[idx], labels[idx]
            try:
                loss, grads, logits = _loss_grad_logits(net, xb, yb)
            except TrainingDiverged as exc:
                exc.state.update({"epoch": epoch, "batch_start": start})
                raise
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
            epoch_loss += loss * len(yb)
            opt.step(net.params, grads)
        row = {
            "epoch": epoch,
            "train_loss": epoch_loss / n,
            "train_acc": correct / n,
            "val_loss": float("nan"),
            "val_acc": float("nan"),
        }
        if val_images is not None and len(val_images):
            row["val_loss"], row["val_acc"] = _eval(
                net, np.asarray(val_images, dtype=net.dtype), val_labels, cfg.batch_size
            )
        history.epochs.append(row)
        net.epoch = epoch + 1
    return history


def predict(net: Network, images, batch_size: int = 64):
    """Class labels and softmax probabilities; argmax ties break to the
    lowest class index."""
    images = np.asarray(images, dtype=net.dtype)
    probs = []
    for start in range(0, len(images), batch_size):
        probs.append(_softmax(forward(net, images[start : start + batch_size])))
    probs = np.concatenate(probs) if probs else np.zeros((0, net.n_classes))
    return np.argmax(probs, axis=1), probs


# ---------------------------------------------------------------------------
# Checkpoint format: JSON header + little-endian float32 parameter blob.
# ---------------------------------------------------------------------------


def save_checkpoint(net: Network, path) -> None:
    header = {
        "arch": "conv16-conv32-dense64",
        "input_shape": list(net.input_shape),
        "n_classes": net.n_classes,
        "seed": net.seed,
        "epoch": net.epoch,
        "param_shapes": [list(p.shape) for p in net.params],
    }
    blob = b"".join(p.astype("<f4").tobytes() for p in net.params)
    head = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        f.write(blob)


def load_checkpoint(path, dtype=np.float32) -> Network:
    raw = Path(path).read_bytes()
    (head_len,) = struct.unpack_from("<I", raw)
    header = json.loads(raw[4 : 4 + head_len].decode())
    net = build_default_network(
        seed=header["seed"],
        dtype=dtype,
        input_shape=tuple(header["input_shape"]),
        n_classes=header["n_classes"],
    )
    net.epoch = header["epoch"]
    offset = 4 + head_len
    values = []
    for shape in header["param_shapes"]:
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        values.append(arr.reshape(shape).astype(dtype))
        offset += 4 * count
    net.set_params(values)
    return net
