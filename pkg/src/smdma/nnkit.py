"""Minimal dense / Conv1d network kit with hand-rolled backprop.

Exactly the pieces the codecs need: dense, same-length Conv1d
(cross-correlation, stride 1), ReLU, Xavier-uniform init, MSE, Adam, a
central-finite-difference gradient checker, and a flat binary model format.
Everything runs in float64 on 1-D feature vectors; Conv1d layers carry
(channels, length) activations internally.

Forward passes are pure: evaluating a model never mutates it, so read-only
snapshots are safe to use from several threads.  Training callers use
``forward_train`` to get an explicit activation tape for ``backward``.
"""

from __future__ import annotations

import math
import struct
from typing import Callable, Iterator

import numpy as np

from .errors import GradientStateError, NumericError, ShapeError

Array = np.ndarray


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Dense:
    """Affine map y = W x + b on 1-D inputs. W has shape (out_dim, in_dim)."""

    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int):
        if in_dim < 1 or out_dim < 1:
            raise ValueError("dense dims must be positive")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.W = np.zeros((self.out_dim, self.in_dim))
        self.b = np.zeros(self.out_dim)

    def init_params(self, rng: np.random.Generator) -> None:
        bound = xavier_bound(self.in_dim, self.out_dim)
        self.W = rng.uniform(-bound, bound, size=self.W.shape)
        self.b = np.zeros(self.out_dim)

    def params(self) -> dict[str, Array]:
        return {"W": self.W, "b": self.b}

    def forward(self, x: Array) -> Array:
        if x.ndim != 1:
            raise ShapeError(f"expected 1-D input, got shape {x.shape}")
        if x.shape[0] != self.in_dim:
            raise ShapeError(f"expected input length {self.in_dim}, got {x.shape[0]}")
        return self.W @ x + self.b

    def backward(self, x: Array, grad_out: Array) -> tuple[dict[str, Array], Array]:
        grads = {"W": np.outer(grad_out, x), "b": grad_out.copy()}
        return grads, self.W.T @ grad_out


class Conv1d:
    """Same-length 1-D convolution (cross-correlation, stride 1).

    Kernel size must be odd; zero padding of (k-1)/2 keeps the sequence
    length.  Accepts a bare 1-D vector when in_channels == 1.
    """

    kind = "conv1d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3):
        if kernel_size % 2 == 0 or kernel_size < 1:
            raise ValueError(f"kernel_size must be odd and positive, got {kernel_size}")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.padding = (kernel_size - 1) // 2
        self.W = np.zeros((self.out_channels, self.in_channels, self.kernel_size))
        self.b = np.zeros(self.out_channels)

    def init_params(self, rng: np.random.Generator) -> None:
        bound = xavier_bound(self.in_channels * self.kernel_size,
                             self.out_channels * self.kernel_size)
        self.W = rng.uniform(-bound, bound, size=self.W.shape)
        self.b = np.zeros(self.out_channels)

    def params(self) -> dict[str, Array]:
        return {"W": self.W, "b": self.b}

    def _as_2d(self, x: Array) -> Array:
        if x.ndim == 1:
            if self.in_channels != 1:
                raise ShapeError(
                    f"expected {self.in_channels} input channels, got a 1-D vector")
            return x[np.newaxis, :]
        if x.ndim != 2 or x.shape[0] != self.in_channels:
            raise ShapeError(
                f"expected ({self.in_channels}, L) input, got shape {x.shape}")
        return x

    def _windows(self, x2d: Array) -> Array:
        length = x2d.shape[1]
        xp = np.pad(x2d, ((0, 0), (self.padding, self.padding)))
        # (in_channels, kernel_size, length)
        return np.stack([xp[:, k:k + length] for k in range(self.kernel_size)], axis=1)

    def forward(self, x: Array) -> Array:
        x2d = self._as_2d(x)
        y = np.einsum("oik,ikl->ol", self.W, self._windows(x2d))
        return y + self.b[:, np.newaxis]

    def backward(self, x: Array, grad_out: Array) -> tuple[dict[str, Array], Array]:
        was_1d = x.ndim == 1
        x2d = self._as_2d(x)
        length = x2d.shape[1]
        if grad_out.shape != (self.out_channels, length):
            raise ShapeError(
                f"expected gradient shape ({self.out_channels}, {length}), "
                f"got {grad_out.shape}")
        grads = {
            "W": np.einsum("ol,ikl->oik", grad_out, self._windows(x2d)),
            "b": grad_out.sum(axis=1),
        }
        gp = np.pad(grad_out, ((0, 0), (self.padding, self.padding)))
        gwin = np.stack([gp[:, k:k + length] for k in range(self.kernel_size)], axis=1)
        grad_in = np.einsum("oik,okl->il", self.W[:, :, ::-1], gwin)
        return grads, grad_in[0] if was_1d else grad_in


class Relu:
    kind = "relu"

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def params(self) -> dict[str, Array]:
        return {}

    def forward(self, x: Array) -> Array:
        return np.maximum(x, 0.0)

    def backward(self, x: Array, grad_out: Array) -> tuple[dict[str, Array], Array]:
        if grad_out.shape != x.shape:
            raise ShapeError(f"gradient shape {grad_out.shape} != input shape {x.shape}")
        return {}, grad_out * (x > 0.0)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class Tape:
    """Activation record of one forward pass, consumed by Model.backward."""

    def __init__(self, owner: "Model", inputs: list[Array], squeezed: bool,
                 out_shape: tuple[int, ...]):
        self.owner = owner
        self.inputs = inputs
        self.squeezed = squeezed
        self.out_shape = out_shape


class Model:
    """Ordered layer stack operating on a single feature vector.

    The boundary contract is 1-D in, 1-D out; a trailing Conv1d producing a
    single channel is squeezed back to a vector.
    """

    def __init__(self, layers: list):
        self.layers = list(layers)

    def init_params(self, rng: np.random.Generator) -> None:
        for layer in self.layers:
            layer.init_params(rng)

    def parameters(self) -> Iterator[tuple[int, str, Array]]:
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                yield i, name, arr

    def num_params(self) -> int:
        return sum(arr.size for _, _, arr in self.parameters())

    def copy(self) -> "Model":
        new_layers = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                dup = Dense(layer.in_dim, layer.out_dim)
            elif isinstance(layer, Conv1d):
                dup = Conv1d(layer.in_channels, layer.out_channels, layer.kernel_size)
            else:
                dup = Relu()
            for name, arr in layer.params().items():
                setattr(dup, name, arr.copy())
            new_layers.append(dup)
        return Model(new_layers)

    def _run(self, x: Array, record: bool) -> tuple[Array, Tape | None]:
        a = np.asarray(x, dtype=np.float64)
        inputs: list[Array] = []
        for i, layer in enumerate(self.layers):
            if record:
                inputs.append(a)
            try:
                a = layer.forward(a)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        squeezed = False
        if a.ndim == 2:
            if a.shape[0] != 1:
                raise ShapeError(
                    f"model output has {a.shape[0]} channels; expected a vector")
            a = a[0]
            squeezed = True
        tape = Tape(self, inputs, squeezed, a.shape) if record else None
        return a, tape

    def forward(self, x: Array) -> Array:
        y, _ = self._run(x, record=False)
        return y

    def forward_train(self, x: Array) -> tuple[Array, Tape]:
        y, tape = self._run(x, record=True)
        assert tape is not None
        return y, tape

    def backward(self, tape: Tape, grad_out: Array) -> tuple[list[dict[str, Array]], Array]:
        """Backprop through the pass recorded on ``tape``.

        Returns per-layer parameter gradients (dict per layer, empty for
        parameter-free layers) and the gradient w.r.t. the model input.
        """
        if not isinstance(tape, Tape) or tape.owner is not self:
            raise GradientStateError("backward called without a matching forward pass")
        if len(tape.inputs) != len(self.layers):
            raise GradientStateError("activation tape does not match this model")
        g = np.asarray(grad_out, dtype=np.float64)
        if g.shape != tape.out_shape:
            raise ShapeError(f"output gradient shape {g.shape} != {tape.out_shape}")
        if tape.squeezed:
            g = g[np.newaxis, :]
        grads: list[dict[str, Array]] = [{} for _ in self.layers]
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            try:
                grads[i], g = layer.backward(tape.inputs[i], g)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        return grads, g


# ---------------------------------------------------------------------------
# Loss and optimizer
# ---------------------------------------------------------------------------


def mse(a: Array, b: Array) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"mse operands differ in shape: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def mse_grad(a: Array, b: Array) -> Array:
    """Gradient of mse(a, b) with respect to a."""
    if a.shape != b.shape:
        raise ShapeError(f"mse operands differ in shape: {a.shape} vs {b.shape}")
    return 2.0 * (a - b) / a.size


class Adam:
    """Bias-corrected Adam over one model's parameters."""

    def __init__(self, model: Model, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.model = model
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {(i, n): np.zeros_like(a) for i, n, a in model.parameters()}
        self._v = {(i, n): np.zeros_like(a) for i, n, a in model.parameters()}

    def step(self, grads: list[dict[str, Array]]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, name, arr in self.model.parameters():
            g = grads[i][name]
            if g.shape != arr.shape:
                raise ShapeError(
                    f"layer {i} param {name}: gradient shape {g.shape} != {arr.shape}")
            m = self._m[(i, name)]
            v = self._v[(i, name)]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arr -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def grad_check(model: Model, loss_fn: Callable[[Array], tuple[float, Array]],
               x: Array, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` maps the model output to (scalar loss, gradient w.r.t. the
    output).  Returns 0.0 for a parameter-free model.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")
    x = np.asarray(x, dtype=np.float64)
    y, tape = model.forward_train(x)
    _, gy = loss_fn(y)
    grads, _ = model.backward(tape, gy)

    worst = 0.0
    for li, name, arr in model.parameters():
        analytic = grads[li][name]
        flat = arr.reshape(-1)
        a_flat = analytic.reshape(-1)
        for j in range(flat.size):
            saved = flat[j]
            flat[j] = saved + eps
            lp = loss_fn(model.forward(x))[0]
            flat[j] = saved - eps
            lm = loss_fn(model.forward(x))[0]
            flat[j] = saved
            cd = (lp - lm) / (2.0 * eps)
            if not (np.isfinite(cd) and np.isfinite(a_flat[j])):
                raise NumericError(
                    f"non-finite gradient at layer {li} param {name}[{j}]")
            rel = abs(a_flat[j] - cd) / max(abs(a_flat[j]), abs(cd), 1e-12)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Serialization: flat binary model files
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"SMDMA-NN\x00"
MODEL_VERSION = 1
_KIND_CODE = {"dense": 0, "conv1d": 1, "relu": 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def save_model(model: Model, path) -> None:
    chunks = [MODEL_MAGIC, struct.pack("<HH", MODEL_VERSION, len(model.layers))]
    for layer in model.layers:
        chunks.append(struct.pack("<B", _KIND_CODE[layer.kind]))
        if isinstance(layer, Dense):
            chunks.append(struct.pack("<II", layer.in_dim, layer.out_dim))
            chunks.append(np.ascontiguousarray(layer.W, "<f8").tobytes())
            chunks.append(np.ascontiguousarray(layer.b, "<f8").tobytes())
        elif isinstance(layer, Conv1d):
            chunks.append(struct.pack(
                "<III", layer.in_channels, layer.out_channels, layer.kernel_size))
            chunks.append(np.ascontiguousarray(layer.W, "<f8").tobytes())
            chunks.append(np.ascontiguousarray(layer.b, "<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ShapeError(f"{path}: not a model file (bad magic)")
    pos = len(MODEL_MAGIC)
    version, n_layers = struct.unpack_from("<HH", buf, pos)
    pos += 4
    if version != MODEL_VERSION:
        raise ShapeError(f"{path}: unsupported model version {version}")

    def take_f64(count: int) -> Array:
        nonlocal pos
        raw = buf[pos:pos + 8 * count]
        if len(raw) != 8 * count:
            raise ShapeError(f"{path}: truncated model file")
        pos += 8 * count
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    layers = []
    for _ in range(n_layers):
        (code,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        kind = _CODE_KIND.get(code)
        if kind == "dense":
            in_dim, out_dim = struct.unpack_from("<II", buf, pos)
            pos += 8
            layer = Dense(in_dim, out_dim)
            layer.W = take_f64(out_dim * in_dim).reshape(out_dim, in_dim)
            layer.b = take_f64(out_dim)
        elif kind == "conv1d":
            c_in, c_out, k = struct.unpack_from("<III", buf, pos)
            pos += 12
            layer = Conv1d(c_in, c_out, k)
            layer.W = take_f64(c_out * c_in * k).reshape(c_out, c_in, k)
            layer.b = take_f64(c_out)
        elif kind == "relu":
            layer = Relu()
        else:
            raise ShapeError(f"{path}: unknown layer kind code {code}")
        layers.append(layer)
    if pos != len(buf):
        raise ShapeError(f"{path}: trailing bytes in model file")
    return Model(layers)
