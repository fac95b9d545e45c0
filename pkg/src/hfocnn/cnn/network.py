"""Layer stack, initialisation, forward/backward and model files."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DimMismatch, FormatError, StaleCache
from . import layers as L

# filter counts of the three conv blocks
ARCHITECTURES = {"A": (16, 32, 64), "B": (64, 32, 16)}
# (hidden activation, output activation)
VARIANTS = {
    "relu-sigmoid": ("relu", "sigmoid"),
    "leaky-softmax": ("leaky_relu", "softmax"),
}


@dataclass
class Conv2D:
    n_filters: int
    kernel_size: int = 3
    activation: str = "relu"
    weights: np.ndarray = field(default=None, repr=False)
    biases: np.ndarray = field(default=None, repr=False)

    kind = "conv"

    def build(self, in_shape):
        h, w, c = in_shape
        f = self.kernel_size
        if h < f or w < f:
            raise DimMismatch(f"conv {f}x{f} does not fit a {h}x{w} input")
        if self.weights is None:
            self.weights = np.zeros((f, f, c, self.n_filters))
            self.biases = np.zeros(self.n_filters)
        elif self.weights.shape != (f, f, c, self.n_filters):
            raise DimMismatch(f"conv weights {self.weights.shape} do not match input {in_shape}")
        return (h - f + 1, w - f + 1, self.n_filters)

    def fans(self):
        f, _, c, n = self.weights.shape
        return f * f * c, f * f * n

    def forward(self, x):
        return L.conv_forward(x, self.weights, self.biases)

    def backward(self, dz, x):
        return L.conv_backward(dz, x, self.weights)


@dataclass
class MaxPool2D:
    kind = "maxpool"
    activation = "linear"

    def build(self, in_shape):
        h, w, c = in_shape
        if h < 2 or w < 2:
            raise DimMismatch(f"cannot pool a {h}x{w} map")
        return (h // 2, w // 2, c)


@dataclass
class Flatten:
    kind = "flatten"
    activation = "linear"

    def build(self, in_shape):
        return (int(np.prod(in_shape)),)


@dataclass
class Dense:
    n_out: int
    activation: str = "relu"
    weights: np.ndarray = field(default=None, repr=False)
    biases: np.ndarray = field(default=None, repr=False)

    kind = "dense"

    def build(self, in_shape):
        if len(in_shape) != 1:
            raise DimMismatch(f"dense layer needs a flat input, got {in_shape}")
        if self.weights is None:
            self.weights = np.zeros((self.n_out, in_shape[0]))
            self.biases = np.zeros(self.n_out)
        elif self.weights.shape != (self.n_out, in_shape[0]):
            raise DimMismatch(f"dense weights {self.weights.shape} do not match input {in_shape}")
        return (self.n_out,)

    def fans(self):
        n_out, n_in = self.weights.shape
        return n_in, n_out

    def forward(self, x):
        return L.dense_forward(x, self.weights, self.biases)

    def backward(self, dz, x):
        return L.dense_backward(dz, x, self.weights)


def _layer_params(layer):
    return layer.weights.size + layer.biases.size if hasattr(layer, "weights") else 0


class Network:
    """Ordered layer stack with a fixed input shape ``(n_H, n_W, n_C)``."""

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.shapes = [self.input_shape]
        for layer in self.layers:
            if layer.activation not in L.ACTIVATIONS:
                raise ConfigError(f"unknown activation {layer.activation!r}")
            self.shapes.append(layer.build(self.shapes[-1]))
        self.meta = {}

    @property
    def output_shape(self):
        return self.shapes[-1]

    def parameters(self):
        """Weight and bias arrays in layer order (live references)."""
        out = []
        for layer in self.layers:
            if hasattr(layer, "weights"):
                out += [layer.weights, layer.biases]
        return out

    def param_count(self) -> int:
        return sum(_layer_params(layer) for layer in self.layers)

    def init_glorot(self, rng):
        """Glorot-uniform weights, zero biases."""
        for layer in self.layers:
            if hasattr(layer, "weights"):
                fan_in, fan_out = layer.fans()
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                layer.weights[...] = rng.uniform(-limit, limit, layer.weights.shape)
                layer.biases[...] = 0.0
        return self

    def get_weights(self):
        return [p.copy() for p in self.parameters()]

    def set_weights(self, values):
        params = self.parameters()
        if len(values) != len(params):
            raise DimMismatch("weight list length does not match the network")
        for p, v in zip(params, values):
            if p.shape != v.shape:
                raise DimMismatch(f"weight shape {v.shape} != {p.shape}")
            p[...] = v

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2 and len(self.input_shape) == 3:
            x = x[:, :, None]
        if x.ndim == len(self.input_shape):
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise DimMismatch(
                f"input shape {x.shape[1:]} does not match network input {self.input_shape}")
        return x

    def forward(self, x):
        """Returns ``(outputs (N, n_out), cache)``; a single image is
        promoted to a batch of one."""
        a = self._as_batch(x)
        cache = []
        for layer in self.layers:
            if layer.kind == "maxpool":
                out, argmax = L.maxpool_forward(a)
                cache.append((a, argmax, out))
                a = out
            elif layer.kind == "flatten":
                cache.append((a, None, None))
                a = a.reshape(a.shape[0], -1)
            else:
                z = layer.forward(a)
                out = L.activate(layer.activation, z)
                cache.append((a, z, out))
                a = out
        return a, cache

    def predict_proba(self, x, batch_size=64):
        x = self._as_batch(x)
        chunks = [self.forward(x[i:i + batch_size])[0]
                  for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(chunks) if chunks else np.empty((0,) + self.output_shape)

    def backward(self, cache, loss_grad):
        """Gradients for :meth:`parameters`, given dLoss/dOutput."""
        if len(cache) != len(self.layers):
            raise StaleCache("cache does not come from this network")
        da = np.asarray(loss_grad, dtype=np.float64)
        if da.shape != cache[-1][2].shape:
            raise StaleCache(f"loss gradient {da.shape} does not match output "
                             f"{cache[-1][2].shape}")
        grads = []
        for layer, (x, aux, out) in zip(reversed(self.layers), reversed(cache)):
            if layer.kind == "maxpool":
                da = L.maxpool_backward(da, aux, x.shape)
            elif layer.kind == "flatten":
                da = da.reshape(x.shape)
            else:
                expected = layer.weights.shape[1] if layer.kind == "dense" else layer.weights.shape[2]
                if x.shape[-1] != expected:
                    raise StaleCache("cached activation has the wrong shape")
                dz = L.activate_backward(layer.activation, aux, out, da)
                da, dw, db = layer.backward(dz, x)
                grads += [db, dw]
        return grads[::-1]

    def describe(self) -> str:
        rows = [("Layer", "Output shape", "Params")]
        rows.append(("input", _fmt_shape(self.input_shape), "0"))
        for i, layer in enumerate(self.layers, 1):
            name = layer.kind
            if layer.kind == "conv":
                name = f"conv{layer.kernel_size}x{layer.kernel_size}x{layer.n_filters} ({layer.activation})"
            elif layer.kind == "dense":
                name = f"dense{layer.n_out} ({layer.activation})"
            elif layer.kind == "maxpool":
                name = "maxpool2x2"
            rows.append((name, _fmt_shape(self.shapes[i]), f"{_layer_params(layer):,}"))
        widths = [max(len(r[k]) for r in rows) for k in range(3)]
        lines = [f"{a:<{widths[0]}}  {b:<{widths[1]}}  {c:>{widths[2]}}" for a, b, c in rows]
        lines.insert(1, "-" * len(lines[0]))
        lines.append("-" * len(lines[0]))
        lines.append(f"Total trainable parameters: {self.param_count():,}")
        return "\n".join(lines)


def _fmt_shape(shape):
    return "(" + ", ".join(str(d) for d in shape) + ")"


def build_network(arch="A", input_shape=(256, 256, 3), dense_units=500, n_classes=2,
                  variant="relu-sigmoid", filters=None, seed=None) -> Network:
    """Three conv(3x3)+maxpool blocks, flatten, one hidden dense layer and
    the output layer.

    ``filters`` overrides the architecture tag's filter counts. With
    ``seed=None`` every weight is zero.
    """
    if filters is None:
        try:
            filters = ARCHITECTURES[str(arch).upper()]
        except KeyError:
            raise ConfigError(f"unknown architecture {arch!r}; choose A or B") from None
    try:
        hidden, out_act = VARIANTS[variant]
    except KeyError:
        raise ConfigError(f"unknown activation variant {variant!r}") from None
    stack = []
    for n in filters:
        stack += [Conv2D(int(n), 3, hidden), MaxPool2D()]
    stack += [Flatten(), Dense(int(dense_units), hidden),
              Dense(int(n_classes), out_act)]
    net = Network(stack, input_shape)
    if seed is not None:
        net.init_glorot(np.random.default_rng(seed))
    return net


# --- model files ----------------------------------------------------------

HFON_MAGIC = b"HFON"
HFON_VERSION = 1
_KINDS = {"conv": 0, "maxpool": 1, "flatten": 2, "dense": 3}
_KIND_NAMES = {v: k for k, v in _KINDS.items()}
_ACT_CODES = {name: i for i, name in enumerate(L.ACTIVATIONS)}


def save_model(path, net: Network, meta=None) -> None:
    """Layout: magic, u16 version, u16 layer count, u16 n_H, u16 n_W, u8 n_C;
    per layer u8 kind, u8 activation, dims, then f64 weights and biases;
    trailer u32 length + UTF-8 JSON metadata."""
    parts = [struct.pack("<4sHH", HFON_MAGIC, HFON_VERSION, len(net.layers)),
             struct.pack("<HHB", *net.input_shape)]
    for layer in net.layers:
        parts.append(struct.pack("<BB", _KINDS[layer.kind], _ACT_CODES[layer.activation]))
        if layer.kind == "conv":
            f, _, c, n = layer.weights.shape
            parts.append(struct.pack("<HHH", f, c, n))
        elif layer.kind == "dense":
            parts.append(struct.pack("<II", layer.weights.shape[1], layer.n_out))
        if hasattr(layer, "weights"):
            parts.append(layer.weights.astype("<f8").tobytes())
            parts.append(layer.biases.astype("<f8").tobytes())
    blob = json.dumps(meta if meta is not None else net.meta, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(blob)) + blob)
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> Network:
    raw = Path(path).read_bytes()
    pos = 0

    def take(fmt):
        nonlocal pos
        s = struct.Struct(fmt)
        if pos + s.size > len(raw):
            raise FormatError(f"{path}: truncated model file")
        vals = s.unpack_from(raw, pos)
        pos += s.size
        return vals

    def take_array(shape):
        nonlocal pos
        n = int(np.prod(shape)) * 8
        if pos + n > len(raw):
            raise FormatError(f"{path}: truncated model file")
        arr = np.frombuffer(raw, dtype="<f8", count=n // 8, offset=pos).reshape(shape)
        pos += n
        return arr.astype(np.float64)

    magic, version, n_layers = take("<4sHH")
    if magic != HFON_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != HFON_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    input_shape = take("<HHB")
    stack = []
    for _ in range(n_layers):
        kind_code, act_code = take("<BB")
        kind = _KIND_NAMES.get(kind_code)
        if kind is None or act_code >= len(L.ACTIVATIONS):
            raise FormatError(f"{path}: unknown layer code {kind_code}/{act_code}")
        act = L.ACTIVATIONS[act_code]
        if kind == "conv":
            f, c, n = take("<HHH")
            stack.append(Conv2D(n, f, act, take_array((f, f, c, n)), take_array((n,))))
        elif kind == "dense":
            n_in, n_out = take("<II")
            stack.append(Dense(n_out, act, take_array((n_out, n_in)), take_array((n_out,))))
        elif kind == "maxpool":
            stack.append(MaxPool2D())
        else:
            stack.append(Flatten())
    (n_meta,) = take("<I")
    net = Network(stack, input_shape)
    net.meta = json.loads(raw[pos:pos + n_meta].decode()) if n_meta else {}
    return net
