"""Layer primitives and activations.

Tensors are batched ``(N, H, W, C)`` float64 arrays, channel-last. Conv
kernels are stored as ``(f, f, C_in, F)``; dense weights as ``(n_out, n_in)``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DimMismatch

LEAKY_SLOPE = 0.01


# --- activations ----------------------------------------------------------

def relu(x):
    return np.maximum(0.0, x)


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


def sigmoid(x):
    """Logistic function, branch-stable for large negative inputs."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


ACTIVATIONS = ("linear", "relu", "leaky_relu", "sigmoid", "softmax")


def activate(name, z):
    if name == "linear":
        return z
    if name == "relu":
        return relu(z)
    if name == "leaky_relu":
        return leaky_relu(z)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "softmax":
        return softmax(z)
    raise ConfigError(f"unknown activation {name!r}")


def activate_backward(name, z, a, da):
    """Gradient w.r.t. the pre-activation given the gradient w.r.t. the output."""
    if name == "linear":
        return da
    if name == "relu":
        return da * (z > 0)
    if name == "leaky_relu":
        return da * np.where(z > 0, 1.0, LEAKY_SLOPE)
    if name == "sigmoid":
        return da * a * (1.0 - a)
    if name == "softmax":
        return a * (da - (da * a).sum(axis=-1, keepdims=True))
    raise ConfigError(f"unknown activation {name!r}")


# --- convolution ----------------------------------------------------------

def conv_forward(x, weights, biases):
    """Valid, stride-1 cross-correlation (pre-activation).

    Each output cell is accumulated as ``bias + sum_i sum_j sum_k w*x`` in
    that exact order, which keeps results bitwise reproducible.
    """
    if x.ndim != 4:
        raise DimMismatch(f"expected (N, H, W, C) input, got shape {x.shape}")
    n, h, w, c = x.shape
    f, f2, c_in, n_filters = weights.shape
    if c != c_in:
        raise DimMismatch(f"input has {c} channels, kernel expects {c_in}")
    if h < f or w < f2:
        raise DimMismatch(f"input {h}x{w} smaller than kernel {f}x{f2}")
    ho, wo = h - f + 1, w - f2 + 1
    out = np.empty((n, ho, wo, n_filters))
    out[...] = biases
    for i in range(f):
        for j in range(f2):
            patch = x[:, i:i + ho, j:j + wo, :]
            for k in range(c):
                out += patch[..., k:k + 1] * weights[i, j, k]
    return out


def conv_backward(dz, x, weights):
    """Returns (dx, dweights, dbiases) for a gradient on the pre-activation."""
    f, f2, c, n_filters = weights.shape
    _, ho, wo, _ = dz.shape
    dx = np.zeros_like(x)
    dw = np.empty_like(weights)
    dz_flat = dz.reshape(-1, n_filters)
    for i in range(f):
        for j in range(f2):
            patch = x[:, i:i + ho, j:j + wo, :]
            dw[i, j] = patch.reshape(-1, c).T @ dz_flat
            dx[:, i:i + ho, j:j + wo, :] += dz @ weights[i, j].T
    return dx, dw, dz.sum(axis=(0, 1, 2))


# --- pooling --------------------------------------------------------------

def maxpool_forward(x):
    """2x2 / stride-2 max pooling, trailing odd row/column dropped.

    Returns the pooled tensor and the within-window argmax (0..3, row-major
    scan; the first maximum wins on ties).
    """
    n, h, w, c = x.shape
    if h < 2 or w < 2:
        raise DimMismatch(f"cannot pool a {h}x{w} map")
    h2, w2 = h // 2, w // 2
    windows = (x[:, :2 * h2, :2 * w2, :]
               .reshape(n, h2, 2, w2, 2, c)
               .transpose(0, 1, 3, 5, 2, 4)
               .reshape(n, h2, w2, c, 4))
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool_backward(dout, argmax, input_shape):
    n, h, w, c = input_shape
    h2, w2 = h // 2, w // 2
    windows = np.zeros((n, h2, w2, c, 4))
    np.put_along_axis(windows, argmax[..., None], dout[..., None], axis=-1)
    dx = np.zeros(input_shape)
    dx[:, :2 * h2, :2 * w2, :] = (windows.reshape(n, h2, w2, c, 2, 2)
                                  .transpose(0, 1, 4, 2, 5, 3)
                                  .reshape(n, 2 * h2, 2 * w2, c))
    return dx


# --- dense ----------------------------------------------------------------

def dense_forward(x, weights, biases):
    if x.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise DimMismatch(
            f"dense layer expects {weights.shape[1]} inputs, got shape {x.shape}")
    # one matrix-vector product per row: a sample's output then does not
    # depend on which batch it arrives in (batched GEMM reorders the sums)
    return np.stack([weights @ row for row in x]) + biases


def dense_backward(dz, x, weights):
    return dz @ weights, dz.T @ x, dz.sum(axis=0)
