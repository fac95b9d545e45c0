"""From-scratch CNN engine (numpy only, hand-derived gradients)."""

from .layers import (conv_forward, conv_backward, dense_forward, dense_backward,
                     maxpool_forward, maxpool_backward, relu, leaky_relu, sigmoid,
                     softmax)
from .network import (ARCHITECTURES, VARIANTS, Conv2D, Dense, Flatten, MaxPool2D,
                      Network, build_network, load_model, save_model)

__all__ = [
    "ARCHITECTURES", "VARIANTS", "Conv2D", "Dense", "Flatten", "MaxPool2D", "Network",
    "build_network", "load_model", "save_model", "conv_forward", "conv_backward",
    "dense_forward", "dense_backward", "maxpool_forward", "maxpool_backward",
    "relu", "leaky_relu", "sigmoid", "softmax",
]
