"""From-scratch CNN inference: layers, the three binary classifiers, weight I/O."""

from .layers import conv2d, cross_entropy, group_norm, linear, pool2d, softmax
from .networks import (
    NETWORK_KINDS,
    Bottleneck,
    ConvBlock,
    Inception,
    NetworkModel,
    build_network,
    forward,
    init_weights,
    zero_weights,
)
from .weights import load_weights, read_weight_files, save_weights, write_weight_files

__all__ = [
    "NETWORK_KINDS",
    "Bottleneck",
    "ConvBlock",
    "Inception",
    "NetworkModel",
    "build_network",
    "conv2d",
    "cross_entropy",
    "forward",
    "group_norm",
    "init_weights",
    "linear",
    "load_weights",
    "pool2d",
    "read_weight_files",
    "save_weights",
    "softmax",
    "write_weight_files",
    "zero_weights",
]
