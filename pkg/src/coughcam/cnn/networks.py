"""V-net, G-net and R-net layer graphs for binary cough classification.

Each network is a list of rows; every row is a module with a
``param_specs(prefix)`` listing and a ``forward(x, params, prefix)``.
:func:`forward` records the output shape of each row so the layer graph can
be checked against the reference layer configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from ..errors import ConfigError, ShapeError
from . import layers as L

NETWORK_KINDS = ("VNet", "GNet", "RNet")
INPUT_SIZE = 128


@dataclass(frozen=True)
class ConvBlock:
    """Conv, then group norm, then (optionally) ReLU."""

    in_ch: int
    out_ch: int
    kernel: int
    stride: int = 1
    padding: int | None = None
    act: bool = True

    def __post_init__(self):
        if self.padding is None:
            object.__setattr__(self, "padding", self.kernel // 2)
        if self.out_ch % L.GN_GROUPS:
            raise ConfigError(f"{self.out_ch} channels are not divisible into {L.GN_GROUPS} groups")

    def param_specs(self, prefix):
        fan_in = self.in_ch * self.kernel * self.kernel
        return [
            (f"{prefix}.conv.weight", (self.out_ch, self.in_ch, self.kernel, self.kernel), fan_in),
            (f"{prefix}.conv.bias", (self.out_ch,), fan_in),
            (f"{prefix}.gn.weight", (self.out_ch,), None),
            (f"{prefix}.gn.bias", (self.out_ch,), None),
        ]

    def forward(self, x, p, prefix):
        if x.shape[1] != self.in_ch:
            raise ShapeError(f"{prefix}: expected {self.in_ch} input channels, got {x.shape[1]}")
        y = L.conv2d(x, p[f"{prefix}.conv.weight"], p[f"{prefix}.conv.bias"], self.stride, self.padding)
        y = L.group_norm(y, L.GN_GROUPS, p[f"{prefix}.gn.weight"], p[f"{prefix}.gn.bias"])
        return L.relu(y) if self.act else y


@dataclass(frozen=True)
class Pool:
    mode: str
    kernel: int
    stride: int
    padding: int = 0

    def param_specs(self, prefix):
        return []

    def forward(self, x, p, prefix):
        return L.pool2d(x, self.mode, self.kernel, self.stride, self.padding)


@dataclass(frozen=True)
class Inception:
    """Four parallel branches (1x1; 1x1-3x3; 1x1-5x5; 3x3 max pool-1x1) concatenated."""

    in_ch: int
    n1x1: int
    n3x3_reduce: int
    n3x3: int
    n5x5_reduce: int
    n5x5: int
    pool_proj: int

    @property
    def out_ch(self) -> int:
        return self.n1x1 + self.n3x3 + self.n5x5 + self.pool_proj

    def branches(self):
        return {
            "b1": ConvBlock(self.in_ch, self.n1x1, 1),
            "b2_reduce": ConvBlock(self.in_ch, self.n3x3_reduce, 1),
            "b2": ConvBlock(self.n3x3_reduce, self.n3x3, 3),
            "b3_reduce": ConvBlock(self.in_ch, self.n5x5_reduce, 1),
            "b3": ConvBlock(self.n5x5_reduce, self.n5x5, 5),
            "b4_proj": ConvBlock(self.in_ch, self.pool_proj, 1),
        }

    def param_specs(self, prefix):
        specs = []
        for name, blk in self.branches().items():
            specs += blk.param_specs(f"{prefix}.{name}")
        return specs

    def forward(self, x, p, prefix):
        br = self.branches()
        y1 = br["b1"].forward(x, p, f"{prefix}.b1")
        y2 = br["b2"].forward(br["b2_reduce"].forward(x, p, f"{prefix}.b2_reduce"), p, f"{prefix}.b2")
        y3 = br["b3"].forward(br["b3_reduce"].forward(x, p, f"{prefix}.b3_reduce"), p, f"{prefix}.b3")
        y4 = br["b4_proj"].forward(L.pool2d(x, "max", 3, 1, 1), p, f"{prefix}.b4_proj")
        return np.concatenate([y1, y2, y3, y4], axis=1)


@dataclass(frozen=True)
class Bottleneck:
    in_ch: int
    mid_ch: int
    out_ch: int
    stride: int = 1

    @property
    def projects(self) -> bool:
        return self.in_ch != self.out_ch or self.stride != 1

    def parts(self):
        d = {
            "conv1": ConvBlock(self.in_ch, self.mid_ch, 1),
            "conv2": ConvBlock(self.mid_ch, self.mid_ch, 3, self.stride),
            "conv3": ConvBlock(self.mid_ch, self.out_ch, 1, act=False),
        }
        if self.projects:
            d["shortcut"] = ConvBlock(self.in_ch, self.out_ch, 1, self.stride, padding=0, act=False)
        return d

    def param_specs(self, prefix):
        specs = []
        for name, blk in self.parts().items():
            specs += blk.param_specs(f"{prefix}.{name}")
        return specs

    def forward(self, x, p, prefix):
        parts = self.parts()
        y = x
        for name in ("conv1", "conv2", "conv3"):
            y = parts[name].forward(y, p, f"{prefix}.{name}")
        short = parts["shortcut"].forward(x, p, f"{prefix}.shortcut") if self.projects else x
        return L.relu(y + short)


@dataclass(frozen=True)
class BottleneckSet:
    in_ch: int
    mid_ch: int
    out_ch: int
    count: int
    stride: int

    def blocks(self) -> list[Bottleneck]:
        out = [Bottleneck(self.in_ch, self.mid_ch, self.out_ch, self.stride)]
        out += [Bottleneck(self.out_ch, self.mid_ch, self.out_ch, 1) for _ in range(self.count - 1)]
        return out

    def param_specs(self, prefix):
        specs = []
        for i, blk in enumerate(self.blocks()):
            specs += blk.param_specs(f"{prefix}.{i}")
        return specs

    def forward(self, x, p, prefix):
        for i, blk in enumerate(self.blocks()):
            x = blk.forward(x, p, f"{prefix}.{i}")
        return x


@dataclass(frozen=True)
class FullyConnected:
    in_features: int
    out_features: int
    act: bool = False

    def param_specs(self, prefix):
        return [
            (f"{prefix}.weight", (self.out_features, self.in_features), self.in_features),
            (f"{prefix}.bias", (self.out_features,), self.in_features),
        ]

    def forward(self, x, p, prefix):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_features:
            raise ShapeError(f"{prefix}: expected {self.in_features} features, got {flat.shape[1]}")
        y = L.linear(flat, p[f"{prefix}.weight"], p[f"{prefix}.bias"])
        if self.act:
            y = L.relu(y)
        return y.reshape(x.shape[0], self.out_features, 1, 1)


@dataclass(frozen=True)
class Softmax:
    def param_specs(self, prefix):
        return []

    def forward(self, x, p, prefix):
        b = x.shape[0]
        return L.softmax(x.reshape(b, -1)).reshape(x.shape)


@dataclass(frozen=True)
class Row:
    name: str
    label: str
    module: object


@dataclass(frozen=True, eq=False)
class NetworkModel:
    kind: str
    in_channels: int
    rows: tuple[Row, ...]
    weights: Mapping[str, np.ndarray] | None = None
    feature_spec: str | None = None
    channel_stats: tuple[tuple[float, float], ...] | None = None

    def param_specs(self):
        specs = []
        for r in self.rows:
            specs += r.module.param_specs(r.name)
        return specs

    def with_weights(self, weights: Mapping[str, np.ndarray]) -> "NetworkModel":
        expected = {name: shape for name, shape, _ in self.param_specs()}
        if set(weights) != set(expected):
            missing = sorted(set(expected) - set(weights))[:3]
            extra = sorted(set(weights) - set(expected))[:3]
            raise ConfigError(f"weight names do not match {self.kind}: missing {missing}, unexpected {extra}")
        frozen = {}
        for name, shape in expected.items():
            arr = np.array(weights[name], dtype=np.float32)
            if arr.shape != tuple(shape):
                raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            arr.flags.writeable = False
            frozen[name] = arr
        return replace(self, weights=frozen)

    def count(self, module_type) -> int:
        return sum(isinstance(r.module, module_type) for r in self.rows)

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s, _ in self.param_specs())


def _vnet_rows(cin: int) -> list[Row]:
    rows = []
    ch = cin
    stage_widths = [(16, 2), (32, 2), (64, 3), (128, 3), (128, 3)]
    for s, (width, reps) in enumerate(stage_widths, start=1):
        for r in range(reps):
            rows.append(Row(f"conv{s}_{r + 1}", "Conv+GroupNorm+ReLU", ConvBlock(ch, width, 3)))
            ch = width
        rows.append(Row(f"pool{s}", "MaxPool", Pool("max", 2, 2, 0)))
    rows += [
        Row("fc1", "FullyConnected+ReLU", FullyConnected(128 * 4 * 4, 512, act=True)),
        Row("fc2", "FullyConnected+ReLU", FullyConnected(512, 32, act=True)),
        Row("fc3", "FullyConnected", FullyConnected(32, 2)),
        Row("softmax", "Softmax", Softmax()),
    ]
    return rows


# (#1x1, #3x3 reduce, #3x3, #5x5 reduce, #5x5, pool proj)
GNET_INCEPTION_WIDTHS = (
    (64, 96, 128, 16, 32, 32),
    (128, 128, 192, 32, 96, 64),
    (192, 96, 208, 16, 48, 64),
    (160, 112, 224, 24, 64, 64),
    (128, 128, 256, 24, 64, 64),
    (112, 144, 288, 32, 64, 64),
    (256, 160, 320, 32, 128, 128),
    (256, 160, 320, 32, 128, 128),
    (384, 192, 384, 48, 128, 128),
)
# a 3x3/2 max pool follows these inception modules (1-based)
GNET_POOL_AFTER = (2, 7)


def _gnet_rows(cin: int) -> list[Row]:
    rows = [
        Row("pre_conv1", "Conv+GroupNorm+ReLU", ConvBlock(cin, 16, 7, 1, 3)),
        Row("pre_pool1", "MaxPool", Pool("max", 3, 2, 1)),
        Row("pre_conv2", "Conv+GroupNorm+ReLU", ConvBlock(16, 48, 3, 1, 1)),
        Row("pre_pool2", "MaxPool", Pool("max", 3, 2, 1)),
    ]
    ch = 48
    for i, widths in enumerate(GNET_INCEPTION_WIDTHS, start=1):
        mod = Inception(ch, *widths)
        rows.append(Row(f"inception{i}", f"Inception Module {i}", mod))
        ch = mod.out_ch
        if i in GNET_POOL_AFTER:
            rows.append(Row(f"pool{i}", "MaxPool", Pool("max", 3, 2, 1)))
    rows += [
        Row("avgpool", "AvgPool", Pool("avg", 8, 1, 0)),
        Row("fc", "FullyConnected", FullyConnected(ch, 2)),
        Row("softmax", "Softmax", Softmax()),
    ]
    return rows


# (reduce width, expand width, blocks, stride of the first block)
RNET_SETS = ((16, 64, 3, 2), (32, 128, 4, 2), (64, 256, 6, 2), (128, 512, 3, 1))


def _rnet_rows(cin: int) -> list[Row]:
    rows = [
        Row("pre_conv", "Conv+GroupNorm+ReLU", ConvBlock(cin, 16, 7, 1, 3)),
        Row("pre_pool", "MaxPool", Pool("max", 3, 2, 1)),
    ]
    ch = 16
    for i, (mid, out, count, stride) in enumerate(RNET_SETS, start=1):
        rows.append(Row(f"set{i}", f"Bottleneck Block Set {i}", BottleneckSet(ch, mid, out, count, stride)))
        ch = out
    rows += [
        Row("avgpool", "AvgPool", Pool("avg", 8, 1, 0)),
        Row("fc", "FullyConnected", FullyConnected(ch, 2)),
        Row("softmax", "Softmax", Softmax()),
    ]
    return rows


_BUILDERS = {"VNet": _vnet_rows, "GNet": _gnet_rows, "RNet": _rnet_rows}


def build_network(kind: str, in_channels: int = 3) -> NetworkModel:
    """Layer graph for ``kind`` in {"VNet", "GNet", "RNet"}, without weights."""
    if kind not in _BUILDERS:
        raise ConfigError(f"unknown network kind {kind!r}; expected one of {NETWORK_KINDS}")
    if in_channels < 1:
        raise ConfigError("in_channels must be >= 1")
    return NetworkModel(kind, in_channels, tuple(_BUILDERS[kind](in_channels)))


def conv_layer_count(model: NetworkModel) -> int:
    """Number of weight-bearing conv layers on the main path (shortcuts excluded)."""
    n = 0
    for r in model.rows:
        m = r.module
        if isinstance(m, ConvBlock):
            n += 1
        elif isinstance(m, BottleneckSet):
            n += 3 * m.count
    return n


def init_weights(model: NetworkModel, seed: int = 0) -> NetworkModel:
    """Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights; GN scale 1, shift 0."""
    rng = np.random.Generator(np.random.Philox(seed))
    w = {}
    for name, shape, fan_in in model.param_specs():
        if fan_in is None:
            w[name] = np.ones(shape) if name.endswith("gn.weight") else np.zeros(shape)
        else:
            bound = np.sqrt(1.0 / fan_in)
            w[name] = rng.uniform(-bound, bound, size=shape)
    return model.with_weights(w)


def zero_weights(model: NetworkModel) -> NetworkModel:
    return model.with_weights({name: np.zeros(shape) for name, shape, _ in model.param_specs()})


@dataclass
class ForwardResult:
    probabilities: np.ndarray
    trace: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)


def forward(model: NetworkModel, x, check_finite: bool = False) -> ForwardResult:
    """Run ``x`` (batch x C x 128 x 128) through the network.

    Returns the ``batch x 2`` class probabilities (index 0 = Cough) and the
    per-row output shapes ``(label, (C, H, W))``.
    """
    if model.weights is None:
        raise ConfigError(f"{model.kind} has no weights; load or initialize them first")
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != model.in_channels:
        raise ShapeError(
            f"{model.kind} expects batch x {model.in_channels} x H x W input, got {x.shape}"
        )
    trace = []
    for i, row in enumerate(model.rows):
        try:
            x = row.module.forward(x, model.weights, row.name)
        except (ShapeError, ConfigError) as exc:
            raise ShapeError(f"{model.kind} layer {i} ({row.label}): {exc}") from exc
        if check_finite and not np.all(np.isfinite(x)):
            raise FloatingPointError(f"{model.kind} layer {i} ({row.label}) produced non-finite values")
        trace.append((row.label, tuple(x.shape[1:])))
    return ForwardResult(np.asarray(x.reshape(x.shape[0], -1), dtype=np.float64), trace)
