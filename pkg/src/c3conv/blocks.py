"""Builders for the composite blocks and modules.

Every builder returns a :class:`~c3conv.graph.BlockGraph` whose output has the
same shape as its input (same padding, stride 1). Convolution weights are
drawn with :func:`~c3conv.tensor.random_init` from a per-node seed derived
from ``seed``; batch norms start as identity transforms and PReLU slopes at
0.25.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .conv import BatchNormParams, ConvSpec, PReLUParams, depthwise_spec, pointwise_spec
from .graph import (
    ADD,
    BATCHNORM,
    CONCAT,
    CONV,
    DEPTHWISE,
    HFF_SUM,
    INPUT,
    OUTPUT,
    POINTWISE,
    PRELU,
    BlockGraph,
    LayerNode,
)
from .tensor import dtype_of, random_init

CONCENTRATION = "concentration"
COMPREHENSIVE = "comprehensive"

DEFAULT_C3_RATES = (2, 4, 8, 16)


@dataclass(frozen=True)
class DilationSchedule:
    rates: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(int(r) for r in self.rates))
        if not self.rates:
            raise ValueError("dilation schedule must not be empty")
        if min(self.rates) < 1:
            raise ValueError(f"dilation rates must be >= 1, got {self.rates}")

    def __len__(self):
        return len(self.rates)

    def __iter__(self):
        return iter(self.rates)


def _derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


class GraphBuilder:
    """Appends nodes and initializes their parameters.

    Used by the block builders and by config expansion; ``prefix`` namespaces
    node ids so that several blocks can share one graph.
    """

    def __init__(self, in_channels: int, *, seed: int = 0, precision: str = "single", input_id: str = "input"):
        self.seed = seed
        self.precision = precision
        self.dtype = dtype_of(precision)
        self.nodes: list[LayerNode] = [LayerNode(input_id, INPUT, channels=in_channels)]
        self.params: dict = {}

    def node(self, node: LayerNode) -> str:
        """Append a node, initializing parameters for its kind."""
        if node.kind in (CONV, DEPTHWISE, POINTWISE):
            seed = _derived_seed(self.seed, len(self.nodes))
            self.params[node.id] = random_init(node.spec.weight_shape, seed, node.spec.fan_in, self.precision)
        elif node.kind == BATCHNORM:
            self.params[node.id] = BatchNormParams.identity(node.channels, self.dtype)
        elif node.kind == PRELU:
            self.params[node.id] = PReLUParams.constant(node.channels, 0.25, self.dtype)
        self.nodes.append(node)
        return node.id

    def conv(self, node_id, src, spec: ConvSpec, kind=CONV, **tags) -> str:
        return self.node(LayerNode(node_id, kind, (src,), spec=spec, **tags))

    def depthwise(self, node_id, src, channels, kh, kw, dilation=1, **tags) -> str:
        return self.conv(node_id, src, depthwise_spec(channels, kh, kw, dilation), DEPTHWISE, **tags)

    def pointwise(self, node_id, src, c_in, c_out, **tags) -> str:
        return self.conv(node_id, src, pointwise_spec(c_in, c_out), POINTWISE, **tags)

    def batchnorm(self, node_id, src, channels, **tags) -> str:
        return self.node(LayerNode(node_id, BATCHNORM, (src,), channels=channels, **tags))

    def prelu(self, node_id, src, channels, **tags) -> str:
        return self.node(LayerNode(node_id, PRELU, (src,), channels=channels, **tags))

    def join(self, node_id, kind, srcs, **tags) -> str:
        return self.node(LayerNode(node_id, kind, tuple(srcs), **tags))

    def build(self, src: str, output_id: str = "output") -> BlockGraph:
        self.node(LayerNode(output_id, OUTPUT, (src,)))
        return BlockGraph(self.nodes, self.params, self.precision)

    # -- block bodies, shared by the public builders ------------------------

    def ds_dilate(self, src, channels, d, prefix="", component=None) -> str:
        tag = dict(component=component, stage=COMPREHENSIVE)
        x = self.depthwise(f"{prefix}dw_dilated", src, channels, 3, 3, d, **tag)
        x = self.batchnorm(f"{prefix}bn", x, channels, **tag)
        return self.pointwise(f"{prefix}pw", x, channels, channels, **tag)

    def rc3(self, src, channels, d, prefix="", component=None) -> str:
        k = 2 * d - 1
        conc = dict(component=component, stage=CONCENTRATION)
        comp = dict(component=component, stage=COMPREHENSIVE)
        x = self.depthwise(f"{prefix}conc", src, channels, k, k, **conc)
        x = self.batchnorm(f"{prefix}conc_bn", x, channels, **conc)
        x = self.prelu(f"{prefix}conc_act", x, channels, **conc)
        x = self.depthwise(f"{prefix}dw_dilated", x, channels, 3, 3, d, **comp)
        x = self.batchnorm(f"{prefix}bn", x, channels, **comp)
        return self.pointwise(f"{prefix}pw", x, channels, channels, **comp)

    def c3(self, src, channels, d, prefix="", component=None) -> str:
        k = 2 * d - 1
        conc = dict(component=component, stage=CONCENTRATION)
        comp = dict(component=component, stage=COMPREHENSIVE)
        x = self.depthwise(f"{prefix}conc_row", src, channels, 1, k, **conc)
        x = self.batchnorm(f"{prefix}conc_bn", x, channels, **conc)
        x = self.prelu(f"{prefix}conc_act", x, channels, **conc)
        x = self.depthwise(f"{prefix}conc_col", x, channels, k, 1, **conc)
        x = self.depthwise(f"{prefix}dw_dilated", x, channels, 3, 3, d, **comp)
        x = self.batchnorm(f"{prefix}bn", x, channels, **comp)
        return self.pointwise(f"{prefix}pw", x, channels, channels, **comp)

    def esp_module(self, src, channels, n=5, remainder_branch=-1, prefix="") -> str:
        widths = esp_branch_channels(channels, n, remainder_branch)
        reduced = channels // n
        r = self.pointwise(f"{prefix}reduce", src, channels, reduced, component="A")
        branches = []
        for i, width in enumerate(widths):
            d = 2**i
            spec = ConvSpec(reduced, width, 3, 3, dilation=d)
            branches.append(self.conv(f"{prefix}branch_d{d}", r, spec, component="B"))
        fused = [branches[0]]
        for i, b in enumerate(branches[1:], 1):
            fused.append(self.join(f"{prefix}hff{i}", HFF_SUM, (fused[-1], b), component="C"))
        cat = self.join(f"{prefix}concat", CONCAT, fused)
        return self.join(f"{prefix}skip", ADD, (cat, src), component="D")

    def c3_module(self, src, channels, rates=DEFAULT_C3_RATES, prefix="") -> str:
        schedule = DilationSchedule(rates)
        n = len(schedule)
        if channels % n:
            raise ValueError(f"channels={channels} not divisible by {n} branches")
        reduced = channels // n
        r = self.pointwise(f"{prefix}reduce", src, channels, reduced, component="A")
        outs = [
            self.c3(r, reduced, d, prefix=f"{prefix}branch{i}_d{d}/", component="B") for i, d in enumerate(schedule)
        ]
        cat = self.join(f"{prefix}concat", CONCAT, outs)
        return self.join(f"{prefix}skip", ADD, (cat, src), component="D")


def esp_branch_channels(channels: int, n: int = 5, remainder_branch: int = -1) -> list[int]:
    """Per-branch output widths: ``channels // n`` each, with the remainder
    going to one branch (the last, i.e. largest dilation, by default)."""
    if n < 1 or channels < n:
        raise ValueError(f"need channels >= n >= 1, got channels={channels}, n={n}")
    widths = [channels // n] * n
    widths[remainder_branch] += channels - n * (channels // n)
    return widths


def _check_channels(channels: int, d: int | None = None):
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    if d is not None and d < 1:
        raise ValueError(f"dilation must be >= 1, got {d}")


def build_dilated_conv(channels: int, d: int, *, kernel: int = 3, seed: int = 0, precision="single") -> BlockGraph:
    """A single standard (dense-channel) dilated convolution."""
    _check_channels(channels, d)
    b = GraphBuilder(channels, seed=seed, precision=precision)
    x = b.conv("conv", "input", ConvSpec(channels, channels, kernel, kernel, dilation=d), stage=COMPREHENSIVE)
    return b.build(x)


def build_ds_dilate_block(channels: int, d: int, *, seed: int = 0, precision="single") -> BlockGraph:
    _check_channels(channels, d)
    b = GraphBuilder(channels, seed=seed, precision=precision)
    return b.build(b.ds_dilate("input", channels, d))


def build_rc3_block(channels: int, d: int, *, seed: int = 0, precision="single") -> BlockGraph:
    _check_channels(channels, d)
    b = GraphBuilder(channels, seed=seed, precision=precision)
    return b.build(b.rc3("input", channels, d))


def build_c3_block(channels: int, d: int, *, seed: int = 0, precision="single") -> BlockGraph:
    """Concentration stage (1 x (2d-1) and (2d-1) x 1 depth-wise convolutions
    with BN + PReLU between them), then a 3x3 depth-wise convolution at
    dilation ``d``, BN and a point-wise convolution."""
    _check_channels(channels, d)
    b = GraphBuilder(channels, seed=seed, precision=precision)
    return b.build(b.c3("input", channels, d))


def build_esp_module(
    channels: int, n: int = 5, *, remainder_branch: int = -1, seed: int = 0, precision="single"
) -> BlockGraph:
    esp_branch_channels(channels, n, remainder_branch)
    b = GraphBuilder(channels, seed=seed, precision=precision)
    return b.build(b.esp_module("input", channels, n, remainder_branch))


def build_c3_module(
    channels: int, schedule: Sequence[int] | DilationSchedule = DEFAULT_C3_RATES, *, seed: int = 0, precision="single"
) -> BlockGraph:
    _check_channels(channels)
    rates = tuple(schedule)
    b = GraphBuilder(channels, seed=seed, precision=precision)
    return b.build(b.c3_module("input", channels, rates))
