"""Static cost accounting, receptive fields and dilation coverage maps.

FLOPs count multiplications and additions separately (a multiply-add is 2).
Per-node rules, with ``H_i/W_i/C_i`` the node input and ``H_o/W_o/C_o`` its
output, batch excluded:

=====================  ===================================================
convolution            ``2 * H_o * W_o * K_h * K_w * C_i * C_o / g``
deconvolution          ``2 * H_i * W_i * K_h * K_w * C_i * C_o / g``
average pooling        ``H_i * W_i * C_i``
bilinear upsampling    ``3 * H_i * W_i * C_i``
batch normalization    ``2 * H_i * W_i * C_i``
PReLU                  ``H_i * W_i * C_i``
add / HFF add          ``H_o * W_o`` ("paper") or ``H_o * W_o * C`` ("full")
=====================  ===================================================

All counts are exact Python integers; rounding happens only when formatting.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

import numpy as np

from .conv import ConvSpec
from .graph import (
    ADD,
    AVG_POOL,
    BATCHNORM,
    BILINEAR,
    CONV_KINDS,
    DECONV,
    HFF_SUM,
    PRELU,
    SPEC_KINDS,
    BlockGraph,
    GraphError,
)

CONVENTIONS = ("paper", "full")
ROW_LABELS = ("A", "B", "C", "D")


@dataclass(frozen=True)
class NodeCost:
    id: str
    kind: str
    params: int
    flops: int | None = None
    component: str | None = None


@dataclass
class CostReport:
    per_node: list[NodeCost]
    convention: str | None = None
    input_hw: tuple[int, int] | None = None

    @property
    def total_params(self) -> int:
        return sum(n.params for n in self.per_node)

    @property
    def total_flops(self) -> int:
        if any(n.flops is None for n in self.per_node):
            raise ValueError("report carries no FLOPs; use count_flops")
        return sum(n.flops for n in self.per_node)

    def rows(self) -> dict[str, tuple[int, int]]:
        """``label -> (params, flops)`` for each row label present."""
        out: dict[str, list[int]] = {}
        for n in self.per_node:
            if n.component is None:
                continue
            acc = out.setdefault(n.component, [0, 0])
            acc[0] += n.params
            acc[1] += n.flops or 0
        return {k: (v[0], v[1]) for k, v in sorted(out.items())}

    def records(self) -> list[dict]:
        return [
            {
                "id": n.id,
                "kind": n.kind,
                "params": n.params,
                "flops_exact": n.flops,
                "flops_formatted": None if n.flops is None else format_mflops(n.flops),
            }
            for n in self.per_node
        ]


def format_mflops(flops: int, decimals: int | None = None) -> str:
    """``flops / 1e6`` rounded half-up, with thousands separators.

    By default values of at least 1M show one decimal and smaller values
    three, which is how the module comparison table displays rows.
    """
    value = Decimal(int(flops)) / Decimal(10**6)
    if decimals is None:
        decimals = 1 if value >= 1 else 3
    q = value.quantize(Decimal(1).scaleb(-decimals), rounding=ROUND_HALF_UP)
    return f"{q:,.{decimals}f}"


def format_gflops(flops: int, decimals: int = 2) -> str:
    value = Decimal(int(flops)) / Decimal(10**9)
    q = value.quantize(Decimal(1).scaleb(-decimals), rounding=ROUND_HALF_UP)
    return f"{q:,.{decimals}f}"


def _node_params(node) -> int:
    if node.kind in CONV_KINDS or node.kind == DECONV:
        return node.spec.num_params
    if node.kind == BATCHNORM:
        return 2 * node.channels
    if node.kind == PRELU:
        return node.channels
    return 0


def count_params(g: BlockGraph) -> CostReport:
    return CostReport([NodeCost(n.id, n.kind, _node_params(n), None, n.component) for n in g.nodes])


def _node_flops(node, in_shapes, out_shape, convention) -> int:
    k = node.kind
    co, ho, wo = out_shape
    if k in CONV_KINDS:
        s = node.spec
        return 2 * ho * wo * s.kernel_h * s.kernel_w * s.in_channels * s.out_channels // s.groups
    if k == DECONV:
        s = node.spec
        _, hi, wi = in_shapes[0]
        return 2 * hi * wi * s.kernel_h * s.kernel_w * s.in_channels * s.out_channels // s.groups
    if k in (AVG_POOL, PRELU):
        ci, hi, wi = in_shapes[0]
        return hi * wi * ci
    if k == BILINEAR:
        ci, hi, wi = in_shapes[0]
        return 3 * hi * wi * ci
    if k == BATCHNORM:
        ci, hi, wi = in_shapes[0]
        return 2 * hi * wi * ci
    if k in (ADD, HFF_SUM):
        if convention == "paper":
            return ho * wo
        return ho * wo * min(s[0] for s in in_shapes)
    return 0


def count_flops(g: BlockGraph, input_hw: tuple[int, int], convention: str = "paper") -> CostReport:
    """Per-node parameters and FLOPs for an ``input_hw`` feature map."""
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
    h, w = input_hw
    shapes = g.infer_shapes(h, w)
    per_node = []
    for n in g.nodes:
        flops = _node_flops(n, [shapes[s] for s in n.inputs], shapes[n.id], convention)
        per_node.append(NodeCost(n.id, n.kind, _node_params(n), flops, n.component))
    return CostReport(per_node, convention, (h, w))


def format_table(report: CostReport, title: str = "") -> str:
    """Aligned text table: one line per row label, then the total."""
    rows = report.rows()
    lines = []
    if title:
        lines.append(title)
    lines.append(f"{'':6}{'Param':>12}{'FLOPs(M)':>14}")
    for label in ROW_LABELS:
        if label in rows:
            p, f = rows[label]
            lines.append(f"{label:6}{(f'{p:,}' if p else '-'):>12}{format_mflops(f):>14}")
    unlabeled = [n for n in report.per_node if n.component is None and (n.params or n.flops)]
    if unlabeled:
        p = sum(n.params for n in unlabeled)
        f = sum(n.flops or 0 for n in unlabeled)
        lines.append(f"{'other':6}{f'{p:,}':>12}{format_mflops(f):>14}")
    lines.append(f"{'Total':6}{report.total_params:>12,}{format_mflops(report.total_flops, 2):>14}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# receptive field


@dataclass(frozen=True)
class ReceptiveField:
    rf_h: int
    rf_w: int

    def __str__(self):
        return f"{self.rf_h}×{self.rf_w}"


def _grow(rf, spec: ConvSpec, node_id="layer"):
    if spec.stride != 1:
        raise GraphError(f"{node_id}: receptive field arithmetic supports stride 1 only")
    return (
        rf[0] + spec.dilation * (spec.kernel_h - 1),
        rf[1] + spec.dilation * (spec.kernel_w - 1),
    )


def receptive_field(
    g: BlockGraph | Iterable[ConvSpec], exclude_stage: str | None = None
) -> ReceptiveField:
    """Receptive field of a stride-1 graph or sequential list of ConvSpecs.

    Each convolution grows the field by ``dilation * (k - 1)`` per axis;
    joins take the maximum over their inputs. Nodes tagged with
    ``exclude_stage`` are treated as spatially pointwise.
    """
    if not isinstance(g, BlockGraph):
        rf = (1, 1)
        for spec in g:
            rf = _grow(rf, spec)
        return ReceptiveField(*rf)
    rfs: dict[str, tuple[int, int]] = {}
    for node in g.nodes:
        if not node.inputs:
            rfs[node.id] = (1, 1)
            continue
        rf = (max(rfs[s][0] for s in node.inputs), max(rfs[s][1] for s in node.inputs))
        if node.kind == BILINEAR:
            raise GraphError(f"{node.id}: receptive field of upsampling is not supported")
        if node.kind in SPEC_KINDS and (exclude_stage is None or node.stage != exclude_stage):
            rf = _grow(rf, node.spec, node.id)
        rfs[node.id] = rf
    return ReceptiveField(*rfs[g.nodes[-1].id])


# ---------------------------------------------------------------------------
# coverage of stacked dilated kernels


@dataclass
class CoverageMap:
    """Path counts from each relative input offset to the centre output pixel.

    ``counts[r + dy, r + dx]`` with ``r = radius`` holds the number of tap
    sequences (one tap per layer) whose offsets sum to ``(dy, dx)``.
    """

    dilations: tuple[int, ...]
    kernel: int
    counts: np.ndarray = field(repr=False)

    @property
    def radius(self) -> int:
        return self.counts.shape[0] // 2

    @property
    def extent(self) -> int:
        return self.counts.shape[0]

    @property
    def holes(self) -> list[tuple[int, int]]:
        r = self.radius
        return [(int(y) - r, int(x) - r) for y, x in zip(*np.nonzero(self.counts == 0))]

    def holes_within(self, radius: int) -> set[tuple[int, int]]:
        """Offsets with ``max(|dy|, |dx|) <= radius`` that no path reaches."""
        r = self.radius
        out = set()
        for dy, dx in itertools.product(range(-radius, radius + 1), repeat=2):
            inside = abs(dy) <= r and abs(dx) <= r
            if not inside or self.counts[r + dy, r + dx] == 0:
                out.add((dy, dx))
        return out

    def to_text(self) -> str:
        width = len(str(int(self.counts.max())))
        return "\n".join(" ".join(f"{int(v):>{width}}" for v in row) for row in self.counts)


def axis_coverage(dilations: Sequence[int], kernel: int = 3) -> np.ndarray:
    """1-D path counts: repeated convolution of dilated tap indicators."""
    counts = np.ones(1, dtype=np.int64)
    for d in dilations:
        taps = np.zeros(d * (kernel - 1) + 1, dtype=np.int64)
        taps[::d] = 1
        counts = np.convolve(counts, taps)
    return counts


def coverage_map(schedule: Sequence[int], kernel: int = 3) -> CoverageMap:
    rates = tuple(int(d) for d in schedule)
    if not rates:
        raise ValueError("coverage_map needs a non-empty dilation schedule")
    if min(rates) < 1:
        raise ValueError(f"dilation rates must be >= 1, got {rates}")
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be a positive odd size, got {kernel}")
    line = axis_coverage(rates, kernel)
    return CoverageMap(rates, kernel, np.outer(line, line))
