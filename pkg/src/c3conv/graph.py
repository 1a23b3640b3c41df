"""Layer graphs and their executor.

A :class:`BlockGraph` is a topologically ordered list of :class:`LayerNode`
records plus a parameter store. The structure is immutable; learnable
tensors live in ``graph.params`` (``node id -> ndarray | BatchNormParams |
PReLUParams``) and can be swapped for another mapping when executing, which
is how training steps avoid mutating a graph in place.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import conv as C
from .conv import BatchNormParams, ConvSpec, PReLUParams
from .tensor import check_tensor, dtype_of

INPUT = "input"
OUTPUT = "output"
CONV = "conv"
DEPTHWISE = "depthwise_conv"
POINTWISE = "pointwise_conv"
BATCHNORM = "batch_norm"
PRELU = "prelu"
ADD = "add"
CONCAT = "concat"
HFF_SUM = "hff_sum"
# Cost vocabulary only: the executor refuses these.
DECONV = "deconv"
AVG_POOL = "avg_pool"
BILINEAR = "bilinear_upsample"

CONV_KINDS = (CONV, DEPTHWISE, POINTWISE)
SPEC_KINDS = CONV_KINDS + (DECONV, AVG_POOL)
CHANNEL_KINDS = (INPUT, BATCHNORM, PRELU, BILINEAR)
JOIN_KINDS = (ADD, CONCAT, HFF_SUM)
ANALYSIS_ONLY = (DECONV, AVG_POOL, BILINEAR)
ALL_KINDS = (INPUT, OUTPUT, *SPEC_KINDS, BATCHNORM, PRELU, *JOIN_KINDS, BILINEAR)


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class LayerNode:
    id: str
    kind: str
    inputs: tuple[str, ...] = ()
    spec: ConvSpec | None = None
    channels: int | None = None
    scale: int | None = None
    bn_mode: str = "frozen"
    component: str | None = None  # Table-style row label: A, B, C or D
    stage: str | None = None  # "concentration" or "comprehensive"

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise GraphError(f"node {self.id!r}: unknown kind {self.kind!r}")
        n_in = len(self.inputs)
        if self.kind == INPUT:
            if n_in:
                raise GraphError(f"input node {self.id!r} cannot have inputs")
        elif self.kind in (ADD, HFF_SUM):
            if n_in != 2:
                raise GraphError(f"{self.kind} node {self.id!r} needs exactly two inputs")
        elif self.kind == CONCAT:
            if n_in < 1:
                raise GraphError(f"concat node {self.id!r} needs at least one input")
        elif n_in != 1:
            raise GraphError(f"{self.kind} node {self.id!r} needs exactly one input, got {n_in}")
        if self.kind in SPEC_KINDS and self.spec is None:
            raise GraphError(f"{self.kind} node {self.id!r} needs a ConvSpec")
        if self.kind in CHANNEL_KINDS and not self.channels:
            raise GraphError(f"{self.kind} node {self.id!r} needs a channel count")
        if self.kind == DEPTHWISE and not (
            self.spec.groups == self.spec.in_channels == self.spec.out_channels
        ):
            raise GraphError(f"depthwise node {self.id!r} needs groups == in == out channels")
        if self.kind == POINTWISE and (
            self.spec.kernel_h, self.spec.kernel_w, self.spec.groups
        ) != (1, 1, 1):
            raise GraphError(f"pointwise node {self.id!r} must be 1x1 with groups=1")
        if self.kind == BILINEAR and not self.scale:
            raise GraphError(f"bilinear node {self.id!r} needs a scale factor")
        if self.bn_mode not in ("frozen", "train"):
            raise GraphError(f"node {self.id!r}: unknown batch-norm mode {self.bn_mode!r}")


@dataclass
class BlockGraph:
    nodes: list[LayerNode]
    params: dict = field(default_factory=dict)
    precision: str = "single"

    def __post_init__(self):
        self._index = {}
        for node in self.nodes:
            if node.id in self._index:
                raise GraphError(f"duplicate node id {node.id!r}")
            for src in node.inputs:
                if src not in self._index:
                    raise GraphError(f"node {node.id!r} references unknown or later node {src!r}")
            self._index[node.id] = node
        inputs = [n for n in self.nodes if n.kind == INPUT]
        outputs = [n for n in self.nodes if n.kind == OUTPUT]
        if len(inputs) != 1 or len(outputs) != 1:
            raise GraphError("graph needs exactly one input and one output node")
        if self.nodes[0].kind != INPUT:
            raise GraphError("the input node must come first")
        if self.nodes[-1].kind != OUTPUT:
            raise GraphError("the output node must come last")
        # every non-output node must feed something
        used = {s for n in self.nodes for s in n.inputs}
        dangling = [n.id for n in self.nodes[:-1] if n.id not in used]
        if dangling:
            raise GraphError(f"nodes {dangling} do not reach the output")

    def __getitem__(self, node_id: str) -> LayerNode:
        return self._index[node_id]

    def __iter__(self):
        return iter(self.nodes)

    def __len__(self):
        return len(self.nodes)

    def __eq__(self, other):
        return isinstance(other, BlockGraph) and self.nodes == other.nodes

    @property
    def input_node(self) -> LayerNode:
        return self.nodes[0]

    @property
    def in_channels(self) -> int:
        return self.nodes[0].channels

    @property
    def dtype(self):
        return dtype_of(self.precision)

    def with_params(self, params: Mapping) -> "BlockGraph":
        return BlockGraph(list(self.nodes), dict(params), self.precision)

    def with_bn_mode(self, mode: str) -> "BlockGraph":
        nodes = [replace(n, bn_mode=mode) if n.kind == BATCHNORM else n for n in self.nodes]
        return BlockGraph(nodes, self.params, self.precision)

    def infer_shapes(self, h: int, w: int) -> dict[str, tuple[int, int, int]]:
        """Per-node ``(C, H, W)`` for an ``h x w`` input (batch excluded)."""
        shapes: dict[str, tuple[int, int, int]] = {}
        for node in self.nodes:
            ins = [shapes[s] for s in node.inputs]
            try:
                shapes[node.id] = _node_shape(node, ins, h, w)
            except ValueError as exc:
                raise GraphError(f"shape inference failed at {node.id!r}: {exc}") from None
        return shapes


def _node_shape(node: LayerNode, ins, h, w):
    k = node.kind
    if k == INPUT:
        return (node.channels, h, w)
    if k == OUTPUT:
        return ins[0]
    if k in CONV_KINDS or k == AVG_POOL:
        c, hi, wi = ins[0]
        if c != node.spec.in_channels:
            raise ValueError(f"expects {node.spec.in_channels} channels, got {c}")
        return (node.spec.out_channels, *node.spec.output_hw(hi, wi))
    if k == DECONV:
        c, hi, wi = ins[0]
        s = node.spec
        if c != s.in_channels:
            raise ValueError(f"expects {s.in_channels} channels, got {c}")
        ho = (hi - 1) * s.stride - 2 * s.pad_h + s.dilation * (s.kernel_h - 1) + 1
        wo = (wi - 1) * s.stride - 2 * s.pad_w + s.dilation * (s.kernel_w - 1) + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"non-positive output extent {ho}x{wo}")
        return (s.out_channels, ho, wo)
    if k in (BATCHNORM, PRELU):
        if ins[0][0] != node.channels:
            raise ValueError(f"expects {node.channels} channels, got {ins[0][0]}")
        return ins[0]
    if k == BILINEAR:
        c, hi, wi = ins[0]
        if c != node.channels:
            raise ValueError(f"expects {node.channels} channels, got {c}")
        return (c, hi * node.scale, wi * node.scale)
    if k == ADD:
        if ins[0] != ins[1]:
            raise ValueError(f"add operands differ: {ins[0]} vs {ins[1]}")
        return ins[0]
    if k == HFF_SUM:
        if ins[0][1:] != ins[1][1:]:
            raise ValueError(f"hff operands differ spatially: {ins[0]} vs {ins[1]}")
        return ins[1]
    if k == CONCAT:
        if len({s[1:] for s in ins}) != 1:
            raise ValueError(f"concat operands differ spatially: {ins}")
        return (sum(s[0] for s in ins), *ins[0][1:])
    raise ValueError(f"no shape rule for {k}")


# ---------------------------------------------------------------------------
# hierarchical feature fusion


def hff_add(prev: np.ndarray, branch: np.ndarray) -> np.ndarray:
    """``branch + prev`` where ``prev`` is zero-extended or truncated to the
    branch's channel count. Equal widths reduce to a plain add."""
    cb, cp = branch.shape[1], prev.shape[1]
    if cb == cp:
        return branch + prev
    out = branch.copy()
    k = min(cb, cp)
    out[:, :k] += prev[:, :k]
    return out


def hff_sum(branches, ragged: bool = False) -> list[np.ndarray]:
    """Cumulative sums ``out_1 = b_1``, ``out_i = b_i + out_{i-1}``.

    Branches are expected in ascending dilation order. With ``ragged=True``
    channel counts may differ (see :func:`hff_add`); batch and spatial extents
    must always agree.
    """
    if len(branches) == 0:
        raise ValueError("hff_sum needs at least one branch")
    ref = check_tensor(branches[0], "branches[0]")
    for i, b in enumerate(branches[1:], 1):
        check_tensor(b, f"branches[{i}]")
        same = b.shape == ref.shape if not ragged else (b.shape[0], *b.shape[2:]) == (ref.shape[0], *ref.shape[2:])
        if not same or b.dtype != ref.dtype:
            raise ValueError(f"branch {i} shape {b.shape} incompatible with {ref.shape}")
    outs = [branches[0]]
    for b in branches[1:]:
        outs.append(hff_add(outs[-1], b))
    return outs


def _hff_add_backward(prev_shape, branch_shape, dO):
    cb, cp = branch_shape[1], prev_shape[1]
    d_branch = dO
    if cb == cp:
        return dO, d_branch
    d_prev = np.zeros(prev_shape, dtype=dO.dtype)
    k = min(cb, cp)
    d_prev[:, :k] = dO[:, :k]
    return d_prev, d_branch


# ---------------------------------------------------------------------------
# execution


def _node_forward(node: LayerNode, args, params):
    k = node.kind
    if k in CONV_KINDS:
        return C.conv_forward(args[0], params[node.id], node.spec)
    if k == BATCHNORM:
        return C.batchnorm_forward(args[0], params[node.id], node.bn_mode)
    if k == PRELU:
        return C.prelu_forward(args[0], params[node.id])
    if k == ADD:
        return args[0] + args[1]
    if k == HFF_SUM:
        return hff_add(args[0], args[1])
    if k == CONCAT:
        return np.concatenate(args, axis=1)
    if k == OUTPUT:
        return args[0]
    raise GraphError(f"node {node.id!r}: kind {k!r} has no executable forward")


def _check_input(g: BlockGraph, x: np.ndarray):
    check_tensor(x, "input")
    if x.shape[1] != g.in_channels:
        raise GraphError(f"input has {x.shape[1]} channels, graph expects {g.in_channels}")
    if x.dtype != g.dtype:
        raise GraphError(f"input dtype {x.dtype} differs from graph precision {g.precision}")
    bad = [n.id for n in g.nodes if n.kind in ANALYSIS_ONLY]
    if bad:
        raise GraphError(f"nodes {bad} are analysis-only and cannot be executed")
    g.infer_shapes(x.shape[2], x.shape[3])


def graph_forward(g: BlockGraph, x: np.ndarray, params: Mapping | None = None, *, keep: bool = False):
    """Evaluate the graph. With ``keep=True`` returns ``(output, activations)``."""
    params = g.params if params is None else params
    _check_input(g, x)
    acts = {g.input_node.id: x}
    for node in g.nodes[1:]:
        acts[node.id] = _node_forward(node, [acts[s] for s in node.inputs], params)
    out = acts[g.nodes[-1].id]
    return (out, acts) if keep else out


def graph_backward(g: BlockGraph, x: np.ndarray, d_out: np.ndarray, params: Mapping | None = None):
    """Gradients of ``sum(d_out * graph_forward(g, x))``.

    Returns ``(d_input, grads)`` where ``grads`` maps node ids to
    ``{"weight"}``, ``{"gamma", "beta"}`` or ``{"slope"}`` arrays.
    """
    params = g.params if params is None else params
    train_bn = [n.id for n in g.nodes if n.kind == BATCHNORM and n.bn_mode != "frozen"]
    if train_bn:
        raise GraphError(f"backward needs frozen batch norm; {train_bn} are in train mode")
    out, acts = graph_forward(g, x, params, keep=True)
    if d_out.shape != out.shape:
        raise GraphError(f"d_out shape {d_out.shape} does not match output {out.shape}")
    grad_acts: dict[str, np.ndarray] = {g.nodes[-1].id: d_out}
    grads: dict[str, dict[str, np.ndarray]] = {}

    def accumulate(node_id, d):
        if node_id in grad_acts:
            grad_acts[node_id] = grad_acts[node_id] + d
        else:
            grad_acts[node_id] = d

    for node in reversed(g.nodes[1:]):
        dO = grad_acts.pop(node.id, None)
        if dO is None:
            continue
        args = [acts[s] for s in node.inputs]
        k = node.kind
        if k in CONV_KINDS:
            dF, dK = C.conv_backward(args[0], params[node.id], node.spec, dO)
            grads[node.id] = {"weight": dK}
            accumulate(node.inputs[0], dF)
        elif k == BATCHNORM:
            bn = params[node.id]
            dgamma, dbeta = C.batchnorm_param_grads(args[0], dO, bn)
            grads[node.id] = {"gamma": dgamma, "beta": dbeta}
            accumulate(node.inputs[0], C.batchnorm_backward_frozen(dO, bn))
        elif k == PRELU:
            dF, dslope = C.prelu_backward(args[0], params[node.id], dO)
            grads[node.id] = {"slope": dslope}
            accumulate(node.inputs[0], dF)
        elif k == ADD:
            accumulate(node.inputs[0], dO)
            accumulate(node.inputs[1], dO)
        elif k == HFF_SUM:
            d_prev, d_branch = _hff_add_backward(args[0].shape, args[1].shape, dO)
            accumulate(node.inputs[0], d_prev)
            accumulate(node.inputs[1], d_branch)
        elif k == CONCAT:
            start = 0
            for src, a in zip(node.inputs, args):
                accumulate(src, dO[:, start : start + a.shape[1]])
                start += a.shape[1]
        elif k == OUTPUT:
            accumulate(node.inputs[0], dO)
        else:
            raise GraphError(f"node {node.id!r}: kind {k!r} has no backward")
    d_in = grad_acts.get(g.input_node.id, np.zeros_like(x))
    return np.ascontiguousarray(d_in), grads


def learnable_arrays(g: BlockGraph, params: Mapping | None = None) -> dict[tuple[str, str], np.ndarray]:
    """Flat ``(node id, name) -> array`` view matching :func:`graph_backward`'s grads."""
    params = g.params if params is None else params
    out = {}
    for node in g.nodes:
        p = params.get(node.id)
        if node.kind in CONV_KINDS:
            out[(node.id, "weight")] = p
        elif node.kind == BATCHNORM:
            out[(node.id, "gamma")] = p.gamma
            out[(node.id, "beta")] = p.beta
        elif node.kind == PRELU:
            out[(node.id, "slope")] = p.slope
    return out
