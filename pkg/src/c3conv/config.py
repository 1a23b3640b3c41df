"""JSON model configs: parsing, shorthand expansion and serialization.

A config is a JSON object::

    {
      "input_shape": [1, 128, 128, 128],      # N, C, H, W (required)
      "precision": "single",                   # optional, "single" | "double"
      "seed": 0,                               # optional, weight-init seed
      "nodes": [                               # required, non-empty
        {"id": "m", "kind": "c3_module", "dilations": [2, 4, 8, 16]}
      ]
    }

Node records carry ``id``, ``kind``, optional ``inputs`` (defaults to the
previous node, or the graph input for the first node), optional
``component`` / ``stage`` tags, and kind-specific fields:

=================  ======================================================
conv, deconv       in_channels, out_channels, kernel, dilation, padding,
                   stride, groups
depthwise_conv     channels, kernel, dilation, padding, stride
pointwise_conv     in_channels, out_channels
avg_pool           channels, kernel, stride, padding
bilinear_upsample  channels, scale
batch_norm, prelu  channels
add, hff_sum       (two inputs)
concat             (one or more inputs)
input              channels (must be first; implicit if absent)
output             (must be last; implicit if absent)
=================  ======================================================

``kernel`` and ``padding`` accept an int or ``[h, w]``; padding defaults to
"same". ``channels``/``in_channels`` default to the upstream channel count.

Shorthand kinds expand to full subgraphs with ids prefixed ``"<id>/"``:
``dilated_conv`` (channels, dilation, kernel), ``ds_dilate``, ``rc3_block``,
``c3_block`` (channels, dilation), ``esp_module`` (channels, n,
remainder_branch) and ``c3_module`` (channels, dilations). Other nodes may
refer to a shorthand by its id. Unknown fields are errors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import graph as G
from .blocks import DEFAULT_C3_RATES, GraphBuilder
from .conv import ConvSpec
from .tensor import PRECISIONS, Shape, as_shape

COMMON_FIELDS = {"id", "kind", "inputs", "component", "stage"}
KIND_FIELDS = {
    G.CONV: {"in_channels", "out_channels", "kernel", "dilation", "padding", "stride", "groups"},
    G.DECONV: {"in_channels", "out_channels", "kernel", "dilation", "padding", "stride", "groups"},
    G.DEPTHWISE: {"channels", "kernel", "dilation", "padding", "stride"},
    G.POINTWISE: {"in_channels", "out_channels"},
    G.AVG_POOL: {"channels", "kernel", "stride", "padding"},
    G.BILINEAR: {"channels", "scale"},
    G.BATCHNORM: {"channels"},
    G.PRELU: {"channels"},
    G.ADD: set(),
    G.HFF_SUM: set(),
    G.CONCAT: set(),
    G.INPUT: {"channels"},
    G.OUTPUT: set(),
}
SHORTHAND_FIELDS = {
    "dilated_conv": {"channels", "dilation", "kernel"},
    "ds_dilate": {"channels", "dilation"},
    "rc3_block": {"channels", "dilation"},
    "c3_block": {"channels", "dilation"},
    "esp_module": {"channels", "n", "remainder_branch"},
    "c3_module": {"channels", "dilations"},
}
TOP_FIELDS = {"input_shape", "precision", "seed", "nodes"}


class ConfigError(ValueError):
    """Malformed config; the message starts with the offending field path."""


@dataclass
class ModelConfig:
    graph: G.BlockGraph
    input_shape: Shape
    precision: str = "single"
    seed: int = 0

    def to_dict(self) -> dict:
        return graph_to_config(self.graph, self.input_shape, self.seed)


def _pair(value, where) -> tuple[int, int]:
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected an int or [h, w], got {value!r}")
    if isinstance(value, int):
        return value, value
    if isinstance(value, list) and len(value) == 2 and all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        return value[0], value[1]
    raise ConfigError(f"{where}: expected an int or [h, w], got {value!r}")


def _int(rec, key, where, default=None):
    if key not in rec:
        if default is None:
            raise ConfigError(f"{where}.{key}: required field missing")
        return default
    v = rec[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
    return v


def _spec_from_record(rec, kind, upstream_c, where) -> ConvSpec:
    kh, kw = _pair(rec.get("kernel", 1 if kind == G.POINTWISE else 3), f"{where}.kernel")
    d = _int(rec, "dilation", where, 1)
    pad = rec.get("padding")
    ph, pw = (None, None) if pad is None else _pair(pad, f"{where}.padding")
    stride = _int(rec, "stride", where, 1)
    if kind in (G.DEPTHWISE, G.AVG_POOL):
        c = _int(rec, "channels", where, upstream_c)
        ci, co, groups = c, c, c
    else:
        ci = _int(rec, "in_channels", where, upstream_c)
        co = _int(rec, "out_channels", where)
        groups = _int(rec, "groups", where, 1)
    return ConvSpec(ci, co, kh, kw, dilation=d, stride=stride, pad_h=ph, pad_w=pw, groups=groups)


def parse_config(doc) -> ModelConfig:
    """Build a :class:`ModelConfig` from a parsed JSON object or JSON text."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected a JSON object")
    unknown = set(doc) - TOP_FIELDS
    if unknown:
        raise ConfigError(f"<root>: unknown fields {sorted(unknown)}")
    if "input_shape" not in doc:
        raise ConfigError("input_shape: required field missing")
    try:
        shape = as_shape(doc["input_shape"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"input_shape: {exc}") from None
    precision = doc.get("precision", "single")
    if precision not in PRECISIONS:
        raise ConfigError(f"precision: expected one of {sorted(PRECISIONS)}, got {precision!r}")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    nodes = doc.get("nodes")
    if not isinstance(nodes, list) or not nodes:
        raise ConfigError("nodes: expected a non-empty list of node records")
    graph = _expand(nodes, shape, precision, seed)
    return ModelConfig(graph, shape, precision, seed)


def _expand(records, shape: Shape, precision, seed) -> G.BlockGraph:
    first = records[0] if isinstance(records[0], dict) else {}
    explicit_input = first.get("kind") == G.INPUT
    input_id = first.get("id", "input") if explicit_input else "input"
    if explicit_input:
        c = _int(first, "channels", "nodes[0]", shape.c)
        if c != shape.c:
            raise ConfigError(f"nodes[0].channels: {c} disagrees with input_shape channels {shape.c}")
        extra = set(first) - COMMON_FIELDS - KIND_FIELDS[G.INPUT]
        if extra:
            raise ConfigError(f"nodes[0]: unknown fields {sorted(extra)}")
        records = records[1:]
    b = GraphBuilder(shape.c, seed=seed, precision=precision, input_id=input_id)
    alias: dict[str, str] = {input_id: input_id}
    channels: dict[str, int] = {input_id: shape.c}
    last = input_id
    output_id = None
    for i, rec in enumerate(records, start=int(explicit_input)):
        where = f"nodes[{i}]"
        if output_id is not None:
            raise ConfigError(f"{where}: nodes after the output node")
        if not isinstance(rec, dict):
            raise ConfigError(f"{where}: expected an object")
        node_id, kind = rec.get("id"), rec.get("kind")
        if not isinstance(node_id, str) or not node_id:
            raise ConfigError(f"{where}.id: required non-empty string")
        if node_id in alias:
            raise ConfigError(f"{where}.id: duplicate id {node_id!r}")
        allowed = KIND_FIELDS.get(kind, SHORTHAND_FIELDS.get(kind))
        if allowed is None or kind == G.INPUT:
            raise ConfigError(f"{where}.kind: unknown or misplaced kind {kind!r}")
        extra = set(rec) - COMMON_FIELDS - allowed
        if extra:
            raise ConfigError(f"{where}: unknown fields {sorted(extra)} for kind {kind!r}")
        raw_inputs = rec.get("inputs", [last])
        if not isinstance(raw_inputs, list) or not all(isinstance(s, str) for s in raw_inputs):
            raise ConfigError(f"{where}.inputs: expected a list of node ids")
        for s in raw_inputs:
            if s not in alias:
                raise ConfigError(f"{where}.inputs: unknown node {s!r}")
        srcs = tuple(alias[s] for s in raw_inputs)
        up_c = channels[srcs[0]] if srcs else None
        tags = {k: rec[k] for k in ("component", "stage") if k in rec}
        try:
            if kind in SHORTHAND_FIELDS:
                if len(srcs) != 1:
                    raise ConfigError(f"{where}.inputs: shorthand blocks take exactly one input")
                if tags:
                    raise ConfigError(f"{where}: shorthand blocks cannot carry component/stage tags")
                out = _expand_shorthand(b, rec, kind, srcs[0], up_c, f"{node_id}/", where)
                out_c = channels[srcs[0]]
                if kind == "dilated_conv":
                    out_c = b.nodes[-1].spec.out_channels
            else:
                node = _primitive(rec, kind, node_id, srcs, up_c, channels, tags, where)
                out = b.node(node)
                out_c = _out_channels(node, channels)
                if kind == G.OUTPUT:
                    output_id = node_id
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        alias[node_id] = out
        channels[out] = out_c
        last = node_id
    if output_id is None:
        b.node(G.LayerNode("output" if "output" not in alias else "__output__", G.OUTPUT, (alias[last],)))
    try:
        g = G.BlockGraph(b.nodes, b.params, precision)
        g.infer_shapes(shape.h, shape.w)
    except G.GraphError as exc:
        raise ConfigError(f"nodes: {exc}") from None
    return g


def _out_channels(node: G.LayerNode, channels) -> int:
    if node.spec is not None:
        return node.spec.out_channels
    if node.channels:
        return node.channels
    if node.kind == G.CONCAT:
        return sum(channels[s] for s in node.inputs)
    return channels[node.inputs[-1]]


def _primitive(rec, kind, node_id, srcs, up_c, channels, tags, where) -> G.LayerNode:
    if kind in G.SPEC_KINDS:
        return G.LayerNode(node_id, kind, srcs, spec=_spec_from_record(rec, kind, up_c, where), **tags)
    if kind in (G.BATCHNORM, G.PRELU):
        return G.LayerNode(node_id, kind, srcs, channels=_int(rec, "channels", where, up_c), **tags)
    if kind == G.BILINEAR:
        return G.LayerNode(
            node_id, kind, srcs, channels=_int(rec, "channels", where, up_c), scale=_int(rec, "scale", where), **tags
        )
    return G.LayerNode(node_id, kind, srcs, **tags)


def _expand_shorthand(b: GraphBuilder, rec, kind, src, up_c, prefix, where) -> str:
    c = _int(rec, "channels", where, up_c)
    if c != up_c:
        raise ConfigError(f"{where}.channels: {c} disagrees with upstream channel count {up_c}")
    if kind == "esp_module":
        return b.esp_module(src, c, _int(rec, "n", where, 5), _int(rec, "remainder_branch", where, -1), prefix=prefix)
    if kind == "c3_module":
        rates = rec.get("dilations", list(DEFAULT_C3_RATES))
        if not isinstance(rates, list) or not rates or not all(isinstance(r, int) and not isinstance(r, bool) for r in rates):
            raise ConfigError(f"{where}.dilations: expected a non-empty list of integers")
        return b.c3_module(src, c, tuple(rates), prefix=prefix)
    d = _int(rec, "dilation", where)
    if d < 1:
        raise ConfigError(f"{where}.dilation: must be >= 1")
    if kind == "dilated_conv":
        k = _int(rec, "kernel", where, 3)
        return b.conv(f"{prefix}conv", src, ConvSpec(c, c, k, k, dilation=d), stage="comprehensive")
    body = {"ds_dilate": b.ds_dilate, "rc3_block": b.rc3, "c3_block": b.c3}[kind]
    return body(src, c, d, prefix=prefix)


def node_to_record(node: G.LayerNode) -> dict:
    rec: dict = {"id": node.id, "kind": node.kind}
    if node.inputs:
        rec["inputs"] = list(node.inputs)
    s = node.spec
    if node.kind in (G.CONV, G.DECONV):
        rec.update(
            in_channels=s.in_channels,
            out_channels=s.out_channels,
            kernel=[s.kernel_h, s.kernel_w],
            dilation=s.dilation,
            padding=[s.pad_h, s.pad_w],
            stride=s.stride,
            groups=s.groups,
        )
    elif node.kind == G.DEPTHWISE:
        rec.update(
            channels=s.in_channels,
            kernel=[s.kernel_h, s.kernel_w],
            dilation=s.dilation,
            padding=[s.pad_h, s.pad_w],
            stride=s.stride,
        )
    elif node.kind == G.POINTWISE:
        rec.update(in_channels=s.in_channels, out_channels=s.out_channels)
    elif node.kind == G.AVG_POOL:
        rec.update(channels=s.in_channels, kernel=[s.kernel_h, s.kernel_w], stride=s.stride, padding=[s.pad_h, s.pad_w])
    elif node.kind in (G.BATCHNORM, G.PRELU, G.INPUT):
        rec["channels"] = node.channels
    elif node.kind == G.BILINEAR:
        rec.update(channels=node.channels, scale=node.scale)
    if node.component is not None:
        rec["component"] = node.component
    if node.stage is not None:
        rec["stage"] = node.stage
    return rec


def graph_to_config(g: G.BlockGraph, input_shape, seed: int = 0) -> dict:
    """Fully expanded config document for ``g`` (no shorthands)."""
    return {
        "input_shape": list(input_shape),
        "precision": g.precision,
        "seed": seed,
        "nodes": [node_to_record(n) for n in g.nodes],
    }


def load_config(path) -> ModelConfig:
    text = Path(path).read_text(encoding="utf-8")
    return parse_config(text)


def dump_config(cfg: ModelConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2)


def graph_signature(g: G.BlockGraph) -> list[tuple]:
    """Id-free structural description; equal signatures mean isomorphic graphs
    with identical node order."""
    pos = {n.id: i for i, n in enumerate(g.nodes)}
    return [
        (n.kind, tuple(pos[s] for s in n.inputs), n.spec, n.channels, n.scale, n.component, n.stage)
        for n in g.nodes
    ]
