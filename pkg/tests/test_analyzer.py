import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c3conv import analyzer
from c3conv.analyzer import (
    count_flops,
    count_params,
    coverage_map,
    format_mflops,
    receptive_field,
)
from c3conv.blocks import (
    GraphBuilder,
    build_c3_block,
    build_c3_module,
    build_dilated_conv,
    build_ds_dilate_block,
    build_esp_module,
    build_rc3_block,
)
from c3conv.conv import BatchNormParams, ConvSpec, PReLUParams
from c3conv.graph import (
    AVG_POOL,
    BILINEAR,
    CONV,
    DECONV,
    INPUT,
    OUTPUT,
    BlockGraph,
    GraphError,
    LayerNode,
    graph_forward,
)
from c3conv.verification import impulse_support, impulse_support_without_concentration


def weight_element_count(g):
    """Count learnable scalars by walking the materialized parameters."""
    total = 0
    for p in g.params.values():
        if isinstance(p, np.ndarray):
            total += p.size
        elif isinstance(p, BatchNormParams):
            total += p.gamma.size + p.beta.size
        elif isinstance(p, PReLUParams):
            total += p.slope.size
    return total


def standard_conv(ci, co, k):
    b = GraphBuilder(ci)
    return b.build(b.conv("conv", "input", ConvSpec(ci, co, k, k)))


def ds_conv(ci, co, k):
    b = GraphBuilder(ci)
    x = b.depthwise("dw", "input", ci, k, k)
    return b.build(b.pointwise("pw", x, ci, co))


def test_reduction_example():
    assert count_params(standard_conv(128, 128, 3)).total_params == 147_456
    assert count_params(ds_conv(128, 128, 3)).total_params == 128 * (9 + 128) == 17_536


@settings(max_examples=20, deadline=None)
@given(st.sampled_from([1, 3, 5, 7]), st.integers(1, 64), st.integers(1, 64))
def test_reduction_identities(k, ci, co):
    std, ds = standard_conv(ci, co, k), ds_conv(ci, co, k)
    assert count_params(std).total_params == k * k * ci * co
    assert count_params(ds).total_params == ci * (k * k + co)
    assert count_flops(std, (3, 4)).total_flops == 12 * 2 * k * k * ci * co
    assert count_flops(ds, (3, 4)).total_flops == 12 * 2 * ci * (k * k + co)


@pytest.mark.parametrize(
    "g",
    [build_c3_module(128), build_esp_module(128), build_rc3_block(16, 3), build_ds_dilate_block(8, 2),
     build_c3_block(32, 4), build_dilated_conv(5, 2)],
)
def test_params_match_materialized_weights(g):
    assert count_params(g).total_params == weight_element_count(g)


def test_pointwise_flops_row():
    b = GraphBuilder(128)
    g = b.build(b.pointwise("pw", "input", 128, 25))
    assert count_flops(g, (128, 128)).total_flops == 104_857_600
    assert format_mflops(104_857_600) == "104.9"


def test_c3_module_table():
    r = count_flops(build_c3_module(128), (128, 128), "paper")
    rows = r.rows()
    assert rows["A"] == (4096, 134_217_728)
    assert rows["B"] == (9472, 2 * 128 * 128 * 8832 + 4 * 5 * 32 * 128 * 128)
    assert rows["D"] == (0, 16_384)
    assert "C" not in rows
    assert r.total_params == 13_568
    assert r.total_flops == 434_126_848
    assert format_mflops(r.total_flops, 2) == "434.13"
    assert format_mflops(rows["B"][1]) == "299.9"


def test_esp_module_table():
    r = count_flops(build_esp_module(128), (128, 128), "paper")
    rows = r.rows()
    assert rows["A"] == (3200, 104_857_600)
    assert rows["B"] == (28_800, 943_718_400)
    assert rows["C"] == (0, 4 * 128 * 128)
    assert rows["D"] == (0, 128 * 128)
    assert [format_mflops(rows[k][1]) for k in "ABCD"] == ["104.9", "943.7", "0.066", "0.016"]
    assert r.total_params == 32_000


def test_full_convention_counts_channels():
    paper = count_flops(build_c3_module(128), (128, 128), "paper").rows()
    full = count_flops(build_c3_module(128), (128, 128), "full").rows()
    assert full["D"][1] == 128 * 128 * 128
    assert full["A"] == paper["A"] and full["B"] == paper["B"]
    esp = count_flops(build_esp_module(128), (128, 128), "full").rows()
    assert esp["C"][1] == 4 * 25 * 128 * 128
    with pytest.raises(ValueError):
        count_flops(build_c3_module(128), (8, 8), "approximate")


def test_totals_equal_node_sums():
    r = count_flops(build_esp_module(40), (9, 7))
    assert r.total_flops == sum(n.flops for n in r.per_node)
    assert r.total_params == sum(n.params for n in r.per_node)
    recs = r.records()
    assert sum(rec["flops_exact"] for rec in recs) == r.total_flops
    assert {"id", "kind", "params", "flops_exact", "flops_formatted"} == set(recs[0])


def test_params_only_report_has_no_flops():
    with pytest.raises(ValueError):
        count_params(build_c3_block(4, 2)).total_flops


@pytest.mark.parametrize(
    "flops, decimals, text",
    [(134_217_728, None, "134.2"), (1_050_000, 1, "1.1"), (1_250_000, 1, "1.3"), (65_536, None, "0.066"),
     (16_384, None, "0.016"), (1_048_657_920, 1, "1,048.7"), (434_126_848, 2, "434.13")],
)
def test_format_half_up(flops, decimals, text):
    assert format_mflops(flops, decimals) == text


def test_format_gflops():
    assert analyzer.format_gflops(6_450_000_000) == "6.45"


def analysis_only_graph():
    nodes = [
        LayerNode("input", INPUT, channels=4),
        LayerNode("pool", AVG_POOL, ("input",), spec=ConvSpec(4, 4, 2, 2, stride=2, pad_h=0, pad_w=0, groups=4)),
        LayerNode("up", BILINEAR, ("pool",), channels=4, scale=2),
        LayerNode("deconv", DECONV, ("up",), spec=ConvSpec(4, 2, 2, 2, stride=2, pad_h=0, pad_w=0)),
        LayerNode("output", OUTPUT, ("deconv",)),
    ]
    return BlockGraph(nodes)


def test_analysis_only_costs():
    g = analysis_only_graph()
    shapes = g.infer_shapes(16, 16)
    assert shapes["pool"] == (4, 8, 8)
    assert shapes["up"] == (4, 16, 16)
    assert shapes["deconv"] == (2, 32, 32)
    flops = {n.id: n.flops for n in count_flops(g, (16, 16)).per_node}
    assert flops["pool"] == 16 * 16 * 4
    assert flops["up"] == 3 * 8 * 8 * 4
    assert flops["deconv"] == 2 * 16 * 16 * 2 * 2 * 4 * 2
    assert count_params(g).total_params == 2 * 2 * 4 * 2


def test_executor_rejects_analysis_only():
    with pytest.raises(GraphError):
        graph_forward(analysis_only_graph(), np.zeros((1, 4, 16, 16), np.float32))


def test_shape_inference_failure():
    nodes = [
        LayerNode("input", INPUT, channels=4),
        LayerNode("conv", CONV, ("input",), spec=ConvSpec(3, 4)),
        LayerNode("output", OUTPUT, ("conv",)),
    ]
    with pytest.raises(GraphError):
        count_flops(BlockGraph(nodes), (8, 8))


# -- receptive fields --------------------------------------------------------


@pytest.mark.parametrize("d", [1, 2, 4, 8, 16])
def test_dilated_rf(d):
    g = build_dilated_conv(1, d)
    rf = receptive_field(g)
    assert (rf.rf_h, rf.rf_w) == (2 * d + 1, 2 * d + 1)
    assert impulse_support(g) == rf


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_c3_block_rf(d):
    g = build_c3_block(2, d)
    full = receptive_field(g)
    partial = receptive_field(g, exclude_stage="concentration")
    assert (full.rf_h, full.rf_w) == (4 * d - 1, 4 * d - 1)
    assert (partial.rf_h, partial.rf_w) == (2 * d + 1, 2 * d + 1)
    assert impulse_support(g) == full
    assert impulse_support_without_concentration(g) == partial


def test_pointwise_rf():
    b = GraphBuilder(3)
    g = b.build(b.pointwise("pw", "input", 3, 3))
    assert str(receptive_field(g)) == "1×1"
    assert impulse_support(g) == receptive_field(g)


def test_module_rf_is_branch_max():
    g = build_c3_module(8, (2, 4))
    assert str(receptive_field(g)) == "15×15"
    assert str(receptive_field(g, exclude_stage="concentration")) == "9×9"
    assert impulse_support(g) == receptive_field(g)
    esp = build_esp_module(10, 5)
    assert str(receptive_field(esp)) == "33×33"


def test_rf_layer_list_and_stride():
    assert str(receptive_field([ConvSpec(1, 1, 3, 3, dilation=2), ConvSpec(1, 1, 1, 5)])) == "5×9"
    with pytest.raises(GraphError):
        receptive_field([ConvSpec(1, 1, 3, 3, stride=2)])


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([1, 3, 5]), st.sampled_from([1, 3]), st.integers(1, 3)), min_size=1, max_size=3))
def test_rf_matches_impulse_oracle(layers):
    b = GraphBuilder(1)
    x = "input"
    for i, (kh, kw, d) in enumerate(layers):
        x = b.conv(f"c{i}", x, ConvSpec(1, 1, kh, kw, dilation=d))
    g = b.build(x)
    assert impulse_support(g) == receptive_field(g)


# -- coverage ----------------------------------------------------------------


def brute_force_counts(rates, kernel=3):
    """Enumerate every tap combination and tally its 2-D offset."""
    half = kernel // 2
    taps = list(itertools.product(range(-half, half + 1), repeat=2))
    counts = Counter()
    for combo in itertools.product(taps, repeat=len(rates)):
        dy = sum(t[0] * d for t, d in zip(combo, rates))
        dx = sum(t[1] * d for t, d in zip(combo, rates))
        counts[(dy, dx)] += 1
    return counts


def brute_force_holes(rates, kernel=3, radius=None):
    counts = brute_force_counts(rates, kernel)
    r = sum(rates) * (kernel // 2) if radius is None else radius
    return {(y, x) for y in range(-r, r + 1) for x in range(-r, r + 1) if counts[(y, x)] == 0}


def test_dense_kernel_coverage():
    m = coverage_map([1])
    assert m.extent == 3
    assert (m.counts == 1).all()
    assert m.holes == []


def test_two_by_two_holes():
    m = coverage_map([2, 2])
    assert m.extent == 9
    expected = {(y, x) for y in range(-4, 5) for x in range(-4, 5) if y % 2 or x % 2}
    assert set(m.holes) == expected == brute_force_holes([2, 2])


@pytest.mark.parametrize("rates", [[1], [2, 2], [2, 4], [2, 3], [1, 2, 5]])
def test_counts_match_enumeration(rates):
    m = coverage_map(rates)
    counts = brute_force_counts(rates)
    r = m.radius
    for (y, x), c in counts.items():
        assert m.counts[r + y, r + x] == c
    assert m.counts.sum() == sum(counts.values()) == 9 ** len(rates)


def test_coprime_fewer_holes():
    a, b = coverage_map([2, 3]), coverage_map([2, 4])
    r = min(a.radius, b.radius)
    assert len(a.holes_within(r)) < len(b.holes_within(r))
    assert len(a.holes) < len(b.holes)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=3), st.sampled_from([1, 3, 5]))
def test_coverage_invariants(rates, kernel):
    m = coverage_map(rates, kernel)
    assert m.counts[m.radius, m.radius] >= 1
    assert m.counts.sum() == (kernel * kernel) ** len(rates)
    assert m.extent == 2 * sum(rates) * (kernel // 2) + 1


def test_coverage_errors():
    with pytest.raises(ValueError):
        coverage_map([])
    with pytest.raises(ValueError):
        coverage_map([2], kernel=4)
