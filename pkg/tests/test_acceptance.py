"""Acceptance criteria, one function each.

Run ``python3 tests/test_acceptance.py`` for a PASS/FAIL line per criterion,
or ``pytest tests/test_acceptance.py -s`` to see the same lines under pytest.
"""
import time

import numpy as np
import pytest

from c3conv.analyzer import count_flops, count_params, coverage_map, format_mflops, receptive_field
from c3conv.blocks import GraphBuilder, build_c3_block, build_c3_module, build_dilated_conv, build_esp_module
from c3conv.conv import ConvSpec, conv_forward
from c3conv.oracle import conv_oracle
from c3conv.toy import train_toy
from c3conv.verification import (
    factorization_error,
    grad_suite,
    impulse_support,
    impulse_support_without_concentration,
    random_conv_instance,
)

try:
    from test_analyzer import brute_force_holes
except ImportError:  # collected as a package module
    from tests.test_analyzer import brute_force_holes

HW = (128, 128)


def ac1_c3_module_costs():
    t0 = time.perf_counter()
    r = count_flops(build_c3_module(128, (2, 4, 8, 16)), HW, "paper")
    elapsed = time.perf_counter() - t0
    rows = r.rows()
    got = (
        rows["A"][0], rows["B"][0], r.total_params,
        format_mflops(rows["A"][1]), format_mflops(rows["B"][1]), format_mflops(rows["D"][1]),
        format_mflops(r.total_flops, 2),
    )
    want = (4096, 9472, 13568, "134.2", "299.9", "0.016", "434.13")
    return got == want and elapsed < 1.0, f"got={got} runtime={elapsed:.3f}s"


def ac2_esp_module_rows():
    r = count_flops(build_esp_module(128), HW, "paper")
    rows = r.rows()
    got = (
        rows["A"][0], format_mflops(rows["A"][1]), rows["B"][0], format_mflops(rows["B"][1]),
        format_mflops(rows["C"][1]), format_mflops(rows["D"][1]), r.total_params,
    )
    want = (3200, "104.9", 28800, "943.7", "0.066", "0.016", 32000)
    return got == want, f"got={got}"


def _single(spec):
    b = GraphBuilder(spec.in_channels)
    return b.build(b.conv("conv", "input", spec))


def _separable(ci, co, k):
    b = GraphBuilder(ci)
    x = b.depthwise("dw", "input", ci, k, k)
    return b.build(b.pointwise("pw", x, ci, co))


def ac3_reduction_identities():
    std = count_params(_single(ConvSpec(128, 128, 3, 3))).total_params
    sep = count_params(_separable(128, 128, 3)).total_params
    ok = (std, sep) == (147_456, 17_536)
    ok &= count_flops(_single(ConvSpec(128, 128, 3, 3)), (1, 1)).total_flops == 2 * 147_456
    ok &= count_flops(_separable(128, 128, 3), (1, 1)).total_flops == 2 * 17_536
    rng = np.random.default_rng(0)
    for _ in range(20):
        k, ci, co = int(rng.choice([1, 3, 5, 7])), int(rng.integers(1, 257)), int(rng.integers(1, 257))
        ok &= count_params(_single(ConvSpec(ci, co, k, k))).total_params == k * k * ci * co
        ok &= count_params(_separable(ci, co, k)).total_params == ci * (k * k + co)
        ok &= count_flops(_single(ConvSpec(ci, co, k, k)), (1, 1)).total_flops == 2 * k * k * ci * co
        ok &= count_flops(_separable(ci, co, k), (1, 1)).total_flops == 2 * ci * (k * k + co)
    return bool(ok), f"147,456 -> {sep:,}; 20 random triples"


def ac4_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    tol = {"single": 1e-5, "double": 1e-12}
    worst = {"single": 0.0, "double": 0.0}
    kernels, dilations, grouping = set(), set(), set()
    n = 240
    for i in range(n):
        precision = ("single", "double")[i % 2]
        F, K, spec = random_conv_instance(rng, precision)
        kernels.add(spec.kernel_h)
        dilations.add(spec.dilation)
        grouping.add("C" if spec.groups == spec.in_channels and spec.groups > 1 else spec.groups)
        err = float(np.max(np.abs(conv_forward(F, K, spec) - conv_oracle(F, K, spec))))
        worst[precision] = max(worst[precision], err)
    elapsed = time.perf_counter() - t0
    spans = kernels >= {1, 3, 5, 7, 31} and dilations >= {1, 2, 4, 8, 16} and grouping >= {1, "C"}
    ok = spans and all(worst[p] < tol[p] for p in tol) and elapsed < 60
    return ok, f"{n} instances single={worst['single']:.2e} double={worst['double']:.2e} runtime={elapsed:.1f}s"


def ac5_gradients():
    checks = grad_suite(seed=0, instances=20)
    return all(c.passed for c in checks), " ".join(f"{c.name.split('.')[-1]}={c.value:.1e}" for c in checks)


def ac6_factorization():
    rng = np.random.default_rng(0)
    errs = {k: factorization_error(k, rng) for k in (3, 7, 15, 31)}
    return all(e < 1e-6 for e in errs.values()), " ".join(f"k{k}={e:.1e}" for k, e in errs.items())


def ac7_receptive_field():
    ok = True
    for d in (1, 2, 4, 8, 16):
        g = build_dilated_conv(2, d)
        rf = receptive_field(g)
        ok &= (rf.rf_h, rf.rf_w) == (2 * d + 1,) * 2 and impulse_support(g) == rf
    for d in (1, 2, 4, 8):
        g = build_c3_block(2, d)
        full, part = receptive_field(g), receptive_field(g, exclude_stage="concentration")
        ok &= (full.rf_h, full.rf_w) == (4 * d - 1,) * 2 and impulse_support(g) == full
        ok &= (part.rf_h, part.rf_w) == (2 * d + 1,) * 2 and impulse_support_without_concentration(g) == part
    return bool(ok), "dilated d in {1,2,4,8,16}; C3 block d in {1,2,4,8}"


def ac8_coverage():
    schedules = [(1,), (2, 2), (2, 4), (2, 3), (2, 4, 8, 16), (2, 3, 7, 13)]
    ok = all(set(coverage_map(s).holes) == brute_force_holes(s) for s in schedules)
    pairs = [((2, 3), (2, 4)), ((2, 3, 7, 13), (2, 4, 8, 16))]
    detail = []
    for coprime, other in pairs:
        a, b = coverage_map(coprime), coverage_map(other)
        r = min(a.radius, b.radius)
        ha, hb = len(a.holes_within(r)), len(b.holes_within(r))
        ok &= ha < hb
        detail.append(f"{coprime}:{ha} < {other}:{hb} in {2 * r + 1}x{2 * r + 1}")
    return bool(ok), "; ".join(detail)


def ac9_cost_ratio():
    c3 = count_flops(build_c3_module(128), HW, "paper").total_flops
    esp = count_flops(build_esp_module(128), HW, "paper").total_flops
    ratio = c3 / esp
    return 0.40 <= ratio <= 0.43, f"ratio={ratio:.4f}"


def ac10_toy_training():
    t0 = time.perf_counter()
    a = train_toy()
    elapsed = time.perf_counter() - t0
    b = train_toy()
    same = a.losses == b.losses and all(np.array_equal(a.params[k], b.params[k]) for k in a.params
                                        if isinstance(a.params[k], np.ndarray))
    ok = a.final < 0.5 * a.initial and same and elapsed < 120
    return ok, f"loss {a.initial:.4f} -> {a.final:.4f} reproducible={same} runtime={elapsed:.1f}s"


CRITERIA = [
    ac1_c3_module_costs, ac2_esp_module_rows, ac3_reduction_identities, ac4_oracle_equivalence,
    ac5_gradients, ac6_factorization, ac7_receptive_field, ac8_coverage, ac9_cost_ratio, ac10_toy_training,
]


def report(fn):
    ok, detail = fn()
    print(f"{'PASS' if ok else 'FAIL'}  {fn.__name__:<26} {detail}")
    return ok


@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda f: f.__name__)
def test_criterion(criterion):
    assert report(criterion)


if __name__ == "__main__":
    import sys

    results = [report(fn) for fn in CRITERIA]
    sys.exit(0 if all(results) else 1)
