"""Self-check suites: oracle agreement, gradients, separable factorization and
the module cost table. Each suite returns a list of :class:`Check` records."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import analyzer
from .blocks import CONCENTRATION, build_c3_block, build_c3_module, build_esp_module
from .conv import (
    BatchNormParams,
    ConvSpec,
    PReLUParams,
    batchnorm_backward_frozen,
    batchnorm_forward,
    batchnorm_param_grads,
    conv_backward,
    conv_forward,
    depthwise_spec,
    prelu_backward,
    prelu_forward,
)
from .graph import BATCHNORM, CONV_KINDS, PRELU, BlockGraph, graph_backward, graph_forward
from .oracle import conv_oracle
from .tensor import random_init

ORACLE_KERNELS = (1, 3, 5, 7, 31)
ORACLE_DILATIONS = (1, 2, 4, 8, 16)
ORACLE_TOL = {"single": 1e-5, "double": 1e-12}
GRAD_TOL = 1e-6
FD_STEP = 1e-5
FACTOR_KERNELS = (3, 7, 15, 31)
FACTOR_TOL = 1e-6


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    limit: float | str
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if isinstance(self.value, float):
            text = f"{status}  {self.name:<34} worst={self.value:.3e}  limit={self.limit:.0e}"
        else:
            text = f"{status}  {self.name:<34} got={self.value}  want={self.limit}"
        return f"{text}  {self.detail}" if self.detail else text


# ---------------------------------------------------------------------------
# oracle agreement


def random_conv_instance(rng: np.random.Generator, precision: str):
    k = int(rng.choice(ORACLE_KERNELS))
    d = int(rng.choice(ORACLE_DILATIONS))
    c = int(rng.integers(1, 9))
    depthwise = bool(rng.integers(2))
    co = c if depthwise else int(rng.integers(1, 9))
    spec = ConvSpec(c, co, k, k, dilation=d, groups=c if depthwise else 1)
    shape = (int(rng.integers(1, 3)), c, int(rng.integers(1, 17)), int(rng.integers(1, 17)))
    F = random_init(shape, int(rng.integers(2**31)), 1, precision)
    K = random_init(spec.weight_shape, int(rng.integers(2**31)), spec.fan_in, precision)
    return F, K, spec


def oracle_suite(seed: int = 0, instances: int = 200) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = {"single": 0.0, "double": 0.0}
    counts = {"single": 0, "double": 0}
    for i in range(instances):
        precision = ("single", "double")[i % 2]
        F, K, spec = random_conv_instance(rng, precision)
        err = float(np.max(np.abs(conv_forward(F, K, spec) - conv_oracle(F, K, spec))))
        worst[precision] = max(worst[precision], err)
        counts[precision] += 1
    return [
        Check(f"oracle.{p}", worst[p] < ORACLE_TOL[p], worst[p], ORACLE_TOL[p], f"{counts[p]} instances")
        for p in ("single", "double")
    ]


# ---------------------------------------------------------------------------
# gradients


def directional_error(f: Callable[[float], float], analytic: float, h: float = FD_STEP) -> float:
    """Relative error between ``analytic`` and the central difference of ``f`` at 0."""
    fd = (f(h) - f(-h)) / (2 * h)
    scale = max(abs(fd), abs(analytic))
    return abs(fd - analytic) / scale if scale > 0 else 0.0


def _dot(a, b) -> float:
    return float(np.sum(a * b))


def conv_grad_errors(rng, spec: ConvSpec, shape) -> list[float]:
    F = rng.standard_normal(shape)
    K = rng.standard_normal(spec.weight_shape)
    ho, wo = spec.output_hw(shape[2], shape[3])
    dO = rng.standard_normal((shape[0], spec.out_channels, ho, wo))
    dF, dK = conv_backward(F, K, spec, dO)
    vF, vK = rng.standard_normal(F.shape), rng.standard_normal(K.shape)
    return [
        directional_error(lambda t: _dot(dO, conv_forward(F + t * vF, K, spec)), _dot(dF, vF)),
        directional_error(lambda t: _dot(dO, conv_forward(F, K + t * vK, spec)), _dot(dK, vK)),
    ]


def prelu_grad_errors(rng, shape) -> list[float]:
    mag = rng.uniform(0.1, 1.0, shape)
    F = mag * rng.choice([-1.0, 1.0], shape)
    p = PReLUParams(rng.uniform(-0.5, 0.5, shape[1]))
    dO = rng.standard_normal(shape)
    dF, dslope = prelu_backward(F, p, dO)
    # step small enough that no element changes sign
    vF = rng.uniform(-1, 1, shape)
    vs = rng.standard_normal(shape[1])
    return [
        directional_error(lambda t: _dot(dO, prelu_forward(F + t * vF, p)), _dot(dF, vF)),
        directional_error(lambda t: _dot(dO, prelu_forward(F, PReLUParams(p.slope + t * vs))), _dot(dslope, vs)),
    ]


def _random_bn(rng, c) -> BatchNormParams:
    return BatchNormParams(
        gamma=rng.uniform(0.5, 1.5, c),
        beta=rng.standard_normal(c),
        running_mean=rng.standard_normal(c),
        running_var=rng.uniform(0.5, 2.0, c),
    )


def batchnorm_grad_errors(rng, shape) -> list[float]:
    F = rng.standard_normal(shape)
    p = _random_bn(rng, shape[1])
    dO = rng.standard_normal(shape)
    dF = batchnorm_backward_frozen(dO, p)
    dgamma, dbeta = batchnorm_param_grads(F, dO, p)
    vF, vg, vb = rng.standard_normal(shape), rng.standard_normal(shape[1]), rng.standard_normal(shape[1])

    def with_affine(t):
        q = BatchNormParams(p.gamma + t * vg, p.beta + t * vb, p.running_mean, p.running_var, p.eps)
        return _dot(dO, batchnorm_forward(F, q))

    return [
        directional_error(lambda t: _dot(dO, batchnorm_forward(F + t * vF, p)), _dot(dF, vF)),
        directional_error(with_affine, _dot(dgamma, vg) + _dot(dbeta, vb)),
    ]


def randomize_params(g: BlockGraph, rng) -> dict:
    """Copy of ``g.params`` with every learnable drawn at random (double)."""
    params = {}
    for node in g.nodes:
        if node.kind in CONV_KINDS:
            params[node.id] = rng.standard_normal(node.spec.weight_shape) / np.sqrt(node.spec.fan_in)
        elif node.kind == BATCHNORM:
            params[node.id] = _random_bn(rng, node.channels)
        elif node.kind == PRELU:
            params[node.id] = PReLUParams(rng.uniform(-0.5, 0.5, node.channels))
    return params


def _perturb(g: BlockGraph, params: dict, direction: dict, t: float) -> dict:
    out = {}
    for node in g.nodes:
        p = params.get(node.id)
        v = direction.get(node.id)
        if p is None:
            continue
        if node.kind in CONV_KINDS:
            out[node.id] = p + t * v["weight"]
        elif node.kind == BATCHNORM:
            out[node.id] = BatchNormParams(
                p.gamma + t * v["gamma"], p.beta + t * v["beta"], p.running_mean, p.running_var, p.eps
            )
        elif node.kind == PRELU:
            out[node.id] = PReLUParams(p.slope + t * v["slope"])
    return out


def graph_grad_error(g: BlockGraph, rng, hw=(9, 9)) -> float:
    """Joint directional check over the input and every learnable of ``g``."""
    params = randomize_params(g, rng)
    x = rng.standard_normal((2, g.in_channels, *hw))
    out = graph_forward(g, x, params)
    dO = rng.standard_normal(out.shape)
    dx, grads = graph_backward(g, x, dO, params)
    vx = rng.standard_normal(x.shape)
    direction = {nid: {k: rng.standard_normal(a.shape) for k, a in gr.items()} for nid, gr in grads.items()}
    analytic = _dot(dx, vx) + sum(_dot(grads[n][k], direction[n][k]) for n in grads for k in grads[n])
    return directional_error(lambda t: _dot(dO, graph_forward(g, x + t * vx, _perturb(g, params, direction, t))), analytic)


def grad_suite(seed: int = 0, instances: int = 20) -> list[Check]:
    rng = np.random.default_rng(seed)
    conv_err, prelu_err, bn_err, block_err = [], [], [], []
    for i in range(instances):
        if i % 2 == 0:
            spec, shape = ConvSpec(4, 6, 3, 3, dilation=2, groups=2), (1, 4, 8, 8)
        else:
            c = int(rng.integers(1, 5))
            k = int(rng.choice([1, 3, 5]))
            d = int(rng.integers(1, 4))
            g = int(rng.choice([1, c]))
            co = c if g == c else int(rng.integers(1, 5))
            spec = ConvSpec(c, co, k, k, dilation=d, groups=g)
            shape = (int(rng.integers(1, 3)), c, int(rng.integers(4, 10)), int(rng.integers(4, 10)))
        conv_err += conv_grad_errors(rng, spec, shape)
        prelu_err += prelu_grad_errors(rng, (2, 3, 5, 4))
        bn_err += batchnorm_grad_errors(rng, (2, 3, 5, 4))
        d = 1 + i % 3
        block = build_c3_block(3, d, seed=seed + i, precision="double")
        block_err.append(graph_grad_error(block, rng))
    detail = f"{instances} instances"
    return [
        Check("grad.conv_backward", max(conv_err) < GRAD_TOL, max(conv_err), GRAD_TOL, detail),
        Check("grad.prelu_backward", max(prelu_err) < GRAD_TOL, max(prelu_err), GRAD_TOL, detail),
        Check("grad.batchnorm_backward_frozen", max(bn_err) < GRAD_TOL, max(bn_err), GRAD_TOL, detail),
        Check("grad.c3_block_graph", max(block_err) < GRAD_TOL, max(block_err), GRAD_TOL, detail),
    ]


# ---------------------------------------------------------------------------
# separable factorization


def factorization_error(k: int, rng, channels: int = 3, hw: int = 40) -> float:
    """Max deviation between a rank-1 ``k x k`` depth-wise convolution and the
    ``1 x k`` then ``k x 1`` pair built from its factors."""
    row = rng.standard_normal((channels, k))
    col = rng.standard_normal((channels, k))
    full = np.einsum("cm,cn->cmn", col, row)[:, None]
    F = rng.standard_normal((1, channels, hw, hw))
    p = (k - 1) // 2
    direct = conv_forward(F, full, depthwise_spec(channels, k, k))
    row_spec = ConvSpec(channels, channels, 1, k, pad_h=0, pad_w=p, groups=channels)
    col_spec = ConvSpec(channels, channels, k, 1, pad_h=p, pad_w=0, groups=channels)
    seq = conv_forward(conv_forward(F, row[:, None, None, :], row_spec), col[:, None, :, None], col_spec)
    return float(np.max(np.abs(direct - seq)))


def factorization_suite(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    for k in FACTOR_KERNELS:
        err = factorization_error(k, rng)
        out.append(Check(f"factorization.k{k}", err < FACTOR_TOL, err, FACTOR_TOL))
    return out


# ---------------------------------------------------------------------------
# module cost table


def cost_table_suite(seed: int = 0) -> list[Check]:
    c3 = analyzer.count_flops(build_c3_module(128), (128, 128), "paper")
    esp = analyzer.count_flops(build_esp_module(128), (128, 128), "paper")
    r3, re = c3.rows(), esp.rows()
    fm = analyzer.format_mflops

    def row(name, got, want):
        return Check(name, got == want, str(got), str(want))

    ratio = c3.total_flops / esp.total_flops
    return [
        row("costs.c3.A", (r3["A"][0], fm(r3["A"][1])), (4096, "134.2")),
        row("costs.c3.B", (r3["B"][0], fm(r3["B"][1])), (9472, "299.9")),
        row("costs.c3.D", fm(r3["D"][1]), "0.016"),
        row("costs.c3.total", (c3.total_params, fm(c3.total_flops, 2)), (13568, "434.13")),
        row("costs.esp.A", (re["A"][0], fm(re["A"][1])), (3200, "104.9")),
        row("costs.esp.B", (re["B"][0], fm(re["B"][1])), (28800, "943.7")),
        row("costs.esp.C", fm(re["C"][1]), "0.066"),
        row("costs.esp.D", fm(re["D"][1]), "0.016"),
        row("costs.esp.total_params", esp.total_params, 32000),
        Check("costs.flops_ratio_c3_over_esp", 0.40 <= ratio <= 0.43, f"{ratio:.4f}", "[0.40, 0.43]"),
    ]


SUITES: dict[str, Callable[..., list[Check]]] = {
    "oracle": oracle_suite,
    "grad": grad_suite,
    "factorization": factorization_suite,
    "costs": cost_table_suite,
}


def run_suites(name: str, seed: int = 0) -> list[Check]:
    if name == "all":
        return [c for suite in SUITES.values() for c in suite(seed=seed)]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {sorted(SUITES)} or 'all'")
    return SUITES[name](seed=seed)


# ---------------------------------------------------------------------------
# receptive-field oracle


def impulse_support(g: BlockGraph, exclude_stage: str | None = None) -> analyzer.ReceptiveField:
    """Measure the receptive field by backpropagating a unit impulse.

    All convolution weights are set to one (nodes in ``exclude_stage`` get a
    centre-tap delta instead), batch norms to identity and the input to ones,
    so every activation is positive and no contributions cancel. The support
    of the input gradient of the centre output pixel is the receptive field.
    The input is sized from the summed spans of every convolution, an upper
    bound on any path, so no tap can fall into the padding.
    """
    params = {}
    span_h = span_w = 0
    for node in g.nodes:
        if node.kind in CONV_KINDS:
            w = np.zeros(node.spec.weight_shape)
            if node.stage is not None and node.stage == exclude_stage:
                w[:, :, node.spec.kernel_h // 2, node.spec.kernel_w // 2] = 1.0
            else:
                w[...] = 1.0
            params[node.id] = w
            span_h += node.spec.dilation * (node.spec.kernel_h - 1)
            span_w += node.spec.dilation * (node.spec.kernel_w - 1)
        elif node.kind == BATCHNORM:
            params[node.id] = BatchNormParams.identity(node.channels, np.float64)
        elif node.kind == PRELU:
            params[node.id] = PReLUParams.constant(node.channels, 0.25, np.float64)
    g = BlockGraph(list(g.nodes), params, "double")
    h, w = 2 * span_h + 3, 2 * span_w + 3
    x = np.ones((1, g.in_channels, h, w))
    out = graph_forward(g, x)
    dO = np.zeros_like(out)
    dO[:, :, h // 2, w // 2] = 1.0
    dx, _ = graph_backward(g, x, dO)
    rows, cols = np.nonzero(np.abs(dx).sum(axis=(0, 1)) > 0)
    return analyzer.ReceptiveField(int(rows.max() - rows.min() + 1), int(cols.max() - cols.min() + 1))


def impulse_support_without_concentration(g: BlockGraph) -> analyzer.ReceptiveField:
    return impulse_support(g, exclude_stage=CONCENTRATION)
