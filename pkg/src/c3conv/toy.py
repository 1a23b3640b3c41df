"""A small end-to-end training demo on synthetic rectangle segmentation.

The network is a point-wise stem, two C3 modules and a point-wise two-class
head, trained by plain full-batch gradient descent on per-pixel softmax
cross-entropy. Batch norms stay frozen, so each step is a pure function of
the parameters and the run is bit-reproducible for a fixed seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import GraphBuilder
from .conv import BatchNormParams, PReLUParams
from .graph import BlockGraph, graph_backward, graph_forward
from .tensor import dtype_of

DEFAULT_STEPS = 200
DEFAULT_LR = 0.1
TOY_CHANNELS = 16
TOY_RATES = (2, 3)


def make_rectangles(count: int, size: int = 32, seed: int = 0, noise: float = 0.3, precision="single"):
    """Images with 1-3 bright axis-aligned rectangles on a dark background.

    Returns ``(images, labels)`` with images ``(count, 1, size, size)`` and
    integer labels ``(count, size, size)`` (1 inside any rectangle).
    """
    rng = np.random.default_rng(seed)
    labels = np.zeros((count, size, size), dtype=np.int64)
    for i in range(count):
        for _ in range(rng.integers(1, 4)):
            h, w = rng.integers(size // 6, size // 2, size=2)
            y, x = rng.integers(0, size - h), rng.integers(0, size - w)
            labels[i, y : y + h, x : x + w] = 1
    images = labels[:, None].astype(np.float64) + noise * rng.standard_normal((count, 1, size, size))
    return images.astype(dtype_of(precision)), labels


def build_toy_net(seed: int = 0, precision="single", channels: int = TOY_CHANNELS) -> BlockGraph:
    b = GraphBuilder(1, seed=seed, precision=precision)
    x = b.pointwise("stem", "input", 1, channels)
    x = b.c3_module(x, channels, TOY_RATES, prefix="m1/")
    x = b.c3_module(x, channels, TOY_RATES, prefix="m2/")
    x = b.pointwise("head", x, channels, 2)
    return b.build(x)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean per-pixel loss over two (or more) classes and its logit gradient."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    count = labels.size
    picked = np.take_along_axis(logp, labels[:, None], axis=1)
    loss = -picked.sum() / count
    grad = np.exp(logp)
    np.put_along_axis(grad, labels[:, None], np.take_along_axis(grad, labels[:, None], axis=1) - 1, axis=1)
    return float(loss), (grad / count).astype(logits.dtype)


def sgd_step(g: BlockGraph, params: dict, grads: dict, lr: float) -> dict:
    new = dict(params)
    for nid, gr in grads.items():
        p = params[nid]
        if "weight" in gr:
            new[nid] = p - lr * gr["weight"]
        elif "gamma" in gr:
            new[nid] = BatchNormParams(
                p.gamma - lr * gr["gamma"], p.beta - lr * gr["beta"], p.running_mean, p.running_var, p.eps, p.momentum
            )
        elif "slope" in gr:
            new[nid] = PReLUParams(p.slope - lr * gr["slope"])
    return new


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def initial(self) -> float:
        return self.losses[0]

    @property
    def final(self) -> float:
        return self.losses[-1]


def train_toy(
    steps: int = DEFAULT_STEPS,
    seed: int = 0,
    lr: float = DEFAULT_LR,
    precision="single",
    images: int = 8,
    callback=None,
) -> TrainResult:
    """Train the toy net; ``losses[i]`` is the loss before update ``i``, and
    the last entry is the loss after the final update."""
    x, y = make_rectangles(images, seed=seed, precision=precision)
    g = build_toy_net(seed, precision)
    params = g.params
    result = TrainResult()
    for step in range(steps + 1):
        logits = graph_forward(g, x, params)
        loss, dlogits = softmax_cross_entropy(logits, y)
        if not np.isfinite(loss):
            raise FloatingPointError(f"loss overflowed at step {step}")
        result.losses.append(loss)
        if callback is not None:
            callback(step, loss)
        if step == steps:
            break
        _, grads = graph_backward(g, x, dlogits, params)
        params = sgd_step(g, params, grads, lr)
    result.params = params
    return result
