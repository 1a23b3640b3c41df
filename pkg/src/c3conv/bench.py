"""Wall-clock timing of block forward passes next to their analyzer FLOPs."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

from . import blocks
from .analyzer import count_flops
from .graph import BlockGraph, graph_forward
from .tensor import random_init

BLOCKS = ("c3", "rc3", "ds", "esp_module", "c3_module", "std_dilated")


def build_block(kind: str, channels: int, dilation: int = 2, seed: int = 0, precision="single") -> BlockGraph:
    kw = dict(seed=seed, precision=precision)
    if kind == "c3":
        return blocks.build_c3_block(channels, dilation, **kw)
    if kind == "rc3":
        return blocks.build_rc3_block(channels, dilation, **kw)
    if kind == "ds":
        return blocks.build_ds_dilate_block(channels, dilation, **kw)
    if kind == "std_dilated":
        return blocks.build_dilated_conv(channels, dilation, **kw)
    if kind == "esp_module":
        return blocks.build_esp_module(channels, **kw)
    if kind == "c3_module":
        return blocks.build_c3_module(channels, **kw)
    raise ValueError(f"unknown block {kind!r}; expected one of {BLOCKS}")


@dataclass
class BenchResult:
    block: str
    input_shape: tuple[int, int, int, int]
    reps: int
    min_s: float
    median_s: float
    flops: int

    def line(self) -> str:
        shape = "x".join(map(str, self.input_shape))
        return (
            f"{self.block:<12} input={shape}  reps={self.reps}  "
            f"min={self.min_s * 1e3:.2f}ms  median={self.median_s * 1e3:.2f}ms  flops={self.flops:,}"
        )


def run_bench(
    kind: str, channels: int, hw: tuple[int, int], reps: int = 3, dilation: int = 2, seed: int = 0, precision="single"
) -> BenchResult:
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    if min(hw) < 1 or channels < 1:
        raise ValueError(f"invalid shape: channels={channels}, hw={hw}")
    g = build_block(kind, channels, dilation, seed, precision)
    shape = (1, channels, *hw)
    x = random_init(shape, seed, 1, precision)
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        graph_forward(g, x)
        times.append(time.perf_counter() - t0)
    flops = count_flops(g, hw, "paper").total_flops
    return BenchResult(kind, shape, reps, min(times), statistics.median(times), flops)
