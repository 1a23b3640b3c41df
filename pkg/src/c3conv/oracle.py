"""Reference convolution written as plain nested loops.

Shares nothing with :mod:`c3conv.conv` beyond the ``ConvSpec`` record. The
loops are compiled with numba so that large-kernel checks stay fast; the
arithmetic is the textbook definition, accumulated in float64.
"""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _conv_loops(F, K, out, dil, stride, pad_h, pad_w, groups):
    nb, ci, hi, wi = F.shape
    co, cig, kh, kw = K.shape
    _, _, ho, wo = out.shape
    cog = co // groups
    for b in range(nb):
        for oc in range(co):
            grp = oc // cog
            for y in range(ho):
                for x in range(wo):
                    acc = 0.0
                    for icl in range(cig):
                        ic = grp * cig + icl
                        for m in range(kh):
                            iy = y * stride + m * dil - pad_h
                            if iy < 0 or iy >= hi:
                                continue
                            for n in range(kw):
                                ix = x * stride + n * dil - pad_w
                                if ix < 0 or ix >= wi:
                                    continue
                                acc += F[b, ic, iy, ix] * K[oc, icl, m, n]
                    out[b, oc, y, x] = acc


def conv_oracle(F: np.ndarray, K: np.ndarray, spec) -> np.ndarray:
    if F.ndim != 4 or K.ndim != 4:
        raise ValueError("input and kernel must be rank 4")
    if F.shape[1] != spec.in_channels:
        raise ValueError(f"input has {F.shape[1]} channels, spec expects {spec.in_channels}")
    if K.shape != spec.weight_shape:
        raise ValueError(f"kernel shape {K.shape} does not match spec {spec.weight_shape}")
    ho, wo = spec.output_hw(F.shape[2], F.shape[3])
    out = np.zeros((F.shape[0], spec.out_channels, ho, wo), dtype=np.float64)
    _conv_loops(
        np.ascontiguousarray(F, dtype=np.float64),
        np.ascontiguousarray(K, dtype=np.float64),
        out,
        spec.dilation,
        spec.stride,
        spec.pad_h,
        spec.pad_w,
        spec.groups,
    )
    return out.astype(F.dtype)
