"""Dense N x C x H x W tensors backed by numpy arrays.

A "tensor" here is just a C-contiguous rank-4 ``numpy.ndarray`` of dtype
float32 ("single") or float64 ("double"). The helpers below validate that
contract and provide the handful of operations the blocks need.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

PRECISIONS = {"single": np.float32, "double": np.float64}


class Shape(NamedTuple):
    n: int
    c: int
    h: int
    w: int

    @property
    def size(self) -> int:
        return self.n * self.c * self.h * self.w


def dtype_of(precision) -> np.dtype:
    """Map ``"single"``/``"double"`` (or a numpy dtype) to a numpy dtype."""
    if isinstance(precision, str):
        try:
            return np.dtype(PRECISIONS[precision])
        except KeyError:
            raise ValueError(f"unknown precision {precision!r}") from None
    dt = np.dtype(precision)
    if dt not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dt}")
    return dt


def precision_of(x: np.ndarray) -> str:
    return "double" if x.dtype == np.float64 else "single"


def as_shape(shape: Sequence[int]) -> Shape:
    if len(shape) != 4:
        raise ValueError(f"expected 4 extents (n, c, h, w), got {tuple(shape)}")
    s = Shape(*(int(v) for v in shape))
    if min(s) < 1:
        raise ValueError(f"all extents must be >= 1, got {tuple(s)}")
    # Python ints do not overflow, so compare against the platform index range.
    if s.size > np.iinfo(np.intp).max:
        raise OverflowError(f"element count {s.size} exceeds the index range")
    return s


def check_tensor(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ValueError(f"{name} must be a rank-4 array, got {getattr(x, 'shape', type(x))}")
    if x.dtype not in (np.float32, np.float64):
        raise ValueError(f"{name} has unsupported dtype {x.dtype}")
    return x


def zeros(shape: Sequence[int], precision="single") -> np.ndarray:
    s = as_shape(shape)
    return np.zeros(s, dtype=dtype_of(precision))


def random_init(shape: Sequence[int], seed: int, fan_in: int, precision="single") -> np.ndarray:
    """Uniform samples in ``[-sqrt(1/fan_in), sqrt(1/fan_in)]``.

    The buffer is a pure function of ``(shape, seed, fan_in, precision)``:
    samples are always drawn in float64 and then cast.
    """
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    s = as_shape(shape)
    bound = np.sqrt(1.0 / fan_in)
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=s).astype(dtype_of(precision))


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    check_tensor(a, "a")
    check_tensor(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ValueError(f"precision mismatch: {a.dtype} vs {b.dtype}")
    return a + b


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    if len(parts) == 0:
        raise ValueError("concat_channels needs at least one part")
    first = check_tensor(parts[0], "parts[0]")
    for i, p in enumerate(parts[1:], 1):
        check_tensor(p, f"parts[{i}]")
        if (p.shape[0], p.shape[2], p.shape[3]) != (first.shape[0], first.shape[2], first.shape[3]):
            raise ValueError(f"parts[{i}] shape {p.shape} disagrees with {first.shape} on n/h/w")
        if p.dtype != first.dtype:
            raise ValueError(f"parts[{i}] precision {p.dtype} disagrees with {first.dtype}")
    return np.concatenate(parts, axis=1)


def slice_channels(x: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Copy of channels ``start:stop``; inverse of :func:`concat_channels`."""
    check_tensor(x)
    if not 0 <= start < stop <= x.shape[1]:
        raise ValueError(f"bad channel range [{start}, {stop}) for {x.shape[1]} channels")
    return np.ascontiguousarray(x[:, start:stop])


def split_channels(x: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    if sum(sizes) != x.shape[1]:
        raise ValueError(f"sizes {list(sizes)} do not sum to {x.shape[1]} channels")
    out, start = [], 0
    for s in sizes:
        out.append(slice_channels(x, start, start + s))
        start += s
    return out
