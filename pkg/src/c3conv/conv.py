"""Convolution primitives, batch normalization and PReLU, with backward passes.

All convolutions are bias-free cross-correlations over N x C x H x W inputs
with zero padding. The forward pass accumulates one kernel tap at a time
(a shifted view of the padded input times a ``(C_o/g, C_i/g)`` matrix), which
keeps dilation cheap: a dilated tap is just a different shift.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import check_tensor


@dataclass(frozen=True)
class ConvSpec:
    """Static description of one convolution.

    ``pad_h``/``pad_w`` default to "same" padding, ``dilation * (k - 1) // 2``
    per side, which preserves the spatial extent for odd kernels at stride 1.
    """

    in_channels: int
    out_channels: int
    kernel_h: int = 3
    kernel_w: int = 3
    dilation: int = 1
    stride: int = 1
    pad_h: int | None = None
    pad_w: int | None = None
    groups: int = 1

    def __post_init__(self):
        if self.pad_h is None:
            object.__setattr__(self, "pad_h", self.dilation * (self.kernel_h - 1) // 2)
        if self.pad_w is None:
            object.__setattr__(self, "pad_w", self.dilation * (self.kernel_w - 1) // 2)
        if min(self.in_channels, self.out_channels, self.groups) < 1:
            raise ValueError(f"channels and groups must be >= 1: {self}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}"
            )
        if min(self.kernel_h, self.kernel_w, self.dilation, self.stride) < 1:
            raise ValueError(f"kernel extents, dilation and stride must be >= 1: {self}")
        if self.pad_h < 0 or self.pad_w < 0:
            raise ValueError(f"padding must be >= 0: {self}")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel_h, self.kernel_w)

    @property
    def fan_in(self) -> int:
        return self.in_channels // self.groups * self.kernel_h * self.kernel_w

    @property
    def num_params(self) -> int:
        return self.kernel_h * self.kernel_w * self.in_channels * self.out_channels // self.groups

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        ho = (h + 2 * self.pad_h - self.dilation * (self.kernel_h - 1) - 1) // self.stride + 1
        wo = (w + 2 * self.pad_w - self.dilation * (self.kernel_w - 1) - 1) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"non-positive output extent {ho}x{wo} for input {h}x{w} and {self}")
        return ho, wo


def _check_conv_args(F: np.ndarray, K: np.ndarray, spec: ConvSpec) -> tuple[int, int]:
    check_tensor(F, "input")
    check_tensor(K, "kernel")
    if F.shape[1] != spec.in_channels:
        raise ValueError(f"input has {F.shape[1]} channels, spec expects {spec.in_channels}")
    if K.shape != spec.weight_shape:
        raise ValueError(f"kernel shape {K.shape} does not match spec {spec.weight_shape}")
    if K.dtype != F.dtype:
        raise ValueError(f"kernel dtype {K.dtype} differs from input dtype {F.dtype}")
    return spec.output_hw(F.shape[2], F.shape[3])


def _pad(F: np.ndarray, spec: ConvSpec) -> np.ndarray:
    if spec.pad_h == 0 and spec.pad_w == 0:
        return F
    return np.pad(F, ((0, 0), (0, 0), (spec.pad_h, spec.pad_h), (spec.pad_w, spec.pad_w)))


def _tap_slices(spec: ConvSpec, m: int, n: int, ho: int, wo: int):
    s, d = spec.stride, spec.dilation
    return (
        slice(m * d, m * d + (ho - 1) * s + 1, s),
        slice(n * d, n * d + (wo - 1) * s + 1, s),
    )


def conv_forward(F: np.ndarray, K: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Grouped, dilated, zero-padded convolution. Returns ``(N, C_o, H_o, W_o)``."""
    ho, wo = _check_conv_args(F, K, spec)
    nb, g = F.shape[0], spec.groups
    cig, cog = spec.in_channels // g, spec.out_channels // g
    xp = _pad(F, spec).reshape(nb, g, cig, F.shape[2] + 2 * spec.pad_h, F.shape[3] + 2 * spec.pad_w)
    Kg = K.reshape(g, cog, cig, spec.kernel_h, spec.kernel_w)
    out = np.zeros((nb, g, cog, ho, wo), dtype=F.dtype)
    depthwise = cig == 1 and cog == 1
    for m in range(spec.kernel_h):
        for n in range(spec.kernel_w):
            sh, sw = _tap_slices(spec, m, n, ho, wo)
            patch = xp[:, :, :, sh, sw]
            if depthwise:
                out += patch * Kg[None, :, :, 0, m, n, None, None]
            else:
                out += np.matmul(Kg[None, :, :, :, m, n], patch.reshape(nb, g, cig, ho * wo)).reshape(
                    nb, g, cog, ho, wo
                )
    return out.reshape(nb, spec.out_channels, ho, wo)


def conv_backward(F: np.ndarray, K: np.ndarray, spec: ConvSpec, dO: np.ndarray):
    """Gradients ``(dF, dK)`` of ``sum(dO * conv_forward(F, K, spec))``."""
    ho, wo = _check_conv_args(F, K, spec)
    nb, g = F.shape[0], spec.groups
    cig, cog = spec.in_channels // g, spec.out_channels // g
    if dO.shape != (nb, spec.out_channels, ho, wo):
        raise ValueError(f"dO shape {dO.shape} does not match output {(nb, spec.out_channels, ho, wo)}")
    hp, wp = F.shape[2] + 2 * spec.pad_h, F.shape[3] + 2 * spec.pad_w
    xp = _pad(F, spec).reshape(nb, g, cig, hp, wp)
    Kg = K.reshape(g, cog, cig, spec.kernel_h, spec.kernel_w)
    dOg = dO.reshape(nb, g, cog, ho * wo)
    dxp = np.zeros((nb, g, cig, hp, wp), dtype=F.dtype)
    dK = np.zeros_like(Kg)
    for m in range(spec.kernel_h):
        for n in range(spec.kernel_w):
            sh, sw = _tap_slices(spec, m, n, ho, wo)
            patch = xp[:, :, :, sh, sw].reshape(nb, g, cig, ho * wo)
            tap = Kg[:, :, :, m, n]
            # (n,g,cig,hw) <- (g,cig,cog) @ (n,g,cog,hw)
            dxp[:, :, :, sh, sw] += np.matmul(tap.transpose(0, 2, 1)[None], dOg).reshape(nb, g, cig, ho, wo)
            dK[:, :, :, m, n] = np.einsum("ngoh,ngih->goi", dOg, patch)
    dxp = dxp.reshape(nb, spec.in_channels, hp, wp)
    dF = dxp[:, :, spec.pad_h : hp - spec.pad_h, spec.pad_w : wp - spec.pad_w]
    return np.ascontiguousarray(dF), dK.reshape(K.shape)


def depthwise_spec(channels: int, kernel_h: int, kernel_w: int, dilation: int = 1) -> ConvSpec:
    return ConvSpec(channels, channels, kernel_h, kernel_w, dilation=dilation, groups=channels)


def pointwise_spec(in_channels: int, out_channels: int) -> ConvSpec:
    return ConvSpec(in_channels, out_channels, 1, 1)


def depthwise_dilated_forward(F: np.ndarray, K_d: np.ndarray, d: int) -> np.ndarray:
    """Per-channel dilated convolution with same padding; ``K_d`` is ``(C, 1, M, N)``."""
    check_tensor(K_d, "kernel")
    if K_d.shape[1] != 1:
        raise ValueError(f"depthwise kernel must have shape (C, 1, M, N), got {K_d.shape}")
    spec = depthwise_spec(K_d.shape[0], K_d.shape[2], K_d.shape[3], d)
    return conv_forward(F, K_d, spec)


def pointwise_forward(F: np.ndarray, K_p: np.ndarray) -> np.ndarray:
    """1x1 channel mixing; ``K_p`` may be ``(C_o, C_i)`` or ``(C_o, C_i, 1, 1)``."""
    if K_p.ndim == 2:
        K_p = K_p[:, :, None, None]
    if K_p.shape[2:] != (1, 1):
        raise ValueError(f"pointwise kernel must be 1x1, got {K_p.shape}")
    return conv_forward(F, K_p, pointwise_spec(K_p.shape[1], K_p.shape[0]))


# ---------------------------------------------------------------------------
# Batch normalization


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        c = len(self.gamma)
        if not (len(self.beta) == len(self.running_mean) == len(self.running_var) == c):
            raise ValueError("batch-norm vectors must share one length")
        if np.any(np.asarray(self.running_var) < 0):
            raise ValueError("running_var must be non-negative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @classmethod
    def identity(cls, channels: int, dtype=np.float32, **kw) -> "BatchNormParams":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
            **kw,
        )

    @property
    def channels(self) -> int:
        return len(self.gamma)


def _per_channel(v: np.ndarray, dtype) -> np.ndarray:
    return np.asarray(v, dtype=dtype)[None, :, None, None]


def _check_len(F: np.ndarray, c: int, what: str):
    check_tensor(F)
    if F.shape[1] != c:
        raise ValueError(f"{what} has length {c}, input has {F.shape[1]} channels")


def batchnorm_forward(F: np.ndarray, params: BatchNormParams, mode: str = "frozen") -> np.ndarray:
    """Frozen mode uses running statistics; train mode uses batch statistics
    and updates ``params.running_mean``/``running_var`` in place."""
    _check_len(F, params.channels, "batch-norm params")
    dt = F.dtype
    if mode == "frozen":
        mean, var = params.running_mean, params.running_var
    elif mode == "train":
        mean = F.mean(axis=(0, 2, 3), dtype=np.float64)
        var = F.var(axis=(0, 2, 3), dtype=np.float64)
        count = F.shape[0] * F.shape[2] * F.shape[3]
        unbiased = var * count / (count - 1) if count > 1 else var
        mom = params.momentum
        params.running_mean[...] = (1 - mom) * params.running_mean + mom * mean
        params.running_var[...] = (1 - mom) * params.running_var + mom * unbiased
    else:
        raise ValueError(f"unknown batch-norm mode {mode!r}")
    scale = np.asarray(params.gamma, np.float64) / np.sqrt(np.asarray(var, np.float64) + params.eps)
    shift = np.asarray(params.beta, np.float64) - np.asarray(mean, np.float64) * scale
    return F * _per_channel(scale, dt) + _per_channel(shift, dt)


def batchnorm_backward_frozen(dO: np.ndarray, params: BatchNormParams) -> np.ndarray:
    _check_len(dO, params.channels, "batch-norm params")
    scale = np.asarray(params.gamma, np.float64) / np.sqrt(np.asarray(params.running_var, np.float64) + params.eps)
    return dO * _per_channel(scale, dO.dtype)


def batchnorm_param_grads(F: np.ndarray, dO: np.ndarray, params: BatchNormParams):
    """``(dgamma, dbeta)`` for frozen-mode batch norm."""
    _check_len(F, params.channels, "batch-norm params")
    inv_std = 1.0 / np.sqrt(np.asarray(params.running_var, np.float64) + params.eps)
    xhat = (F - _per_channel(params.running_mean, F.dtype)) * _per_channel(inv_std, F.dtype)
    dgamma = (dO * xhat).sum(axis=(0, 2, 3))
    dbeta = dO.sum(axis=(0, 2, 3))
    return dgamma.astype(F.dtype), dbeta.astype(F.dtype)


# ---------------------------------------------------------------------------
# PReLU


@dataclass
class PReLUParams:
    slope: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if not np.all(np.isfinite(self.slope)):
            raise ValueError("PReLU slopes must be finite")

    @classmethod
    def constant(cls, channels: int, value: float = 0.25, dtype=np.float32) -> "PReLUParams":
        return cls(np.full(channels, value, dtype))

    @property
    def channels(self) -> int:
        return len(self.slope)


def prelu_forward(F: np.ndarray, params: PReLUParams) -> np.ndarray:
    _check_len(F, params.channels, "PReLU slope")
    return np.where(F > 0, F, F * _per_channel(params.slope, F.dtype))


def prelu_backward(F: np.ndarray, params: PReLUParams, dO: np.ndarray):
    """``(dF, dSlope)``; at ``F == 0`` the positive branch (derivative 1) is used."""
    _check_len(F, params.channels, "PReLU slope")
    if dO.shape != F.shape:
        raise ValueError(f"dO shape {dO.shape} does not match input {F.shape}")
    pos = F >= 0
    dF = np.where(pos, dO, dO * _per_channel(params.slope, F.dtype))
    dslope = np.where(pos, 0, dO * F).sum(axis=(0, 2, 3)).astype(F.dtype)
    return dF, dslope
