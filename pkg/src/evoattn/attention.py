"""Trainable spatial attention gate over H x W x C feature maps.

The forward pass pools channels down to mean and max maps, stacks them,
convolves with a learned k x k x 2 kernel plus bias, squashes through a
sigmoid into a per-position attention map, then scales the input by that
map. The backward pass returns exact analytic gradients for the input and
both parameters, with the max-pool path routing gradient only into the
argmax channel of each position (ties go to the lowest channel index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .tensor import (
    Tensor,
    _conv2d_same_backward,
    channel_max,
    channel_mean,
    concat_channels,
    conv2d_same,
    gate_broadcast,
    sigmoid_map,
)


@dataclass(frozen=True)
class SpatialAttention:
    """Gate parameters: a k x k x 2 convolution kernel and a scalar bias."""

    kernel: Tensor
    bias: float = 0.0

    def __post_init__(self):
        if self.kernel.rank != 3 or self.kernel.shape[2] != 2:
            raise ShapeError(f"kernel must be k x k x 2, got {self.kernel.shape}")
        k = self.kernel.shape[0]
        if self.kernel.shape[1] != k:
            raise ShapeError(f"kernel must be square, got {self.kernel.shape[:2]}")
        if k % 2 == 0:
            raise ParameterError(f"kernel size must be odd, got {k}")
        if not math.isfinite(self.bias):
            raise ParameterError("bias must be finite")

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[0]


@dataclass(frozen=True)
class AttentionCache:
    """Forward intermediates kept for the backward pass."""

    x: Tensor
    a_avg: Tensor
    a_max: Tensor
    logits: Tensor
    amap: Tensor


def attention_init(kernel_size: int, rng: np.random.Generator) -> SpatialAttention:
    """Fresh layer with kernel entries uniform in [-s, s], s = sqrt(6 / (2k^2 + 1))."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ParameterError(f"kernel size must be odd and >= 1, got {kernel_size}")
    scale = math.sqrt(6.0 / (kernel_size * kernel_size * 2 + 1))
    kernel = rng.uniform(-scale, scale, size=(kernel_size, kernel_size, 2))
    return SpatialAttention(kernel=Tensor.from_array(kernel), bias=0.0)


# The sigmoid saturates to exactly 0.0 or 1.0 in float32 once |logit| is
# large; the map must stay strictly inside (0, 1), so saturated values are
# pinned to the nearest interior float32 (at most one ulp of distortion).
_MAP_FLOOR = np.float32(np.finfo(np.float32).tiny)
_MAP_CEIL = np.nextafter(np.float32(1.0), np.float32(0.0))


def attention_forward(layer: SpatialAttention, x: Tensor):
    """Apply the gate to x; returns (gated, attention map, cache)."""
    a_avg = channel_mean(x)
    a_max = channel_max(x)
    stacked = concat_channels(a_avg, a_max)
    logits = conv2d_same(stacked, layer.kernel, layer.bias)
    amap = sigmoid_map(logits)
    amap = Tensor.from_array(np.clip(amap.array, _MAP_FLOOR, _MAP_CEIL))
    gated = gate_broadcast(x, amap)
    cache = AttentionCache(x=x, a_avg=a_avg, a_max=a_max, logits=logits, amap=amap)
    return gated, amap, cache


def attention_backward(layer: SpatialAttention, cache: AttentionCache, d_gated: Tensor):
    """Analytic gradients of the forward map.

    Returns (d_x, d_kernel, d_bias) for an upstream gradient d_gated on the
    gated output. d_x combines the direct gating path with the mean-pool and
    max-pool paths through the attention map.
    """
    if d_gated.shape != cache.x.shape:
        raise ShapeError(f"upstream gradient shape {d_gated.shape} != input shape {cache.x.shape}")
    x = cache.x.array
    m = cache.amap.array[:, :, 0].astype(np.float64)
    dy = d_gated.array.astype(np.float64)

    d_x_direct = dy * m[:, :, None]
    d_map = (dy * x).sum(axis=2)
    d_logits = d_map * m * (1.0 - m)

    stacked = np.concatenate([cache.a_avg.array, cache.a_max.array], axis=2)
    k64 = layer.kernel.array.astype(np.float64)
    d_kernel, d_bias, d_stacked = _conv2d_same_backward(stacked, k64, d_logits)

    c = x.shape[2]
    d_avg = d_stacked[:, :, 0]
    d_max = d_stacked[:, :, 1]
    d_x_pool = np.broadcast_to((d_avg / c)[:, :, None], x.shape).copy()
    argmax = np.argmax(x, axis=2)[:, :, None]  # ties: lowest channel index
    np.put_along_axis(
        d_x_pool, argmax,
        np.take_along_axis(d_x_pool, argmax, axis=2) + d_max[:, :, None],
        axis=2,
    )

    d_x = Tensor.from_array(d_x_direct + d_x_pool)
    return d_x, Tensor.from_array(d_kernel), float(d_bias)
