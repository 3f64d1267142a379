"""Dense rank-1..3 float32 tensors and the numeric primitives built on them.

Values are stored row-major with the last index varying fastest, so an
H x W x C feature map keeps the channels of one spatial position contiguous.
Reductions accumulate in float64 before rounding back to float32.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ParameterError, ShapeError

_MAX_RANK = 3


class Tensor:
    """Immutable dense array of finite float32 values with explicit shape."""

    __slots__ = ("_array",)

    def __init__(self, shape, data):
        shape = tuple(int(d) for d in shape)
        if not 1 <= len(shape) <= _MAX_RANK:
            raise ShapeError(f"rank must be between 1 and {_MAX_RANK}, got {len(shape)}")
        if any(d < 1 for d in shape):
            raise ShapeError(f"all dimensions must be >= 1, got {shape}")
        arr = np.array(data, dtype=np.float32).reshape(-1)
        expected = int(np.prod(shape))
        if arr.size != expected:
            raise ShapeError(f"shape {shape} needs {expected} values, got {arr.size}")
        if not np.isfinite(arr).all():
            raise NumericError("tensor values must be finite")
        arr = arr.reshape(shape)
        arr.flags.writeable = False
        self._array = arr

    @classmethod
    def from_array(cls, array) -> "Tensor":
        array = np.asarray(array)
        return cls(array.shape, array.reshape(-1))

    @property
    def array(self) -> np.ndarray:
        """Read-only float32 view of the values."""
        return self._array

    @property
    def shape(self) -> tuple[int, ...]:
        return self._array.shape

    @property
    def rank(self) -> int:
        return self._array.ndim

    @property
    def size(self) -> int:
        return self._array.size

    def tolist(self):
        return self._array.tolist()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def _require_rank(x: Tensor, rank: int, name: str = "input") -> None:
    if x.rank != rank:
        raise ShapeError(f"{name} must have rank {rank}, got rank {x.rank}")


def channel_mean(x: Tensor) -> Tensor:
    """Mean over the channel axis: H x W x C -> H x W x 1."""
    _require_rank(x, 3)
    out = x.array.mean(axis=2, keepdims=True, dtype=np.float64)
    return Tensor.from_array(out)


def channel_max(x: Tensor) -> Tensor:
    """Maximum over the channel axis: H x W x C -> H x W x 1."""
    _require_rank(x, 3)
    return Tensor.from_array(x.array.max(axis=2, keepdims=True))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack two single-channel maps into an H x W x 2 tensor."""
    _require_rank(a, 3, "first input")
    _require_rank(b, 3, "second input")
    if a.shape[2] != 1 or b.shape[2] != 1:
        raise ShapeError("inputs must be single-channel maps")
    if a.shape[:2] != b.shape[:2]:
        raise ShapeError(f"spatial dims differ: {a.shape[:2]} vs {b.shape[:2]}")
    return Tensor.from_array(np.concatenate([a.array, b.array], axis=2))


def conv2d_same(x: Tensor, kernel: Tensor, bias: float) -> Tensor:
    """Stride-1 zero-padded correlation summed over channels: output H x W x 1.

    The kernel must be square with odd side k and the same channel count as
    the input; padding of (k-1)/2 keeps the output co-indexed with the input.
    """
    _require_rank(x, 3)
    _require_rank(kernel, 3, "kernel")
    k = kernel.shape[0]
    if kernel.shape[1] != k:
        raise ShapeError(f"kernel must be square, got {kernel.shape[:2]}")
    if k % 2 == 0:
        raise ParameterError(f"kernel size must be odd, got {k}")
    if kernel.shape[2] != x.shape[2]:
        raise ShapeError(f"kernel channels {kernel.shape[2]} != input channels {x.shape[2]}")
    h, w, _ = x.shape
    if k > 2 * min(h, w) - 1:
        raise ShapeError(f"kernel size {k} too large for {h}x{w} input")
    out = _conv2d_same_raw(x.array, kernel.array.astype(np.float64), float(bias))
    return Tensor.from_array(out[:, :, None])


def _conv2d_same_raw(xa: np.ndarray, k64: np.ndarray, bias: float) -> np.ndarray:
    k = k64.shape[0]
    p = (k - 1) // 2
    xp = np.pad(xa.astype(np.float64), ((p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(0, 1))  # (H, W, C, k, k)
    return np.tensordot(win, k64, axes=([2, 3, 4], [2, 0, 1])) + bias


def _conv2d_same_backward(xa: np.ndarray, k64: np.ndarray, d_out: np.ndarray):
    """Gradients of _conv2d_same_raw w.r.t. kernel, bias and input."""
    k = k64.shape[0]
    p = (k - 1) // 2
    h, w, c = xa.shape
    xp = np.pad(xa.astype(np.float64), ((p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(0, 1))
    d_kernel = np.tensordot(d_out, win, axes=([0, 1], [0, 1]))  # (C, k, k)
    d_kernel = np.transpose(d_kernel, (1, 2, 0))
    d_bias = float(d_out.sum())
    d_xp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            d_xp[i:i + h, j:j + w, :] += k64[i, j, :] * d_out[:, :, None]
    d_x = d_xp[p:p + h, p:p + w, :]
    return d_kernel, d_bias, d_x


def sigmoid_map(x: Tensor) -> Tensor:
    """Elementwise logistic function, overflow-safe, same shape as input."""
    v = x.array.astype(np.float64)
    z = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return Tensor.from_array(out)


def gate_broadcast(x: Tensor, m: Tensor) -> Tensor:
    """Scale every channel of x by the per-position gate m (H x W x 1)."""
    _require_rank(x, 3)
    _require_rank(m, 3, "gate")
    if m.shape[2] != 1:
        raise ShapeError("gate must be single-channel")
    if x.shape[:2] != m.shape[:2]:
        raise ShapeError(f"spatial dims differ: {x.shape[:2]} vs {m.shape[:2]}")
    return Tensor.from_array(x.array * m.array)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: H x W x C -> rank-1 tensor of length C."""
    _require_rank(x, 3)
    return Tensor.from_array(x.array.mean(axis=(0, 1), dtype=np.float64))
