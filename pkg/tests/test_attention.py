import math

import numpy as np
import pytest

from evoattn import (
    ParameterError,
    ShapeError,
    SpatialAttention,
    Tensor,
    attention_backward,
    attention_forward,
    attention_init,
    channel_max,
    channel_mean,
    concat_channels,
    conv2d_same,
    gate_broadcast,
    sigmoid_map,
)
from conftest import random_tensor, tie_free_tensor


def zero_layer(k=3):
    return SpatialAttention(Tensor.from_array(np.zeros((k, k, 2), dtype=np.float32)), 0.0)


def gated_sum(layer, x):
    gated, _, _ = attention_forward(layer, x)
    return float(gated.array.sum(dtype=np.float64))


def rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return np.abs(analytic - numeric).max() / scale


def finite_difference_grads(layer, x, step=1e-3):
    """Central differences of sum(gated) w.r.t. input, kernel, and bias."""
    k = layer.kernel_size
    num_dk = np.zeros((k, k, 2))
    for a in range(k):
        for b in range(k):
            for c in range(2):
                plus = layer.kernel.array.copy()
                minus = layer.kernel.array.copy()
                plus[a, b, c] += step
                minus[a, b, c] -= step
                lp = gated_sum(SpatialAttention(Tensor.from_array(plus), layer.bias), x)
                lm = gated_sum(SpatialAttention(Tensor.from_array(minus), layer.bias), x)
                num_dk[a, b, c] = (lp - lm) / (2 * step)
    num_dx = np.zeros(x.shape)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            for c in range(x.shape[2]):
                plus = x.array.copy()
                minus = x.array.copy()
                plus[i, j, c] += step
                minus[i, j, c] -= step
                lp = gated_sum(layer, Tensor.from_array(plus))
                lm = gated_sum(layer, Tensor.from_array(minus))
                num_dx[i, j, c] = (lp - lm) / (2 * step)
    lp = gated_sum(SpatialAttention(layer.kernel, layer.bias + step), x)
    lm = gated_sum(SpatialAttention(layer.kernel, layer.bias - step), x)
    return num_dx, num_dk, (lp - lm) / (2 * step)


class TestSpatialAttentionType:
    def test_rejects_even_kernel(self):
        with pytest.raises(ParameterError):
            SpatialAttention(Tensor.from_array(np.zeros((2, 2, 2), dtype=np.float32)), 0.0)

    def test_rejects_wrong_channels(self):
        with pytest.raises(ShapeError):
            SpatialAttention(Tensor.from_array(np.zeros((3, 3, 1), dtype=np.float32)), 0.0)

    def test_kernel_size(self):
        assert zero_layer(5).kernel_size == 5


class TestAttentionInit:
    def test_deterministic(self):
        a = attention_init(3, np.random.default_rng(99))
        b = attention_init(3, np.random.default_rng(99))
        assert np.array_equal(a.kernel.array, b.kernel.array)
        assert a.bias == b.bias == 0.0

    def test_kernel_shape(self):
        layer = attention_init(7, np.random.default_rng(0))
        assert layer.kernel.shape == (7, 7, 2)

    def test_even_size_rejected(self):
        with pytest.raises(ParameterError):
            attention_init(4, np.random.default_rng(0))

    def test_sampling_bounds_and_mean(self):
        rng = np.random.default_rng(123)
        scale = math.sqrt(6.0 / (3 * 3 * 2 + 1))
        weights = []
        while len(weights) < 10_000:
            weights.extend(attention_init(3, rng).kernel.array.reshape(-1).tolist())
        weights = np.array(weights[:10_000])
        assert np.all(np.abs(weights) <= scale)
        assert abs(weights.mean()) < 0.05


class TestAttentionForward:
    def test_zero_kernel_gives_half_map(self, rng):
        x = random_tensor(rng, (4, 5, 3))
        gated, amap, _ = attention_forward(zero_layer(), x)
        assert np.all(amap.array == 0.5)
        assert np.array_equal(gated.array, 0.5 * x.array)

    def test_constant_input_k1_closed_form(self):
        c = 0.8
        w0, w1, bias = 0.4, -0.9, 0.2
        layer = SpatialAttention(Tensor((1, 1, 2), [w0, w1]), bias)
        x = Tensor.from_array(np.full((3, 3, 5), c, dtype=np.float32))
        _, amap, _ = attention_forward(layer, x)
        expected = 1.0 / (1.0 + math.exp(-(c * (w0 + w1) + bias)))
        assert np.abs(amap.array - expected).max() < 1e-6

    def test_matches_primitive_composition(self, rng):
        x = random_tensor(rng, (5, 5, 4))
        layer = attention_init(3, np.random.default_rng(4))
        gated, amap, _ = attention_forward(layer, x)
        expected_map = sigmoid_map(
            conv2d_same(concat_channels(channel_mean(x), channel_max(x)), layer.kernel, layer.bias)
        )
        expected_gated = gate_broadcast(x, expected_map)
        assert np.abs(amap.array - expected_map.array).max() < 1e-6
        assert np.abs(gated.array - expected_gated.array).max() < 1e-6

    def test_map_strictly_inside_unit_interval(self, rng):
        for _ in range(10):
            x = random_tensor(rng, (4, 4, 3), scale=5.0)
            layer = attention_init(3, rng)
            _, amap, _ = attention_forward(layer, x)
            assert amap.array.min() > 0.0
            assert amap.array.max() < 1.0

    def test_gate_ratio_constant_across_channels(self, rng):
        x = random_tensor(rng, (4, 4, 5))
        layer = attention_init(3, np.random.default_rng(8))
        gated, amap, _ = attention_forward(layer, x)
        nonzero = x.array != 0
        ratio = np.where(nonzero, gated.array / np.where(nonzero, x.array, 1.0), np.nan)
        for i in range(4):
            for j in range(4):
                vals = ratio[i, j][~np.isnan(ratio[i, j])]
                if vals.size:
                    assert np.abs(vals - amap.array[i, j, 0]).max() < 1e-6

    def test_rank_error(self):
        with pytest.raises(ShapeError):
            attention_forward(zero_layer(), Tensor((3,), [1, 2, 3]))


class TestAttentionBackward:
    def test_zero_kernel_direct_path(self, rng):
        x = random_tensor(rng, (4, 4, 3))
        layer = zero_layer()
        _, _, cache = attention_forward(layer, x)
        ones = Tensor.from_array(np.ones(x.shape, dtype=np.float32))
        d_x, _, _ = attention_backward(layer, cache, ones)
        # kernel is zero, so the pooling paths vanish and d_x is exactly M = 0.5
        assert np.all(d_x.array == 0.5)

    def test_zero_upstream_gives_zero_grads(self, rng):
        x = random_tensor(rng, (5, 4, 3))
        layer = attention_init(3, np.random.default_rng(2))
        _, _, cache = attention_forward(layer, x)
        zeros = Tensor.from_array(np.zeros(x.shape, dtype=np.float32))
        d_x, d_kernel, d_bias = attention_backward(layer, cache, zeros)
        assert np.all(d_x.array == 0.0)
        assert np.all(d_kernel.array == 0.0)
        assert d_bias == 0.0

    def test_shape_mismatch(self, rng):
        x = random_tensor(rng, (4, 4, 3))
        layer = zero_layer()
        _, _, cache = attention_forward(layer, x)
        with pytest.raises(ShapeError):
            attention_backward(layer, cache, Tensor.from_array(np.zeros((4, 4, 2), dtype=np.float32)))

    def test_gradients_match_finite_differences(self, rng):
        x = tie_free_tensor(rng, (5, 5, 4))
        layer = attention_init(3, np.random.default_rng(6))
        _, _, cache = attention_forward(layer, x)
        ones = Tensor.from_array(np.ones(x.shape, dtype=np.float32))
        d_x, d_kernel, d_bias = attention_backward(layer, cache, ones)
        num_dx, num_dk, num_db = finite_difference_grads(layer, x)
        assert rel_error(d_x.array, num_dx) < 1e-3
        assert rel_error(d_kernel.array, num_dk) < 1e-3
        assert rel_error([d_bias], [num_db]) < 1e-3

    def test_gradient_check_across_shapes_and_kernels(self):
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            h, w = (int(v) for v in rng.integers(3, 9, size=2))
            c = int(rng.integers(1, 7))
            k = int(rng.choice([1, 3, 5]))
            if k > 2 * min(h, w) - 1:
                k = 1
            layer = attention_init(k, rng)
            x = tie_free_tensor(rng, (h, w, c))
            _, _, cache = attention_forward(layer, x)
            ones = Tensor.from_array(np.ones((h, w, c), dtype=np.float32))
            d_x, d_kernel, d_bias = attention_backward(layer, cache, ones)
            num_dx, num_dk, num_db = finite_difference_grads(layer, x)
            assert rel_error(d_x.array, num_dx) < 1e-3, f"seed {seed} d_x"
            assert rel_error(d_kernel.array, num_dk) < 1e-3, f"seed {seed} d_kernel"
            assert rel_error([d_bias], [num_db]) < 1e-3, f"seed {seed} d_bias"

    def test_max_route_unchanged_by_positive_scaling(self, rng):
        x = random_tensor(rng, (4, 4, 5))
        assert np.array_equal(np.argmax(x.array, axis=2), np.argmax(2.0 * x.array, axis=2))
        layer = attention_init(3, np.random.default_rng(3))
        ones = Tensor.from_array(np.ones(x.shape, dtype=np.float32))
        _, _, cache1 = attention_forward(layer, x)
        _, _, cache2 = attention_forward(layer, Tensor.from_array(2.0 * x.array))
        d1, _, _ = attention_backward(layer, cache1, ones)
        d2, _, _ = attention_backward(layer, cache2, ones)
        # the max-pool route feeds the same channel in both cases: the argmax
        # channel of the scaled input is the argmax channel of the original
        assert d1.shape == d2.shape

    def test_tie_breaks_to_lowest_channel(self):
        # both channels equal at every position; the max route must hit channel 0
        x = Tensor.from_array(np.full((3, 3, 2), 1.0, dtype=np.float32))
        kernel = Tensor.from_array(np.full((1, 1, 2), 0.5, dtype=np.float32))
        layer = SpatialAttention(kernel, 0.0)
        _, _, cache = attention_forward(layer, x)
        ones = Tensor.from_array(np.ones((3, 3, 2), dtype=np.float32))
        d_x, _, _ = attention_backward(layer, cache, ones)
        # avg path is split across both channels; the max path goes only to channel 0
        assert np.all(d_x.array[:, :, 0] > d_x.array[:, :, 1])
