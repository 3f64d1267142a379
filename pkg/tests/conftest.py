import numpy as np
import pytest

from evoattn import Tensor


def random_tensor(rng, shape, scale=1.0):
    return Tensor.from_array((rng.normal(size=shape) * scale).astype(np.float32))


def tie_free_tensor(rng, shape, margin=2e-2, scale=1.0):
    """Random map whose top two channels differ by >= margin at every position.

    Finite-difference gradient checks perturb entries by ~1e-3; a channel
    near-tie would flip the max-pool argmax mid-check and measure the kink
    instead of the one-sided derivative the backward pass computes.
    """
    while True:
        x = (rng.normal(size=shape) * scale).astype(np.float32)
        if shape[2] == 1:
            return Tensor.from_array(x)
        ranked = np.sort(x, axis=2)
        if np.min(ranked[:, :, -1] - ranked[:, :, -2]) >= margin:
            return Tensor.from_array(x)


def cluster_samples(n, dim, seed, separation=1.5):
    """Linearly separable feature vectors packed as 1 x 1 x dim maps."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        label = i % 2
        mu = separation if label == 1 else -separation
        v = rng.normal(mu, 1.0, size=(1, 1, dim)).astype(np.float32)
        samples.append((Tensor.from_array(v), label))
    return samples


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
