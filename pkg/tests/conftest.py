import numpy as np
import pytest

from confnorm.models.schemas import ConfusionMatrix, EmbeddedDataset, IpfConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def random_positive():
    """Factory for strictly positive ConfusionMatrix values with entries in [low, high)."""

    def make(rng, C, low=0.1, high=1.0):
        return ConfusionMatrix(entries=rng.uniform(low, high, size=(C, C)))

    return make


@pytest.fixture
def tight():
    return IpfConfig(tolerance=1e-12, max_steps=20_000)


@pytest.fixture
def random_dataset():
    """Gaussian points with uniformly random labels and predictions."""

    def make(rng, n_points=300, n_classes=4, dim=5):
        return EmbeddedDataset(
            embeddings=rng.normal(size=(n_points, dim)),
            labels=rng.integers(0, n_classes, size=n_points),
            predictions=rng.integers(0, n_classes, size=n_points),
            classes=[f"c{k}" for k in range(n_classes)],
        )

    return make
