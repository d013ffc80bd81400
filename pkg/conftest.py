import numpy as np
import pytest

from src.models import ContrastiveBatch
from src.services.numkit import Rng, softmax


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def random_batch(rng):
    """Factory of contrastive batches where every class appears at least twice."""

    def make(rows: int = 8, classes: int = 4, scale: float = 1.5):
        preds = softmax(rng.normal(scale=scale, size=(rows, classes)))
        labels = rng.permutation(np.arange(rows) % classes)
        return ContrastiveBatch(preds=preds, labels=labels)

    return make


@pytest.fixture
def tmp_out(tmp_path):
    return tmp_path / "out"
