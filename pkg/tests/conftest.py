"""Shared fixtures: synthetic datasets on disk and random instance helpers."""

from __future__ import annotations

import numpy as np
import pytest

from ebe.evaluation import SyntheticSpec, write_synthetic_dataset
from ebe.store import EmbeddingMatrix, LabelVector, normalize


def random_instance(rng, n=None, d=None, num_classes=4):
    """One random (matrix, labels, index) triple for oracle comparisons."""
    n = n or int(rng.integers(2, 201))
    d = d or int(rng.integers(1, 33))
    values = rng.standard_normal((n, d)).astype(np.float32)
    labels = rng.integers(0, num_classes, size=n).astype(np.int64)
    matrix = EmbeddingMatrix(values=values, split="train")
    vector = LabelVector(labels=labels, num_classes=num_classes)
    return matrix, vector, normalize(matrix, vector)


@pytest.fixture(scope="session")
def two_layer_manifest(tmp_path_factory):
    """Tight layer 1 vs diffuse layer 2, 5 classes, 40/class, d=16."""
    out = tmp_path_factory.mktemp("twolayer")
    return write_synthetic_dataset(
        out,
        SyntheticSpec(num_classes=5, per_class_count=40, dims=16,
                      cluster_spread=0.1, seed=1234),
        {1: 0.05, 2: 5.0},
        dataset_name="twolayer",
        baseline_accuracy=0.9,
    )


@pytest.fixture(scope="session")
def twenty_layer_manifest(tmp_path_factory):
    """A 20-layer dataset shaped like the full sweep target, at toy size."""
    out = tmp_path_factory.mktemp("twentylayer")
    return write_synthetic_dataset(
        out,
        SyntheticSpec(num_classes=10, per_class_count=8, dims=12,
                      cluster_spread=0.2, seed=99),
        {layer: 0.1 + 0.05 * layer for layer in range(1, 21)},
        dataset_name="mnist-toy",
    )
