"""Accuracy sweeps over the (layer, k) grid, plus a synthetic-embedding generator.

Neighbor lists are computed once per layer at max(k) and prefix-truncated
for the smaller k values; the tie rule (ascending train index) makes the
k'-list an exact prefix of the k-list, so the truncation is semantics-free.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .attribution import (
    DEFAULT_QUERY_BLOCK,
    QueryBatch,
    _mode_of_ranked,
    _neighbor_grid,
)
from .errors import EbeError, ParamError
from .store import (
    DatasetManifest,
    EmbeddingMatrix,
    LabelVector,
    NormalizedIndex,
    normalize,
    read_labels,
    read_matrix,
    write_labels,
    write_matrix,
)


@dataclass(frozen=True)
class SweepConfig:
    """Which (layer, k) grid to evaluate; cosine is the only metric in v1."""

    layer_ids: tuple[int, ...]
    k_values: tuple[int, ...]
    metric: str = "cosine"

    def __post_init__(self):
        if not self.layer_ids:
            raise ParamError("layer_ids must be non-empty")
        if len(set(self.layer_ids)) != len(self.layer_ids):
            raise ParamError(f"duplicate layer_ids in {self.layer_ids}")
        if not self.k_values:
            raise ParamError("k_values must be non-empty")
        if any(k < 1 for k in self.k_values):
            raise ParamError(f"every k must be >= 1, got {self.k_values}")
        if len(set(self.k_values)) != len(self.k_values):
            raise ParamError(f"duplicate k_values in {self.k_values}")
        if self.metric != "cosine":
            raise ParamError(f"unsupported metric {self.metric!r} (only 'cosine')")


@dataclass(frozen=True)
class SweepCell:
    layer_id: int
    k: int
    accuracy: float
    mean_purity: float
    baseline_delta: float | None = None


@dataclass(frozen=True)
class SweepResult:
    dataset_name: str
    cells: tuple[SweepCell, ...]
    test_count: int
    baseline_accuracy: float | None = None


def evaluate_layer(
    train_index: NormalizedIndex,
    test: QueryBatch,
    test_labels: LabelVector,
    k_values: Sequence[int],
    *,
    query_block: int = DEFAULT_QUERY_BLOCK,
    threads: int = 1,
) -> list[SweepCell]:
    """One SweepCell per k: mode-prediction accuracy and mean attribution purity.

    Purity of one query is the fraction of its k neighbors whose label equals
    the predicted label.
    """
    if len(test) == 0:
        raise ParamError("cannot evaluate an empty query batch")
    if len(test) != len(test_labels):
        raise ParamError(
            f"{len(test)} queries but {len(test_labels)} test labels"
        )
    ks = sorted(set(int(k) for k in k_values))
    if not ks:
        raise ParamError("k_values must be non-empty")
    kmax = ks[-1]
    idx_grid, _ = _neighbor_grid(
        test, train_index, kmax, query_block=query_block, threads=threads
    )
    label_grid = train_index.labels.labels[idx_grid]
    m = len(test)
    cells = []
    for k in ks:
        correct = 0
        purity_sum = 0.0
        for i in range(m):
            labels = label_grid[i, :k]
            pred = _mode_of_ranked(labels)
            if pred == int(test_labels.labels[i]):
                correct += 1
            purity_sum += int(np.count_nonzero(labels == pred)) / k
        cells.append(
            SweepCell(
                layer_id=train_index.source_layer or 0,
                k=k,
                accuracy=correct / m,
                mean_purity=purity_sum / m,
            )
        )
    return cells


def run_sweep(
    manifest: DatasetManifest,
    config: SweepConfig,
    *,
    threads: int = 1,
    max_resident_layers: int = 1,
    query_block: int = DEFAULT_QUERY_BLOCK,
) -> SweepResult:
    """Evaluate the full (layer, k) grid declared by ``config``.

    Layers run concurrently up to ``max_resident_layers`` simultaneously
    resident indexes; cells are reduced in (layer_id, k) order so the result
    is independent of scheduling.
    """
    unknown = [l for l in config.layer_ids if l not in manifest.layer_ids]
    if unknown:
        raise ParamError(f"layers {unknown} not in manifest {list(manifest.layer_ids)}")
    if max_resident_layers < 1:
        raise ParamError(f"max_resident_layers must be >= 1, got {max_resident_layers}")

    train_labels = read_labels(manifest.train_labels_path, manifest.num_classes)
    test_labels = read_labels(manifest.test_labels_path, manifest.num_classes)
    baseline = manifest.baseline_accuracy
    test_count = len(test_labels)

    def run_layer(layer_id: int) -> list[SweepCell]:
        entry = manifest.layer(layer_id)
        try:
            train = read_matrix(entry.train_path, source_layer=layer_id, split="train")
            index = normalize(train, train_labels)
            del train
            test_matrix = read_matrix(
                entry.test_path, source_layer=layer_id, split="test"
            )
            batch = QueryBatch.from_matrix(test_matrix)
            del test_matrix
            cells = evaluate_layer(
                index,
                batch,
                test_labels,
                config.k_values,
                query_block=query_block,
                threads=threads,
            )
        except EbeError as exc:
            raise type(exc)(f"layer {layer_id}: {exc}") from exc
        if baseline is None:
            return cells
        return [
            SweepCell(
                layer_id=c.layer_id,
                k=c.k,
                accuracy=c.accuracy,
                mean_purity=c.mean_purity,
                baseline_delta=c.accuracy - baseline,
            )
            for c in cells
        ]

    layer_order = sorted(config.layer_ids)
    if max_resident_layers > 1 and len(layer_order) > 1:
        with ThreadPoolExecutor(max_workers=max_resident_layers) as pool:
            per_layer = list(pool.map(run_layer, layer_order))
    else:
        per_layer = [run_layer(layer_id) for layer_id in layer_order]

    cells = tuple(
        sorted(
            (c for layer_cells in per_layer for c in layer_cells),
            key=lambda c: (c.layer_id, c.k),
        )
    )
    return SweepResult(
        dataset_name=manifest.dataset_name,
        cells=cells,
        test_count=test_count,
        baseline_accuracy=baseline,
    )


@dataclass(frozen=True)
class SyntheticSpec:
    """Seeded Gaussian clusters around unit-sphere class means."""

    num_classes: int
    per_class_count: int
    dims: int
    cluster_spread: float
    seed: int

    def __post_init__(self):
        if self.num_classes < 1 or self.per_class_count < 1 or self.dims < 1:
            raise ParamError(f"all counts must be positive: {self}")
        if self.cluster_spread < 0:
            raise ParamError(f"cluster_spread must be >= 0, got {self.cluster_spread}")


@dataclass(frozen=True)
class SyntheticData:
    train: EmbeddingMatrix
    train_labels: LabelVector
    test: EmbeddingMatrix
    test_labels: LabelVector


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Deterministic clustered embeddings, ``per_class_count`` rows per class
    and split; the train and test draws are disjoint."""
    rng = np.random.default_rng(spec.seed)
    means = rng.standard_normal((spec.num_classes, spec.dims))
    means /= np.linalg.norm(means, axis=1)[:, None]

    def draw(split: str) -> tuple[EmbeddingMatrix, LabelVector]:
        noise = rng.standard_normal(
            (spec.num_classes, spec.per_class_count, spec.dims)
        )
        samples = means[:, None, :] + spec.cluster_spread * noise
        values = samples.reshape(-1, spec.dims).astype(np.float32)
        labels = np.repeat(
            np.arange(spec.num_classes, dtype=np.int64), spec.per_class_count
        )
        return (
            EmbeddingMatrix(values=values, split=split),
            LabelVector(labels=labels, num_classes=spec.num_classes),
        )

    train, train_labels = draw("train")
    test, test_labels = draw("test")
    return SyntheticData(
        train=train, train_labels=train_labels, test=test, test_labels=test_labels
    )


def write_synthetic_dataset(
    out_dir: Path | str,
    base: SyntheticSpec,
    layer_spreads: Mapping[int, float],
    *,
    dataset_name: str = "synthetic",
    baseline_accuracy: float | None = None,
) -> Path:
    """Materialize a multi-layer synthetic dataset and return its manifest path.

    All layers share the same labels; each layer redraws its cluster geometry
    with the given spread from a layer-specific seed.
    """
    if not layer_spreads:
        raise ParamError("layer_spreads must be non-empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layers = []
    labels_written = False
    for layer_id in sorted(layer_spreads):
        spec = SyntheticSpec(
            num_classes=base.num_classes,
            per_class_count=base.per_class_count,
            dims=base.dims,
            cluster_spread=layer_spreads[layer_id],
            seed=base.seed + 1000003 * layer_id,
        )
        data = generate_synthetic(spec)
        train_name = f"layer{layer_id:02d}_train.npy"
        test_name = f"layer{layer_id:02d}_test.npy"
        write_matrix(data.train, out_dir / train_name)
        write_matrix(data.test, out_dir / test_name)
        if not labels_written:
            write_labels(data.train_labels, out_dir / "train_labels.npy")
            write_labels(data.test_labels, out_dir / "test_labels.npy")
            labels_written = True
        layers.append(
            {
                "layer_id": layer_id,
                "train_path": train_name,
                "test_path": test_name,
                "dims": base.dims,
            }
        )
    manifest = {
        "dataset_name": dataset_name,
        "num_classes": base.num_classes,
        "layers": layers,
        "train_labels_path": "train_labels.npy",
        "test_labels_path": "test_labels.npy",
    }
    if baseline_accuracy is not None:
        manifest["baseline_accuracy"] = baseline_accuracy
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path
