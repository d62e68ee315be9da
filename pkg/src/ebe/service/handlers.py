"""Command handlers: request model in, response model out.

Each handler is pure with respect to its inputs (files on disk plus the
request), raising ``EbeError`` subclasses on invalid input. Both the CLI
(in-process) and the FastAPI routes (over HTTP) call these functions, so
behavior and output bytes cannot diverge between the two surfaces.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..attribution import Attribution, QueryBatch, batch_attribute
from ..errors import ManifestError, ParamError
from ..evaluation import SweepConfig, run_sweep
from ..reporting import GallerySpec, render_gallery, sweep_to_csv
from ..store import (
    DatasetManifest,
    EmbeddingMatrix,
    NormalizedIndex,
    load_manifest,
    normalize,
    peek_tensor,
    read_labels,
    read_matrix,
    write_matrix,
)
from .models import (
    AttributeRequest,
    AttributeResponse,
    AttributionModel,
    IndexRequest,
    IndexSummary,
    NeighborModel,
    ReportRequest,
    ReportResponse,
    SweepCellModel,
    SweepRequest,
    SweepResponse,
)

logger = logging.getLogger("ebe")


def _load_layer_index(
    manifest: DatasetManifest, layer_id: int
) -> NormalizedIndex:
    entry = manifest.layer(layer_id)
    labels = read_labels(manifest.train_labels_path, manifest.num_classes)
    train = read_matrix(entry.train_path, source_layer=layer_id, split="train")
    return normalize(train, labels)


def handle_index(request: IndexRequest) -> IndexSummary:
    """Validate one layer and report its normalized-index summary.

    With ``cache=True`` the unit rows are persisted beside the source file
    with a ``.norm`` suffix (float32); a fresh cache is reused on rerun
    instead of recomputing.
    """
    manifest = load_manifest(request.manifest_path, lax=request.lax)
    entry = manifest.layer(request.layer_id)
    cache_path = Path(str(entry.train_path) + ".norm")

    if request.cache and _cache_fresh(cache_path, entry.train_path):
        _, shape = peek_tensor(cache_path)
        cached = read_matrix(cache_path)
        zero_count = int(np.count_nonzero(~cached.values.any(axis=1)))
        logger.info("reusing cache %s", cache_path)
        return IndexSummary(
            layer_id=request.layer_id,
            rows=shape[0],
            dims=shape[1],
            zero_rows=zero_count,
            cached=True,
            cache_path=str(cache_path),
        )

    index = _load_layer_index(manifest, request.layer_id)
    summary = IndexSummary(
        layer_id=request.layer_id,
        rows=index.rows,
        dims=index.dims,
        zero_rows=len(index.zero_rows),
    )
    if request.cache:
        write_matrix(
            EmbeddingMatrix(values=index.unit_rows.astype(np.float32)), cache_path
        )
        summary = summary.model_copy(update={"cache_path": str(cache_path)})
    return summary


def _cache_fresh(cache_path: Path, source_path: Path) -> bool:
    try:
        return cache_path.stat().st_mtime >= source_path.stat().st_mtime
    except OSError:
        return False


def _to_model(attr: Attribution) -> AttributionModel:
    return AttributionModel(
        query_id=attr.query_id,
        layer_id=attr.layer_id if attr.layer_id is not None else 0,
        k=attr.k,
        predicted_label=attr.predicted_label,
        neighbors=[
            NeighborModel(
                rank=nb.rank,
                train_index=nb.train_index,
                distance=nb.distance,
                label=label,
                weight=weight,
            )
            for nb, label, weight in zip(
                attr.neighbors, attr.neighbor_labels, attr.weights
            )
        ],
    )


def _attribute(request: AttributeRequest) -> list[Attribution]:
    manifest = load_manifest(request.manifest_path, lax=request.lax)
    if not request.query_ids:
        raise ParamError("query_ids must be non-empty")
    index = _load_layer_index(manifest, request.layer_id)
    entry = manifest.layer(request.layer_id)
    test = read_matrix(entry.test_path, source_layer=request.layer_id, split="test")
    batch = QueryBatch.from_matrix(test, request.query_ids)
    return batch_attribute(batch, index, request.k, threads=request.threads)


def handle_attribute(request: AttributeRequest) -> AttributeResponse:
    """Attribution records for the requested queries, in request order."""
    return AttributeResponse(
        attributions=[_to_model(a) for a in _attribute(request)]
    )


def handle_sweep(request: SweepRequest) -> SweepResponse:
    """Accuracy/purity over the (layer, k) grid plus its CSV rendering."""
    manifest = load_manifest(request.manifest_path, lax=request.lax)
    config = SweepConfig(
        layer_ids=tuple(request.layer_ids), k_values=tuple(request.k_values)
    )
    result = run_sweep(
        manifest,
        config,
        threads=request.threads,
        max_resident_layers=request.max_resident_layers,
    )
    return SweepResponse(
        dataset_name=result.dataset_name,
        test_count=result.test_count,
        baseline_accuracy=result.baseline_accuracy,
        cells=[
            SweepCellModel(
                layer_id=c.layer_id,
                k=c.k,
                accuracy=c.accuracy,
                mean_purity=c.mean_purity,
                baseline_delta=c.baseline_delta,
            )
            for c in result.cells
        ],
        csv=sweep_to_csv(result),
    )


def handle_report(request: ReportRequest) -> ReportResponse:
    """Self-contained HTML gallery for the requested (query, layer) sections."""
    manifest = load_manifest(request.manifest_path, lax=request.lax)
    image_dir = (
        Path(request.image_dir) if request.image_dir is not None else manifest.image_dir
    )
    if image_dir is None:
        raise ParamError(
            f"no image directory: pass image_dir or declare it in the manifest"
        )
    if not image_dir.is_dir():
        raise ManifestError(f"missing file: {image_dir}")
    attributions: dict[tuple[int, int], Attribution] = {}
    for layer_id in sorted(set(request.layer_ids)):
        per_layer = _attribute(
            AttributeRequest(
                manifest_path=request.manifest_path,
                layer_id=layer_id,
                k=request.k,
                query_ids=request.query_ids,
                threads=request.threads,
                lax=request.lax,
            )
        )
        for attr in per_layer:
            attributions[(layer_id, attr.query_id)] = attr
    spec = GallerySpec(
        query_ids=tuple(request.query_ids),
        layer_ids=tuple(request.layer_ids),
        k=request.k,
        image_dir=image_dir,
        columns=request.columns,
    )
    html = render_gallery(
        spec, attributions, title=manifest.dataset_name
    )
    return ReportResponse(html=html)
