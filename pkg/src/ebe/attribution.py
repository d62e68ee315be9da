"""Exact cosine top-k retrieval, attribution construction, and mode prediction.

Retrieval is exhaustive: similarities are blocked dot products against the
normalized index, distance = 1 - similarity. Distance ties are broken by
ascending train index, so every attribution is fully deterministic.

Determinism across batching: query blocks are always padded to a fixed
64-row tile before the matmul, and the training side is always split at a
fixed block size. Every (query, train-row) dot product therefore goes
through an identically-shaped BLAS call with an identical accumulation
order, regardless of the caller's block size or thread count.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EbeError, ParamError, ShapeError
from .store import EmbeddingMatrix, NormalizedIndex

DEFAULT_QUERY_BLOCK = 256

# Fixed kernel geometry; never derived from caller parameters.
_QUERY_TILE = 64
_TRAIN_BLOCK = 8192


@dataclass(frozen=True)
class Neighbor:
    """One retrieved training example: 0-based row, cosine distance, 1-based rank."""

    train_index: int
    distance: float
    rank: int


@dataclass(frozen=True)
class Attribution:
    """The explanation object: ranked neighbors with labels and uniform weights."""

    query_id: int
    neighbors: tuple[Neighbor, ...]
    neighbor_labels: tuple[int, ...]
    weights: tuple[float, ...]
    predicted_label: int
    layer_id: int | None
    k: int


@dataclass(frozen=True, eq=False)
class QueryBatch:
    """Unit-normalized query rows plus their test-set ids.

    Rows whose original norm was zero are kept all-zero and flagged in
    ``zero_rows`` (positions within the batch, not test ids).
    """

    queries: np.ndarray
    query_ids: tuple[int, ...]
    zero_rows: frozenset[int]

    def __post_init__(self):
        self.queries.flags.writeable = False

    def __len__(self) -> int:
        return self.queries.shape[0]

    @property
    def dims(self) -> int:
        return self.queries.shape[1]

    @classmethod
    def from_matrix(
        cls, matrix: EmbeddingMatrix, query_ids: Sequence[int] | None = None
    ) -> "QueryBatch":
        if query_ids is None:
            ids = tuple(range(matrix.rows))
            rows = matrix.values
        else:
            ids = tuple(int(q) for q in query_ids)
            for q in ids:
                if not 0 <= q < matrix.rows:
                    raise ParamError(
                        f"query id {q} outside test split [0, {matrix.rows})"
                    )
            rows = matrix.values[list(ids)]
        queries, zero = _normalize_rows(rows)
        return cls(queries=queries, query_ids=ids, zero_rows=zero)


def _normalize_rows(rows: np.ndarray) -> tuple[np.ndarray, frozenset[int]]:
    """Unit-normalize rows in float64; zero rows stay zero and are flagged.

    Single queries go through this same routine as (1, d) matrices so that
    the one-query and batched paths normalize bit-identically.
    """
    queries = rows.astype(np.float64)
    norms = np.linalg.norm(queries, axis=1)
    zero = norms == 0.0
    queries /= np.where(zero, 1.0, norms)[:, None]
    return queries, frozenset(int(i) for i in np.flatnonzero(zero))


def cosine_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """1 - cos(a, b), accumulated in double precision; 1.0 if either norm is 0."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.ndim != 1 or bv.ndim != 1 or av.shape != bv.shape:
        raise ShapeError(f"dim mismatch: {av.shape} vs {bv.shape}")
    na = math.sqrt(float(np.dot(av, av)))
    nb = math.sqrt(float(np.dot(bv, bv)))
    if na == 0.0 or nb == 0.0:
        return 1.0
    dist = 1.0 - float(np.dot(av, bv)) / (na * nb)
    return min(max(dist, 0.0), 2.0)


def _check_k(k: int, n: int) -> None:
    if not 1 <= k <= n:
        raise ParamError(f"k must satisfy 1 <= k <= n, got k={k} with n={n}")


def _check_metric(metric: str) -> None:
    # closed enumeration in v1; carried explicitly to keep the retrieval
    # signature honest about its distance parameter
    if metric != "cosine":
        raise ParamError(f"unsupported metric {metric!r} (only 'cosine')")


def _check_dims(dims: int, index: NormalizedIndex) -> None:
    if dims != index.dims:
        raise ShapeError(f"query dims {dims} != index dims {index.dims}")


def _tile_distances(queries: np.ndarray, unit_rows: np.ndarray) -> np.ndarray:
    """(m, n) cosine distances for unit-normalized inputs, float64."""
    m = queries.shape[0]
    n = unit_rows.shape[0]
    out = np.empty((m, n), dtype=np.float64)
    for tile_start in range(0, m, _QUERY_TILE):
        tile_stop = min(tile_start + _QUERY_TILE, m)
        tile = queries[tile_start:tile_stop]
        rows = tile.shape[0]
        if rows < _QUERY_TILE:
            padded = np.zeros((_QUERY_TILE, queries.shape[1]), dtype=np.float64)
            padded[:rows] = tile
            tile = padded
        for start in range(0, n, _TRAIN_BLOCK):
            stop = min(start + _TRAIN_BLOCK, n)
            sims = tile @ unit_rows[start:stop].T
            out[tile_start:tile_stop, start:stop] = sims[:rows]
    np.subtract(1.0, out, out=out)
    np.clip(out, 0.0, 2.0, out=out)
    # Snap to a fixed grid: BLAS may round equal dot products differently by
    # output position, and ties must compare equal for the index tie rule.
    np.round(out, 12, out=out)
    return out


def _select_k_smallest(dist: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest distances; ties resolved by ascending index."""
    n = dist.shape[0]
    if k == n:
        return np.argsort(dist, kind="stable")
    candidates = np.argpartition(dist, k - 1)[:k]
    threshold = dist[candidates].max()
    below = np.flatnonzero(dist < threshold)
    tied = np.flatnonzero(dist == threshold)
    chosen = np.concatenate([below, tied[: k - below.size]])
    return chosen[np.argsort(dist[chosen], kind="stable")]


def _neighbor_grid(
    batch: QueryBatch,
    index: NormalizedIndex,
    k: int,
    *,
    query_block: int = DEFAULT_QUERY_BLOCK,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Top-k (indices, distances) per query, shape (m, k); deterministic."""
    _check_k(k, index.rows)
    _check_dims(batch.dims, index)
    if query_block < 1:
        raise ParamError(f"query_block must be positive, got {query_block}")
    m = len(batch)
    idx_grid = np.empty((m, k), dtype=np.int64)
    dist_grid = np.empty((m, k), dtype=np.float64)

    def run_block(start: int, stop: int) -> None:
        try:
            dists = _tile_distances(batch.queries[start:stop], index.unit_rows)
            for i in range(stop - start):
                sel = _select_k_smallest(dists[i], k)
                idx_grid[start + i] = sel
                dist_grid[start + i] = dists[i][sel]
        except EbeError:
            raise
        except Exception as exc:  # pragma: no cover - defensive
            raise EbeError(
                f"query {batch.query_ids[start]}: internal failure: {exc}"
            ) from exc

    spans = [(s, min(s + query_block, m)) for s in range(0, m, query_block)]
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for future in [pool.submit(run_block, s, e) for s, e in spans]:
                future.result()
    else:
        for s, e in spans:
            run_block(s, e)
    return idx_grid, dist_grid


def _mode_of_ranked(labels: Sequence[int]) -> int:
    """Mode of labels already in rank order; ties by earliest rank, then id."""
    counts: dict[int, int] = {}
    best_pos: dict[int, int] = {}
    for pos, label in enumerate(labels):
        label = int(label)
        counts[label] = counts.get(label, 0) + 1
        if label not in best_pos:
            best_pos[label] = pos
    return min(counts, key=lambda c: (-counts[c], best_pos[c], c))


def predict(
    neighbor_labels: Sequence[int], neighbors: Sequence[Neighbor]
) -> int:
    """Mode of the neighbor labels.

    Ties go to the class whose best-ranked neighbor comes first; any residual
    tie goes to the smallest class id.
    """
    if len(neighbor_labels) == 0:
        raise ParamError("cannot predict from an empty neighbor set")
    by_rank = sorted(zip(neighbors, neighbor_labels), key=lambda nl: nl[0].rank)
    return _mode_of_ranked([label for _, label in by_rank])


def _build_attribution(
    query_id: int,
    sel: np.ndarray,
    dists: np.ndarray,
    index: NormalizedIndex,
    k: int,
) -> Attribution:
    neighbors = tuple(
        Neighbor(train_index=int(t), distance=float(d), rank=r + 1)
        for r, (t, d) in enumerate(zip(sel, dists))
    )
    labels = tuple(int(index.labels.labels[t]) for t in sel)
    return Attribution(
        query_id=query_id,
        neighbors=neighbors,
        neighbor_labels=labels,
        weights=(1.0 / k,) * k,
        predicted_label=predict(labels, neighbors),
        layer_id=index.source_layer,
        k=k,
    )


def top_k(
    query: Sequence[float], index: NormalizedIndex, k: int, *, metric: str = "cosine"
) -> tuple[Neighbor, ...]:
    """The k nearest training rows to ``query`` under cosine distance."""
    _check_metric(metric)
    batch = _single_query_batch(query, index)
    idx_grid, dist_grid = _neighbor_grid(batch, index, k)
    return tuple(
        Neighbor(train_index=int(t), distance=float(d), rank=r + 1)
        for r, (t, d) in enumerate(zip(idx_grid[0], dist_grid[0]))
    )


def attribute(
    query_id: int,
    query: Sequence[float],
    index: NormalizedIndex,
    k: int,
    *,
    metric: str = "cosine",
) -> Attribution:
    """Run the retrieval for one query and assemble its attribution."""
    _check_metric(metric)
    batch = _single_query_batch(query, index)
    idx_grid, dist_grid = _neighbor_grid(batch, index, k)
    return _build_attribution(query_id, idx_grid[0], dist_grid[0], index, k)


def _single_query_batch(query: Sequence[float], index: NormalizedIndex) -> QueryBatch:
    q = np.asarray(query)
    if q.ndim != 1:
        raise ShapeError(f"query must be 1-D, got {q.ndim}-D")
    _check_dims(q.shape[0], index)
    queries, zero = _normalize_rows(q[None, :])
    return QueryBatch(queries=queries, query_ids=(0,), zero_rows=zero)


def batch_attribute(
    batch: QueryBatch,
    index: NormalizedIndex,
    k: int,
    *,
    metric: str = "cosine",
    query_block: int = DEFAULT_QUERY_BLOCK,
    threads: int = 1,
) -> list[Attribution]:
    """Attribute every query in the batch; output order follows ``query_ids``."""
    _check_metric(metric)
    idx_grid, dist_grid = _neighbor_grid(
        batch, index, k, query_block=query_block, threads=threads
    )
    return [
        _build_attribution(batch.query_ids[i], idx_grid[i], dist_grid[i], index, k)
        for i in range(len(batch))
    ]


def attribution_record(attr: Attribution) -> dict:
    """Plain-dict form of an attribution, matching the wire schema."""
    return {
        "query_id": attr.query_id,
        "layer_id": attr.layer_id if attr.layer_id is not None else 0,
        "k": attr.k,
        "predicted_label": attr.predicted_label,
        "neighbors": [
            {
                "rank": nb.rank,
                "train_index": nb.train_index,
                "distance": nb.distance,
                "label": label,
                "weight": weight,
            }
            for nb, label, weight in zip(
                attr.neighbors, attr.neighbor_labels, attr.weights
            )
        ],
    }


def format_record(record: dict) -> str:
    """Canonical one-line JSON for a record dict (10 significant digits on
    distances, fixed key order); the single formatter behind CLI and files."""
    ordered = {
        "query_id": record["query_id"],
        "layer_id": record["layer_id"],
        "k": record["k"],
        "predicted_label": record["predicted_label"],
        "neighbors": [
            {
                "rank": nb["rank"],
                "train_index": nb["train_index"],
                "distance": float(f"{nb['distance']:.10g}"),
                "label": nb["label"],
                "weight": nb["weight"],
            }
            for nb in record["neighbors"]
        ],
    }
    return json.dumps(ordered, separators=(",", ":"))


def records_to_jsonl(records: Iterable[dict]) -> str:
    return "".join(format_record(r) + "\n" for r in records)


def attribution_to_json(attr: Attribution) -> str:
    """One attribution as a compact JSON line."""
    return format_record(attribution_record(attr))


def attributions_to_jsonl(attrs: Iterable[Attribution]) -> str:
    return "".join(attribution_to_json(a) + "\n" for a in attrs)
