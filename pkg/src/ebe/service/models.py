"""Request/response schemas for the attribution service.

The same models back both the HTTP API and the CLI, so a command line
invocation and a POST to the service carry identical payloads.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class IndexRequest(BaseModel):
    manifest_path: str
    layer_id: int
    cache: bool = False
    lax: bool = False


class IndexSummary(BaseModel):
    layer_id: int
    rows: int
    dims: int
    zero_rows: int
    cached: bool = False
    cache_path: str | None = None


class NeighborModel(BaseModel):
    rank: int
    train_index: int
    distance: float
    label: int
    weight: float


class AttributionModel(BaseModel):
    query_id: int
    layer_id: int
    k: int
    predicted_label: int
    neighbors: list[NeighborModel]


class AttributeRequest(BaseModel):
    manifest_path: str
    layer_id: int
    k: int = Field(..., description="number of neighbors, 1 <= k <= n")
    query_ids: list[int]
    threads: int = 1
    lax: bool = False


class AttributeResponse(BaseModel):
    attributions: list[AttributionModel]


class SweepRequest(BaseModel):
    manifest_path: str
    layer_ids: list[int]
    k_values: list[int]
    threads: int = 1
    max_resident_layers: int = 1
    lax: bool = False


class SweepCellModel(BaseModel):
    layer_id: int
    k: int
    accuracy: float
    mean_purity: float
    baseline_delta: float | None = None


class SweepResponse(BaseModel):
    dataset_name: str
    test_count: int
    baseline_accuracy: float | None = None
    cells: list[SweepCellModel]
    csv: str


class ReportRequest(BaseModel):
    manifest_path: str
    layer_ids: list[int]
    k: int
    query_ids: list[int]
    image_dir: str | None = None
    columns: int = 5
    threads: int = 1
    lax: bool = False


class ReportResponse(BaseModel):
    html: str


class ErrorBody(BaseModel):
    kind: str
    error: str
    exit_code: int
