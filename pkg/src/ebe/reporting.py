"""Byte-deterministic report rendering: sweep CSV and attribution galleries.

The gallery is a single self-contained HTML file: images are inlined as
base64 data URIs, one section per (query, layer), the test image first and
the neighbors left-to-right by rank.
"""

from __future__ import annotations

import base64
import html
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .attribution import Attribution
from .errors import ManifestError, ParamError
from .evaluation import SweepResult

CSV_HEADER = "dataset,layer_id,k,accuracy,mean_purity,baseline_accuracy,baseline_delta"


def sweep_to_csv(result: SweepResult) -> str:
    """Render a sweep as CSV, rows sorted by (layer_id, k), 6-decimal accuracies."""
    lines = [CSV_HEADER]
    baseline = (
        f"{result.baseline_accuracy:.6f}" if result.baseline_accuracy is not None else ""
    )
    for cell in sorted(result.cells, key=lambda c: (c.layer_id, c.k)):
        delta = f"{cell.baseline_delta:.6f}" if cell.baseline_delta is not None else ""
        lines.append(
            f"{result.dataset_name},{cell.layer_id},{cell.k},"
            f"{cell.accuracy:.6f},{cell.mean_purity:.6f},{baseline},{delta}"
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class GallerySpec:
    """What to render: which queries, which layers, how many neighbors."""

    query_ids: tuple[int, ...]
    layer_ids: tuple[int, ...]
    k: int
    image_dir: Path
    output_path: Path | None = None
    columns: int = 5

    def __post_init__(self):
        if not self.query_ids or not self.layer_ids:
            raise ParamError("gallery needs at least one query and one layer")
        if self.columns < 1:
            raise ParamError(f"columns must be positive, got {self.columns}")


_PAGE = """<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
<title>Example attributions: {title}</title>
<style>
body {{ font-family: sans-serif; margin: 1.5em; }}
section {{ margin-bottom: 2em; }}
.grid {{ display: grid; grid-template-columns: repeat({columns}, max-content); gap: 10px; }}
figure {{ margin: 0; text-align: center; }}
figure img {{ image-rendering: pixelated; width: 96px; }}
figcaption {{ font-size: 0.8em; color: #333; }}
.query img {{ outline: 3px solid #c00; }}
</style>
</head>
<body>
<h1>Example attributions: {title}</h1>
{sections}
</body>
</html>
"""

_SECTION = """<section>
<h2>query {query_id} &mdash; layer {layer_id} (k={k}, predicted {predicted})</h2>
<div class="grid">
{cells}
</div>
</section>
"""

_CELL = """<figure class="{css}"><img src="data:image/png;base64,{data}" alt="{alt}">
<figcaption>{caption}</figcaption></figure>
"""


def _image_uri(path: Path) -> str:
    if not path.is_file():
        raise ManifestError(f"missing image file: {path}")
    return base64.b64encode(path.read_bytes()).decode("ascii")


def render_gallery(
    spec: GallerySpec,
    attributions: Mapping[tuple[int, int], Attribution],
    *,
    title: str = "attribution gallery",
) -> str:
    """Render one section per (query, layer): the test image, then neighbors by rank.

    ``attributions`` is keyed by (layer_id, query_id). Sections are ordered by
    query as listed, then ascending layer.
    """
    sections = []
    for query_id in spec.query_ids:
        for layer_id in sorted(spec.layer_ids):
            attr = attributions.get((layer_id, query_id))
            if attr is None:
                raise ParamError(
                    f"no attribution supplied for query {query_id}, layer {layer_id}"
                )
            cells = [
                _CELL.format(
                    css="query",
                    data=_image_uri(spec.image_dir / f"test_{query_id}.png"),
                    alt=f"test {query_id}",
                    caption=f"test {query_id}",
                )
            ]
            for neighbor, label in zip(attr.neighbors, attr.neighbor_labels):
                cells.append(
                    _CELL.format(
                        css="neighbor",
                        data=_image_uri(
                            spec.image_dir / f"train_{neighbor.train_index}.png"
                        ),
                        alt=f"train {neighbor.train_index}",
                        caption=(
                            f"{neighbor.rank} / {label} / {neighbor.distance:.4f}"
                        ),
                    )
                )
            sections.append(
                _SECTION.format(
                    query_id=query_id,
                    layer_id=layer_id,
                    k=attr.k,
                    predicted=attr.predicted_label,
                    cells="".join(cells),
                )
            )
    return _PAGE.format(
        title=html.escape(title),
        columns=spec.columns,
        sections="".join(sections),
    )
