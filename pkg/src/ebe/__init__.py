"""Example-based explanations via exact cosine k-NN over layer embeddings."""

from .attribution import (
    Attribution,
    Neighbor,
    QueryBatch,
    attribute,
    attribution_to_json,
    attributions_to_jsonl,
    batch_attribute,
    cosine_distance,
    predict,
    top_k,
)
from .errors import (
    DataError,
    EbeError,
    FormatError,
    IoError,
    ManifestError,
    ParamError,
    ShapeError,
)
from .evaluation import (
    SweepCell,
    SweepConfig,
    SweepResult,
    SyntheticSpec,
    evaluate_layer,
    generate_synthetic,
    run_sweep,
    write_synthetic_dataset,
)
from .reporting import GallerySpec, render_gallery, sweep_to_csv
from .store import (
    DatasetManifest,
    EmbeddingMatrix,
    LabelVector,
    LayerEntry,
    NormalizedIndex,
    load_manifest,
    normalize,
    read_labels,
    read_matrix,
    write_labels,
    write_matrix,
)

__version__ = "0.1.0"
