"""Embedding storage: tensor file I/O, dataset manifests, and L2 normalization.

The on-disk tensor container is a strict subset of the NPY v1.0 format:
little-endian float32 (``<f4``) for embeddings, little-endian int64
(``<i8``) for labels, C order, 1-D or 2-D only. Anything else is rejected
at read time so that every loaded matrix is bit-exact and query-ready.
"""

from __future__ import annotations

import ast
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import DataError, FormatError, IoError, ManifestError, ShapeError

MAGIC = b"\x93NUMPY"
VERSION = b"\x01\x00"
HEADER_ALIGN = 64

FLOAT_DESCR = "<f4"
LABEL_DESCR = "<i8"

# Row-block size for normalization; bounds the float64 scratch for wide layers.
_NORM_BLOCK = 4096


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """One layer's embeddings for one split: an (n, d) float32 matrix."""

    values: np.ndarray
    source_layer: int | None = None
    split: str | None = None

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ShapeError(f"embedding matrix must be 2-D, got {v.ndim}-D")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise ShapeError(f"embedding matrix must be at least 1x1, got {v.shape}")
        if v.dtype != np.float32:
            raise FormatError(f"embedding matrix must be float32, got {v.dtype}")
        if not np.isfinite(v).all():
            r, c = np.argwhere(~np.isfinite(v))[0]
            raise DataError(
                f"non-finite value at row {r}, col {c}", row=int(r), col=int(c)
            )
        v.flags.writeable = False

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class LabelVector:
    """Integer class ids, one per object, all below ``num_classes``."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        lab = self.labels
        if lab.ndim != 1:
            raise ShapeError(f"labels must be 1-D, got {lab.ndim}-D")
        if lab.dtype != np.int64:
            raise FormatError(f"labels must be int64, got {lab.dtype}")
        if self.num_classes < 1:
            raise DataError(f"num_classes must be positive, got {self.num_classes}")
        bad = np.flatnonzero((lab < 0) | (lab >= self.num_classes))
        if bad.size:
            i = int(bad[0])
            raise DataError(
                f"label {int(lab[i])} at index {i} outside [0, {self.num_classes})",
                row=i,
            )
        lab.flags.writeable = False

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class LayerEntry:
    layer_id: int
    train_path: Path
    test_path: Path
    dims: int


@dataclass(frozen=True)
class DatasetManifest:
    """Declarative index of a dataset: splits, layers, labels, baseline."""

    dataset_name: str
    num_classes: int
    layers: tuple[LayerEntry, ...]
    train_labels_path: Path
    test_labels_path: Path
    baseline_accuracy: float | None = None
    image_dir: Path | None = None

    @property
    def layer_ids(self) -> tuple[int, ...]:
        return tuple(entry.layer_id for entry in self.layers)

    def layer(self, layer_id: int) -> LayerEntry:
        for entry in self.layers:
            if entry.layer_id == layer_id:
                return entry
        raise ManifestError(
            f"layer {layer_id} not in manifest (has {list(self.layer_ids)})"
        )


@dataclass(frozen=True, eq=False)
class NormalizedIndex:
    """Query-ready index: unit-norm rows so cosine reduces to a dot product.

    ``unit_rows`` is float64 so that retrieval distances carry full double
    precision; rows whose original norm was exactly zero are left all-zero
    and recorded in ``zero_rows`` (their cosine distance to anything is 1.0).
    Immutable after construction and safe to share across threads.
    """

    unit_rows: np.ndarray
    zero_rows: frozenset[int]
    labels: LabelVector
    source_layer: int | None = None

    def __post_init__(self):
        self.unit_rows.flags.writeable = False

    @property
    def rows(self) -> int:
        return self.unit_rows.shape[0]

    @property
    def dims(self) -> int:
        return self.unit_rows.shape[1]


def _build_header(descr: str, shape: tuple[int, ...]) -> bytes:
    dict_str = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        descr,
        repr(shape),
    )
    prefix = len(MAGIC) + len(VERSION) + 2
    pad = (-(prefix + len(dict_str) + 1)) % HEADER_ALIGN
    return (dict_str + " " * pad + "\n").encode("latin1")


def _write_array(array: np.ndarray, path: Path | str, descr: str) -> None:
    header = _build_header(descr, array.shape)
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(VERSION)
            fh.write(struct.pack("<H", len(header)))
            fh.write(header)
            fh.write(array.tobytes(order="C"))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_header(fh: BinaryIO, path) -> tuple[str, bool, tuple[int, ...]]:
    start = fh.read(len(MAGIC) + len(VERSION))
    if len(start) < 8 or start[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a tensor file (bad magic)")
    version = start[len(MAGIC) :]
    if version != VERSION:
        raise FormatError(
            f"{path}: unsupported container version {version[0]}.{version[1]}"
        )
    raw_len = fh.read(2)
    if len(raw_len) < 2:
        raise FormatError(f"{path}: truncated header length")
    (header_len,) = struct.unpack("<H", raw_len)
    header = fh.read(header_len)
    if len(header) < header_len:
        raise FormatError(f"{path}: truncated header")
    if not header.endswith(b"\n"):
        raise FormatError(f"{path}: header not newline-terminated")
    try:
        info = ast.literal_eval(header.decode("latin1").strip())
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: unparseable header") from exc
    if not isinstance(info, dict) or set(info) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"{path}: header must declare descr, fortran_order, shape")
    descr, fortran, shape = info["descr"], info["fortran_order"], info["shape"]
    if not isinstance(shape, tuple) or not all(
        isinstance(s, int) and s >= 0 for s in shape
    ):
        raise FormatError(f"{path}: invalid shape {shape!r}")
    if fortran is not False:
        raise FormatError(f"{path}: fortran_order must be False, got {fortran!r}")
    return descr, fortran, shape


def peek_tensor(path: Path | str) -> tuple[str, tuple[int, ...]]:
    """Read just the header of a tensor file: (descr, shape)."""
    try:
        with open(path, "rb") as fh:
            descr, _, shape = _read_header(fh, path)
    except FileNotFoundError as exc:
        raise IoError(f"{path}: no such file") from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return descr, shape


def _read_payload(path, descr: str, shape: tuple[int, ...]) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            descr_found, _, shape_found = _read_header(fh, path)
            if descr_found != descr:
                raise FormatError(
                    f"{path}: dtype {descr_found!r}, expected {descr!r}"
                )
            if shape_found != shape:
                raise FormatError(f"{path}: shape changed under read")
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            itemsize = np.dtype(descr).itemsize
            payload = fh.read(count * itemsize)
    except FileNotFoundError as exc:
        raise IoError(f"{path}: no such file") from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(payload) != count * itemsize:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {count * itemsize}"
        )
    return np.frombuffer(payload, dtype=descr).reshape(shape)


def read_matrix(
    path: Path | str,
    *,
    source_layer: int | None = None,
    split: str | None = None,
) -> EmbeddingMatrix:
    """Load a 2-D float32 embedding matrix, validating format and finiteness."""
    descr, shape = peek_tensor(path)
    if descr != FLOAT_DESCR:
        raise FormatError(f"{path}: dtype {descr!r}, expected {FLOAT_DESCR!r}")
    if len(shape) != 2:
        raise FormatError(f"{path}: expected 2-D shape, got {shape}")
    values = _read_payload(path, descr, shape)
    if not np.isfinite(values).all():
        r, c = np.argwhere(~np.isfinite(values))[0]
        raise DataError(
            f"{path}: non-finite value at row {r}, col {c}", row=int(r), col=int(c)
        )
    return EmbeddingMatrix(values=values, source_layer=source_layer, split=split)


def write_matrix(matrix: EmbeddingMatrix, path: Path | str) -> None:
    """Write a matrix in the tensor container format; byte-deterministic."""
    _write_array(matrix.values, path, FLOAT_DESCR)


def read_labels(path: Path | str, num_classes: int) -> LabelVector:
    """Load a 1-D int64 label vector and validate it against ``num_classes``."""
    descr, shape = peek_tensor(path)
    if descr != LABEL_DESCR:
        raise FormatError(f"{path}: dtype {descr!r}, expected {LABEL_DESCR!r}")
    if len(shape) != 1:
        raise FormatError(f"{path}: expected 1-D shape, got {shape}")
    labels = _read_payload(path, descr, shape)
    try:
        return LabelVector(labels=labels, num_classes=num_classes)
    except DataError as exc:
        raise DataError(f"{path}: {exc}", row=exc.row, col=exc.col) from exc


def write_labels(labels: LabelVector, path: Path | str) -> None:
    _write_array(labels.labels, path, LABEL_DESCR)


_MANIFEST_KEYS = {
    "dataset_name",
    "num_classes",
    "baseline_accuracy",
    "layers",
    "train_labels_path",
    "test_labels_path",
    "image_dir",
}
_LAYER_KEYS = {"layer_id", "train_path", "test_path", "dims"}


def _expect(condition: bool, message: str) -> None:
    if not condition:
        raise ManifestError(message)


def load_manifest(path: Path | str, *, lax: bool = False) -> DatasetManifest:
    """Load and validate a dataset manifest, including cross-file shape checks.

    Paths inside the manifest are resolved relative to the manifest's own
    directory. With ``lax=True`` unknown keys are ignored instead of rejected.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ManifestError(f"missing file: {path}") from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from exc

    _expect(isinstance(raw, dict), f"{path}: manifest must be a JSON object")
    if not lax:
        unknown = set(raw) - _MANIFEST_KEYS
        _expect(not unknown, f"{path}: unknown manifest keys {sorted(unknown)}")
    for key in ("dataset_name", "num_classes", "layers",
                "train_labels_path", "test_labels_path"):
        _expect(key in raw, f"{path}: missing manifest key '{key}'")

    name = raw["dataset_name"]
    _expect(isinstance(name, str) and name != "", f"{path}: bad dataset_name")
    num_classes = raw["num_classes"]
    _expect(
        isinstance(num_classes, int) and num_classes >= 1,
        f"{path}: num_classes must be a positive integer",
    )
    baseline = raw.get("baseline_accuracy")
    if baseline is not None:
        _expect(
            isinstance(baseline, (int, float)) and 0.0 <= baseline <= 1.0,
            f"{path}: baseline_accuracy must lie in [0, 1]",
        )
        baseline = float(baseline)

    root = path.parent

    def resolve(rel) -> Path:
        _expect(isinstance(rel, str) and rel != "", f"{path}: bad path {rel!r}")
        return root / rel

    raw_layers = raw["layers"]
    _expect(
        isinstance(raw_layers, list) and len(raw_layers) >= 1,
        f"{path}: layers must be a non-empty list",
    )
    entries = []
    prev_id = 0
    for item in raw_layers:
        _expect(isinstance(item, dict), f"{path}: each layer must be an object")
        if not lax:
            unknown = set(item) - _LAYER_KEYS
            _expect(not unknown, f"{path}: unknown layer keys {sorted(unknown)}")
        for key in _LAYER_KEYS:
            _expect(key in item, f"{path}: layer missing key '{key}'")
        layer_id = item["layer_id"]
        _expect(
            isinstance(layer_id, int) and layer_id >= 1,
            f"{path}: layer_id must be a 1-based integer, got {layer_id!r}",
        )
        _expect(
            layer_id > prev_id,
            f"{path}: layer_ids must be strictly increasing "
            f"(layer {layer_id} after {prev_id})",
        )
        prev_id = layer_id
        dims = item["dims"]
        _expect(
            isinstance(dims, int) and dims >= 1,
            f"{path}: layer {layer_id}: dims must be a positive integer",
        )
        entries.append(
            LayerEntry(
                layer_id=layer_id,
                train_path=resolve(item["train_path"]),
                test_path=resolve(item["test_path"]),
                dims=dims,
            )
        )

    train_labels_path = resolve(raw["train_labels_path"])
    test_labels_path = resolve(raw["test_labels_path"])
    image_dir = raw.get("image_dir")
    if image_dir is not None:
        image_dir = resolve(image_dir)
        _expect(image_dir.is_dir(), f"missing file: {image_dir}")

    # Cross-file checks: headers only, payloads stay on disk.
    train_rows = test_rows = None
    for entry in entries:
        for split, file_path in (("train", entry.train_path), ("test", entry.test_path)):
            _expect(file_path.is_file(), f"missing file: {file_path}")
            descr, shape = peek_tensor(file_path)
            _expect(
                descr == FLOAT_DESCR and len(shape) == 2,
                f"layer {entry.layer_id}: {file_path} is not a 2-D float32 tensor",
            )
            rows, dims = shape
            _expect(
                dims == entry.dims,
                f"layer {entry.layer_id}: declared dims {entry.dims}, "
                f"file has {dims} ({file_path})",
            )
            if split == "train":
                if train_rows is None:
                    train_rows = rows
                _expect(
                    rows == train_rows,
                    f"layer {entry.layer_id}: train rows {rows} != shared {train_rows}",
                )
            else:
                if test_rows is None:
                    test_rows = rows
                _expect(
                    rows == test_rows,
                    f"layer {entry.layer_id}: test rows {rows} != shared {test_rows}",
                )

    for label_path, rows, split in (
        (train_labels_path, train_rows, "train"),
        (test_labels_path, test_rows, "test"),
    ):
        _expect(label_path.is_file(), f"missing file: {label_path}")
        descr, shape = peek_tensor(label_path)
        _expect(
            descr == LABEL_DESCR and len(shape) == 1,
            f"{label_path} is not a 1-D int64 label vector",
        )
        _expect(
            shape[0] == rows,
            f"{split} labels length {shape[0]} != {split} rows {rows} ({label_path})",
        )

    return DatasetManifest(
        dataset_name=name,
        num_classes=num_classes,
        layers=tuple(entries),
        train_labels_path=train_labels_path,
        test_labels_path=test_labels_path,
        baseline_accuracy=baseline,
        image_dir=image_dir,
    )


def normalize(matrix: EmbeddingMatrix, labels: LabelVector) -> NormalizedIndex:
    """Scale each nonzero row to unit L2 norm (double-precision arithmetic).

    Zero rows are left all-zero and recorded in ``zero_rows``; by convention
    their cosine distance to anything is 1.0.
    """
    if matrix.rows != len(labels):
        raise ShapeError(
            f"matrix has {matrix.rows} rows but labels has {len(labels)} entries"
        )
    n = matrix.rows
    unit = np.empty((n, matrix.dims), dtype=np.float64)
    zero: list[int] = []
    for start in range(0, n, _NORM_BLOCK):
        stop = min(start + _NORM_BLOCK, n)
        block = matrix.values[start:stop].astype(np.float64)
        norms = np.linalg.norm(block, axis=1)
        block_zero = norms == 0.0
        if block_zero.any():
            zero.extend((start + i) for i in np.flatnonzero(block_zero))
            norms = np.where(block_zero, 1.0, norms)
        unit[start:stop] = block / norms[:, None]
    return NormalizedIndex(
        unit_rows=unit,
        zero_rows=frozenset(zero),
        labels=labels,
        source_layer=matrix.source_layer,
    )
