"""Labelled feature pools: on-disk formats and synthetic Gaussian pools.

Two interchangeable formats:

* text ("feature table v1"): first line ``FT1 <dim>``, then one record per
  line, ``sample_id<TAB>class_label<TAB>v1 v2 ... vD`` with decimal floats.
* binary: magic ``FTB1``, little-endian u32 dim, u64 record count, then per
  record u16 id length + UTF-8 id, u16 label length + UTF-8 label, and D
  little-endian float64 values.

Relative paths resolve against ``OSFSL_DATA_DIR`` when that variable is set
and the path does not exist under the working directory.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FeatureTableError
from .rng import SplitMix64

TEXT_MAGIC = "FT1"
BINARY_MAGIC = b"FTB1"


@dataclass(frozen=True)
class FeatureSet:
    """Immutable pool of D-dimensional labelled feature vectors."""

    dim: int
    ids: tuple[str, ...]
    labels: tuple[str, ...]
    features: np.ndarray  # (n, dim) float64, read-only

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.dim:
            raise FeatureTableError(
                f"feature matrix shape {feats.shape} does not match dim {self.dim}"
            )
        n = feats.shape[0]
        if len(self.ids) != n or len(self.labels) != n:
            raise FeatureTableError("ids/labels/features lengths differ")
        if not np.all(np.isfinite(feats)):
            bad = int(np.argwhere(~np.isfinite(feats).all(axis=1))[0][0])
            raise FeatureTableError(f"non-finite feature values in record {bad}")
        seen: set[str] = set()
        for i, sid in enumerate(self.ids):
            if sid in seen:
                raise FeatureTableError(f"duplicate sample_id {sid!r} at record {i}")
            seen.add(sid)
        if len(set(self.labels)) < 2:
            raise FeatureTableError("a feature set needs at least 2 classes")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def class_names(self) -> list[str]:
        """Class labels in first-appearance order (the canonical ordering)."""
        out: list[str] = []
        seen: set[str] = set()
        for lab in self.labels:
            if lab not in seen:
                seen.add(lab)
                out.append(lab)
        return out

    def rows_by_class(self) -> dict[str, list[int]]:
        table: dict[str, list[int]] = {}
        for i, lab in enumerate(self.labels):
            table.setdefault(lab, []).append(i)
        return table

    def records(self):
        """Iterate (sample_id, class_label, feature_row) in row order."""
        for i in range(len(self.ids)):
            yield self.ids[i], self.labels[i], self.features[i]


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a Gaussian-cluster pool: uniform random class centers in
    [-center_scale, center_scale]^dim, isotropic within-class noise."""

    num_classes: int
    samples_per_class: int
    dim: int
    center_scale: float
    within_class_sigma: float
    seed: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise FeatureTableError("num_classes must be >= 2")
        if self.samples_per_class < 1:
            raise FeatureTableError("samples_per_class must be >= 1")
        if self.dim < 2:
            raise FeatureTableError("dim must be >= 2")
        if not self.center_scale > 0:
            raise FeatureTableError("center_scale must be > 0")
        if not self.within_class_sigma > 0:
            raise FeatureTableError("within_class_sigma must be > 0")


def resolve_data_path(path: str, for_write: bool = False) -> str:
    """Resolve a table path, using $OSFSL_DATA_DIR as the root for relative paths."""
    if os.path.isabs(path):
        return path
    root = os.environ.get("OSFSL_DATA_DIR")
    if for_write:
        return os.path.join(root, path) if root else path
    if os.path.exists(path):
        return path
    if root:
        candidate = os.path.join(root, path)
        if os.path.exists(candidate):
            return candidate
    return path


def load_feature_table(path: str) -> FeatureSet:
    """Load a feature table in either documented format (sniffed by magic)."""
    resolved = resolve_data_path(path)
    try:
        with open(resolved, "rb") as fh:
            head = fh.read(4)
    except OSError as exc:
        raise FeatureTableError(f"cannot read {path!r}: {exc}") from exc
    if head == BINARY_MAGIC:
        return _load_binary(resolved)
    return _load_text(resolved)


def _load_text(path: str) -> FeatureSet:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except UnicodeDecodeError as exc:
        raise FeatureTableError(f"{path}: not valid UTF-8 text: {exc}") from exc
    if not lines:
        raise FeatureTableError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 2 or header[0] != TEXT_MAGIC:
        raise FeatureTableError(f"{path}: line 1: bad header {lines[0]!r}")
    try:
        dim = int(header[1])
    except ValueError:
        raise FeatureTableError(f"{path}: line 1: bad dimension {header[1]!r}")
    ids: list[str] = []
    labels: list[str] = []
    rows: list[list[float]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FeatureTableError(
                f"{path}: line {lineno}: expected id<TAB>label<TAB>values"
            )
        sid, label, blob = parts
        try:
            values = [float(tok) for tok in blob.split()]
        except ValueError:
            raise FeatureTableError(f"{path}: line {lineno}: unparseable float")
        if len(values) != dim:
            raise FeatureTableError(
                f"{path}: line {lineno}: dimension mismatch "
                f"(got {len(values)}, header says {dim})"
            )
        ids.append(sid)
        labels.append(label)
        rows.append(values)
    return _build(path, dim, ids, labels, rows)


def _load_binary(path: str) -> FeatureSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != BINARY_MAGIC:
        raise FeatureTableError(f"{path}: bad magic")
    try:
        dim, count = struct.unpack_from("<IQ", blob, 4)
        if dim < 1:
            raise FeatureTableError(f"{path}: dimension must be >= 1, got {dim}")
        # each record is at least 4 length bytes plus dim doubles; a count
        # that cannot fit in the file means a corrupt header
        if 16 + count * (4 + 8 * dim) > len(blob):
            raise FeatureTableError(
                f"{path}: header claims {count} records of dim {dim}, "
                f"file holds only {len(blob)} bytes"
            )
        offset = 16
        ids: list[str] = []
        labels: list[str] = []
        feats = np.empty((count, dim), dtype=np.float64)
        for i in range(count):
            (id_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            sid = blob[offset : offset + id_len].decode("utf-8")
            offset += id_len
            (lab_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            label = blob[offset : offset + lab_len].decode("utf-8")
            offset += lab_len
            feats[i] = np.frombuffer(blob, dtype="<f8", count=dim, offset=offset)
            offset += 8 * dim
            ids.append(sid)
            labels.append(label)
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise FeatureTableError(f"{path}: truncated or corrupt record: {exc}") from exc
    if offset != len(blob):
        raise FeatureTableError(f"{path}: {len(blob) - offset} trailing bytes")
    return _build(path, dim, ids, labels, feats)


def _build(path, dim, ids, labels, rows) -> FeatureSet:
    try:
        return FeatureSet(
            dim=dim,
            ids=tuple(ids),
            labels=tuple(labels),
            features=np.asarray(rows, dtype=np.float64).reshape(len(ids), dim),
        )
    except FeatureTableError as exc:
        raise FeatureTableError(f"{path}: {exc}") from exc


def write_feature_table(fs: FeatureSet, path: str, format: str = "text") -> None:
    """Write fs so that load_feature_table(path) returns an identical set."""
    resolved = resolve_data_path(path, for_write=True)
    if format == "text":
        with open(resolved, "w", encoding="utf-8") as fh:
            fh.write(f"{TEXT_MAGIC} {fs.dim}\n")
            for sid, label, row in fs.records():
                # repr() floats round-trip exactly through float().
                values = " ".join(repr(float(v)) for v in row)
                fh.write(f"{sid}\t{label}\t{values}\n")
    elif format == "binary":
        with open(resolved, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(struct.pack("<IQ", fs.dim, len(fs)))
            for sid, label, row in fs.records():
                sid_b = sid.encode("utf-8")
                lab_b = label.encode("utf-8")
                fh.write(struct.pack("<H", len(sid_b)))
                fh.write(sid_b)
                fh.write(struct.pack("<H", len(lab_b)))
                fh.write(lab_b)
                fh.write(np.ascontiguousarray(row, dtype="<f8").tobytes())
    else:
        raise FeatureTableError(f"unknown format {format!r} (use 'text' or 'binary')")


def synth_gaussian_features(spec: SyntheticSpec) -> FeatureSet:
    """Deterministic Gaussian-cluster pool.

    Draw order is fixed: all class centers first (class-major, then
    dimension), then for each class every sample's noise vector. Equal
    specs therefore produce bit-identical pools.
    """
    rng = SplitMix64(spec.seed)
    centers = np.empty((spec.num_classes, spec.dim), dtype=np.float64)
    for j in range(spec.num_classes):
        for d in range(spec.dim):
            centers[j, d] = rng.uniform_in(-spec.center_scale, spec.center_scale)
    n = spec.num_classes * spec.samples_per_class
    feats = np.empty((n, spec.dim), dtype=np.float64)
    ids: list[str] = []
    labels: list[str] = []
    row = 0
    for j in range(spec.num_classes):
        label = f"g{j:03d}"
        for i in range(spec.samples_per_class):
            for d in range(spec.dim):
                feats[row, d] = centers[j, d] + spec.within_class_sigma * rng.normal()
            ids.append(f"{label}-{i:05d}")
            labels.append(label)
            row += 1
    return FeatureSet(dim=spec.dim, ids=tuple(ids), labels=tuple(labels), features=feats)
