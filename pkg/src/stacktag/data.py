"""Dataset model and file ingestion.

A dataset is a set of aligned components: an ordered list of sample ids, a
tag vocabulary, per-sample tag sets, one dense feature matrix per modality,
and an optional block of side features ("extra"). Feature matrices arrive
either as plain matrices or as variable-length frame sequences that are
pooled to fixed vectors at assembly time.

Binary feature file layout (little-endian):

    magic   4 bytes  b"MMFB"
    version u32      1
    kind    u8       0 = matrix, 1 = sequence set
    n       u64      sample count
    d       u64      feature dimension
    kind 0: n*d float32, row-major
    kind 1: per sample, u32 frame count t followed by t*d float32

The manifest is a JSON object with keys ``sample_ids``, ``modalities``
(name -> feature file path), ``labels``, ``extra`` (optional) and
``vocabulary``; relative paths resolve against the manifest's directory.
Labels are a JSON array of arrays of tag ids aligned with ``sample_ids``;
an empty array marks the sample as unlabeled (kept for prediction, excluded
from training). The vocabulary is a JSON array of ``{id, name, category?}``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, CorruptionError, FormatError, ValidationError

MAGIC = b"MMFB"
FORMAT_VERSION = 1
KIND_MATRIX = 0
KIND_SEQUENCE = 1

_HEADER = struct.Struct("<4sIBQQ")

MultiLabelTarget = frozenset  # tag ids of one sample; empty means unlabeled


@dataclass(frozen=True)
class TagVocabulary:
    """Ordered tag label space, optionally partitioned into categories."""

    names: tuple[str, ...]
    categories: tuple[int, ...] | None = None

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValidationError("vocabulary names must be unique")
        if self.categories is not None:
            if len(self.categories) != len(self.names):
                raise ValidationError("one category per tag required")
            cats = set(self.categories)
            if any((not isinstance(c, int)) or c < 0 for c in cats):
                raise ValidationError("category indices must be non-negative integers")
            if cats and cats != set(range(max(cats) + 1)):
                raise ValidationError("category indices must be contiguous from 0")

    def __len__(self) -> int:
        return len(self.names)

    @property
    def category_of(self) -> dict[int, int] | None:
        if self.categories is None:
            return None
        return dict(enumerate(self.categories))


@dataclass
class FeatureMatrix:
    """Dense per-modality sample-by-dimension matrix; the unit of ingestion."""

    modality: str
    values: np.ndarray  # (n, d) float32, finite

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValidationError(f"modality {self.modality!r} contains non-finite values")
        self.values = np.ascontiguousarray(v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass
class SequenceFeatureSet:
    """Variable-length frame sequences (t_i x d) for one modality."""

    modality: str
    frames: list[np.ndarray]

    def __post_init__(self):
        if not self.frames:
            raise ValidationError("sequence set must contain at least one sample")
        d = None
        cleaned = []
        for i, f in enumerate(self.frames):
            a = np.asarray(f, dtype=np.float32)
            if a.ndim != 2 or a.shape[0] < 1:
                raise ValidationError(f"sample {i}: frames must form a t x d matrix with t >= 1")
            if d is None:
                d = a.shape[1]
            elif a.shape[1] != d:
                raise ValidationError(f"sample {i}: frame dimension {a.shape[1]} != {d}")
            if not np.isfinite(a).all():
                raise ValidationError(f"sample {i}: non-finite frame values")
            cleaned.append(np.ascontiguousarray(a))
        self.frames = cleaned

    @property
    def n(self) -> int:
        return len(self.frames)

    @property
    def d(self) -> int:
        return self.frames[0].shape[1]


@dataclass(frozen=True)
class DatasetManifest:
    sample_ids: tuple[str, ...]
    modality_files: dict[str, Path]
    label_file: Path
    vocabulary_file: Path
    extra_file: Path | None = None

    def __post_init__(self):
        if not self.sample_ids:
            raise ValidationError("manifest lists no samples")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ValidationError("sample ids must be unique")
        if not self.modality_files:
            raise ValidationError("manifest lists no modalities")

    def referenced_files(self) -> list[Path]:
        files = list(self.modality_files.values()) + [self.label_file, self.vocabulary_file]
        if self.extra_file is not None:
            files.append(self.extra_file)
        return files


@dataclass
class Dataset:
    """Immutable-by-convention bundle of aligned dataset components."""

    sample_ids: tuple[str, ...]
    vocabulary: TagVocabulary
    targets: list[MultiLabelTarget]
    features: dict[str, FeatureMatrix]
    extra: np.ndarray  # (n, e) float32, e may be 0

    def __post_init__(self):
        n = len(self.sample_ids)
        if len(self.targets) != n:
            raise AlignmentError(f"{len(self.targets)} label rows for {n} samples")
        for name, fm in self.features.items():
            if fm.n != n:
                raise AlignmentError(f"modality {name!r} has {fm.n} rows, expected {n}")
        self.extra = np.asarray(self.extra, dtype=np.float32)
        if self.extra.ndim != 2 or self.extra.shape[0] != n:
            raise AlignmentError(f"extra features have shape {self.extra.shape}, expected ({n}, e)")
        if self.extra.size and not np.isfinite(self.extra).all():
            raise ValidationError("extra features contain non-finite values")
        t = len(self.vocabulary)
        for i, pos in enumerate(self.targets):
            if any((not isinstance(p, (int, np.integer))) or p < 0 or p >= t for p in pos):
                raise ValidationError(f"sample {i}: tag id outside 0..{t - 1}")

    @property
    def n(self) -> int:
        return len(self.sample_ids)

    @property
    def tag_count(self) -> int:
        return len(self.vocabulary)

    @property
    def extra_dim(self) -> int:
        return self.extra.shape[1]

    def labeled_mask(self) -> np.ndarray:
        return np.array([len(t) > 0 for t in self.targets], dtype=bool)

    def multihot_targets(self) -> np.ndarray:
        y = np.zeros((self.n, self.tag_count), dtype=np.float64)
        for i, pos in enumerate(self.targets):
            for p in pos:
                y[i, p] = 1.0
        return y

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            sample_ids=tuple(self.sample_ids[i] for i in idx),
            vocabulary=self.vocabulary,
            targets=[self.targets[i] for i in idx],
            features={
                name: FeatureMatrix(name, fm.values[idx]) for name, fm in self.features.items()
            },
            extra=self.extra[idx],
        )


# ---------------------------------------------------------------------------
# binary feature files


def _check_finite(values: np.ndarray, path) -> None:
    if not np.isfinite(values).all():
        raise ValidationError(f"{path}: non-finite feature values")


def _parse_header(data: bytes, path) -> tuple[int, int, int]:
    if len(data) < _HEADER.size:
        raise CorruptionError(f"{path}: file shorter than header")
    magic, version, kind, n, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if kind not in (KIND_MATRIX, KIND_SEQUENCE):
        raise FormatError(f"{path}: unknown kind {kind}")
    return kind, n, d


def load_feature_matrix(path, modality: str | None = None) -> FeatureMatrix:
    """Load a kind-0 feature file into a FeatureMatrix.

    Raises FormatError on bad magic/version/kind, CorruptionError when the
    byte count disagrees with the declared shape, ValidationError on
    non-finite values.
    """
    path = Path(path)
    data = path.read_bytes()
    kind, n, d = _parse_header(data, path)
    if kind != KIND_MATRIX:
        raise FormatError(f"{path}: expected a matrix file, found kind {kind}")
    expected = _HEADER.size + n * d * 4
    if len(data) != expected:
        raise CorruptionError(f"{path}: {len(data)} bytes, expected {expected}")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(n, d)
    _check_finite(values, path)
    return FeatureMatrix(modality or path.stem, values.copy())


def write_feature_matrix(matrix: FeatureMatrix, path) -> None:
    path = Path(path)
    values = np.ascontiguousarray(matrix.values, dtype="<f4")
    _check_finite(values, path)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, KIND_MATRIX, matrix.n, matrix.d)
    path.write_bytes(header + values.tobytes())


def load_sequence_set(path, modality: str | None = None) -> SequenceFeatureSet:
    """Load a kind-1 feature file into a SequenceFeatureSet."""
    path = Path(path)
    data = path.read_bytes()
    kind, n, d = _parse_header(data, path)
    if kind != KIND_SEQUENCE:
        raise FormatError(f"{path}: expected a sequence file, found kind {kind}")
    offset = _HEADER.size
    frames = []
    for i in range(n):
        if offset + 4 > len(data):
            raise CorruptionError(f"{path}: truncated before sample {i}")
        (t,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if t < 1:
            raise ValidationError(f"{path}: sample {i} declares {t} frames")
        nbytes = t * d * 4
        if offset + nbytes > len(data):
            raise CorruptionError(f"{path}: truncated inside sample {i}")
        block = np.frombuffer(data, dtype="<f4", count=t * d, offset=offset).reshape(t, d)
        _check_finite(block, path)
        frames.append(block.copy())
        offset += nbytes
    if offset != len(data):
        raise CorruptionError(f"{path}: {len(data) - offset} trailing bytes")
    return SequenceFeatureSet(modality or path.stem, frames)


def write_sequence_set(seqs: SequenceFeatureSet, path) -> None:
    path = Path(path)
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, KIND_SEQUENCE, seqs.n, seqs.d)]
    for f in seqs.frames:
        a = np.ascontiguousarray(f, dtype="<f4")
        parts.append(struct.pack("<I", a.shape[0]))
        parts.append(a.tobytes())
    path.write_bytes(b"".join(parts))


def read_feature_file(path, modality: str | None = None) -> FeatureMatrix | SequenceFeatureSet:
    """Load either file kind, dispatching on the header."""
    data = Path(path).read_bytes()
    kind, _, _ = _parse_header(data, path)
    if kind == KIND_MATRIX:
        return load_feature_matrix(path, modality)
    return load_sequence_set(path, modality)


# ---------------------------------------------------------------------------
# temporal pooling

POOL_MODES = ("mean", "max")


def temporal_pool(frames: np.ndarray, mode: str = "mean") -> np.ndarray:
    """Reduce one sample's t x d frame sequence to a length-d vector."""
    if mode not in POOL_MODES:
        raise ValidationError(f"unknown pooling mode {mode!r}")
    a = np.asarray(frames)
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValidationError("temporal_pool expects a non-empty t x d matrix")
    if mode == "mean":
        return a.mean(axis=0)
    return a.max(axis=0)


def pool_sequence_set(seqs: SequenceFeatureSet, mode: str = "mean") -> FeatureMatrix:
    pooled = np.stack([temporal_pool(f, mode) for f in seqs.frames])
    return FeatureMatrix(seqs.modality, pooled)


# ---------------------------------------------------------------------------
# manifests, labels, vocabularies


def _reject_duplicate_keys(pairs):
    keys = [k for k, _ in pairs]
    if len(set(keys)) != len(keys):
        dupes = sorted({k for k in keys if keys.count(k) > 1})
        raise ValidationError(f"duplicate JSON keys: {dupes}")
    return dict(pairs)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(), object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    missing = {"sample_ids", "modalities", "labels", "vocabulary"} - raw.keys()
    if missing:
        raise ValidationError(f"{path}: manifest missing keys {sorted(missing)}")
    base = path.parent

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    modalities = raw["modalities"]
    if not isinstance(modalities, dict):
        raise ValidationError(f"{path}: 'modalities' must map names to paths")
    manifest = DatasetManifest(
        sample_ids=tuple(raw["sample_ids"]),
        modality_files={name: resolve(p) for name, p in modalities.items()},
        label_file=resolve(raw["labels"]),
        vocabulary_file=resolve(raw["vocabulary"]),
        extra_file=resolve(raw["extra"]) if raw.get("extra") else None,
    )
    for f in manifest.referenced_files():
        if not f.exists():
            raise ValidationError(f"{path}: referenced file missing: {f}")
    return manifest


def load_vocabulary(path) -> TagVocabulary:
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, list) or not raw:
        raise ValidationError(f"{path}: vocabulary must be a non-empty JSON array")
    entries = sorted(raw, key=lambda e: e["id"])
    ids = [e["id"] for e in entries]
    if ids != list(range(len(entries))):
        raise ValidationError(f"{path}: tag ids must be contiguous from 0")
    names = tuple(str(e["name"]) for e in entries)
    cats = None
    if any("category" in e for e in entries):
        if not all("category" in e for e in entries):
            raise ValidationError(f"{path}: either all tags carry a category or none")
        cats = tuple(int(e["category"]) for e in entries)
    return TagVocabulary(names, cats)


def load_labels(path, tag_count: int) -> list[MultiLabelTarget]:
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, list):
        raise ValidationError(f"{path}: labels must be a JSON array of arrays")
    targets = []
    for i, row in enumerate(raw):
        if not isinstance(row, list):
            raise ValidationError(f"{path}: row {i} is not an array")
        for t in row:
            if not isinstance(t, int) or t < 0 or t >= tag_count:
                raise ValidationError(f"{path}: row {i} has invalid tag id {t!r}")
        if len(set(row)) != len(row):
            raise ValidationError(f"{path}: row {i} repeats a tag id")
        targets.append(frozenset(row))
    return targets


def assemble_dataset(manifest: DatasetManifest | str | Path, pool_mode: str = "mean") -> Dataset:
    """Load and align every component referenced by a manifest.

    Sequence modalities are pooled with ``pool_mode``; sample order follows
    the manifest exactly.
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    n = len(manifest.sample_ids)
    vocabulary = load_vocabulary(manifest.vocabulary_file)
    targets = load_labels(manifest.label_file, len(vocabulary))
    if len(targets) != n:
        raise AlignmentError(
            f"{manifest.label_file}: {len(targets)} label rows for {n} sample ids"
        )
    features: dict[str, FeatureMatrix] = {}
    for name, fpath in manifest.modality_files.items():
        loaded = read_feature_file(fpath, modality=name)
        if isinstance(loaded, SequenceFeatureSet):
            loaded = pool_sequence_set(loaded, pool_mode)
        if loaded.n != n:
            raise AlignmentError(f"{fpath}: {loaded.n} rows for {n} sample ids")
        features[name] = loaded
    if manifest.extra_file is not None:
        extra = load_feature_matrix(manifest.extra_file, "extra").values
        if extra.shape[0] != n:
            raise AlignmentError(f"{manifest.extra_file}: {extra.shape[0]} rows for {n} sample ids")
    else:
        extra = np.zeros((n, 0), dtype=np.float32)
    return Dataset(manifest.sample_ids, vocabulary, targets, features, extra)


def write_dataset(dataset: Dataset, out_dir) -> Path:
    """Write a dataset to disk in the manifest layout; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab_entries = []
    for i, name in enumerate(dataset.vocabulary.names):
        entry: dict = {"id": i, "name": name}
        if dataset.vocabulary.categories is not None:
            entry["category"] = dataset.vocabulary.categories[i]
        vocab_entries.append(entry)
    (out / "vocabulary.json").write_text(json.dumps(vocab_entries, indent=2) + "\n")
    labels = [sorted(int(t) for t in pos) for pos in dataset.targets]
    (out / "labels.json").write_text(json.dumps(labels, indent=2) + "\n")
    modality_files = {}
    for name, fm in dataset.features.items():
        fname = f"{name}.mmfb"
        write_feature_matrix(fm, out / fname)
        modality_files[name] = fname
    manifest: dict = {
        "sample_ids": list(dataset.sample_ids),
        "modalities": modality_files,
        "labels": "labels.json",
        "vocabulary": "vocabulary.json",
    }
    if dataset.extra_dim > 0:
        write_feature_matrix(FeatureMatrix("extra", dataset.extra), out / "extra.mmfb")
        manifest["extra"] = "extra.mmfb"
    else:
        manifest["extra"] = None
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path
