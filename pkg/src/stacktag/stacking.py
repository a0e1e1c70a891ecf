"""Two-tier stacking: k-fold out-of-fold base-model probabilities become
meta-features for a dropout MLP.

The central property is no-leakage: OOF row i comes from the fold model
whose training split excludes sample i, so that row's producing function
is independent of sample i's own features and labels. Every (block, fold)
training unit is seeded by a deterministic function of the global seed,
the block label, and the fold index, which makes results independent of
any parallel scheduling.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset
from .errors import FormatError, ValidationError
from .learners import (
    MlpModel,
    TrainConfig,
    load_model,
    save_model,
    train_linear,
    train_mlp,
)
from .metrics import RankedPrediction, top_k_predictions
from .synth import derive_seed

log = logging.getLogger(__name__)

STACKED_FORMAT = "MMST"
STACKED_VERSION = 1

LEARNER_KINDS = ("logistic", "squared_hinge", "mlp")


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return len(self.fold_of)

    def fold_indices(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == f)

    def train_indices(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != f)


def assign_folds(
    n: int, k: int = 5, seed: int = 0, stratify_by: Sequence[int] | None = None
) -> FoldAssignment:
    """Deal a seeded shuffle of 0..n-1 round-robin into k folds.

    Fold sizes differ by at most one. With ``stratify_by``, the deal runs
    group by group so each fold sees a near-proportional share of every
    group; default is the plain random split.
    """
    if k < 2:
        raise ValidationError(f"fold count must be >= 2, got {k}")
    if n < k:
        raise ValidationError(f"need at least {k} samples for {k} folds, got {n}")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    if stratify_by is None:
        perm = rng.permutation(n)
        fold_of[perm] = np.arange(n) % k
    else:
        groups = np.asarray(stratify_by)
        if groups.shape != (n,):
            raise ValidationError(f"stratify_by must have length {n}")
        cursor = 0
        for g in np.unique(groups):
            members = np.flatnonzero(groups == g)
            rng.shuffle(members)
            fold_of[members] = (cursor + np.arange(len(members))) % k
            cursor += len(members)
    return FoldAssignment(k, fold_of, seed)


@dataclass(frozen=True)
class LearnerSpec:
    """What to train per (modality, block): a linear loss or an MLP."""

    kind: str = "mlp"
    hidden: tuple[int, ...] = (64,)
    dropout: float = 0.0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValidationError(f"unknown learner kind {self.kind!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def block_name(self, modality: str) -> str:
        return f"{modality}:{self.kind}"


@dataclass
class OofBlock:
    modality: str
    spec: LearnerSpec
    probs: np.ndarray  # (n, tags), row i from the fold model not trained on i
    fold_models: list
    warnings: list[str] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.spec.block_name(self.modality)

    @property
    def tag_count(self) -> int:
        return self.probs.shape[1]


def _train_unit(
    x: np.ndarray,
    targets: Sequence[frozenset],
    tags: int,
    spec: LearnerSpec,
    train_idx: np.ndarray,
    predict_idx: np.ndarray,
    unit_seed: int,
    unit_label: str,
):
    """One (block, fold) training: fit on train_idx, predict on predict_idx."""
    if len(train_idx) == 0:
        raise ValidationError(f"{unit_label}: empty training split")
    warnings = []
    positives = np.zeros(tags, dtype=np.int64)
    for i in train_idx:
        for t in targets[i]:
            positives[t] += 1
    for t in np.flatnonzero(positives == 0):
        warnings.append(f"{unit_label}: no positive examples for tag {int(t)} in training split")
    y = [targets[i] for i in train_idx]
    if spec.kind == "mlp":
        model = train_mlp(
            x[train_idx], y, tags, hidden=spec.hidden, dropout=spec.dropout,
            cfg=spec.train, seed=unit_seed,
        )
    else:
        model = train_linear(x[train_idx], y, tags, loss_kind=spec.kind, cfg=spec.train, seed=unit_seed)
    probs = model.predict_proba(x[predict_idx])
    return model, probs, warnings


def oof_meta_features(
    dataset: Dataset,
    modality: str,
    spec: LearnerSpec,
    folds: FoldAssignment,
    seed: int = 0,
    executor: ThreadPoolExecutor | None = None,
) -> OofBlock:
    """Per fold f: train on the labeled complement of f, predict fold f's rows.

    Unlabeled samples never join a training split but still get OOF rows so
    downstream prediction covers the full dataset.
    """
    if modality not in dataset.features:
        raise ValidationError(f"modality {modality!r} not in dataset")
    if folds.n != dataset.n:
        raise ValidationError(f"fold assignment covers {folds.n} samples, dataset has {dataset.n}")
    x = dataset.features[modality].values.astype(np.float64)
    tags = dataset.tag_count
    labeled = dataset.labeled_mask()
    name = spec.block_name(modality)

    def unit(f: int):
        train_idx = folds.train_indices(f)
        train_idx = train_idx[labeled[train_idx]]
        unit_seed = derive_seed(seed, name, str(f))
        return _train_unit(
            x, dataset.targets, tags, spec, train_idx, folds.fold_indices(f),
            unit_seed, f"{name} fold {f}",
        )

    if executor is None:
        results = [unit(f) for f in range(folds.k)]
    else:
        results = list(executor.map(unit, range(folds.k)))

    probs = np.empty((dataset.n, tags), dtype=np.float64)
    fold_models = []
    warnings = []
    for f, (model, fold_probs, unit_warnings) in enumerate(results):
        probs[folds.fold_indices(f)] = fold_probs
        fold_models.append(model)
        warnings.extend(unit_warnings)
    for w in warnings:
        log.warning("%s", w)
    return OofBlock(modality, spec, probs, fold_models, warnings)


@dataclass
class MetaFeatureMatrix:
    values: np.ndarray  # (n, M*T + e)
    column_map: list[tuple[str, int]]  # (block name or "extra", tag/extra index)
    extra_mean: np.ndarray | None = None
    extra_std: np.ndarray | None = None

    @property
    def width(self) -> int:
        return self.values.shape[1]


def zscore_stats(extra: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = extra.mean(axis=0)
    std = extra.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return mean, std


def build_meta_matrix(
    blocks: Sequence[OofBlock],
    extra: np.ndarray | None = None,
    extra_stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> MetaFeatureMatrix:
    """Concatenate OOF blocks in declared order, then z-scored extras."""
    if not blocks:
        raise ValidationError("need at least one OOF block")
    n = blocks[0].probs.shape[0]
    tags = blocks[0].tag_count
    for b in blocks:
        if b.probs.shape != (n, tags):
            raise ValidationError(
                f"block {b.name!r} has shape {b.probs.shape}, expected {(n, tags)}"
            )
    parts = [b.probs for b in blocks]
    column_map = [(b.name, t) for b in blocks for t in range(tags)]
    mean = std = None
    if extra is not None and extra.size:
        extra = np.asarray(extra, dtype=np.float64)
        if extra.shape[0] != n:
            raise ValidationError(f"extras have {extra.shape[0]} rows, blocks have {n}")
        if extra_stats is not None:
            mean, std = extra_stats
        else:
            mean, std = zscore_stats(extra)
        parts.append((extra - mean) / std)
        column_map.extend(("extra", j) for j in range(extra.shape[1]))
    return MetaFeatureMatrix(np.hstack(parts), column_map, mean, std)


@dataclass
class StackedBlock:
    modality: str
    spec: LearnerSpec
    fold_models: list

    @property
    def name(self) -> str:
        return self.spec.block_name(self.modality)


@dataclass
class StackedModel:
    folds: FoldAssignment
    blocks: list[StackedBlock]
    meta: MlpModel
    tag_count: int
    extra_mean: np.ndarray | None = None
    extra_std: np.ndarray | None = None

    @property
    def use_extra(self) -> bool:
        return self.extra_mean is not None

    @property
    def modalities(self) -> list[str]:
        seen = dict.fromkeys(b.modality for b in self.blocks)
        return list(seen)

    @property
    def meta_width(self) -> int:
        e = 0 if self.extra_mean is None else len(self.extra_mean)
        return len(self.blocks) * self.tag_count + e


def _normalize_specs(
    modality_specs: Sequence[tuple[str, LearnerSpec]] | dict,
) -> list[tuple[str, LearnerSpec]]:
    if isinstance(modality_specs, dict):
        flat = []
        for modality, specs in modality_specs.items():
            if isinstance(specs, LearnerSpec):
                specs = [specs]
            flat.extend((modality, s) for s in specs)
        return flat
    return list(modality_specs)


def train_stacked(
    dataset: Dataset,
    modality_specs: Sequence[tuple[str, LearnerSpec]] | dict,
    k: int = 5,
    meta_hidden: Sequence[int] = (512, 256),
    meta_dropout: float = 0.3,
    meta_train: TrainConfig | None = None,
    seed: int = 0,
    use_extra: bool = True,
    threads: int = 1,
) -> StackedModel:
    """Full stacking pipeline: folds, per-block OOF features, meta training.

    The meta MLP trains on labeled rows only; unlabeled rows still receive
    OOF meta-features for later prediction.
    """
    specs = _normalize_specs(modality_specs)
    if not specs:
        raise ValidationError("need at least one (modality, learner) pair")
    labeled = dataset.labeled_mask()
    if not labeled.any():
        raise ValidationError("dataset has no labeled samples to train on")
    if threads < 1:
        raise ValidationError(f"threads must be >= 1, got {threads}")
    folds = assign_folds(dataset.n, k, seed)

    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        blocks = [
            oof_meta_features(dataset, modality, spec, folds, seed, executor)
            for modality, spec in specs
        ]
    finally:
        if executor is not None:
            executor.shutdown()

    extra = dataset.extra if (use_extra and dataset.extra_dim > 0) else None
    meta_matrix = build_meta_matrix(blocks, extra)
    meta_cfg = meta_train if meta_train is not None else TrainConfig()
    rows = np.flatnonzero(labeled)
    meta = train_mlp(
        meta_matrix.values[rows],
        [dataset.targets[i] for i in rows],
        dataset.tag_count,
        hidden=meta_hidden,
        dropout=meta_dropout,
        cfg=meta_cfg,
        seed=derive_seed(seed, "meta"),
    )
    return StackedModel(
        folds=folds,
        blocks=[StackedBlock(b.modality, b.spec, b.fold_models) for b in blocks],
        meta=meta,
        tag_count=dataset.tag_count,
        extra_mean=meta_matrix.extra_mean,
        extra_std=meta_matrix.extra_std,
    )


def stacked_meta_inputs(
    model: StackedModel, features: dict[str, np.ndarray], extra: np.ndarray | None
) -> np.ndarray:
    """Meta-feature rows for new samples: averaged fold probabilities per
    block, in training column order, plus extras normalized with the stored
    statistics."""
    parts = []
    n = None
    for block in model.blocks:
        if block.modality not in features:
            raise ValidationError(f"missing features for modality {block.modality!r}")
        x = np.asarray(features[block.modality], dtype=np.float64)
        if n is None:
            n = x.shape[0]
        elif x.shape[0] != n:
            raise ValidationError("modalities disagree on sample count")
        expected = block.fold_models[0].dim
        if x.ndim != 2 or x.shape[1] != expected:
            raise ValidationError(
                f"modality {block.modality!r}: model expects {expected} features, "
                f"got shape {x.shape}"
            )
        avg = None
        for fold_model in block.fold_models:
            p = fold_model.predict_proba(x)
            avg = p if avg is None else avg + p
        parts.append(avg / len(block.fold_models))
    if model.use_extra:
        if extra is None:
            raise ValidationError("model was trained with extra features; none supplied")
        extra = np.asarray(extra, dtype=np.float64)
        if extra.shape != (n, len(model.extra_mean)):
            raise ValidationError(
                f"extras must be ({n}, {len(model.extra_mean)}), got {extra.shape}"
            )
        parts.append((extra - model.extra_mean) / model.extra_std)
    return np.hstack(parts)


def predict_stacked_proba(
    model: StackedModel, features: dict[str, np.ndarray], extra: np.ndarray | None = None
) -> np.ndarray:
    return model.meta.predict_proba(stacked_meta_inputs(model, features, extra))


def predict_stacked(
    model: StackedModel,
    features: dict[str, np.ndarray],
    extra: np.ndarray | None = None,
    top_k: int = 20,
    sample_ids: Sequence[str] | None = None,
) -> list[RankedPrediction]:
    """Ranked per-tag confidences, sorted descending with ties to the lower tag id."""
    probs = predict_stacked_proba(model, features, extra)
    return top_k_predictions(probs, top_k, sample_ids)


def predict_stacked_dataset(
    model: StackedModel, dataset: Dataset, top_k: int = 20
) -> list[RankedPrediction]:
    features = {m: dataset.features[m].values for m in model.modalities if m in dataset.features}
    extra = dataset.extra if model.use_extra else None
    return predict_stacked(model, features, extra, top_k, dataset.sample_ids)


# ---------------------------------------------------------------------------
# persistence: directory bundle of stacked.json + per-(block, fold) model files


def _spec_to_json(spec: LearnerSpec) -> dict:
    return {
        "kind": spec.kind,
        "hidden": list(spec.hidden),
        "dropout": spec.dropout,
        "train": asdict(spec.train),
    }


def _spec_from_json(obj: dict) -> LearnerSpec:
    return LearnerSpec(
        kind=obj["kind"],
        hidden=tuple(obj["hidden"]),
        dropout=float(obj["dropout"]),
        train=TrainConfig(**obj["train"]),
    )


def save_stacked(model: StackedModel, out_dir) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "models").mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": STACKED_FORMAT,
        "version": STACKED_VERSION,
        "k": model.folds.k,
        "seed": model.folds.seed,
        "fold_of": [int(f) for f in model.folds.fold_of],
        "tag_count": model.tag_count,
        "extra_mean": None if model.extra_mean is None else [float(v) for v in model.extra_mean],
        "extra_std": None if model.extra_std is None else [float(v) for v in model.extra_std],
        "blocks": [
            {
                "modality": b.modality,
                "spec": _spec_to_json(b.spec),
                "files": [f"models/b{i}_f{f}.mmlm" for f in range(model.folds.k)],
            }
            for i, b in enumerate(model.blocks)
        ],
        "meta_file": "models/meta.mmlm",
    }
    for i, b in enumerate(model.blocks):
        for f, fold_model in enumerate(b.fold_models):
            save_model(fold_model, out_dir / "models" / f"b{i}_f{f}.mmlm")
    save_model(model.meta, out_dir / "models" / "meta.mmlm")
    path = out_dir / "stacked.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def load_stacked(model_dir) -> StackedModel:
    model_dir = Path(model_dir)
    path = model_dir / "stacked.json"
    if not path.exists():
        raise ValidationError(f"{model_dir}: no stacked.json found")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if manifest.get("format") != STACKED_FORMAT:
        raise FormatError(f"{path}: not a stacked model manifest")
    if manifest.get("version") != STACKED_VERSION:
        raise FormatError(f"{path}: unsupported version {manifest.get('version')!r}")
    folds = FoldAssignment(
        int(manifest["k"]),
        np.asarray(manifest["fold_of"], dtype=np.int64),
        int(manifest["seed"]),
    )
    blocks = []
    for entry in manifest["blocks"]:
        spec = _spec_from_json(entry["spec"])
        fold_models = [load_model(model_dir / rel) for rel in entry["files"]]
        blocks.append(StackedBlock(entry["modality"], spec, fold_models))
    meta = load_model(model_dir / manifest["meta_file"])
    mean = manifest["extra_mean"]
    std = manifest["extra_std"]
    return StackedModel(
        folds=folds,
        blocks=blocks,
        meta=meta,
        tag_count=int(manifest["tag_count"]),
        extra_mean=None if mean is None else np.asarray(mean, dtype=np.float64),
        extra_std=None if std is None else np.asarray(std, dtype=np.float64),
    )
