"""Run configuration: a single versioned JSON document validated up front.

The raw document is kept verbatim and embedded into every report together
with its hash, so a report alone is enough to reproduce the run. Only two
environment variables exist: STACKTAG_OUT (output directory override) and
STACKTAG_LOG_LEVEL.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .data import Dataset, POOL_MODES
from .errors import FormatError, ValidationError
from .learners import TrainConfig
from .metrics import GapConfig
from .stacking import LearnerSpec
from .synth import ModalitySpec, SynthConfig

CONFIG_VERSION = 1

ENV_OUT = "STACKTAG_OUT"
ENV_LOG_LEVEL = "STACKTAG_LOG_LEVEL"

_TOP_KEYS = {
    "version", "seed", "folds", "holdout_fraction", "pool_mode", "use_extra",
    "threads", "out_dir", "dataset", "modalities", "meta", "fusion", "ladder",
    "metric",
}
_TRAIN_KEYS = {
    "learning_rate", "epochs", "batch_size", "l2", "optimizer",
    "beta1", "beta2", "adam_eps", "divergence_threshold",
}
_SPEC_KEYS = {"kind", "hidden", "dropout", "train"}
_SYNTH_KEYS = {
    "n", "tags", "modalities", "conflict_rate", "extra_dim",
    "tags_per_sample", "categories", "unlabeled_fraction",
}
_SYNTH_MODALITY_KEYS = {"name", "dim", "informative_tags", "noise_sigma", "conflict_rate"}
_META_KEYS = {"hidden", "dropout", "train"}
_FUSION_KEYS = {"kinds", "hidden", "dropout", "projection_dim", "train"}
_METRIC_KEYS = {"top_k", "category_mode", "threshold"}


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def config_hash(raw: dict) -> str:
    return hashlib.sha256(canonical_json(raw)).hexdigest()[:16]


def _require_keys(obj: dict, allowed: set, where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")


def _train_config(obj: dict | None, where: str) -> TrainConfig:
    if obj is None:
        return TrainConfig()
    _require_keys(obj, _TRAIN_KEYS, where)
    return TrainConfig(**obj)


def _learner_spec(obj: dict, where: str) -> LearnerSpec:
    _require_keys(obj, _SPEC_KEYS, where)
    if "kind" not in obj:
        raise ValidationError(f"{where}: learner spec needs a kind")
    return LearnerSpec(
        kind=obj["kind"],
        hidden=tuple(obj.get("hidden", (64,))),
        dropout=float(obj.get("dropout", 0.0)),
        train=_train_config(obj.get("train"), f"{where}.train"),
    )


def _synth_config(obj: dict) -> SynthConfig:
    _require_keys(obj, _SYNTH_KEYS, "dataset.synth")
    kwargs = {}
    if "modalities" in obj:
        mods = []
        for i, m in enumerate(obj["modalities"]):
            _require_keys(m, _SYNTH_MODALITY_KEYS, f"dataset.synth.modalities[{i}]")
            if "name" not in m or "dim" not in m:
                raise ValidationError(f"dataset.synth.modalities[{i}]: name and dim required")
            info = m.get("informative_tags")
            mods.append(ModalitySpec(
                name=m["name"],
                dim=int(m["dim"]),
                informative_tags=None if info is None else tuple(int(t) for t in info),
                noise_sigma=float(m.get("noise_sigma", 0.1)),
                conflict_rate=(None if m.get("conflict_rate") is None
                               else float(m["conflict_rate"])),
            ))
        kwargs["modalities"] = tuple(mods)
    for key in ("n", "tags", "extra_dim", "categories"):
        if key in obj and obj[key] is not None:
            kwargs[key] = int(obj[key])
        elif key in obj:
            kwargs[key] = None
    for key in ("conflict_rate", "unlabeled_fraction"):
        if key in obj:
            kwargs[key] = float(obj[key])
    if "tags_per_sample" in obj:
        lo, hi = obj["tags_per_sample"]
        kwargs["tags_per_sample"] = (int(lo), int(hi))
    return SynthConfig(**kwargs)


@dataclass(frozen=True)
class MetaSettings:
    hidden: tuple[int, ...] = (512, 256)
    dropout: float = 0.3
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass(frozen=True)
class FusionSettings:
    kinds: tuple[str, ...] = ("concat", "sum_pool", "max_pool", "attention")
    hidden: tuple[int, ...] = (64,)
    dropout: float = 0.0
    projection_dim: int | None = None
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass(frozen=True)
class MetricSettings:
    top_k: int = 20
    category_mode: str = "pooled"
    threshold: float = 0.5

    def gap_config(self) -> GapConfig:
        return GapConfig(top_k=self.top_k, category_mode=self.category_mode)


@dataclass
class RunConfig:
    """Validated view over the raw config document."""

    raw: dict
    seed: int = 0
    folds: int = 5
    holdout_fraction: float = 0.2
    pool_mode: str = "mean"
    use_extra: bool = True
    threads: int = 1
    out_dir: str | None = None
    dataset_manifest: str | None = None
    synth: SynthConfig | None = None
    learner_specs: dict[str, tuple[LearnerSpec, ...]] | None = None
    meta: MetaSettings = field(default_factory=MetaSettings)
    fusion: FusionSettings = field(default_factory=FusionSettings)
    ladder: tuple[tuple[str, ...], ...] | None = None
    metric: MetricSettings = field(default_factory=MetricSettings)

    def __post_init__(self):
        if self.folds < 2:
            raise ValidationError(f"folds must be >= 2, got {self.folds}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValidationError(
                f"holdout_fraction must lie in (0, 1), got {self.holdout_fraction}"
            )
        if self.pool_mode not in POOL_MODES:
            raise ValidationError(f"unknown pool_mode {self.pool_mode!r}")
        if self.threads < 1:
            raise ValidationError(f"threads must be >= 1, got {self.threads}")
        if self.dataset_manifest is not None and self.synth is not None:
            raise ValidationError("dataset: give either a manifest path or a synth section, not both")

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def specs_for(self, dataset: Dataset) -> list[tuple[str, LearnerSpec]]:
        """Ordered (modality, learner) pairs, defaulted from the dataset.

        Dense modalities default to a small MLP; any modality named like
        tfidf gets the two linear losses instead.
        """
        pairs: list[tuple[str, LearnerSpec]] = []
        for modality in dataset.features:
            if self.learner_specs is not None and modality in self.learner_specs:
                pairs.extend((modality, s) for s in self.learner_specs[modality])
            else:
                pairs.extend((modality, s) for s in default_specs_for(modality))
        if self.learner_specs is not None:
            missing = set(self.learner_specs) - set(dataset.features)
            if missing:
                raise ValidationError(f"configured modalities not in dataset: {sorted(missing)}")
        return pairs

    def ladder_for(self, dataset: Dataset) -> list[tuple[str, ...]]:
        """Modality subsets for the combination comparison; "extra" is the
        reserved name for the extra-feature column block."""
        if self.ladder is not None:
            for entry in self.ladder:
                for name in entry:
                    if name != "extra" and name not in dataset.features:
                        raise ValidationError(f"ladder names unknown modality {name!r}")
                if not entry or all(n == "extra" for n in entry):
                    raise ValidationError("each ladder entry needs at least one modality")
            return list(self.ladder)
        names = list(dataset.features)
        ladder = [tuple(names[: i + 1]) for i in range(len(names))]
        if dataset.extra_dim > 0 and self.use_extra:
            ladder.append((*names, "extra"))
        return ladder


def default_specs_for(modality: str) -> tuple[LearnerSpec, ...]:
    if "tfidf" in modality.lower():
        return (LearnerSpec(kind="logistic", hidden=()),
                LearnerSpec(kind="squared_hinge", hidden=()))
    return (LearnerSpec(kind="mlp", hidden=(64,)),)


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ValidationError("config root must be a JSON object")
    _require_keys(raw, _TOP_KEYS, "config")
    version = raw.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ValidationError(f"unsupported config version {version!r}")

    manifest = None
    synth = None
    dataset = raw.get("dataset")
    if dataset is not None:
        _require_keys(dataset, {"manifest", "synth", "pool_mode"}, "dataset")
        if "manifest" in dataset and "synth" in dataset:
            raise ValidationError("dataset: give either a manifest path or a synth section, not both")
        if "manifest" in dataset:
            manifest = str(dataset["manifest"])
        elif "synth" in dataset:
            synth = _synth_config(dataset["synth"])
        else:
            raise ValidationError("dataset: needs a manifest path or a synth section")

    specs = None
    if "modalities" in raw:
        specs = {}
        for modality, entry in raw["modalities"].items():
            if isinstance(entry, dict):
                entry = [entry]
            specs[modality] = tuple(
                _learner_spec(e, f"modalities.{modality}[{i}]") for i, e in enumerate(entry)
            )
            if not specs[modality]:
                raise ValidationError(f"modalities.{modality}: needs at least one learner spec")

    meta = MetaSettings()
    if "meta" in raw:
        _require_keys(raw["meta"], _META_KEYS, "meta")
        meta = MetaSettings(
            hidden=tuple(raw["meta"].get("hidden", (512, 256))),
            dropout=float(raw["meta"].get("dropout", 0.3)),
            train=_train_config(raw["meta"].get("train"), "meta.train"),
        )

    fusion = FusionSettings()
    if "fusion" in raw:
        _require_keys(raw["fusion"], _FUSION_KEYS, "fusion")
        proj = raw["fusion"].get("projection_dim")
        fusion = FusionSettings(
            kinds=tuple(raw["fusion"].get("kinds", FusionSettings.kinds)),
            hidden=tuple(raw["fusion"].get("hidden", (64,))),
            dropout=float(raw["fusion"].get("dropout", 0.0)),
            projection_dim=None if proj is None else int(proj),
            train=_train_config(raw["fusion"].get("train"), "fusion.train"),
        )

    metric = MetricSettings()
    if "metric" in raw:
        _require_keys(raw["metric"], _METRIC_KEYS, "metric")
        metric = MetricSettings(
            top_k=int(raw["metric"].get("top_k", 20)),
            category_mode=str(raw["metric"].get("category_mode", "pooled")),
            threshold=float(raw["metric"].get("threshold", 0.5)),
        )
    metric.gap_config()  # validates top_k and category_mode

    ladder = None
    if "ladder" in raw:
        ladder = tuple(tuple(str(n) for n in entry) for entry in raw["ladder"])

    dataset_pool = dataset.get("pool_mode") if dataset else None
    return RunConfig(
        raw=raw,
        seed=int(raw.get("seed", 0)),
        folds=int(raw.get("folds", 5)),
        holdout_fraction=float(raw.get("holdout_fraction", 0.2)),
        pool_mode=str(dataset_pool if dataset_pool is not None else raw.get("pool_mode", "mean")),
        use_extra=bool(raw.get("use_extra", True)),
        threads=int(raw.get("threads", 1)),
        out_dir=None if raw.get("out_dir") is None else str(raw["out_dir"]),
        dataset_manifest=manifest,
        synth=synth,
        learner_specs=specs,
        meta=meta,
        fusion=fusion,
        ladder=ladder,
        metric=metric,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw)
