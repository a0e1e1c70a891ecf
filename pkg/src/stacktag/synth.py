"""Synthetic multimodal dataset generator.

Each sample draws a small set of positive tags. Every modality owns one
fixed signature vector per tag (drawn once from the seeded generator) and
emits the sum of the signatures of the sample's positive tags restricted to
the tags that modality is informative for, plus Gaussian noise. With
probability ``conflict_rate`` the modality's signal is replaced by the
signature of a uniformly random wrong tag, which makes cross-modality noise
and disagreement levels controllable.

Everything is driven by integer-seeded generators with a fixed draw order,
so a given (config, seed) pair reproduces bit-identical datasets across runs
and platforms.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FeatureMatrix, TagVocabulary
from .errors import ValidationError


def derive_seed(base: int, *parts) -> int:
    """Stable 63-bit seed derived from a base seed and string parts."""
    text = "|".join([str(int(base)), *map(str, parts)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _rng_for(seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *parts))


@dataclass(frozen=True)
class ModalitySpec:
    """Shape and noise profile of one generated modality."""

    name: str
    dim: int
    informative_tags: tuple[int, ...] | None = None  # None means all tags
    noise_sigma: float = 0.1
    conflict_rate: float | None = None  # None falls back to the config default


@dataclass(frozen=True)
class SynthConfig:
    n: int = 200
    tags: int = 10
    modalities: tuple[ModalitySpec, ...] = (
        ModalitySpec("visual", 32),
        ModalitySpec("sound", 16),
    )
    conflict_rate: float = 0.0
    extra_dim: int = 3
    tags_per_sample: tuple[int, int] = (1, 3)
    categories: int | None = None  # optional tag categories, round-robin
    unlabeled_fraction: float = 0.0


def _validate(config: SynthConfig, min_folds: int) -> None:
    if config.tags < 2:
        raise ValidationError(f"need at least 2 tags, got {config.tags}")
    if config.n < 2 * min_folds:
        raise ValidationError(f"n={config.n} is below 2*k for k={min_folds} folds")
    if not config.modalities:
        raise ValidationError("at least one modality required")
    names = [m.name for m in config.modalities]
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate modality names: {names}")
    for m in config.modalities:
        if m.dim < 1:
            raise ValidationError(f"modality {m.name!r} has degenerate dimension {m.dim}")
        if m.noise_sigma < 0:
            raise ValidationError(f"modality {m.name!r} has negative noise")
        rate = config.conflict_rate if m.conflict_rate is None else m.conflict_rate
        if not 0.0 <= rate <= 1.0:
            raise ValidationError(f"modality {m.name!r} conflict rate {rate} outside [0, 1]")
        if m.informative_tags is not None:
            bad = [t for t in m.informative_tags if t < 0 or t >= config.tags]
            if bad:
                raise ValidationError(f"modality {m.name!r} lists unknown tags {bad}")
    lo, hi = config.tags_per_sample
    if not 1 <= lo <= hi <= config.tags - 1:
        raise ValidationError(
            f"tags_per_sample {config.tags_per_sample} must satisfy 1 <= lo <= hi <= tags-1"
        )
    if config.extra_dim < 0:
        raise ValidationError("extra_dim must be >= 0")
    if not 0.0 <= config.unlabeled_fraction < 1.0:
        raise ValidationError("unlabeled_fraction must lie in [0, 1)")


def _signatures(seed: int, name: str, tags: int, dim: int) -> np.ndarray:
    rng = _rng_for(seed, "sig", name)
    sig = rng.normal(size=(tags, dim))
    sig /= np.linalg.norm(sig, axis=1, keepdims=True)
    return sig


def synth_generate(config: SynthConfig, seed: int, min_folds: int = 2) -> Dataset:
    """Generate a deterministic multimodal dataset from a config and seed."""
    _validate(config, min_folds)
    n, tags = config.n, config.tags
    lo, hi = config.tags_per_sample

    label_rng = _rng_for(seed, "labels")
    counts = label_rng.integers(lo, hi + 1, size=n)
    targets = []
    for i in range(n):
        chosen = label_rng.choice(tags, size=counts[i], replace=False)
        targets.append(frozenset(int(t) for t in chosen))
    if config.unlabeled_fraction > 0:
        drop = label_rng.random(n) < config.unlabeled_fraction
        targets = [frozenset() if drop[i] else targets[i] for i in range(n)]

    features: dict[str, FeatureMatrix] = {}
    for m in config.modalities:
        informative = (
            set(range(tags)) if m.informative_tags is None else set(m.informative_tags)
        )
        rate = config.conflict_rate if m.conflict_rate is None else m.conflict_rate
        sig = _signatures(seed, m.name, tags, m.dim)
        rng = _rng_for(seed, "noise", m.name)
        wrong_rng = _rng_for(seed, "wrong", m.name)
        conflict = rng.random(n) < rate
        noise = rng.normal(scale=1.0, size=(n, m.dim))
        values = np.zeros((n, m.dim))
        for i in range(n):
            if conflict[i]:
                # uniform over the tags the sample does NOT carry
                wrong_pool = sorted(set(range(tags)) - targets[i])
                wrong = wrong_pool[wrong_rng.integers(0, len(wrong_pool))]
                values[i] = sig[wrong]
            else:
                for t in targets[i] & informative:
                    values[i] += sig[t]
        values += m.noise_sigma * noise
        features[m.name] = FeatureMatrix(m.name, values.astype(np.float32))

    if config.extra_dim > 0:
        extra_rng = _rng_for(seed, "extra")
        scales = np.array([[30.0, 720.0, 1280.0][j % 3] for j in range(config.extra_dim)])
        extra = extra_rng.normal(loc=scales, scale=scales / 4.0, size=(n, config.extra_dim))
        extra = extra.astype(np.float32)
    else:
        extra = np.zeros((n, 0), dtype=np.float32)

    width = len(str(max(tags - 1, 1)))
    cats = None
    if config.categories is not None:
        if config.categories < 1:
            raise ValidationError("categories must be >= 1 when set")
        cats = tuple(i % config.categories for i in range(tags))
    vocabulary = TagVocabulary(tuple(f"tag_{i:0{width}d}" for i in range(tags)), cats)
    sample_ids = tuple(f"s{i:06d}" for i in range(n))
    return Dataset(sample_ids, vocabulary, targets, features, extra)
