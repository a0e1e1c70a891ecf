"""Ranking metrics: global average precision and cell-wise accuracy.

GAP pools every sample's retained top-k (tag, confidence) pairs into one
global list, sorts it by descending confidence (ties resolved by sample
order, then tag id, independent of correctness), and accumulates
precision-times-recall-increment down the list, where each correct pair
contributes a recall increment of 1 over the total number of positive
labels in scope. ``gap_bruteforce_oracle`` recomputes the same quantity
with explicit counters and shares no code with the fast path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, MetricUndefinedError, ValidationError

CATEGORY_MODES = ("pooled", "per_category_sum")


@dataclass(frozen=True)
class GapConfig:
    top_k: int = 20
    category_mode: str = "pooled"

    def __post_init__(self):
        if self.top_k < 1:
            raise ValidationError(f"top_k must be >= 1, got {self.top_k}")
        if self.category_mode not in CATEGORY_MODES:
            raise ValidationError(f"unknown category mode {self.category_mode!r}")


@dataclass
class RankedPrediction:
    """Confidence-sorted (tag, score) list for one sample."""

    items: list[tuple[int, float]]
    sample_id: str | None = None

    def validate(self) -> "RankedPrediction":
        tags = [t for t, _ in self.items]
        if len(set(tags)) != len(tags):
            raise ValidationError(f"sample {self.sample_id!r}: duplicate tag in predictions")
        confs = [c for _, c in self.items]
        if not all(np.isfinite(confs)):
            raise ValidationError(f"sample {self.sample_id!r}: non-finite confidence")
        for (t0, c0), (t1, c1) in zip(self.items, self.items[1:]):
            if c1 > c0 or (c1 == c0 and t1 < t0):
                raise ValidationError(
                    f"sample {self.sample_id!r}: predictions not sorted by confidence"
                )
        return self


def top_k_predictions(
    probs: np.ndarray, top_k: int, sample_ids: Sequence[str] | None = None
) -> list[RankedPrediction]:
    """Per sample, the top_k highest-confidence tags; ties go to the lower tag id."""
    if top_k < 1:
        raise ValidationError(f"top_k must be >= 1, got {top_k}")
    probs = np.asarray(probs)
    if probs.ndim != 2:
        raise ValidationError(f"probability matrix must be 2-D, got shape {probs.shape}")
    if not np.isfinite(probs).all():
        raise ValidationError("probability matrix contains non-finite values")
    n, t = probs.shape
    tag_ids = np.arange(t)
    out = []
    for i in range(n):
        order = np.lexsort((tag_ids, -probs[i]))[:top_k]
        items = [(int(j), float(probs[i, j])) for j in order]
        sid = sample_ids[i] if sample_ids is not None else None
        out.append(RankedPrediction(items, sid))
    return out


def _scope_positive_count(targets: Sequence[frozenset]) -> int:
    return sum(len(t) for t in targets)


def _pooled_gap(pairs: list[tuple[float, int, int, bool]], positives: int) -> float:
    # pairs are (confidence, sample_index, tag_id, is_hit)
    if not pairs:
        return 0.0
    conf = np.array([p[0] for p in pairs])
    sample = np.array([p[1] for p in pairs])
    tag = np.array([p[2] for p in pairs])
    hit = np.array([p[3] for p in pairs], dtype=bool)
    order = np.lexsort((tag, sample, -conf))
    hits = hit[order]
    cum = np.cumsum(hits)
    ranks = np.arange(1, len(pairs) + 1)
    precision = cum / ranks
    return float(precision[hits].sum() / positives)


def _retained_pairs(
    preds: Sequence[RankedPrediction],
    targets: Sequence[frozenset],
    top_k: int,
    keep_tags: set[int] | None = None,
) -> list[tuple[float, int, int, bool]]:
    pairs = []
    for i, rp in enumerate(preds):
        for tag, conf in rp.items[:top_k]:
            if keep_tags is not None and tag not in keep_tags:
                continue
            pairs.append((float(conf), i, int(tag), tag in targets[i]))
    return pairs


def gap(
    preds: Sequence[RankedPrediction],
    targets: Sequence[frozenset],
    cfg: GapConfig = GapConfig(),
    category_of: dict[int, int] | None = None,
) -> float:
    """Global average precision of retained predictions against tag sets.

    In ``per_category_sum`` mode the precision/recall accumulation runs per
    tag category and the contributions are summed, with recall increments
    measured against the total positive count so the result stays in [0, 1].
    """
    if len(preds) != len(targets):
        raise ValidationError(f"{len(preds)} prediction rows vs {len(targets)} target rows")
    total_positives = _scope_positive_count(targets)
    if total_positives == 0:
        raise MetricUndefinedError("no positive labels in scope; GAP is undefined")
    if cfg.category_mode == "pooled":
        pairs = _retained_pairs(preds, targets, cfg.top_k)
        return _pooled_gap(pairs, total_positives)
    if category_of is None:
        raise ValidationError("per_category_sum requires a tag -> category map")
    categories = sorted(set(category_of.values()))
    seen_tags = {t for rp in preds for t, _ in rp.items[: cfg.top_k]}
    seen_tags |= {t for ts in targets for t in ts}
    missing = [t for t in seen_tags if t not in category_of]
    if missing:
        raise ValidationError(f"tags without a category: {sorted(missing)[:5]}")
    total = 0.0
    for cat in categories:
        tags_in_cat = {t for t, c in category_of.items() if c == cat}
        pairs = _retained_pairs(preds, targets, cfg.top_k, keep_tags=tags_in_cat)
        total += _pooled_gap(pairs, total_positives)
    return float(total)


def gap_bruteforce_oracle(
    preds: Sequence[RankedPrediction],
    targets: Sequence[frozenset],
    cfg: GapConfig = GapConfig(),
    category_of: dict[int, int] | None = None,
) -> float:
    """Reference GAP: walks the precision/recall curve with explicit counters."""
    if len(preds) != len(targets):
        raise ValidationError(f"{len(preds)} prediction rows vs {len(targets)} target rows")
    positives_total = 0
    for t in targets:
        for _ in t:
            positives_total += 1
    if positives_total == 0:
        raise MetricUndefinedError("no positive labels in scope; GAP is undefined")

    if cfg.category_mode == "pooled":
        groups = [None]
    else:
        if category_of is None:
            raise ValidationError("per_category_sum requires a tag -> category map")
        groups = sorted(set(category_of.values()))

    area = 0.0
    for group in groups:
        rows = []
        for sample_index, rp in enumerate(preds):
            kept = 0
            for tag, conf in rp.items:
                if kept >= cfg.top_k:
                    break
                kept += 1
                if group is not None and category_of[tag] != group:
                    continue
                rows.append((conf, sample_index, tag))
        rows.sort(key=lambda r: (-r[0], r[1], r[2]))
        seen = 0
        correct = 0
        for conf, sample_index, tag in rows:
            seen += 1
            if tag in targets[sample_index]:
                correct += 1
                precision_here = correct / seen
                recall_step = 1.0 / positives_total
                area += precision_here * recall_step
    return area


def hamming_accuracy(probs: np.ndarray, targets: Sequence[frozenset], threshold: float = 0.5) -> float:
    """Fraction of (sample, tag) cells where thresholded probability matches membership."""
    probs = np.asarray(probs)
    n, t = probs.shape
    if len(targets) != n:
        raise ValidationError(f"{len(targets)} target rows for {n} samples")
    multihot = np.zeros((n, t), dtype=bool)
    for i, pos in enumerate(targets):
        for p in pos:
            multihot[i, p] = True
    return float(((probs >= threshold) == multihot).mean())


def subset_accuracy(probs: np.ndarray, targets: Sequence[frozenset], threshold: float = 0.5) -> float:
    """Fraction of samples whose entire thresholded tag set matches exactly."""
    probs = np.asarray(probs)
    n, t = probs.shape
    if len(targets) != n:
        raise ValidationError(f"{len(targets)} target rows for {n} samples")
    multihot = np.zeros((n, t), dtype=bool)
    for i, pos in enumerate(targets):
        for p in pos:
            multihot[i, p] = True
    return float(((probs >= threshold) == multihot).all(axis=1).mean())


# ---------------------------------------------------------------------------
# prediction files: JSON lines of {sample_id, predictions: [[tag, conf], ...]}


def write_predictions(preds: Sequence[RankedPrediction], path) -> None:
    lines = []
    for rp in preds:
        if rp.sample_id is None:
            raise ValidationError("prediction files require a sample_id per row")
        payload = {
            "sample_id": rp.sample_id,
            "predictions": [[int(t), float(c)] for t, c in rp.items],
        }
        lines.append(json.dumps(payload, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_predictions(path) -> list[RankedPrediction]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
        if not isinstance(payload, dict) or "sample_id" not in payload or "predictions" not in payload:
            raise FormatError(f"{path}:{lineno}: expected sample_id and predictions keys")
        items = []
        for entry in payload["predictions"]:
            if not isinstance(entry, list) or len(entry) != 2:
                raise FormatError(f"{path}:{lineno}: predictions must be [tag, confidence] pairs")
            items.append((int(entry[0]), float(entry[1])))
        out.append(RankedPrediction(items, str(payload["sample_id"])).validate())
    return out
