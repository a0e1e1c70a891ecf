"""Classical text features: first/last truncation and tf-idf over word n-grams.

Tokens arrive pre-segmented. The vectorizer collects unigrams and adjacent
bigrams whose document frequency clears ``min_df``, assigns column indices
in lexicographic n-gram order (stable across runs), and weights each term by

    tf(t) * (ln((1 + N) / (1 + df(t))) + 1)

with L2 normalization per document. The resulting block can be densified
into a regular feature matrix and ingested like any other modality.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import FeatureMatrix
from .errors import ValidationError

Ngram = tuple[str, ...]


def truncate_first_last(tokens: Sequence[str], m: int = 128) -> list[str]:
    """Keep the first m and last m tokens; streams of length <= 2m pass through."""
    if m < 1:
        raise ValidationError(f"m must be >= 1, got {m}")
    tokens = list(tokens)
    if len(tokens) <= 2 * m:
        return tokens
    return tokens[:m] + tokens[-m:]


def _doc_ngrams(tokens: Sequence[str]) -> list[Ngram]:
    grams: list[Ngram] = [(t,) for t in tokens]
    grams.extend(zip(tokens, tokens[1:]))
    return grams


@dataclass(frozen=True)
class NgramVocabulary:
    """Fixed n-gram -> column mapping with document frequencies."""

    entries: tuple[tuple[Ngram, int], ...]  # (ngram, df), lexicographic order
    n_docs: int
    min_df: int

    def __post_init__(self):
        grams = [ng for ng, _ in self.entries]
        if len(set(grams)) != len(grams):
            raise ValidationError("vocabulary entries must be unique")
        if grams != sorted(grams):
            raise ValidationError("vocabulary entries must be lexicographically ordered")
        if any(df < 1 or df > self.n_docs for _, df in self.entries):
            raise ValidationError("document frequencies must lie in 1..n_docs")

    def __len__(self) -> int:
        return len(self.entries)

    def column_of(self) -> dict[Ngram, int]:
        return {ng: i for i, (ng, _) in enumerate(self.entries)}

    def idf(self) -> np.ndarray:
        df = np.array([d for _, d in self.entries], dtype=np.float64)
        return np.log((1.0 + self.n_docs) / (1.0 + df)) + 1.0


@dataclass(frozen=True)
class SparseVector:
    """Strictly increasing (index, weight) pairs of one document."""

    indices: np.ndarray
    weights: np.ndarray
    dim: int

    def __post_init__(self):
        if self.indices.shape != self.weights.shape:
            raise ValidationError("indices and weights must align")
        if np.any(np.diff(self.indices) <= 0):
            raise ValidationError("indices must be strictly increasing")
        if self.weights.size and not np.isfinite(self.weights).all():
            raise ValidationError("weights must be finite")

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.dim, dtype=np.float64)
        dense[self.indices] = self.weights
        return dense

    def norm(self) -> float:
        return float(np.linalg.norm(self.weights))


def build_ngram_vocab(corpus: Iterable[Sequence[str]], min_df: int = 2) -> NgramVocabulary:
    """Collect every unigram and adjacent bigram seen in >= min_df documents."""
    if min_df < 1:
        raise ValidationError(f"min_df must be >= 1, got {min_df}")
    df: dict[Ngram, int] = {}
    n_docs = 0
    for tokens in corpus:
        n_docs += 1
        for ng in set(_doc_ngrams(list(tokens))):
            df[ng] = df.get(ng, 0) + 1
    if n_docs == 0:
        raise ValidationError("corpus must contain at least one document")
    kept = sorted((ng, c) for ng, c in df.items() if c >= min_df)
    return NgramVocabulary(tuple(kept), n_docs, min_df)


def tfidf_transform(tokens: Sequence[str], vocab: NgramVocabulary) -> SparseVector:
    """tf-idf weights of one document against a built vocabulary, L2-normalized."""
    column = vocab.column_of()
    counts: dict[int, int] = {}
    for ng in _doc_ngrams(list(tokens)):
        col = column.get(ng)
        if col is not None:
            counts[col] = counts.get(col, 0) + 1
    if not counts:
        return SparseVector(np.empty(0, dtype=np.int64), np.empty(0), len(vocab))
    cols = np.array(sorted(counts), dtype=np.int64)
    tf = np.array([counts[c] for c in cols], dtype=np.float64)
    idf = vocab.idf()[cols]
    weights = tf * idf
    norm = np.linalg.norm(weights)
    if norm > 0:
        weights = weights / norm
    return SparseVector(cols, weights, len(vocab))


def tfidf_feature_matrix(
    corpus: Iterable[Sequence[str]], vocab: NgramVocabulary, modality: str = "tfidf"
) -> FeatureMatrix:
    """Densify a corpus into a feature matrix usable as its own modality."""
    rows = [tfidf_transform(doc, vocab).to_dense() for doc in corpus]
    if not rows:
        raise ValidationError("corpus must contain at least one document")
    return FeatureMatrix(modality, np.stack(rows).astype(np.float32))


def vocab_to_json(vocab: NgramVocabulary) -> str:
    payload = {
        "n_docs": vocab.n_docs,
        "min_df": vocab.min_df,
        "entries": [{"ngram": list(ng), "df": df} for ng, df in vocab.entries],
    }
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def vocab_from_json(text: str) -> NgramVocabulary:
    raw = json.loads(text)
    entries = tuple((tuple(e["ngram"]), int(e["df"])) for e in raw["entries"])
    return NgramVocabulary(entries, int(raw["n_docs"]), int(raw["min_df"]))


def save_vocab(vocab: NgramVocabulary, path) -> None:
    Path(path).write_text(vocab_to_json(vocab))


def load_vocab(path) -> NgramVocabulary:
    return vocab_from_json(Path(path).read_text())


def idf_weight(n_docs: int, df: int) -> float:
    """Smoothed inverse document frequency of a single term."""
    return math.log((1.0 + n_docs) / (1.0 + df)) + 1.0
