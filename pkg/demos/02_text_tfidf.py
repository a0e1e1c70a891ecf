#!/usr/bin/env python3
"""Turn token lists into sparse tf-idf features with unigrams and bigrams.

The vectorizer keeps every n-gram whose document frequency reaches min_df,
orders columns lexicographically, weights counts by a smoothed idf
(ln((1+N)/(1+df)) + 1), and L2-normalizes each document vector. Long token
streams are first truncated symmetrically: keep the first and last m tokens
and drop the middle, which preserves openings and endings of transcripts.
"""

from __future__ import annotations

import numpy as np

from stacktag.text import (
    build_ngram_vocab,
    tfidf_feature_matrix,
    tfidf_transform,
    truncate_first_last,
)

corpus = [
    ["deep", "sea", "diving"],
    ["deep", "learning", "tutorial"],
    ["sea", "shanty", "compilation", "sea", "shanty"],
    ["cooking", "tutorial", "deep", "fryer"],
]

vocab = build_ngram_vocab(corpus, min_df=1)
print(f"vocabulary has {len(vocab)} n-grams (unigrams + adjacent bigrams)")
widest = max(len(" ".join(ng)) for ng, _ in vocab.entries)
idf = vocab.idf()
for column, (ngram, df) in enumerate(vocab.entries):
    print(f"  {' '.join(ngram):{widest}s}  df={df}  idf={idf[column]:.4f}")

print("\nper-document sparse vectors:")
for doc in corpus:
    vec = tfidf_transform(doc, vocab)
    pairs = ", ".join(f"{i}:{w:.3f}" for i, w in zip(vec.indices, vec.weights))
    print(f"  {' '.join(doc):35s} -> {pairs}")
    assert abs(np.linalg.norm(vec.to_dense()) - 1.0) < 1e-9  # unit length

# A rarer min_df acts as a noise filter: only n-grams seen in two or more
# documents survive.
filtered = build_ngram_vocab(corpus, min_df=2)
print(f"\nwith min_df=2 only {len(filtered)} n-grams survive:")
print("  " + ", ".join(" ".join(ng) for ng, _ in filtered.entries))

# Dense matrix form, ready to feed a linear learner.
matrix = tfidf_feature_matrix(corpus, vocab, modality="tfidf_text")
print(f"\ndense feature matrix: {matrix.n} x {matrix.d} ({matrix.values.dtype})")

# Symmetric truncation for long transcripts.
tokens = [f"t{i}" for i in range(10)]
print(f"\ntruncate_first_last({len(tokens)} tokens, m=3) ->",
      truncate_first_last(tokens, 3))
