"""Independent reference implementations used only by the test suite.

The tf-idf oracle routes through sklearn's TfidfVectorizer with a callable
analyzer so that none of the package's own vectorizer code is involved.
N-grams are joined with the unit separator character, which sorts below
every printable character; that makes sklearn's alphabetical column order
coincide with lexicographic tuple order over the n-grams themselves.
"""

from __future__ import annotations

import numpy as np
from sklearn.feature_extraction.text import TfidfVectorizer

SEP = "\x1f"


def _analyzer(tokens):
    grams = [SEP.join((t,)) for t in tokens]
    grams.extend(SEP.join(pair) for pair in zip(tokens, tokens[1:]))
    return grams


def sklearn_tfidf(corpus, min_df):
    """Return (ngram tuples in column order, dense float64 tf-idf matrix)."""
    vec = TfidfVectorizer(
        analyzer=_analyzer,
        min_df=min_df,
        norm="l2",
        use_idf=True,
        smooth_idf=True,
        sublinear_tf=False,
    )
    dense = vec.fit_transform(corpus).toarray().astype(np.float64)
    names = [tuple(name.split(SEP)) for name in vec.get_feature_names_out()]
    return names, dense


def random_token_corpus(rng, alphabet=("a", "b", "c", "d"), max_docs=8, max_len=7):
    """Small random corpus of token lists; at least two docs, may include empties."""
    n_docs = int(rng.integers(2, max_docs + 1))
    corpus = []
    for _ in range(n_docs):
        length = int(rng.integers(0, max_len + 1))
        corpus.append([str(rng.choice(alphabet)) for _ in range(length)])
    return corpus


def random_gap_instance(rng):
    """Random (probs, targets, top_k, category_of) stressing ties and edge shapes.

    Guarantees at least one positive label so the metric is defined. Half the
    instances quantize confidences to one decimal to force large tie groups.
    """
    n = int(rng.integers(1, 7))
    t = int(rng.integers(2, 9))
    probs = rng.random((n, t))
    if rng.random() < 0.5:
        probs = np.round(probs, 1)
    targets = []
    for _ in range(n):
        size = int(rng.integers(0, min(t, 4)))
        targets.append(frozenset(int(x) for x in rng.choice(t, size=size, replace=False)))
    if all(len(ts) == 0 for ts in targets):
        targets[0] = frozenset({int(rng.integers(0, t))})
    top_k = int(rng.integers(1, t + 3))
    n_cats = int(rng.integers(1, 4))
    category_of = {tag: int(rng.integers(0, n_cats)) for tag in range(t)}
    return probs, targets, top_k, category_of
