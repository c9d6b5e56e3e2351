"""Okapi BM25 retrieval baseline.

Documents are token lists (the harness feeds description + code). The idf
uses the +1-inside-log smoothing variant, so scores never go negative.
Query terms are summed as given, duplicates included.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .errors import EmptyCorpusError

K1 = 1.2
B = 0.75


@dataclass
class Bm25Index:
    doc_term_freqs: list[Counter]
    doc_lengths: list[int]
    avgdl: float
    doc_freq: Counter
    n_docs: int
    titles: list[str] = field(default_factory=list)
    k1: float = K1
    b: float = B

    def idf(self, term) -> float:
        df = self.doc_freq.get(term, 0)
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def bm25_build(documents, titles=None) -> Bm25Index:
    """Index tokenized documents; deterministic for a given input order."""
    documents = [list(d) for d in documents]
    if not documents:
        raise EmptyCorpusError("cannot build an index over zero documents")
    term_freqs = [Counter(d) for d in documents]
    lengths = [len(d) for d in documents]
    doc_freq = Counter()
    for tf in term_freqs:
        doc_freq.update(tf.keys())
    return Bm25Index(
        doc_term_freqs=term_freqs,
        doc_lengths=lengths,
        avgdl=sum(lengths) / len(lengths),
        doc_freq=doc_freq,
        n_docs=len(documents),
        titles=list(titles) if titles is not None else [],
    )


def bm25_score(index: Bm25Index, query_tokens, doc_id) -> float:
    tf = index.doc_term_freqs[doc_id]
    norm = index.k1 * (1 - index.b + index.b * index.doc_lengths[doc_id] / index.avgdl)
    score = 0.0
    for term in query_tokens:
        f = tf.get(term, 0)
        if f:
            score += index.idf(term) * f * (index.k1 + 1) / (f + norm)
    return score


def bm25_rank(index: Bm25Index, query_tokens, top_k=None) -> list[tuple[int, float]]:
    """(doc_id, score) pairs, best first; score ties go to the lower id."""
    query_tokens = list(query_tokens)
    scored = [
        (doc_id, bm25_score(index, query_tokens, doc_id))
        for doc_id in range(index.n_docs)
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:top_k] if top_k is not None else scored
