"""ROUGE-1/2/L scoring and the corpus-level evaluation harness.

Evaluation tokenization is fixed: lowercase, then split on any run of
non-alphanumeric characters. Scores live in [0, 1]; reports render them
as percentages with three decimals.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .bm25 import Bm25Index, bm25_build, bm25_rank
from .corpus import Language
from .decoding import BeamConfig, beam_search
from .errors import EmptyListError, EmptyTestSetError, LengthMismatchError
from .tokenizer import SubwordVocabulary
from .training import modality_fields

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def evaluation_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class ScoreTriple:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class RougeScore:
    rouge1: ScoreTriple
    rouge2: ScoreTriple
    rougeL: ScoreTriple


_ZERO = ScoreTriple(0.0, 0.0, 0.0)


def _f1(precision, recall):
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def rouge_n(candidate_tokens, reference_tokens, n) -> ScoreTriple:
    """Clipped n-gram overlap: precision over the candidate, recall over
    the reference, F1 on top."""
    cand = _ngrams(candidate_tokens, n)
    ref = _ngrams(reference_tokens, n)
    if not cand or not ref:
        return _ZERO
    cand_counts = Counter(cand)
    ref_counts = Counter(ref)
    overlap = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
    precision = overlap / len(cand)
    recall = overlap / len(ref)
    return ScoreTriple(precision, recall, _f1(precision, recall))


def _lcs_length(a, b):
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        row = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                row[j] = prev[j - 1] + 1
            else:
                row[j] = max(prev[j], row[j - 1])
        prev = row
    return prev[len(b)]


def rouge_l(candidate_tokens, reference_tokens) -> ScoreTriple:
    """Longest-common-subsequence overlap with F1 aggregation."""
    if not candidate_tokens or not reference_tokens:
        return _ZERO
    lcs = _lcs_length(candidate_tokens, reference_tokens)
    precision = lcs / len(candidate_tokens)
    recall = lcs / len(reference_tokens)
    return ScoreTriple(precision, recall, _f1(precision, recall))


def score_pair(candidate: str, reference: str) -> RougeScore:
    cand = evaluation_tokens(candidate)
    ref = evaluation_tokens(reference)
    return RougeScore(
        rouge1=rouge_n(cand, ref, 1),
        rouge2=rouge_n(cand, ref, 2),
        rougeL=rouge_l(cand, ref),
    )


def _mean_triple(triples) -> ScoreTriple:
    n = len(triples)
    return ScoreTriple(
        precision=sum(t.precision for t in triples) / n,
        recall=sum(t.recall for t in triples) / n,
        f1=sum(t.f1 for t in triples) / n,
    )


def corpus_rouge(candidates, references) -> RougeScore:
    """Unweighted mean of per-pair scores."""
    candidates = list(candidates)
    references = list(references)
    if len(candidates) != len(references):
        raise LengthMismatchError(
            f"{len(candidates)} candidates vs {len(references)} references"
        )
    if not candidates:
        raise EmptyListError("nothing to score")
    pair_scores = [score_pair(c, r) for c, r in zip(candidates, references)]
    return RougeScore(
        rouge1=_mean_triple([s.rouge1 for s in pair_scores]),
        rouge2=_mean_triple([s.rouge2 for s in pair_scores]),
        rougeL=_mean_triple([s.rougeL for s in pair_scores]),
    )


def as_percentages(score: RougeScore) -> dict:
    """Render a RougeScore as percentages rounded to three decimals."""
    out = {}
    for variant in ("rouge1", "rouge2", "rougeL"):
        t = getattr(score, variant)
        out[variant] = {
            "precision": round(100.0 * t.precision, 3),
            "recall": round(100.0 * t.recall, 3),
            "f1": round(100.0 * t.f1, 3),
        }
    return out


# --- title generators for the harness ---------------------------------------

class ModelTitleGenerator:
    """Beam-decodes one title per post from a trained model."""

    def __init__(self, model, vocab: SubwordVocabulary, beam: BeamConfig | None = None):
        self.model = model
        self.vocab = vocab
        self.beam = beam or BeamConfig(max_len=model.config.max_decoder_len)

    def title_for(self, triplet, input_mode: str) -> str:
        desc, code = modality_fields(triplet, input_mode)
        model_input = self.vocab.build_model_input(
            triplet.language, desc, code, self.model.config.max_encoder_len
        )
        best = beam_search(self.model, model_input, self.beam)[0]
        return self.vocab.decode(best.token_ids)


class Bm25TitleGenerator:
    """Answers a query post with the title of the closest training post."""

    def __init__(self, training_triplets):
        self.index: Bm25Index = bm25_build(
            [self._document(t) for t in training_triplets],
            titles=[t.title for t in training_triplets],
        )

    @staticmethod
    def _document(triplet, input_mode="both"):
        desc, code = modality_fields(triplet, input_mode)
        return evaluation_tokens(desc) + evaluation_tokens(code)

    def title_for(self, triplet, input_mode: str) -> str:
        query = self._document(triplet, input_mode)
        ranked = bm25_rank(self.index, query, top_k=1)
        return self.index.titles[ranked[0][0]]


def evaluate_model(generator, test_by_language, input_mode="both") -> dict:
    """Generate one title per test post and aggregate ROUGE per language.

    ``generator`` needs a ``title_for(triplet, input_mode)`` method;
    ``test_by_language`` maps Language -> list of triplets.
    """
    report = {}
    for lang, triplets in test_by_language.items():
        lang = Language(lang)
        if not triplets:
            raise EmptyTestSetError(f"no test posts for {lang.value}")
        candidates = [generator.title_for(t, input_mode) for t in triplets]
        references = [t.title for t in triplets]
        score = corpus_rouge(candidates, references)
        report[lang.value] = {"count": len(triplets), **as_percentages(score)}
    return report


def write_report(report: dict, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
