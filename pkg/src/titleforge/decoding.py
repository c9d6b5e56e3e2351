"""Greedy and beam-search title generation.

Both decoders work against anything exposing ``encode(model_input)`` and
``decode_step(prefix, enc) -> next-token distribution``, so tests can
drive them with hand-built probability tables. Pruning uses raw
cumulative log-probability; length normalization applies only to the
final ranking, which keeps width-1 beam exactly equal to greedy. Ties
break on token ids so results are reproducible everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tokenizer import BOS_ID, EOS_ID

DEFAULT_BEAM_WIDTH = 5
DEFAULT_MAX_LEN = 30


@dataclass
class Hypothesis:
    token_ids: list[int]  # starts with BOS; includes EOS when finished
    log_prob: float
    finished: bool = False

    @property
    def generated(self) -> list[int]:
        return self.token_ids[1:]

    def normalized_score(self, alpha: float = 1.0) -> float:
        return self.log_prob / (max(1, len(self.generated)) ** alpha)


@dataclass
class BeamConfig:
    beam_width: int = DEFAULT_BEAM_WIDTH
    max_len: int = DEFAULT_MAX_LEN
    alpha: float = 1.0

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


def greedy_decode(model, model_input, max_len: int = DEFAULT_MAX_LEN) -> Hypothesis:
    """Append the argmax token (lowest id on ties) until EOS or the cap.

    The cap bounds the whole token sequence including BOS.
    """
    enc = model.encode(model_input)
    tokens = [BOS_ID]
    log_prob = 0.0
    while len(tokens) < max_len:
        probs = model.decode_step(tokens, enc)
        tok = int(np.argmax(probs))
        with np.errstate(divide="ignore"):
            log_prob += float(np.log(probs[tok]))
        tokens.append(tok)
        if tok == EOS_ID:
            return Hypothesis(tokens, log_prob, finished=True)
    return Hypothesis(tokens, log_prob, finished=False)


def _ranked(hypotheses, alpha):
    return sorted(
        hypotheses,
        key=lambda h: (-h.normalized_score(alpha), tuple(h.token_ids)),
    )


def beam_search(model, model_input, config: BeamConfig | None = None) -> list[Hypothesis]:
    """Breadth-limited best-first search over token sequences.

    Every live hypothesis expands over the full vocabulary; the top
    ``beam_width`` by cumulative log-probability survive. Hypotheses that
    emit EOS (or hit the length cap) are set aside and the final list is
    ranked by length-normalized score.
    """
    cfg = config or BeamConfig()
    enc = model.encode(model_input)
    live = [Hypothesis([BOS_ID], 0.0)]
    completed: list[Hypothesis] = []
    while live:
        candidates = []
        for hyp in live:
            probs = model.decode_step(hyp.token_ids, enc)
            with np.errstate(divide="ignore"):
                logp = np.log(probs)
            # Only a hypothesis' top beam_width continuations can survive
            # the global cut, and the per-hypothesis order (logp desc, then
            # token id) matches the global order restricted to it, so this
            # preselection is exact.
            order = np.lexsort((np.arange(len(probs)), -logp))[: cfg.beam_width]
            for tok in order:
                candidates.append(
                    Hypothesis(hyp.token_ids + [int(tok)],
                               hyp.log_prob + float(logp[tok]))
                )
        candidates.sort(key=lambda h: (-h.log_prob, tuple(h.token_ids)))
        live = []
        for cand in candidates[: cfg.beam_width]:
            if cand.token_ids[-1] == EOS_ID:
                cand.finished = True
                completed.append(cand)
            elif len(cand.token_ids) >= cfg.max_len:
                completed.append(cand)
            else:
                live.append(cand)
    return _ranked(completed, cfg.alpha)[: cfg.beam_width]


def rescore(model, model_input, token_ids) -> float:
    """Recompute a hypothesis' cumulative log-probability step by step."""
    enc = model.encode(model_input)
    log_prob = 0.0
    for i in range(1, len(token_ids)):
        probs = model.decode_step(list(token_ids[:i]), enc)
        with np.errstate(divide="ignore"):
            log_prob += float(np.log(probs[token_ids[i]]))
    return log_prob
