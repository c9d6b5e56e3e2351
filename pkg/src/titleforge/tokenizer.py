"""Byte-level subword vocabulary shared across languages and modalities.

Training starts from the 256 single-byte pieces and repeatedly merges the
most frequent adjacent pair (ties go to the lexicographically smaller
merged byte string), so any UTF-8 text round-trips with no out-of-vocab
tokens. Five special ids are reserved and never produced by merges.

The encoder input is assembled here too: a task prefix, the description
tokens, one reserved "<code>" separator, then the code tokens, truncated
code-first to the encoder length budget.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

from .corpus import Language
from .errors import (
    EmptyCorpusError,
    EmptyInputError,
    InvalidVocabularyFileError,
    TargetTooSmallError,
    UnknownIdError,
)

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
CODE_SEP_ID = 4

CODE_SEP_SURFACE = "<code>"

SPECIAL_IDS = {"PAD": PAD_ID, "BOS": BOS_ID, "EOS": EOS_ID, "UNK": UNK_ID, "CODE_SEP": CODE_SEP_ID}
NUM_SPECIALS = 5
BYTE_BASE = 256
MIN_PIECES = NUM_SPECIALS + BYTE_BASE  # ids below this are specials or raw bytes

TASK_PREFIXES = {
    Language.JAVA: "Java: ",
    Language.CSHARP: "C#: ",
    Language.PYTHON: "Python: ",
    Language.JAVASCRIPT: "JS: ",
}

DEFAULT_VOCAB_SIZE = 16_000
DEFAULT_MAX_INPUT_LEN = 512


@dataclass
class ModelInput:
    """Encoder token sequence: prefix + description + <code> + code."""

    token_ids: list[int]
    task: Language


class SubwordVocabulary:
    def __init__(self, pieces: list[bytes], merges: list[tuple[int, int]]):
        self.pieces = pieces
        self.merges = merges
        # (left, right) -> (rank, merged id); earlier merges win.
        self._ranks = {
            pair: (rank, MIN_PIECES + rank) for rank, pair in enumerate(merges)
        }

    def __len__(self):
        return len(self.pieces)

    @property
    def size(self):
        return len(self.pieces)

    def encode(self, text: str) -> list[int]:
        """Byte segmentation, then merges applied in learned order."""
        ids = [NUM_SPECIALS + b for b in text.encode("utf-8")]
        if len(ids) < 2:
            return ids
        ranks = self._ranks
        while True:
            best = None
            for pair in zip(ids, ids[1:]):
                entry = ranks.get(pair)
                if entry is not None and (best is None or entry[0] < best[0]):
                    best = entry
                    best_pair = pair
            if best is None:
                return ids
            merged_id = best[1]
            out = []
            i = 0
            n = len(ids)
            while i < n:
                if i + 1 < n and ids[i] == best_pair[0] and ids[i + 1] == best_pair[1]:
                    out.append(merged_id)
                    i += 2
                else:
                    out.append(ids[i])
                    i += 1
            ids = out
            if len(ids) < 2:
                return ids

    def decode(self, token_ids) -> str:
        """Concatenate piece bytes; PAD/BOS/EOS/UNK are dropped, CODE_SEP
        renders as the literal "<code>"."""
        buf = bytearray()
        for tid in token_ids:
            tid = int(tid)
            if tid < 0 or tid >= len(self.pieces):
                raise UnknownIdError(f"id {tid} outside vocabulary of {len(self.pieces)}")
            if tid == CODE_SEP_ID:
                buf.extend(CODE_SEP_SURFACE.encode("utf-8"))
            elif tid < NUM_SPECIALS:
                continue
            else:
                buf.extend(self.pieces[tid])
        return buf.decode("utf-8", errors="replace")

    def build_model_input(
        self, language, description: str, code: str, max_len: int = DEFAULT_MAX_INPUT_LEN
    ) -> ModelInput:
        """Assemble prefix + description + <code> + code, within ``max_len``.

        When over budget, code tokens are dropped first (the description
        carries more title signal), then description tokens; the prefix
        and the separator always survive.
        """
        if not description and not code:
            raise EmptyInputError("need a description or a code snippet")
        language = Language(language)
        prefix_ids = self.encode(TASK_PREFIXES[language])
        desc_ids = self.encode(description)
        code_ids = self.encode(code)
        budget = max_len - len(prefix_ids) - 1
        if budget < 0:
            raise EmptyInputError(f"max_len {max_len} cannot even fit the task prefix")
        if len(desc_ids) + len(code_ids) > budget:
            code_ids = code_ids[: max(0, budget - len(desc_ids))]
            desc_ids = desc_ids[:budget]
        return ModelInput(
            token_ids=prefix_ids + desc_ids + [CODE_SEP_ID] + code_ids,
            task=language,
        )

    # --- persistence --------------------------------------------------------

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [
            "titleforge-vocab 1",
            f"piece_count {len(self.pieces)}",
            f"merge_count {len(self.merges)}",
        ]
        for name, sid in SPECIAL_IDS.items():
            lines.append(f"special {name} {sid}")
        for i in range(NUM_SPECIALS, len(self.pieces)):
            lines.append(f"piece {i} {self.pieces[i].hex()}")
        for rank, (left, right) in enumerate(self.merges):
            lines.append(f"merge {MIN_PIECES + rank} {left} {right}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        text = Path(path).read_text(encoding="utf-8")
        lines = [l for l in text.splitlines() if l.strip()]
        if not lines or not lines[0].startswith("titleforge-vocab"):
            raise InvalidVocabularyFileError(f"not a vocabulary file: {path}")
        piece_count = merge_count = None
        pieces: list[bytes] = [b""] * NUM_SPECIALS
        merges: list[tuple[int, int]] = []
        for line in lines[1:]:
            parts = line.split()
            try:
                if parts[0] == "piece_count":
                    piece_count = int(parts[1])
                elif parts[0] == "merge_count":
                    merge_count = int(parts[1])
                elif parts[0] == "special":
                    if SPECIAL_IDS.get(parts[1]) != int(parts[2]):
                        raise InvalidVocabularyFileError(f"unexpected special id line: {line}")
                elif parts[0] == "piece":
                    if int(parts[1]) != len(pieces):
                        raise InvalidVocabularyFileError(f"piece ids out of order at: {line}")
                    pieces.append(bytes.fromhex(parts[2]))
                elif parts[0] == "merge":
                    if int(parts[1]) != MIN_PIECES + len(merges):
                        raise InvalidVocabularyFileError(f"merge ids out of order at: {line}")
                    merges.append((int(parts[2]), int(parts[3])))
                else:
                    raise InvalidVocabularyFileError(f"unrecognized line: {line}")
            except (IndexError, ValueError) as exc:
                raise InvalidVocabularyFileError(f"bad vocabulary line: {line}") from exc
        if piece_count != len(pieces) or merge_count != len(merges):
            raise InvalidVocabularyFileError("manifest counts disagree with body")
        for rank, (left, right) in enumerate(merges):
            new_id = MIN_PIECES + rank
            if new_id >= len(pieces) or pieces[new_id] != pieces[left] + pieces[right]:
                raise InvalidVocabularyFileError(f"merge {new_id} disagrees with piece list")
        return cls(pieces, merges)


def train_vocabulary(texts, target_size: int = DEFAULT_VOCAB_SIZE) -> SubwordVocabulary:
    """Learn merges by most-frequent-adjacent-pair counting.

    Deterministic: counts are exact and ties break on the merged byte
    string. Stops early if the corpus runs out of adjacent pairs, in which
    case the vocabulary is smaller than requested.
    """
    if target_size <= MIN_PIECES:
        raise TargetTooSmallError(
            f"target_size {target_size} <= byte alphabet + specials ({MIN_PIECES})"
        )
    texts = list(texts)
    if not texts or all(not t for t in texts):
        raise EmptyCorpusError("no text to train on")

    pieces: list[bytes] = [b""] * NUM_SPECIALS + [bytes([b]) for b in range(BYTE_BASE)]
    merges: list[tuple[int, int]] = []

    # Unique sequences with multiplicity; pair stats updated incrementally.
    seq_counts: Counter[tuple[int, ...]] = Counter()
    for t in texts:
        if t:
            seq_counts[tuple(NUM_SPECIALS + b for b in t.encode("utf-8"))] += 1

    pair_counts: Counter[tuple[int, int]] = Counter()
    pair_seqs: dict[tuple[int, int], set[tuple[int, ...]]] = defaultdict(set)
    for seq, n in seq_counts.items():
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] += n
            pair_seqs[pair].add(seq)

    def merge_seq(seq, pair, new_id):
        out = []
        i = 0
        while i < len(seq):
            if i + 1 < len(seq) and seq[i] == pair[0] and seq[i + 1] == pair[1]:
                out.append(new_id)
                i += 2
            else:
                out.append(seq[i])
                i += 1
        return tuple(out)

    while len(pieces) < target_size and pair_counts:
        top = max(pair_counts.values())
        best = min(
            (p for p, c in pair_counts.items() if c == top),
            key=lambda p: pieces[p[0]] + pieces[p[1]],
        )
        new_id = len(pieces)
        pieces.append(pieces[best[0]] + pieces[best[1]])
        merges.append(best)

        for seq in list(pair_seqs[best]):
            n = seq_counts.pop(seq, 0)
            if n == 0:
                continue
            for pair in zip(seq, seq[1:]):
                pair_counts[pair] -= n
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
                pair_seqs[pair].discard(seq)
            new_seq = merge_seq(seq, best, new_id)
            seq_counts[new_seq] += n
            for pair in zip(new_seq, new_seq[1:]):
                pair_counts[pair] += n
                pair_seqs[pair].add(new_seq)

    return SubwordVocabulary(pieces, merges)
