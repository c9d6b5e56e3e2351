"""Mine Stack Exchange question posts into description/code/title triplets.

The pipeline reads the ``Posts.xml`` row format as a stream (memory use is
bounded regardless of dump size), keeps question posts that pass three
quality rules (score >= 5, has an accepted answer, body contains a real
code block), segments each body into prose and code, and writes one
line-delimited file per language per split.
"""

from __future__ import annotations

import json
import random
import statistics
import xml.parsers.expat
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from html.parser import HTMLParser
from pathlib import Path

from .errors import (
    DumpParseError,
    EmptyCorpusError,
    EmptyDescriptionError,
    InsufficientDataError,
    NoCodeError,
)

MIN_SCORE = 5

SPLIT_NAMES = ("train", "validation", "test")


class Language(str, Enum):
    JAVA = "java"
    CSHARP = "csharp"
    PYTHON = "python"
    JAVASCRIPT = "javascript"


TAG_TO_LANGUAGE = {
    "java": Language.JAVA,
    "c#": Language.CSHARP,
    "python": Language.PYTHON,
    "javascript": Language.JAVASCRIPT,
}


class PostType(str, Enum):
    QUESTION = "question"
    ANSWER = "answer"
    OTHER = "other"


@dataclass
class RawPost:
    id: int
    post_type: PostType
    score: int
    accepted_answer_id: int | None
    tags: list[str]
    title: str
    body_html: str


@dataclass(frozen=True)
class PostTriplet:
    post_id: int
    language: Language
    description: str
    code: str
    title: str


@dataclass
class CorpusSplit:
    train: list[PostTriplet]
    validation: list[PostTriplet]
    test: list[PostTriplet]
    seed: int


@dataclass
class DumpCounts:
    rows: int = 0
    questions: int = 0
    non_questions: int = 0
    skipped_missing_attr: int = 0


_POST_TYPES = {"1": PostType.QUESTION, "2": PostType.ANSWER}


def _parse_tags(raw):
    if "<" in raw:
        tags, current, inside = [], [], False
        for ch in raw:
            if ch == "<":
                inside, current = True, []
            elif ch == ">":
                if inside and current:
                    tags.append("".join(current).lower())
                inside = False
            elif inside:
                current.append(ch)
        return tags
    return [t.lower() for t in raw.split("|") if t]


def parse_dump(source, counts: DumpCounts | None = None):
    """Stream question posts out of a ``Posts.xml`` dump.

    ``source`` is a path or a binary file object. Rows with PostTypeId
    other than 1 are dropped; question rows missing a required attribute
    are skipped and counted. Malformed XML raises DumpParseError naming
    the byte offset.
    """
    if counts is None:
        counts = DumpCounts()
    close_after = False
    if isinstance(source, (str, Path)):
        stream = open(source, "rb")
        close_after = True
    else:
        stream = source
    try:
        yield from _parse_stream(stream, counts)
    finally:
        if close_after:
            stream.close()


def _parse_stream(stream, counts):
    parser = xml.parsers.expat.ParserCreate()
    pending: list[RawPost] = []

    def handle_start(name, attrs):
        if name != "row":
            return
        counts.rows += 1
        post_type = _POST_TYPES.get(attrs.get("PostTypeId", ""), PostType.OTHER)
        if post_type is not PostType.QUESTION:
            counts.non_questions += 1
            return
        try:
            post = RawPost(
                id=int(attrs["Id"]),
                post_type=PostType.QUESTION,
                score=int(attrs["Score"]),
                accepted_answer_id=(
                    int(attrs["AcceptedAnswerId"]) if "AcceptedAnswerId" in attrs else None
                ),
                tags=_parse_tags(attrs["Tags"]),
                title=attrs["Title"],
                body_html=attrs["Body"],
            )
        except (KeyError, ValueError):
            counts.skipped_missing_attr += 1
            return
        if not post.title.strip():
            counts.skipped_missing_attr += 1
            return
        counts.questions += 1
        pending.append(post)

    parser.StartElementHandler = handle_start
    while True:
        chunk = stream.read(64 * 1024)
        try:
            parser.Parse(chunk, not chunk)
        except xml.parsers.expat.ExpatError as exc:
            raise DumpParseError(
                xml.parsers.expat.errors.messages[exc.code],
                byte_offset=parser.ErrorByteIndex,
                line=parser.ErrorLineNumber,
                column=parser.ErrorColumnNumber,
            ) from exc
        yield from pending
        pending.clear()
        if not chunk:
            return


_BLOCK_TAGS = {
    "p", "div", "br", "li", "ul", "ol", "pre", "blockquote", "table", "tr", "hr",
    "h1", "h2", "h3", "h4", "h5", "h6",
}

_XML_ENTITIES = {"lt": "<", "gt": ">", "amp": "&", "quot": '"', "apos": "'"}


class _BodySegmenter(HTMLParser):
    """Split a post body into code blocks (pre > code) and prose.

    Inline ``<code>`` spans outside ``<pre>`` stay part of the prose: they
    are identifiers embedded in sentences, not snippets. Entity decoding
    covers the five XML entities plus numeric references; anything else is
    kept literally.
    """

    def __init__(self):
        super().__init__(convert_charrefs=False)
        self.code_blocks: list[str] = []
        self.prose: list[str] = []
        self._pre_depth = 0
        self._code_depth = 0
        self._current: list[str] = []

    def _sink(self, text):
        if self._code_depth > 0:
            self._current.append(text)
        else:
            self.prose.append(text)

    def handle_starttag(self, tag, attrs):
        if tag == "pre":
            self._pre_depth += 1
        elif tag == "code" and self._pre_depth > 0:
            if self._code_depth == 0:
                self._current = []
            self._code_depth += 1
        if tag in _BLOCK_TAGS and self._code_depth == 0:
            self.prose.append(" ")

    def handle_endtag(self, tag):
        if tag == "code" and self._code_depth > 0:
            self._code_depth -= 1
            if self._code_depth == 0:
                self.code_blocks.append("".join(self._current))
                self._current = []
        elif tag == "pre":
            self._pre_depth = max(0, self._pre_depth - 1)
            if self._pre_depth == 0 and self._code_depth > 0:
                # Unbalanced markup: close the block at the pre boundary.
                self._code_depth = 0
                self.code_blocks.append("".join(self._current))
                self._current = []
        if tag in _BLOCK_TAGS and self._code_depth == 0:
            self.prose.append(" ")

    def handle_data(self, data):
        self._sink(data)

    def handle_entityref(self, name):
        self._sink(_XML_ENTITIES.get(name, f"&{name};"))

    def handle_charref(self, name):
        try:
            cp = int(name[1:], 16) if name.startswith(("x", "X")) else int(name)
            self._sink(chr(cp))
        except (ValueError, OverflowError):
            self._sink(f"&#{name};")


def segment_body(body_html):
    """Return (description, code) extracted from a post body.

    Code is the concatenation of all pre>code blocks in document order,
    joined by single newlines; the description is everything else with
    markup stripped and whitespace collapsed.
    """
    seg = _BodySegmenter()
    seg.feed(body_html)
    seg.close()
    if seg._code_depth > 0 and seg._current:
        seg.code_blocks.append("".join(seg._current))
    code = "\n".join(block.strip("\r\n") for block in seg.code_blocks if block.strip())
    description = " ".join("".join(seg.prose).split())
    return description, code


def passes_quality_rules(post: RawPost) -> bool:
    """Score at least 5, accepted answer present, and a non-empty code block."""
    if post.score < MIN_SCORE:
        return False
    if post.accepted_answer_id is None:
        return False
    _, code = segment_body(post.body_html)
    return bool(code)


def post_languages(post: RawPost) -> list[Language]:
    """Target languages this post is tagged with (may be several)."""
    return [TAG_TO_LANGUAGE[t] for t in post.tags if t in TAG_TO_LANGUAGE]


def extract_triplet(post: RawPost, language: Language | str) -> PostTriplet:
    description, code = segment_body(post.body_html)
    if not code:
        raise NoCodeError(f"post {post.id} has no code block")
    if not description:
        raise EmptyDescriptionError(f"post {post.id} has no prose outside code blocks")
    return PostTriplet(
        post_id=post.id,
        language=Language(language),
        description=description,
        code=code,
        title=post.title,
    )


@dataclass
class MiningStats:
    questions_seen: int = 0
    passed_rules: int = 0
    empty_description: int = 0
    kept: Counter = field(default_factory=Counter)


def mine_posts(posts, stats: MiningStats | None = None):
    """Filter and extract triplets, keyed by language.

    A post tagged with several target languages lands in each matching
    corpus. Posts whose body is code-only are dropped and counted.
    """
    if stats is None:
        stats = MiningStats()
    by_language: dict[Language, list[PostTriplet]] = {lang: [] for lang in Language}
    for post in posts:
        stats.questions_seen += 1
        if not passes_quality_rules(post):
            continue
        langs = post_languages(post)
        if not langs:
            continue
        stats.passed_rules += 1
        for lang in langs:
            try:
                triplet = extract_triplet(post, lang)
            except EmptyDescriptionError:
                stats.empty_description += 1
                break
            by_language[lang].append(triplet)
            stats.kept[lang.value] += 1
    return by_language


def split_corpus(triplets, seed, train_n, test_n) -> CorpusSplit:
    """Shuffle deterministically and cut train/test/validation.

    The input is ordered by (post_id, language) first so the result does
    not depend on parse order.
    """
    items = sorted(triplets, key=lambda t: (t.post_id, t.language.value))
    if train_n + test_n > len(items):
        raise InsufficientDataError(
            f"need {train_n}+{test_n} posts, have {len(items)}"
        )
    random.Random(seed).shuffle(items)
    return CorpusSplit(
        train=items[:train_n],
        validation=items[train_n + test_n:],
        test=items[train_n:train_n + test_n],
        seed=seed,
    )


@dataclass
class FieldLengthStats:
    average: float
    mode: int
    median: float
    under_cutoff: float
    cutoff: int


def _field_stats(lengths, cutoff):
    counts = Counter(lengths)
    top = max(counts.values())
    mode = min(v for v, c in counts.items() if c == top)
    return FieldLengthStats(
        average=sum(lengths) / len(lengths),
        mode=mode,
        median=statistics.median(lengths),
        under_cutoff=sum(1 for n in lengths if n < cutoff) / len(lengths),
        cutoff=cutoff,
    )


def corpus_stats(triplets) -> dict[str, FieldLengthStats]:
    """Whitespace-token length stats per field (code/description/title)."""
    triplets = list(triplets)
    if not triplets:
        raise EmptyCorpusError("no triplets to measure")
    return {
        "code": _field_stats([len(t.code.split()) for t in triplets], 256),
        "description": _field_stats([len(t.description.split()) for t in triplets], 256),
        "title": _field_stats([len(t.title.split()) for t in triplets], 16),
    }


# --- line-delimited corpus files -------------------------------------------

def split_file_name(language: Language, split_name: str) -> str:
    return f"{Language(language).value}_{split_name}.jsonl"


def write_triplets(path, triplets):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for t in triplets:
            record = {
                "post_id": t.post_id,
                "language": t.language.value,
                "description": t.description,
                "code": t.code,
                "title": t.title,
            }
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_triplets(path) -> list[PostTriplet]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            r = json.loads(line)
            out.append(
                PostTriplet(
                    post_id=r["post_id"],
                    language=Language(r["language"]),
                    description=r["description"],
                    code=r["code"],
                    title=r["title"],
                )
            )
    return out


def write_split_corpus(out_dir, language, split: CorpusSplit):
    out_dir = Path(out_dir)
    for name in SPLIT_NAMES:
        write_triplets(out_dir / split_file_name(language, name), getattr(split, name))


def load_corpus_dir(corpus_dir, languages=None) -> dict[Language, dict[str, list[PostTriplet]]]:
    """Read the per-language split files written by ``corpus build``."""
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {corpus_dir}")
    languages = [Language(l) for l in languages] if languages else list(Language)
    corpora = {}
    for lang in languages:
        splits = {}
        for name in SPLIT_NAMES:
            path = corpus_dir / split_file_name(lang, name)
            splits[name] = read_triplets(path) if path.exists() else []
        corpora[lang] = splits
    return corpora
