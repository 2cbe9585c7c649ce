"""Raw tokens -> model inputs: reading order, OCR context, positional
features, coarse POS/NER ids, and answer candidates."""

from __future__ import annotations

import re
import statistics
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

from .corpus import OcrToken, Quad, Sample, SceneObject
from .norm import normalize

# candidate kinds
SPAN = "ocr_span"
ADDITIONAL = "additional"
YES = "yes"
NO = "no"
UNANSWERABLE = "unanswerable"
SPECIAL_KINDS = (YES, NO, UNANSWERABLE)

POS_TAGS = (
    "noun",
    "verb",
    "adjective",
    "adverb",
    "pronoun",
    "determiner",
    "preposition",
    "conjunction",
    "numeral",
    "punctuation",
    "symbol",
    "other",
)
NER_TAGS = (
    "none",
    "number",
    "capitalized",
    "all_caps",
    "date",
    "money",
    "unit",
    "mixed_alnum",
)

_POS_ID = {t: i for i, t in enumerate(POS_TAGS)}
_NER_ID = {t: i for i, t in enumerate(NER_TAGS)}

_PUNCT_CHARS = set(".,;:!?\"'`()[]{}<>-_/\\|…‘’“”")
_CURRENCY = set("$€£¥₹")
_VERB_SUFFIXES = ("ing", "ed", "ify", "ize", "ise")
_ADJ_SUFFIXES = ("ful", "ous", "ive", "able", "ible", "al", "ic", "less", "ish")
_DATE_RE = re.compile(r"^\d{1,4}[-/.]\d{1,2}([-/.]\d{1,4})?$")
_NUMBER_RE = re.compile(r"^[+-]?\d[\d.,]*$")
_UNIT_RE = re.compile(r"^[+-]?\d[\d.,]*([a-z%]+)$")


@dataclass(frozen=True)
class ReadingOrder:
    """Permutation of token indices plus a line id for every token."""

    order: tuple[int, ...]
    line_ids: tuple[int, ...]


@dataclass(frozen=True)
class PositionalFeature:
    """Corner coordinates normalized by image size, each clamped to [0, 1]."""

    values: tuple[float, float, float, float, float, float, float, float]


ZERO_POSITION = PositionalFeature((0.0,) * 8)


@dataclass(frozen=True)
class TokenFeatureIds:
    pos_id: int
    ner_id: int


@dataclass(frozen=True)
class AnswerCandidate:
    """A scorable answer: an OCR span, a retrieved text, or a special token.

    For OCR spans, `token_indices` are original token indices in reading
    order (empty for dictionary entries) and `positional` is the normalized
    union box of the member tokens.  `crosses_line` flags 2-token spans whose
    members sit on different detected lines.
    """

    kind: str
    text: str
    token_indices: tuple[int, ...] = ()
    positional: PositionalFeature = ZERO_POSITION
    crosses_line: bool = False


@dataclass(frozen=True)
class OcrContext:
    """Token texts in reading order; slot i carries token `token_indices[i]`."""

    words: tuple[str, ...]
    positions: tuple[PositionalFeature, ...]
    token_indices: tuple[int, ...]


def tokenize(text: str) -> list[str]:
    """Whitespace split; leading/trailing punctuation become separate tokens."""
    out: list[str] = []
    for chunk in text.split():
        lead: list[str] = []
        trail: list[str] = []
        while chunk and chunk[0] in _PUNCT_CHARS:
            lead.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in _PUNCT_CHARS:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(lead)
        if chunk:
            out.append(chunk)
        out.extend(reversed(trail))
    return out


def compute_reading_order(
    tokens: Sequence[OcrToken], image_width: float, image_height: float
) -> ReadingOrder:
    """Left-to-right, top-to-bottom serialization of tokens.

    Lines form greedily: walking tokens by center-y, a token joins the
    current line when its center-y is within 0.5 * (median token height) of
    the line's running mean center-y, else it starts a new line.  Lines are
    ordered by mean center-y; within a line tokens sort by center-x, ties by
    original index.  The result only depends on coordinate ratios, so it is
    invariant under uniform scaling.
    """
    n = len(tokens)
    if n == 0:
        return ReadingOrder(order=(), line_ids=())
    centers = [t.quad.center() for t in tokens]
    threshold = 0.5 * statistics.median(t.quad.height() for t in tokens)

    by_y = sorted(range(n), key=lambda i: (centers[i][1], i))
    lines: list[list[int]] = []
    sums: list[float] = []
    for i in by_y:
        cy = centers[i][1]
        if lines and abs(cy - sums[-1] / len(lines[-1])) <= threshold:
            lines[-1].append(i)
            sums[-1] += cy
        else:
            lines.append([i])
            sums.append(cy)

    line_rank = sorted(range(len(lines)), key=lambda li: sums[li] / len(lines[li]))
    order: list[int] = []
    line_ids = [0] * n
    for rank, li in enumerate(line_rank):
        members = sorted(lines[li], key=lambda i: (centers[i][0], i))
        for i in members:
            line_ids[i] = rank
        order.extend(members)
    return ReadingOrder(order=tuple(order), line_ids=tuple(line_ids))


def positional_features(quad: Quad, image_width: float, image_height: float) -> PositionalFeature:
    """8-dim feature: each corner coordinate divided by the image dimension."""
    if image_width <= 0 or image_height <= 0:
        raise ValueError("image dimensions must be positive")
    vals = []
    for i, v in enumerate(quad.as_flat()):
        denom = image_width if i % 2 == 0 else image_height
        vals.append(min(max(v / denom, 0.0), 1.0))
    return PositionalFeature(tuple(vals))


def build_ocr_context(
    tokens: Sequence[OcrToken],
    order: ReadingOrder,
    image_width: float,
    image_height: float,
) -> OcrContext:
    """Token texts in reading order, each slot carrying its positional feature."""
    if sorted(order.order) != list(range(len(tokens))):
        raise ValueError("reading order is not a permutation of the token indices")
    words = tuple(tokens[i].text for i in order.order)
    positions = tuple(
        positional_features(tokens[i].quad, image_width, image_height) for i in order.order
    )
    return OcrContext(words=words, positions=positions, token_indices=order.order)


# ---------------------------------------------------------------------------
# coarse POS/NER tagging


@lru_cache(maxsize=1)
def _word_lists() -> dict[str, frozenset[str]]:
    text = resources.files("ocrqa").joinpath("data/tagger_words.txt").read_text(encoding="utf-8")
    lists: dict[str, set[str]] = {}
    section = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            lists.setdefault(section, set())
        elif section is not None:
            lists[section].add(line)
    return {k: frozenset(v) for k, v in lists.items()}


def _pos_tag(word: str) -> str:
    lists = _word_lists()
    lower = word.lower()
    if all(ch in _PUNCT_CHARS for ch in word):
        return "punctuation"
    if not any(ch.isalnum() for ch in word):
        return "symbol"
    if _NUMBER_RE.match(word):
        return "numeral"
    if lower in lists["pronoun"]:
        return "pronoun"
    if lower in lists["determiner"]:
        return "determiner"
    if lower in lists["preposition"]:
        return "preposition"
    if lower in lists["conjunction"]:
        return "conjunction"
    if lower in lists["aux_verb"] or (len(lower) > 4 and lower.endswith(_VERB_SUFFIXES)):
        return "verb"
    if len(lower) > 3 and lower.endswith("ly"):
        return "adverb"
    if len(lower) > 4 and lower.endswith(_ADJ_SUFFIXES):
        return "adjective"
    if word.isalpha():
        return "noun"
    return "other"


def _ner_tag(word: str) -> str:
    lists = _word_lists()
    lower = word.lower()
    has_digit = any(ch.isdigit() for ch in word)
    if any(ch in _CURRENCY for ch in word) and has_digit:
        return "money"
    if lower in lists["month"] or _DATE_RE.match(word):
        return "date"
    if _NUMBER_RE.match(word):
        return "number"
    m = _UNIT_RE.match(lower)
    if m and m.group(1) in lists["unit"]:
        return "unit"
    if has_digit and any(ch.isalpha() for ch in word):
        return "mixed_alnum"
    if len(word) >= 2 and word.isalpha() and word.isupper():
        return "all_caps"
    if word[:1].isalpha() and word[:1].isupper():
        return "capitalized"
    return "none"


def pos_ner_ids(word: str) -> TokenFeatureIds:
    """Deterministic rule-based coarse tagging into 12 POS / 8 NER buckets.

    POS rules, first match wins: all-punctuation; no-alphanumeric (symbol);
    numeric; closed-class lists (pronoun/determiner/preposition/conjunction);
    verb list or -ing/-ed/-ify/-ize/-ise; -ly adverb; adjective suffixes;
    alphabetic -> noun; anything else -> other.

    NER rules: currency+digits; month word or d/d(/d) date shapes; plain
    number; <digits><known unit>; mixed letters+digits; all-caps; capitalized;
    none.
    """
    if not word:
        raise ValueError("word must be non-empty")
    return TokenFeatureIds(pos_id=_POS_ID[_pos_tag(word)], ner_id=_NER_ID[_ner_tag(word)])


# ---------------------------------------------------------------------------
# answer candidates


def _union_box(quads: Sequence[Quad]) -> Quad:
    x0 = min(q.bbox()[0] for q in quads)
    y0 = min(q.bbox()[1] for q in quads)
    x1 = max(q.bbox()[2] for q in quads)
    y1 = max(q.bbox()[3] for q in quads)
    return Quad(x0, y0, x1, y0, x1, y1, x0, y1)


def generate_candidates(
    sample: Sample,
    order: ReadingOrder,
    additional_texts: Sequence[str],
) -> list[AnswerCandidate]:
    """All scorable answers for a sample, in a fixed pool order.

    Emits every 1-token span, every 2-token span of reading-order-consecutive
    tokens, one candidate per additional text (deduplicated after
    normalization, first occurrence kept), then yes / no / unanswerable.
    With n tokens and a deduplicated additional texts that is
    n + max(n-1, 0) + a + 3 candidates.
    """
    tokens = sample.ocr_tokens
    if sorted(order.order) != list(range(len(tokens))):
        raise ValueError("reading order is not a permutation of the token indices")
    w, h = sample.image_width, sample.image_height

    candidates: list[AnswerCandidate] = []
    ordered = list(order.order)
    for idx in ordered:
        candidates.append(
            AnswerCandidate(
                kind=SPAN,
                text=tokens[idx].text,
                token_indices=(idx,),
                positional=positional_features(_union_box([tokens[idx].quad]), w, h),
            )
        )
    for j in range(len(ordered) - 1):
        first, second = ordered[j], ordered[j + 1]
        candidates.append(
            AnswerCandidate(
                kind=SPAN,
                text=f"{tokens[first].text} {tokens[second].text}",
                token_indices=(first, second),
                positional=positional_features(
                    _union_box([tokens[first].quad, tokens[second].quad]), w, h
                ),
                crosses_line=order.line_ids[first] != order.line_ids[second],
            )
        )

    seen: set[str] = set()
    for text in additional_texts:
        key = normalize(text)
        if not key or key in seen:
            continue
        seen.add(key)
        candidates.append(AnswerCandidate(kind=ADDITIONAL, text=text))

    for kind in SPECIAL_KINDS:
        candidates.append(AnswerCandidate(kind=kind, text=kind))
    return candidates


def dictionary_mode_candidates(sample: Sample) -> list[AnswerCandidate]:
    """Candidates for the per-image dictionary task: one span-kind candidate
    per dictionary entry with an all-zero positional feature (entries may be
    multi-word), plus the special candidates."""
    if sample.dictionary is None:
        raise ValueError(f"sample {sample.sample_id!r} has no dictionary")
    candidates = [
        AnswerCandidate(kind=SPAN, text=entry, token_indices=(), positional=ZERO_POSITION)
        for entry in sample.dictionary
    ]
    for kind in SPECIAL_KINDS:
        candidates.append(AnswerCandidate(kind=kind, text=kind))
    return candidates


def object_word_sequence(obj: SceneObject) -> list[str]:
    """Render an object as words: attributes first, then the name (each
    whitespace-tokenized)."""
    words: list[str] = []
    for attr in obj.attributes:
        words.extend(tokenize(attr))
    words.extend(tokenize(obj.name))
    return words
