"""Dataset schema, JSONL loading/validation, and synthetic corpus generation.

One sample per line, UTF-8 JSON:

    {"sample_id": str, "image_width": num, "image_height": num,
     "question": str, "answers": [str],
     "ocr": [{"text": str, "quad": [x1,y1,x2,y2,x3,y3,x4,y4]}],
     "objects": [{"name": str, "attributes": [str], "quad": [...]}],
     "dictionary": [str]}            # optional

Quads out of image bounds are clamped (and counted as warnings), never
rejected.  Duplicate sample ids are an error.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .norm import normalize


class DatasetError(ValueError):
    """Malformed dataset content; message names the line and field when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Quad:
    """Pixel-space quadrilateral, corners clockwise starting top-left."""

    x1: float
    y1: float
    x2: float
    y2: float
    x3: float
    y3: float
    x4: float
    y4: float

    def __post_init__(self):
        for value in self.as_flat():
            if not math.isfinite(value):
                raise ValueError("quad coordinates must be finite")
            if value < 0:
                raise ValueError("quad coordinates must be >= 0")

    @staticmethod
    def from_flat(values: Sequence[float]) -> "Quad":
        if len(values) != 8:
            raise ValueError(f"quad needs 8 coordinates, got {len(values)}")
        return Quad(*[float(v) for v in values])

    def as_flat(self) -> tuple[float, ...]:
        return (self.x1, self.y1, self.x2, self.y2, self.x3, self.y3, self.x4, self.y4)

    def center(self) -> tuple[float, float]:
        return (
            (self.x1 + self.x2 + self.x3 + self.x4) / 4.0,
            (self.y1 + self.y2 + self.y3 + self.y4) / 4.0,
        )

    def height(self) -> float:
        ys = (self.y1, self.y2, self.y3, self.y4)
        return max(ys) - min(ys)

    def bbox(self) -> tuple[float, float, float, float]:
        xs = (self.x1, self.x2, self.x3, self.x4)
        ys = (self.y1, self.y2, self.y3, self.y4)
        return (min(xs), min(ys), max(xs), max(ys))


@dataclass(frozen=True)
class OcrToken:
    text: str
    quad: Quad

    def __post_init__(self):
        if not self.text:
            raise ValueError("OCR token text must be non-empty")
        if "\n" in self.text:
            raise ValueError("OCR token text must not contain newlines")


@dataclass(frozen=True)
class SceneObject:
    name: str
    attributes: tuple[str, ...]
    quad: Quad

    def __post_init__(self):
        if not self.name:
            raise ValueError("object name must be non-empty")


@dataclass(frozen=True)
class Sample:
    sample_id: str
    image_width: float
    image_height: float
    question: str
    gold_answers: tuple[str, ...]
    ocr_tokens: tuple[OcrToken, ...]
    objects: tuple[SceneObject, ...]
    dictionary: tuple[str, ...] | None = None


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    name: str = ""

    def __post_init__(self):
        seen = set()
        for s in self.samples:
            if s.sample_id in seen:
                raise DatasetError(f"duplicate sample_id {s.sample_id!r}")
            seen.add(s.sample_id)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class LoadReport:
    """Bookkeeping for a load: loaded + rejected always equals lines."""

    lines: int = 0
    loaded: int = 0
    rejected: int = 0
    warnings: int = 0
    messages: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# parsing / validation


def _as_number(value, fieldname: str, line: int | None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise DatasetError(f"field `{fieldname}` must be a number", line)
    out = float(value)
    if not math.isfinite(out):
        raise DatasetError(f"field `{fieldname}` must be finite", line)
    return out


def _as_string(value, fieldname: str, line: int | None) -> str:
    if not isinstance(value, str):
        raise DatasetError(f"field `{fieldname}` must be a string", line)
    return value


def _clamp_quad(values: Sequence[float], width: float, height: float) -> tuple[Quad, int]:
    """Clamp raw corner coordinates into [0, width] x [0, height].

    Returns the quad and the number of coordinates that had to move.
    """
    clamped = []
    moved = 0
    for i, v in enumerate(values):
        limit = width if i % 2 == 0 else height
        c = min(max(v, 0.0), limit)
        if c != v:
            moved += 1
        clamped.append(c)
    return Quad.from_flat(clamped), moved


def _parse_quad_field(obj: dict, where: str, line: int | None) -> list[float]:
    raw = obj.get("quad")
    if not isinstance(raw, list) or len(raw) != 8:
        raise DatasetError(f"field `{where}.quad` must be a list of 8 numbers", line)
    return [_as_number(v, f"{where}.quad", line) for v in raw]


def parse_sample(record: dict, split: str = "train", line: int | None = None) -> tuple[Sample, int]:
    """Validate one JSON record, clamp its quads, and build a Sample.

    Returns (sample, warning_count) where warnings count clamped coordinates.
    """
    if not isinstance(record, dict):
        raise DatasetError("record must be a JSON object", line)

    sample_id = _as_string(record.get("sample_id"), "sample_id", line)
    if not sample_id:
        raise DatasetError("field `sample_id` must be non-empty", line)

    width = _as_number(record.get("image_width"), "image_width", line)
    height = _as_number(record.get("image_height"), "image_height", line)
    if width <= 0:
        raise DatasetError("field `image_width` must be > 0", line)
    if height <= 0:
        raise DatasetError("field `image_height` must be > 0", line)

    question = _as_string(record.get("question"), "question", line)
    if not question.strip():
        raise DatasetError("field `question` must be non-empty", line)

    answers_raw = record.get("answers", [])
    if not isinstance(answers_raw, list) or any(not isinstance(a, str) for a in answers_raw):
        raise DatasetError("field `answers` must be a list of strings", line)
    if split in ("train", "dev") and len(answers_raw) == 0:
        raise DatasetError(f"field `answers` must be non-empty for split {split!r}", line)

    warnings = 0
    tokens = []
    for i, tok in enumerate(record.get("ocr", [])):
        if not isinstance(tok, dict):
            raise DatasetError(f"field `ocr[{i}]` must be an object", line)
        text = _as_string(tok.get("text"), f"ocr[{i}].text", line)
        if not text:
            raise DatasetError(f"field `ocr[{i}].text` must be non-empty", line)
        if "\n" in text:
            raise DatasetError(f"field `ocr[{i}].text` must not contain newlines", line)
        raw_quad = _parse_quad_field(tok, f"ocr[{i}]", line)
        quad, moved = _clamp_quad(raw_quad, width, height)
        if moved:
            warnings += 1
        tokens.append(OcrToken(text=text, quad=quad))

    objects = []
    for i, obj in enumerate(record.get("objects", [])):
        if not isinstance(obj, dict):
            raise DatasetError(f"field `objects[{i}]` must be an object", line)
        name = _as_string(obj.get("name"), f"objects[{i}].name", line)
        if not name:
            raise DatasetError(f"field `objects[{i}].name` must be non-empty", line)
        attrs_raw = obj.get("attributes", [])
        if not isinstance(attrs_raw, list) or any(not isinstance(a, str) for a in attrs_raw):
            raise DatasetError(f"field `objects[{i}].attributes` must be a list of strings", line)
        raw_quad = _parse_quad_field(obj, f"objects[{i}]", line)
        quad, moved = _clamp_quad(raw_quad, width, height)
        if moved:
            warnings += 1
        objects.append(SceneObject(name=name, attributes=tuple(attrs_raw), quad=quad))

    dictionary = None
    if "dictionary" in record and record["dictionary"] is not None:
        dict_raw = record["dictionary"]
        if not isinstance(dict_raw, list) or any(not isinstance(d, str) for d in dict_raw):
            raise DatasetError("field `dictionary` must be a list of strings", line)
        dictionary = tuple(dict_raw)

    sample = Sample(
        sample_id=sample_id,
        image_width=width,
        image_height=height,
        question=question,
        gold_answers=tuple(answers_raw),
        ocr_tokens=tuple(tokens),
        objects=tuple(objects),
        dictionary=dictionary,
    )
    return sample, warnings


def sample_to_record(sample: Sample) -> dict:
    record = {
        "sample_id": sample.sample_id,
        "image_width": sample.image_width,
        "image_height": sample.image_height,
        "question": sample.question,
        "answers": list(sample.gold_answers),
        "ocr": [{"text": t.text, "quad": list(t.quad.as_flat())} for t in sample.ocr_tokens],
        "objects": [
            {"name": o.name, "attributes": list(o.attributes), "quad": list(o.quad.as_flat())}
            for o in sample.objects
        ],
    }
    if sample.dictionary is not None:
        record["dictionary"] = list(sample.dictionary)
    return record


def load_dataset_with_report(
    path: str | Path, split: str = "train", strict: bool = True
) -> tuple[Dataset, LoadReport]:
    """Load a JSONL dataset.

    In strict mode the first malformed record raises.  In lenient mode bad
    records are counted as rejected (with messages) and loading continues,
    so that loaded + rejected always reconciles to the non-blank line count.
    """
    if split not in ("train", "dev", "test"):
        raise ValueError(f"unknown split {split!r}")
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")

    report = LoadReport()
    samples: list[Sample] = []
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            report.lines += 1
            try:
                try:
                    record = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"invalid JSON ({exc.msg})", lineno) from exc
                sample, warnings = parse_sample(record, split=split, line=lineno)
                if sample.sample_id in seen_ids:
                    raise DatasetError(f"duplicate sample_id {sample.sample_id!r}", lineno)
            except DatasetError as exc:
                if strict:
                    raise
                report.rejected += 1
                report.messages.append(str(exc))
                continue
            seen_ids.add(sample.sample_id)
            samples.append(sample)
            report.loaded += 1
            report.warnings += warnings
            if warnings:
                report.messages.append(f"line {lineno}: clamped {warnings} quad coordinate(s)")
    return Dataset(samples=tuple(samples), name=path.stem), report


def load_dataset(path: str | Path, split: str = "train") -> Dataset:
    dataset, _ = load_dataset_with_report(path, split=split, strict=True)
    return dataset


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for sample in dataset.samples:
            fh.write(json.dumps(sample_to_record(sample), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# synthetic corpus generation

_SYLLABLES = tuple(c + v for c in "bdfgklmnprstvz" for v in "aeiou")
_OBJECT_NAMES = ("sign", "box", "door", "bus", "car", "cup", "bag", "hat", "jar", "bin", "cap", "wall")
_OBJECT_ATTRS = ("red", "blue", "green", "white", "black", "small", "big", "old", "new", "dark")

_CANVAS = 1000.0
_LINE_SLOTS = (90.0, 210.0, 330.0, 450.0, 570.0, 690.0, 810.0, 930.0)
_X_SLOTS = (90.0, 240.0, 390.0, 540.0, 690.0, 840.0)
_TOKEN_HEIGHT = 28.0
_FAMILIES = ("a", "b", "c", "d")


@dataclass(frozen=True)
class SyntheticConfig:
    num_samples: int
    vocab_size: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.vocab_size < 10:
            raise ValueError("vocab_size must be >= 10")


def synthetic_vocab(size: int) -> list[str]:
    """Deterministic pseudo-word vocabulary ("baba", "beba", ...)."""
    if size < 10:
        raise ValueError("vocab_size must be >= 10")
    n = len(_SYLLABLES)
    words = []
    for i in range(size):
        w = _SYLLABLES[i % n] + _SYLLABLES[(i // n) % n]
        if i >= n * n:
            w += _SYLLABLES[(i // (n * n)) % n]
        words.append(w)
    return words


def nearest_token_index(tokens: Sequence[OcrToken], point: tuple[float, float]) -> int:
    """Index of the token whose quad center is nearest to `point` (ties: lowest index)."""
    if not tokens:
        raise ValueError("no tokens")
    px, py = point
    best, best_d = 0, float("inf")
    for i, tok in enumerate(tokens):
        cx, cy = tok.quad.center()
        d = (cx - px) ** 2 + (cy - py) ** 2
        if d < best_d:
            best, best_d = i, d
    return best


def _token_at(rng: random.Random, text: str, line_idx: int, x_idx: int) -> OcrToken:
    cx = _X_SLOTS[x_idx] + rng.uniform(-15.0, 15.0)
    cy = _LINE_SLOTS[line_idx] + rng.uniform(-5.0, 5.0)
    w = 16.0 * len(text) + 12.0
    h = _TOKEN_HEIGHT
    return OcrToken(text=text, quad=_rect(cx, cy, w, h))


def _rect(cx: float, cy: float, w: float, h: float) -> Quad:
    x0 = min(max(cx - w / 2.0, 0.0), _CANVAS)
    x1 = min(max(cx + w / 2.0, 0.0), _CANVAS)
    y0 = min(max(cy - h / 2.0, 0.0), _CANVAS)
    y1 = min(max(cy + h / 2.0, 0.0), _CANVAS)
    return Quad(x0, y0, x1, y0, x1, y1, x0, y1)


def _object_at(
    rng: random.Random, name: str, cx: float, cy: float, with_attrs: bool = True
) -> SceneObject:
    attrs = tuple(rng.sample(_OBJECT_ATTRS, rng.randint(0, 2))) if with_attrs else ()
    w = rng.uniform(90.0, 150.0)
    h = rng.uniform(90.0, 150.0)
    return SceneObject(name=name, attributes=attrs, quad=_rect(cx, cy, w, h))


def _far_line_indices(anchor: int) -> list[int]:
    return [i for i in range(len(_LINE_SLOTS)) if abs(i - anchor) >= 3]


def _scatter_slots(rng: random.Random, count: int, line_choices: Sequence[int]) -> list[tuple[int, int]]:
    pairs = [(li, xi) for li in line_choices for xi in range(len(_X_SLOTS))]
    return rng.sample(pairs, count)


def _random_objects(rng: random.Random, count: int, exclude: Sequence[str] = ()) -> list[SceneObject]:
    names = rng.sample([n for n in _OBJECT_NAMES if n not in exclude], count)
    return [
        _object_at(rng, name, rng.uniform(120.0, 880.0), rng.uniform(120.0, 880.0))
        for name in names
    ]


def _build_phrase_sample(rng: random.Random, vocab: Sequence[str]):
    """Family (a): the answer is the 1-2 token phrase placed on the sign."""
    phrase_len = 2 if rng.random() < 0.4 else 1
    n_other = rng.randint(max(1, 3 - phrase_len), 8 - phrase_len)
    words = rng.sample(list(vocab), phrase_len + n_other)
    phrase_words, other_words = words[:phrase_len], words[phrase_len:]

    p_line = rng.randrange(len(_LINE_SLOTS))
    x_start = rng.randrange(len(_X_SLOTS) - phrase_len + 1)
    phrase_tokens = [
        _token_at(rng, w, p_line, x_start + j) for j, w in enumerate(phrase_words)
    ]
    far = _far_line_indices(p_line)
    other_tokens = [
        _token_at(rng, w, li, xi)
        for w, (li, xi) in zip(other_words, _scatter_slots(rng, len(other_words), far))
    ]

    centers = [t.quad.center() for t in phrase_tokens]
    sx = sum(c[0] for c in centers) / len(centers) + rng.uniform(-25.0, 25.0)
    sy = sum(c[1] for c in centers) / len(centers) + rng.uniform(-25.0, 25.0)
    objects = [_object_at(rng, "sign", sx, sy, with_attrs=False)]
    # at least one far distractor object, so that positional attention has
    # contrast between phrase tokens and the rest of the scene
    names = rng.sample([n for n in _OBJECT_NAMES if n != "sign"], rng.randint(1, 3))
    for name in names:
        li = rng.choice(far)
        objects.append(
            _object_at(rng, name, rng.uniform(120.0, 880.0), _LINE_SLOTS[li] + rng.uniform(-30.0, 30.0))
        )

    answer = " ".join(phrase_words)
    return phrase_tokens + other_tokens, objects, "what does the sign say", answer


def _build_object_word_sample(rng: random.Random, vocab: Sequence[str]):
    """Family (b): the answer is the token nearest the named object's center."""
    n_tokens = rng.randint(3, 8)
    words = rng.sample(list(vocab), n_tokens)

    t_line = rng.randrange(len(_LINE_SLOTS))
    t_x = rng.randrange(len(_X_SLOTS))
    near_token = _token_at(rng, words[0], t_line, t_x)
    far = _far_line_indices(t_line)
    other_tokens = [
        _token_at(rng, w, li, xi)
        for w, (li, xi) in zip(words[1:], _scatter_slots(rng, n_tokens - 1, far))
    ]

    names = rng.sample(_OBJECT_NAMES, rng.randint(2, 4))
    target_name, distractor_names = names[0], names[1:]
    ncx, ncy = near_token.quad.center()
    target = _object_at(
        rng, target_name, ncx + rng.uniform(-30.0, 30.0), ncy + rng.uniform(-30.0, 30.0),
        with_attrs=False,
    )
    objects = [target]
    for name in distractor_names:
        li = rng.choice(far)
        objects.append(
            _object_at(rng, name, rng.uniform(120.0, 880.0), _LINE_SLOTS[li] + rng.uniform(-30.0, 30.0))
        )

    tokens = [near_token] + other_tokens
    gold_idx = nearest_token_index(tokens, target.quad.center())
    if tokens[gold_idx] is not near_token:
        raise RuntimeError("synthetic generator: nearest-center rule disagrees with placement")
    return tokens, objects, f"what word is on the {target_name}", tokens[gold_idx].text


def _build_yes_no_sample(rng: random.Random, vocab: Sequence[str]):
    """Family (c): yes iff the cue token 'stop' appears in the scene."""
    n_tokens = rng.randint(3, 8)
    words = rng.sample(list(vocab), n_tokens)
    has_cue = rng.random() < 0.5
    if has_cue:
        words[rng.randrange(n_tokens)] = "stop"
    slots = _scatter_slots(rng, n_tokens, range(len(_LINE_SLOTS)))
    tokens = [_token_at(rng, w, li, xi) for w, (li, xi) in zip(words, slots)]
    objects = _random_objects(rng, rng.randint(1, 3))
    return tokens, objects, "should vehicles stop here", "yes" if has_cue else "no"


def _build_unanswerable_sample(rng: random.Random, vocab: Sequence[str]):
    """Family (d): asks for content the scene never contains."""
    n_tokens = rng.randint(3, 8)
    words = rng.sample(list(vocab), n_tokens)
    slots = _scatter_slots(rng, n_tokens, range(len(_LINE_SLOTS)))
    tokens = [_token_at(rng, w, li, xi) for w, (li, xi) in zip(words, slots)]
    objects = _random_objects(rng, rng.randint(1, 3))
    return tokens, objects, "what is the phone number", "unanswerable"


_BUILDERS = {
    "a": _build_phrase_sample,
    "b": _build_object_word_sample,
    "c": _build_yes_no_sample,
    "d": _build_unanswerable_sample,
}


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Deterministic synthetic scenes on a 1000x1000 canvas.

    Four question families, round-robin by sample index:
      a) "what does the sign say"      -> a specific 1-2 token span
      b) "what word is on the <name>"  -> token nearest that object's center
      c) yes/no                        -> yes iff the cue token is present
      d) unanswerable                  -> scene lacks the asked-for content

    Every gold answer is verified to be producible by the candidate
    generator for its sample.
    """
    from . import textprep  # deferred: textprep imports corpus types

    rng = random.Random(config.seed)
    vocab = synthetic_vocab(config.vocab_size)
    samples = []
    for i in range(config.num_samples):
        family = _FAMILIES[i % len(_FAMILIES)]
        tokens, objects, question, answer = _BUILDERS[family](rng, vocab)
        rng.shuffle(tokens)
        rng.shuffle(objects)
        sample = Sample(
            sample_id=f"{family}/{i:04d}",
            image_width=_CANVAS,
            image_height=_CANVAS,
            question=question,
            gold_answers=(answer,),
            ocr_tokens=tuple(tokens),
            objects=tuple(objects),
        )
        order = textprep.compute_reading_order(sample.ocr_tokens, _CANVAS, _CANVAS)
        candidates = textprep.generate_candidates(sample, order, ())
        reachable = {normalize(c.text) for c in candidates}
        if normalize(answer) not in reachable:
            raise RuntimeError(
                f"synthetic generator produced unreachable gold answer for {sample.sample_id}"
            )
        samples.append(sample)
    return Dataset(samples=tuple(samples), name=f"synthetic-{config.seed}")
