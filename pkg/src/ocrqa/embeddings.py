"""Word vectors with deterministic OOV handling, plus a small trainable
bidirectional recurrent contextualizer."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import torch
from torch import Tensor, nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def stable_hash(text: str) -> int:
    """64-bit FNV-1a over UTF-8 bytes; identical across runs and platforms."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


class EmbeddingTable(nn.Module):
    """word -> row lookup with lowercased-first resolution and OOV fallback.

    OOV words map either to one of `num_hash_buckets` trainable rows (chosen
    by a stable string hash) or to the zero vector.
    """

    def __init__(
        self,
        words: Sequence[str],
        dim: int,
        oov_mode: str = "hash_bucket",
        num_hash_buckets: int = 64,
        trainable: bool = True,
        vectors: Tensor | None = None,
    ):
        super().__init__()
        if dim < 1:
            raise ValueError("embedding dim must be >= 1")
        if oov_mode not in ("hash_bucket", "zero"):
            raise ValueError(f"unknown oov_mode {oov_mode!r}")
        if num_hash_buckets < 1:
            raise ValueError("num_hash_buckets must be >= 1")
        self.dim = dim
        self.oov_mode = oov_mode
        self.num_hash_buckets = num_hash_buckets
        self.trainable = trainable
        self.vocab: dict[str, int] = {}
        for w in words:
            if w not in self.vocab:
                self.vocab[w] = len(self.vocab)

        if vectors is None:
            vectors = torch.empty(len(self.vocab), dim).uniform_(-0.5, 0.5)
        else:
            if vectors.shape != (len(self.vocab), dim):
                raise ValueError(
                    f"vector matrix shape {tuple(vectors.shape)} does not match "
                    f"({len(self.vocab)}, {dim})"
                )
            vectors = vectors.clone()
        if not torch.isfinite(vectors).all():
            raise ValueError("embedding rows must be finite")
        oov_rows = torch.empty(num_hash_buckets, dim).uniform_(-0.5, 0.5)
        if trainable:
            self.rows = nn.Parameter(vectors)
            self.oov_rows = nn.Parameter(oov_rows)
        else:
            self.register_buffer("rows", vectors)
            # OOV buckets stay trainable even under frozen pretrained rows.
            self.oov_rows = nn.Parameter(oov_rows)

    def _resolve(self, word: str) -> tuple[str, int]:
        idx = self.vocab.get(word.lower())
        if idx is not None:
            return "vocab", idx
        idx = self.vocab.get(word)
        if idx is not None:
            return "vocab", idx
        if self.oov_mode == "zero":
            return "zero", 0
        return "oov", stable_hash(word.lower()) % self.num_hash_buckets

    def forward(self, words: Sequence[str]) -> Tensor:
        rows = []
        for word in words:
            kind, idx = self._resolve(word)
            if kind == "vocab":
                rows.append(self.rows[idx])
            elif kind == "oov":
                rows.append(self.oov_rows[idx])
            else:
                rows.append(torch.zeros(self.dim, dtype=self.rows.dtype))
        if not rows:
            return torch.zeros(0, self.dim, dtype=self.rows.dtype)
        return torch.stack(rows)


def embed_words(words: Sequence[str], table: EmbeddingTable) -> Tensor:
    """Row i is the table lookup of words[i] (see EmbeddingTable for OOV)."""
    return table(words)


def load_pretrained(path: str | Path, expected_dim: int) -> EmbeddingTable:
    """Read "word v1 ... vd" lines into a frozen table.

    A duplicate word overwrites the earlier row (last occurrence wins) and is
    counted on the returned table's `load_warnings`.
    """
    path = Path(path)
    words: list[str] = []
    index: dict[str, int] = {}
    rows: list[list[float]] = []
    warnings = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != expected_dim + 1:
                raise ValueError(
                    f"{path}: line {lineno}: expected {expected_dim} values, got {len(parts) - 1}"
                )
            word = parts[0]
            try:
                values = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: non-numeric vector value") from exc
            if word in index:
                rows[index[word]] = values
                warnings += 1
            else:
                index[word] = len(words)
                words.append(word)
                rows.append(values)
    table = EmbeddingTable(
        words,
        expected_dim,
        trainable=False,
        vectors=torch.tensor(rows, dtype=torch.get_default_dtype()),
    )
    table.load_warnings = warnings
    return table


class ContextualEncoder(nn.Module):
    """Single-layer bidirectional GRU producing per-position contextual
    vectors of width `out_dim` (out_dim must be even)."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        if out_dim % 2 != 0:
            raise ValueError("contextual encoder output dim must be even")
        self.out_dim = out_dim
        self.rnn = nn.GRU(in_dim, out_dim // 2, batch_first=True, bidirectional=True)

    def forward(self, word_vectors: Tensor) -> Tensor:
        """[len, in_dim] -> [len, out_dim]; raises on an empty sequence."""
        if word_vectors.shape[0] == 0:
            raise ValueError("cannot contextually encode an empty sequence")
        out, _ = self.rnn(word_vectors.unsqueeze(0))
        return out.squeeze(0)

    def forward_batch(self, sequences: list[Tensor]) -> list[Tensor]:
        """Encode several sequences at once; numerically identical to
        encoding each one alone (padding is masked via packing)."""
        if any(s.shape[0] == 0 for s in sequences):
            raise ValueError("cannot contextually encode an empty sequence")
        if not sequences:
            return []
        lengths = torch.tensor([s.shape[0] for s in sequences])
        order = torch.argsort(lengths, descending=True, stable=True)
        padded = nn.utils.rnn.pad_sequence([sequences[i] for i in order], batch_first=True)
        packed = pack_padded_sequence(padded, lengths[order].tolist(), batch_first=True)
        out, _ = self.rnn(packed)
        unpacked, out_lengths = pad_packed_sequence(out, batch_first=True)
        results: list[Tensor] = [None] * len(sequences)  # type: ignore[list-item]
        for slot, original in enumerate(order.tolist()):
            results[original] = unpacked[slot, : out_lengths[slot]]
        return results


def collect_vocabulary(samples: Iterable, qa_pairs: Iterable | None = None) -> list[str]:
    """Sorted lowercase vocabulary over questions, OCR texts, object words,
    dictionary entries, and (optionally) retrieval-corpus texts."""
    from .textprep import object_word_sequence, tokenize  # avoid import cycle

    words: set[str] = set()
    for sample in samples:
        words.update(w.lower() for w in tokenize(sample.question))
        words.update(t.text.lower() for t in sample.ocr_tokens)
        for obj in sample.objects:
            words.update(w.lower() for w in object_word_sequence(obj))
        if sample.dictionary:
            for entry in sample.dictionary:
                words.update(w.lower() for w in tokenize(entry))
    if qa_pairs is not None:
        for pair in qa_pairs:
            words.update(w.lower() for w in tokenize(pair.question))
            words.update(w.lower() for w in tokenize(pair.answer))
    return sorted(words)
