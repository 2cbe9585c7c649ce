"""End-to-end pipeline: sample preparation and the full scoring model."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import Tensor, nn

from . import textprep
from .answer import (
    MatchParams,
    Prediction,
    candidate_repr,
    match_ocr,
    reason_additional,
    select_answer,
    special_heads,
)
from .attention import AttnParams
from .corpus import Sample
from .embeddings import ContextualEncoder, EmbeddingTable, embed_words
from .norm import normalize
from .encoders import ContextUnderstanding, QuestionUnderstanding, pool_segments
from .relate import RelationalReasoner
from .textprep import SPAN, AnswerCandidate, PositionalFeature


@dataclass
class PreparedSample:
    """Everything the model needs for one sample, precomputed once."""

    sample_id: str
    gold_answers: tuple[str, ...]
    question_words: list[str]
    context_words: list[str]
    context_feats: Tensor  # [m, 2] long: (pos id, ner id) per context word
    context_pos: Tensor  # [m, 8] normalized corner coordinates
    candidates: list[AnswerCandidate]
    span_rows: list[list[int]]  # context rows backing each span candidate
    n_span: int
    n_additional: int
    object_words: list[str]
    object_feats: Tensor
    object_spans: list[tuple[int, int]]
    object_pos: Tensor  # [n_obj, 8]
    additional_words: list[list[str]]
    additional_feats: list[Tensor]
    dictionary_mode: bool = False


def _feature_tensor(words: list[str]) -> Tensor:
    ids = [(f.pos_id, f.ner_id) for f in (textprep.pos_ner_ids(w) for w in words)]
    return torch.tensor(ids, dtype=torch.long) if ids else torch.zeros(0, 2, dtype=torch.long)


def _position_tensor(positions: list[PositionalFeature]) -> Tensor:
    if not positions:
        return torch.zeros(0, 8)
    return torch.tensor([p.values for p in positions])


def _words_or_literal(text: str) -> list[str]:
    return textprep.tokenize(text) or [text]


def prepare_sample(
    sample: Sample,
    additional_texts: tuple[str, ...] = (),
    dictionary_mode: bool = False,
) -> PreparedSample:
    """Tokenize, order, featurize, and enumerate candidates for one sample.

    In dictionary mode the per-image dictionary replaces the OCR context:
    its entries become the context words (positions all zero) and the span
    candidates, one per entry."""
    question_words = textprep.tokenize(sample.question)
    if not question_words:
        raise ValueError(f"sample {sample.sample_id!r}: question has no words")

    if dictionary_mode:
        candidates = textprep.dictionary_mode_candidates(sample)
        context_words: list[str] = []
        span_rows: list[list[int]] = []
        for entry in sample.dictionary or ():
            words = _words_or_literal(entry)
            start = len(context_words)
            context_words.extend(words)
            span_rows.append(list(range(start, start + len(words))))
        context_positions = [textprep.ZERO_POSITION] * len(context_words)
        seen: set[str] = set()
        deduped_additional = []
        for text in additional_texts:
            key = normalize(text)
            if key and key not in seen:
                seen.add(key)
                deduped_additional.append(text)
        # dictionary candidates precede additional ones in pool order
        specials = [c for c in candidates if c.kind != SPAN]
        spans = [c for c in candidates if c.kind == SPAN]
        candidates = (
            spans
            + [AnswerCandidate(kind=textprep.ADDITIONAL, text=t) for t in deduped_additional]
            + specials
        )
    else:
        order = textprep.compute_reading_order(
            sample.ocr_tokens, sample.image_width, sample.image_height
        )
        context = textprep.build_ocr_context(
            sample.ocr_tokens, order, sample.image_width, sample.image_height
        )
        candidates = textprep.generate_candidates(sample, order, additional_texts)
        context_words = list(context.words)
        context_positions = list(context.positions)
        row_of = {token_idx: row for row, token_idx in enumerate(context.token_indices)}
        span_rows = [
            [row_of[i] for i in c.token_indices] for c in candidates if c.kind == SPAN
        ]

    additional_cands = [c.text for c in candidates if c.kind == textprep.ADDITIONAL]
    additional_words = [_words_or_literal(t) for t in additional_cands]

    object_words: list[str] = []
    object_spans: list[tuple[int, int]] = []
    for obj in sample.objects:
        words = textprep.object_word_sequence(obj) or [obj.name]
        start = len(object_words)
        object_words.extend(words)
        object_spans.append((start, start + len(words)))
    object_pos = _position_tensor(
        [
            textprep.positional_features(o.quad, sample.image_width, sample.image_height)
            for o in sample.objects
        ]
    )

    return PreparedSample(
        sample_id=sample.sample_id,
        gold_answers=sample.gold_answers,
        question_words=question_words,
        context_words=context_words,
        context_feats=_feature_tensor(context_words),
        context_pos=_position_tensor(context_positions),
        candidates=candidates,
        span_rows=span_rows,
        n_span=len(span_rows),
        n_additional=len(additional_cands),
        object_words=object_words,
        object_feats=_feature_tensor(object_words),
        object_spans=object_spans,
        object_pos=object_pos,
        additional_words=additional_words,
        additional_feats=[_feature_tensor(w) for w in additional_words],
        dictionary_mode=dictionary_mode,
    )


class OcrQaModel(nn.Module):
    """Question understanding + context/object understanding + relational
    reasoning + candidate scoring, end to end for one sample."""

    def __init__(self, config, vocab: list[str]):
        super().__init__()
        self.config = config
        self.vocab = list(vocab)
        word_dim = config.word_dim
        self.table = EmbeddingTable(
            self.vocab, word_dim, num_hash_buckets=config.oov_buckets
        )
        self.context_table = (
            EmbeddingTable(self.vocab, word_dim, num_hash_buckets=config.oov_buckets)
            if config.separate_tables
            else self.table
        )
        self.contextualizer = ContextualEncoder(word_dim, config.ctx_dim)
        wd = word_dim + config.ctx_dim
        self.question_enc = QuestionUnderstanding(
            wd, config.hidden_dim, config.attn_dim, config.dropout
        )
        self.context_enc = ContextUnderstanding(
            wd, config.hidden_dim, config.attn_dim, config.context_layers, config.dropout
        )
        vec_dim = self.context_enc.output_dim
        self.relate = RelationalReasoner(vec_dim, config.attn_dim)
        self.matcher = MatchParams(vec_dim, config.hidden_dim, config.answer_dim)
        self.double()

    def _word_inputs(self, words: list[str], table: EmbeddingTable) -> Tensor:
        static = embed_words(words, table)
        contextual = self.contextualizer(static)
        return torch.cat([static, contextual], dim=1)

    def _encode_objects(self, prep: PreparedSample, question_enc, trace):
        if not prep.object_spans:
            return None, None
        inputs = self._word_inputs(prep.object_words, self.context_table)
        encoding = self.context_enc(inputs, prep.object_feats, question_enc, trace)
        object_vecs = pool_segments(encoding.final, prep.object_spans)
        return object_vecs, prep.object_pos.to(object_vecs.dtype)

    def forward(
        self,
        prep: PreparedSample,
        relational_mode: str | None = None,
        trace: list | None = None,
    ) -> Prediction:
        mode = relational_mode or self.config.relational_mode
        question = self.question_enc(
            self._word_inputs(prep.question_words, self.table), trace
        )
        question_vec = question.condensed

        object_vecs, object_pos = self._encode_objects(prep, question, trace)

        if prep.context_words:
            ctx_inputs = self._word_inputs(prep.context_words, self.context_table)
            context = self.context_enc(ctx_inputs, prep.context_feats, question, trace)
            token_vecs = context.final
            token_pos = prep.context_pos.to(token_vecs.dtype)
            related = self.relate(token_vecs, token_pos, object_vecs, object_pos, mode, trace)
            span_reprs = (
                torch.stack(
                    [
                        candidate_repr(
                            token_vecs[rows].mean(dim=0),
                            related[rows].mean(dim=0),
                            self.matcher,
                        )
                        for rows in prep.span_rows
                    ]
                )
                if prep.span_rows
                else torch.zeros(0, self.config.answer_dim, dtype=token_vecs.dtype)
            )
        else:
            span_reprs = torch.zeros(0, self.config.answer_dim, dtype=torch.double)

        add_reprs_list = []
        for words, feats in zip(prep.additional_words, prep.additional_feats):
            inputs = self._word_inputs(words, self.context_table)
            encoding = self.context_enc(inputs, feats, question, trace)
            pooled = encoding.final.mean(dim=0, keepdim=True)
            related = self.relate(
                pooled, torch.zeros(1, 8, dtype=pooled.dtype), object_vecs, object_pos, mode, trace
            )
            add_reprs_list.append(candidate_repr(pooled[0], related[0], self.matcher))
        add_reprs = (
            torch.stack(add_reprs_list)
            if add_reprs_list
            else torch.zeros(0, self.config.answer_dim, dtype=torch.double)
        )

        p_ocr = (
            match_ocr(question_vec, span_reprs, self.matcher, trace)
            if prep.n_span
            else torch.zeros(0, dtype=torch.double)
        )
        p_add = (
            reason_additional(question_vec, p_ocr, span_reprs, add_reprs, self.matcher, trace)
            if prep.n_additional
            else torch.zeros(0, dtype=torch.double)
        )
        p_yes, p_no, p_una = special_heads(question_vec, span_reprs, self.matcher, trace)

        pred = Prediction(
            candidates=prep.candidates,
            n_span=prep.n_span,
            n_additional=prep.n_additional,
            p_ocr=p_ocr,
            p_add=p_add,
            p_yes=p_yes,
            p_no=p_no,
            p_una=p_una,
        )
        selected, score, pool = select_answer(pred)
        pred.selected = selected
        pred.selected_score = score
        pred.selected_pool = pool
        return pred
