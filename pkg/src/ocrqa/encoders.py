"""Question and OCR/object understanding encoders.

Question side: word inputs -> 3 bidirectional LSTM levels -> self-attention
on the top level -> condensed question vector.  Context side (OCR tokens,
objects, or any extra text): word-level attention from the question, a
K-level bidirectional LSTM stack over [word inputs; attended question words;
POS/NER embeddings], K+1 multilevel attentions keyed on the concatenated
level history of both sides, self-attention over the concatenated
representation, and a final bidirectional LSTM that produces the understood
vectors (width 2 * hidden_dim).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .attention import AttnParams, PoolParams, attn, condense, self_attention

QUESTION_LEVELS = 3
POS_BUCKETS, POS_DIM = 12, 12
NER_BUCKETS, NER_DIM = 8, 8


@dataclass
class QuestionEncoding:
    """All question stages: inputs [q, wd], per-level states [q, d_h] each,
    self-attended top level, and the condensed vector [d_h]."""

    word_inputs: Tensor
    levels: list[Tensor]
    attended: Tensor
    condensed: Tensor


@dataclass
class ContextEncoding:
    """All context stages; `final` [m, 2 * d_h] are the understood vectors."""

    word_inputs: Tensor
    word_attended: Tensor
    levels: list[Tensor]
    multilevel: list[Tensor]
    self_attended: Tensor
    final: Tensor


class BiLstmStack(nn.Module):
    """K stacked bidirectional LSTM layers, each emitting `hidden_dim`-wide
    states (hidden_dim must be even); all per-layer outputs are returned."""

    def __init__(self, input_dim: int, hidden_dim: int, num_layers: int):
        super().__init__()
        if hidden_dim % 2 != 0:
            raise ValueError("hidden_dim must be even for a bidirectional stack")
        if num_layers < 1:
            raise ValueError("need at least one layer")
        self.hidden_dim = hidden_dim
        layers = []
        in_dim = input_dim
        for _ in range(num_layers):
            layers.append(nn.LSTM(in_dim, hidden_dim // 2, batch_first=True, bidirectional=True))
            in_dim = hidden_dim
        self.layers = nn.ModuleList(layers)

    def forward(self, inputs: Tensor) -> list[Tensor]:
        """[len, input_dim] -> one [len, hidden_dim] tensor per layer."""
        if inputs.shape[0] == 0:
            raise ValueError("cannot encode an empty sequence")
        outputs = []
        state = inputs.unsqueeze(0)
        for layer in self.layers:
            state, _ = layer(state)
            outputs.append(state.squeeze(0))
        return outputs


def word_level_attention(
    context_inputs: Tensor,
    question_inputs: Tensor,
    params: AttnParams,
    trace: list | None = None,
) -> Tensor:
    """Attend each context word into the question word vectors."""
    if question_inputs.shape[0] == 0:
        raise ValueError("question must be non-empty")
    return attn(context_inputs, question_inputs, question_inputs, params, trace)


class QuestionUnderstanding(nn.Module):
    def __init__(self, word_dim: int, hidden_dim: int, attn_dim: int, dropout: float = 0.0):
        super().__init__()
        self.stack = BiLstmStack(word_dim, hidden_dim, QUESTION_LEVELS)
        self.self_attn = AttnParams(hidden_dim, attn_dim)
        self.pool = PoolParams(hidden_dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, word_inputs: Tensor, trace: list | None = None) -> QuestionEncoding:
        if word_inputs.shape[0] == 0:
            raise ValueError("question must be non-empty")
        levels = self.stack(self.dropout(word_inputs))
        attended = self_attention(levels[-1], self.self_attn, trace)
        condensed = condense(attended, self.pool, trace)
        return QuestionEncoding(
            word_inputs=word_inputs, levels=levels, attended=attended, condensed=condensed
        )


class ContextUnderstanding(nn.Module):
    """Shared understanding module applied to OCR contexts, object word
    sequences, and additional texts alike."""

    def __init__(
        self,
        word_dim: int,
        hidden_dim: int,
        attn_dim: int,
        num_layers: int,
        dropout: float = 0.0,
    ):
        super().__init__()
        if not (1 <= num_layers <= QUESTION_LEVELS):
            raise ValueError(f"context depth must be in [1, {QUESTION_LEVELS}]")
        self.word_dim = word_dim
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.word_attn = AttnParams(word_dim, attn_dim)
        self.pos_emb = nn.Embedding(POS_BUCKETS, POS_DIM)
        self.ner_emb = nn.Embedding(NER_BUCKETS, NER_DIM)
        self.stack = BiLstmStack(2 * word_dim + POS_DIM + NER_DIM, hidden_dim, num_layers)
        # one attention per multilevel pass; pass j keys on word inputs plus j levels
        self.multilevel_attns = nn.ModuleList(
            AttnParams(word_dim + j * hidden_dim, attn_dim) for j in range(num_layers + 1)
        )
        concat_dim = word_dim + (2 * num_layers + 1) * hidden_dim
        self.self_attn = AttnParams(concat_dim, attn_dim)
        self.final = nn.LSTM(concat_dim, hidden_dim, batch_first=True, bidirectional=True)
        self.dropout = nn.Dropout(dropout)

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden_dim

    def forward(
        self,
        word_inputs: Tensor,
        feature_ids: Tensor,
        question: QuestionEncoding,
        trace: list | None = None,
    ) -> ContextEncoding:
        """word_inputs [m, wd], feature_ids [m, 2] (pos id, ner id)."""
        if word_inputs.shape[0] == 0:
            raise ValueError("context must be non-empty")
        word_attended = word_level_attention(
            word_inputs, question.word_inputs, self.word_attn, trace
        )
        features = torch.cat(
            [self.pos_emb(feature_ids[:, 0]), self.ner_emb(feature_ids[:, 1])], dim=1
        )
        h0 = torch.cat([word_inputs, word_attended, features], dim=1)
        levels = self.stack(self.dropout(h0))

        multilevel = []
        for j, params in enumerate(self.multilevel_attns):
            ctx_history = torch.cat([word_inputs] + levels[:j], dim=1)
            q_history = torch.cat([question.word_inputs] + question.levels[:j], dim=1)
            # the question stack is 3 levels deep; the last pass reuses its top
            value_level = question.levels[min(j, len(question.levels) - 1)]
            multilevel.append(attn(ctx_history, q_history, value_level, params, trace))

        concat = torch.cat([word_inputs] + levels + multilevel, dim=1)
        self_attended = self_attention(concat, self.self_attn, trace)
        final, _ = self.final(self.dropout(self_attended).unsqueeze(0))
        return ContextEncoding(
            word_inputs=word_inputs,
            word_attended=word_attended,
            levels=levels,
            multilevel=multilevel,
            self_attended=self_attended,
            final=final.squeeze(0),
        )


def pool_segments(states: Tensor, spans: list[tuple[int, int]]) -> Tensor:
    """Mean-pool row ranges [start, end) of `states` into one row each; used
    to turn per-word vectors into per-object / per-entry vectors."""
    if any(end <= start for start, end in spans):
        raise ValueError("empty span")
    return torch.stack([states[start:end].mean(dim=0) for start, end in spans])
