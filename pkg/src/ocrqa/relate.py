"""OCR-object relational reasoning.

Each OCR token attends over the scene objects twice: once with scores from
the understood (semantic) vectors and once with scores from the 8-dim
normalized positions, both mixing the objects' semantic vectors.  The fused
relational feature is their elementwise sum.  A weighted-sum baseline
replaces per-token attention with one softmax-pooled object vector broadcast
to every token; "none" drops object information entirely.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from .attention import AttnParams, attn

POSITION_DIM = 8

RELATIONAL_MODES = ("full", "semantic_only", "positional_only", "weighted_sum", "none")


def semantic_attention(
    token_vecs: Tensor, object_vecs: Tensor, params: AttnParams, trace: list | None = None
) -> Tensor:
    """Attend tokens [o, d] over objects [n, d] in the understood space."""
    if object_vecs.shape[0] == 0:
        raise ValueError("no objects to attend over")
    return attn(token_vecs, object_vecs, object_vecs, params, trace)


def positional_attention(
    token_pos: Tensor,
    object_pos: Tensor,
    object_vecs: Tensor,
    params: AttnParams,
    trace: list | None = None,
) -> Tensor:
    """Score by normalized positions [*, 8], mix the objects' semantic vectors."""
    if object_vecs.shape[0] == 0:
        raise ValueError("no objects to attend over")
    return attn(token_pos, object_pos, object_vecs, params, trace)


def fuse(semantic: Tensor, positional: Tensor) -> Tensor:
    if semantic.shape != positional.shape:
        raise ValueError(f"shape mismatch: {tuple(semantic.shape)} vs {tuple(positional.shape)}")
    return semantic + positional


def object_weighted_sum(object_vecs: Tensor, weight: Tensor, trace: list | None = None) -> Tensor:
    """Softmax(object_vecs . weight)-weighted mean of the object vectors."""
    if object_vecs.shape[0] == 0:
        raise ValueError("no objects to pool")
    alphas = torch.softmax(object_vecs @ weight, dim=0)
    if trace is not None:
        trace.append(alphas)
    return alphas @ object_vecs


class RelationalReasoner(nn.Module):
    def __init__(self, vec_dim: int, attn_dim: int):
        super().__init__()
        self.vec_dim = vec_dim
        self.semantic = AttnParams(vec_dim, attn_dim)
        self.positional = AttnParams(POSITION_DIM, attn_dim)
        bound = 1.0 / math.sqrt(vec_dim)
        self.pool_weight = nn.Parameter(torch.empty(vec_dim).uniform_(-bound, bound))

    def forward(
        self,
        token_vecs: Tensor,
        token_pos: Tensor,
        object_vecs: Tensor | None,
        object_pos: Tensor | None,
        mode: str = "full",
        trace: list | None = None,
    ) -> Tensor:
        """Per-token relational features [o, vec_dim].

        With no detected objects (or mode "none") the relational features
        are zero, so downstream candidate representations degrade gracefully
        to OCR-only information.
        """
        if mode not in RELATIONAL_MODES:
            raise ValueError(f"unknown relational mode {mode!r}")
        zeros = torch.zeros_like(token_vecs)
        if mode == "none" or object_vecs is None or object_vecs.shape[0] == 0:
            return zeros
        if mode == "weighted_sum":
            pooled = object_weighted_sum(object_vecs, self.pool_weight, trace)
            return pooled.unsqueeze(0).expand_as(token_vecs)
        sem = (
            semantic_attention(token_vecs, object_vecs, self.semantic, trace)
            if mode in ("full", "semantic_only")
            else zeros
        )
        pos = (
            positional_attention(token_pos, object_pos, object_vecs, self.positional, trace)
            if mode in ("full", "positional_only")
            else zeros
        )
        return fuse(sem, pos)
