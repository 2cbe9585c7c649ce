"""Reusable attention operator and condensation pooling.

Scores between a query row a_i and a key row b_j are
ReLU(a_i U) . diag(d) . ReLU(b_j U); a row-wise softmax over keys turns the
scores into mixing weights for the value rows.  `condense` pools a sequence
into one vector with softmax weights from a learned direction.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn


class AttnParams(nn.Module):
    """Projection `proj` [d, k] and per-feature diagonal score weights [k]."""

    def __init__(self, input_dim: int, attn_dim: int):
        super().__init__()
        if input_dim < 1 or attn_dim < 1:
            raise ValueError("attention dims must be >= 1")
        bound = 1.0 / math.sqrt(input_dim)
        self.proj = nn.Parameter(torch.empty(input_dim, attn_dim).uniform_(-bound, bound))
        self.diag = nn.Parameter(torch.ones(attn_dim))


def attn(
    queries: Tensor,
    keys: Tensor,
    values: Tensor,
    params: AttnParams,
    trace: list | None = None,
) -> Tensor:
    """queries [m, d], keys [n, d], values [n, e] -> [m, e].

    Output row i is the weight-mixed value rows, with weights
    softmax_j(ReLU(q_i U) . diag . ReLU(k_j U)).  Raises on an empty key set
    or mismatched dims.  `trace`, when given, collects the [m, n] weight
    matrix (each row sums to 1).
    """
    if keys.shape[0] == 0:
        raise ValueError("attention over an empty key set")
    if keys.shape[0] != values.shape[0]:
        raise ValueError(f"keys/values row mismatch: {keys.shape[0]} vs {values.shape[0]}")
    if queries.shape[1] != keys.shape[1] or queries.shape[1] != params.proj.shape[0]:
        raise ValueError(
            f"dim mismatch: queries {tuple(queries.shape)}, keys {tuple(keys.shape)}, "
            f"proj {tuple(params.proj.shape)}"
        )
    q = torch.relu(queries @ params.proj)
    k = torch.relu(keys @ params.proj)
    scores = q @ (k * params.diag).T
    weights = torch.softmax(scores, dim=1)
    if trace is not None:
        trace.append(weights)
    return weights @ values


def self_attention(states: Tensor, params: AttnParams, trace: list | None = None) -> Tensor:
    """attn of a sequence onto itself; permutation-equivariant in the rows."""
    if states.shape[0] == 0:
        raise ValueError("self-attention over an empty sequence")
    return attn(states, states, states, params, trace)


class PoolParams(nn.Module):
    """Learned scoring direction for condensation pooling."""

    def __init__(self, dim: int):
        super().__init__()
        bound = 1.0 / math.sqrt(dim)
        self.weight = nn.Parameter(torch.empty(dim).uniform_(-bound, bound))


def condense(states: Tensor, params: PoolParams, trace: list | None = None) -> Tensor:
    """states [m, d] -> [d]: softmax(states . w)-weighted sum of the rows."""
    if states.shape[0] == 0:
        raise ValueError("condense over an empty sequence")
    weights = torch.softmax(states @ params.weight, dim=0)
    if trace is not None:
        trace.append(weights)
    return weights @ states
