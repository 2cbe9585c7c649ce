"""Candidate scoring and the training loss.

OCR-span candidates are scored by a bilinear match between the condensed
question vector and a ReLU(FC([understood; relational])) candidate
representation.  Additional (retrieved) texts are scored after one GRU-cell
update of the question state with the probability-weighted OCR evidence.
Yes/no/unanswerable each get their own attention head whose pooled evidence
is squashed through a logistic to a probability.  Training minimizes binary
cross entropy over all candidate probabilities plus the three special
scalars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import Tensor, nn

from .norm import normalize
from .textprep import ADDITIONAL, NO, SPAN, UNANSWERABLE, YES, AnswerCandidate

PROB_FLOOR = 1e-7
_POOL_ORDER = {SPAN: 0, ADDITIONAL: 1, YES: 2, NO: 3, UNANSWERABLE: 4}


def _bilinear_param(rows: int, cols: int) -> nn.Parameter:
    bound = 1.0 / math.sqrt(rows)
    return nn.Parameter(torch.empty(rows, cols).uniform_(-bound, bound))


class MatchParams(nn.Module):
    """Parameters for candidate scoring.

    `fc` maps [understood; relational] (2 * vec_dim) to candidate space
    (answer_dim); `match` scores OCR spans against the question vector
    (question_dim); `reason` scores additional texts against the GRU-updated
    question state; the three head matrices/vectors produce the special
    probabilities; `null_evidence` stands in for the pooled OCR evidence when
    a sample has no OCR candidates.
    """

    def __init__(self, vec_dim: int, question_dim: int, answer_dim: int):
        super().__init__()
        self.fc = nn.Linear(2 * vec_dim, answer_dim)
        # start the rectified units well inside the active region; with one
        # positive against many negative candidates, gradient descent
        # otherwise shrinks the shared representation until the layer dies
        with torch.no_grad():
            self.fc.bias.fill_(0.5)
        self.match = _bilinear_param(question_dim, answer_dim)
        self.reason = _bilinear_param(question_dim, answer_dim)
        self.head_yes = _bilinear_param(question_dim, answer_dim)
        self.head_no = _bilinear_param(question_dim, answer_dim)
        self.head_una = _bilinear_param(question_dim, answer_dim)
        bound = 1.0 / math.sqrt(answer_dim)
        self.vec_yes = nn.Parameter(torch.empty(answer_dim).uniform_(-bound, bound))
        self.vec_no = nn.Parameter(torch.empty(answer_dim).uniform_(-bound, bound))
        self.vec_una = nn.Parameter(torch.empty(answer_dim).uniform_(-bound, bound))
        self.null_evidence = nn.Parameter(torch.empty(answer_dim).uniform_(-bound, bound))
        # GRU cell that folds OCR evidence (input answer_dim) into the
        # question state (question_dim): gates ordered reset, update, new.
        self.gru_input = nn.Linear(answer_dim, 3 * question_dim)
        self.gru_hidden = nn.Linear(question_dim, 3 * question_dim)


def candidate_repr(understood: Tensor, relational: Tensor, params: MatchParams) -> Tensor:
    """ReLU(FC([understood; relational])); inputs are per-candidate vectors
    (means of the member token vectors for 2-token spans)."""
    return torch.relu(params.fc(torch.cat([understood, relational], dim=-1)))


def _bilinear_softmax(
    question_vec: Tensor, matrix: Tensor, reprs: Tensor, trace: list | None
) -> Tensor:
    scores = (question_vec @ matrix) @ reprs.T
    probs = torch.softmax(scores, dim=0)
    if trace is not None:
        trace.append(probs)
    return probs


def match_ocr(
    question_vec: Tensor, span_reprs: Tensor, params: MatchParams, trace: list | None = None
) -> Tensor:
    """Probability over OCR-span candidates from bilinear scores."""
    if span_reprs.shape[0] == 0:
        raise ValueError("no OCR-span candidates to score")
    return _bilinear_softmax(question_vec, params.match, span_reprs, trace)


def gru_step(inputs: Tensor, hidden: Tensor, params: MatchParams) -> Tensor:
    """One GRU-cell update of `hidden` with `inputs`."""
    gi = params.gru_input(inputs)
    gh = params.gru_hidden(hidden)
    i_r, i_z, i_n = gi.chunk(3, dim=-1)
    h_r, h_z, h_n = gh.chunk(3, dim=-1)
    reset = torch.sigmoid(i_r + h_r)
    update = torch.sigmoid(i_z + h_z)
    fresh = torch.tanh(i_n + reset * h_n)
    return (1.0 - update) * fresh + update * hidden


def reason_additional(
    question_vec: Tensor,
    span_probs: Tensor,
    span_reprs: Tensor,
    additional_reprs: Tensor,
    params: MatchParams,
    trace: list | None = None,
) -> Tensor:
    """Probability over additional candidates: update the question state with
    the probability-weighted OCR evidence, then score bilinearly."""
    if additional_reprs.shape[0] == 0:
        raise ValueError("no additional candidates to score")
    if span_reprs.shape[0] > 0:
        evidence = span_probs @ span_reprs
    else:
        evidence = torch.zeros_like(params.null_evidence)
    updated = gru_step(evidence, question_vec, params)
    return _bilinear_softmax(updated, params.reason, additional_reprs, trace)


def special_heads(
    question_vec: Tensor,
    span_reprs: Tensor | None,
    params: MatchParams,
    trace: list | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """(P_yes, P_no, P_unanswerable), each in (0, 1).

    Each head attends over the OCR candidate representations with its own
    bilinear weights, pools them, and squashes the pooled evidence's
    projection through a logistic.  Without OCR candidates the learned null
    evidence vector is used."""
    outputs = []
    for matrix, vector in (
        (params.head_yes, params.vec_yes),
        (params.head_no, params.vec_no),
        (params.head_una, params.vec_una),
    ):
        if span_reprs is None or span_reprs.shape[0] == 0:
            evidence = params.null_evidence
        else:
            probs = _bilinear_softmax(question_vec, matrix, span_reprs, trace)
            evidence = probs @ span_reprs
        outputs.append(torch.sigmoid(evidence @ vector))
    return outputs[0], outputs[1], outputs[2]


@dataclass
class Prediction:
    """Calibrated probabilities over every candidate pool plus the selection."""

    candidates: list[AnswerCandidate]
    n_span: int
    n_additional: int
    p_ocr: Tensor
    p_add: Tensor
    p_yes: Tensor
    p_no: Tensor
    p_una: Tensor
    selected: AnswerCandidate | None = None
    selected_score: float = 0.0
    selected_pool: str = ""


def select_answer(pred: Prediction) -> tuple[AnswerCandidate, float, str]:
    """Argmax over all pools; ties break by pool order (spans, additional,
    yes, no, unanswerable) and then by candidate index."""
    scored: list[tuple[float, int, int, AnswerCandidate]] = []
    spans = [c for c in pred.candidates if c.kind == SPAN]
    adds = [c for c in pred.candidates if c.kind == ADDITIONAL]
    for i, cand in enumerate(spans):
        scored.append((float(pred.p_ocr[i].detach()), _POOL_ORDER[SPAN], i, cand))
    for j, cand in enumerate(adds):
        scored.append((float(pred.p_add[j].detach()), _POOL_ORDER[ADDITIONAL], j, cand))
    for scalar, kind in ((pred.p_yes, YES), (pred.p_no, NO), (pred.p_una, UNANSWERABLE)):
        cand = next((c for c in pred.candidates if c.kind == kind), None)
        if cand is not None:
            scored.append((float(scalar.detach()), _POOL_ORDER[kind], 0, cand))
    if not scored:
        raise ValueError("no candidates to select from")
    best = max(scored, key=lambda item: (item[0], -item[1], -item[2]))
    pool = {v: k for k, v in _POOL_ORDER.items()}[best[1]]
    return best[3], best[0], pool


@dataclass
class Labels:
    span: list[bool]
    additional: list[bool]
    yes: bool
    no: bool
    unanswerable: bool
    reachable: bool = field(init=False)

    def __post_init__(self):
        self.reachable = (
            any(self.span) or any(self.additional) or self.yes or self.no or self.unanswerable
        )


def make_labels(candidates: list[AnswerCandidate], gold_answers) -> Labels:
    """A span/additional candidate is positive iff its normalized text equals
    any normalized gold answer; special labels require the gold to be exactly
    yes/no/unanswerable."""
    if not gold_answers:
        raise ValueError("need at least one gold answer")
    golds = {normalize(g) for g in gold_answers}
    return Labels(
        span=[normalize(c.text) in golds for c in candidates if c.kind == SPAN],
        additional=[normalize(c.text) in golds for c in candidates if c.kind == ADDITIONAL],
        yes=YES in golds,
        no=NO in golds,
        unanswerable=UNANSWERABLE in golds,
    )


def _bce(prob: Tensor, positive: bool) -> Tensor:
    clamped = prob.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    return -torch.log(clamped) if positive else -torch.log(1.0 - clamped)


def loss(pred: Prediction, gold_answers, candidates: list[AnswerCandidate]) -> Tensor:
    """Binary cross entropy summed over every scored candidate and the three
    special scalars.  When no candidate at all is positive, only the
    special-head terms contribute (the caller counts such samples)."""
    labels = make_labels(candidates, gold_answers)
    total = pred.p_yes.new_zeros(())
    if labels.reachable:
        for i, positive in enumerate(labels.span):
            total = total + _bce(pred.p_ocr[i], positive)
        for j, positive in enumerate(labels.additional):
            total = total + _bce(pred.p_add[j], positive)
    total = total + _bce(pred.p_yes, labels.yes)
    total = total + _bce(pred.p_no, labels.no)
    total = total + _bce(pred.p_una, labels.unanswerable)
    return total


def prediction_record(sample_id: str, pred: Prediction) -> dict:
    """Serializable form of one prediction (one JSONL line)."""
    return {
        "sample_id": sample_id,
        "answer": pred.selected.text if pred.selected else "",
        "score": pred.selected_score,
        "pool": pred.selected_pool,
        "p_ocr": [float(p) for p in pred.p_ocr],
        "p_add": [float(p) for p in pred.p_add],
        "p_special": {
            "yes": float(pred.p_yes),
            "no": float(pred.p_no),
            "unanswerable": float(pred.p_una),
        },
    }
