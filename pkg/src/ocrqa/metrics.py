"""Evaluation metrics: Levenshtein distance, ANLS, and VQA accuracy.

ANLS scores a prediction against each gold answer with 1 - NL when the
normalized Levenshtein distance NL is below the threshold tau (default 0.5)
and 0 otherwise, takes the max over gold answers, and averages over
questions.  NL normalizes by the longer string length; two empty strings
have distance 0.  VQA accuracy is min(#matching human answers / 3, 1),
averaged over questions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import Dataset
from .norm import normalize


@dataclass(frozen=True)
class MetricsConfig:
    tau: float = 0.5
    lowercase: bool = True
    strip_punct: bool = False

    def __post_init__(self):
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must be in (0, 1]")


@dataclass
class EvalReport:
    anls: float
    vqa_accuracy: float
    per_sample: list[dict]
    counts: dict
    subsets: dict


def levenshtein(a: str, b: str) -> int:
    """Minimal number of unit-cost insertions/deletions/substitutions."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb))
            )
        previous = current
    return previous[-1]


def _nl(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return levenshtein(a, b) / longest


def anls_score(prediction: str, gold_answers: Sequence[str], cfg: MetricsConfig = MetricsConfig()) -> float:
    """Per-question ANLS: max over gold answers of the thresholded similarity."""
    if not gold_answers:
        raise ValueError("gold answer list must be non-empty")
    pred = normalize(prediction, cfg.lowercase, cfg.strip_punct)
    best = 0.0
    for gold in gold_answers:
        nl = _nl(pred, normalize(gold, cfg.lowercase, cfg.strip_punct))
        score = 1.0 - nl if nl < cfg.tau else 0.0
        best = max(best, score)
    return best


def anls(
    predictions: Mapping[str, str],
    gold: Mapping[str, Sequence[str]],
    cfg: MetricsConfig = MetricsConfig(),
) -> float:
    """Mean per-question ANLS over every gold id; missing predictions count
    as empty strings."""
    if not gold:
        raise ValueError("gold set must be non-empty")
    total = 0.0
    for sample_id, answers in gold.items():
        total += anls_score(predictions.get(sample_id, ""), answers, cfg)
    return total / len(gold)


def vqa_accuracy_score(
    prediction: str, human_answers: Sequence[str], cfg: MetricsConfig = MetricsConfig()
) -> float:
    if not human_answers:
        raise ValueError("human answer list must be non-empty")
    pred = normalize(prediction, cfg.lowercase, cfg.strip_punct)
    matches = sum(
        1 for ans in human_answers if normalize(ans, cfg.lowercase, cfg.strip_punct) == pred
    )
    return min(matches / 3.0, 1.0)


def vqa_accuracy(
    predictions: Mapping[str, str],
    gold_multi: Mapping[str, Sequence[str]],
    cfg: MetricsConfig = MetricsConfig(),
) -> float:
    if not gold_multi:
        raise ValueError("gold set must be non-empty")
    total = 0.0
    for sample_id, answers in gold_multi.items():
        total += vqa_accuracy_score(predictions.get(sample_id, ""), answers, cfg)
    return total / len(gold_multi)


def read_predictions(path: str | Path) -> dict[str, str]:
    """Read a predictions JSONL file into {sample_id: answer}."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if "sample_id" not in record or "answer" not in record:
                raise ValueError(f"{path}: line {lineno}: record needs sample_id and answer")
            out[str(record["sample_id"])] = str(record["answer"])
    return out


def _subset_key(sample_id: str) -> str | None:
    if "/" in sample_id:
        return sample_id.split("/", 1)[0]
    return None


def evaluate(
    pred_file: str | Path, gold_dataset: Dataset, cfg: MetricsConfig = MetricsConfig()
) -> EvalReport:
    """Both metrics plus per-sample scores and per-subset aggregation.

    Subsets group samples by the sample_id prefix before the first "/"
    (samples without one are only counted in the overall numbers).
    """
    predictions = read_predictions(pred_file)
    if not gold_dataset.samples:
        raise ValueError("gold dataset is empty")

    per_sample = []
    missing = 0
    subset_acc: dict[str, list[tuple[float, float]]] = {}
    anls_total = 0.0
    acc_total = 0.0
    for sample in gold_dataset.samples:
        pred = predictions.get(sample.sample_id)
        if pred is None:
            missing += 1
            pred = ""
        a = anls_score(pred, sample.gold_answers, cfg)
        v = vqa_accuracy_score(pred, sample.gold_answers, cfg)
        anls_total += a
        acc_total += v
        per_sample.append(
            {"sample_id": sample.sample_id, "answer": pred, "anls_score": a, "acc_score": v}
        )
        key = _subset_key(sample.sample_id)
        if key is not None:
            subset_acc.setdefault(key, []).append((a, v))

    n = len(gold_dataset.samples)
    subsets = {
        key: {
            "count": len(scores),
            "anls": sum(s[0] for s in scores) / len(scores),
            "vqa_accuracy": sum(s[1] for s in scores) / len(scores),
        }
        for key, scores in sorted(subset_acc.items())
    }
    counts = {
        "samples": n,
        "predictions": len(predictions),
        "missing_predictions": missing,
        "extra_predictions": len(set(predictions) - {s.sample_id for s in gold_dataset.samples}),
    }
    return EvalReport(
        anls=anls_total / n,
        vqa_accuracy=acc_total / n,
        per_sample=per_sample,
        counts=counts,
        subsets=subsets,
    )


def write_report(report: EvalReport, path: str | Path, per_sample_csv: str | Path | None = None) -> None:
    payload = {
        "anls": report.anls,
        "vqa_accuracy": report.vqa_accuracy,
        "counts": report.counts,
        "subsets": report.subsets,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if per_sample_csv is not None:
        with open(per_sample_csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["sample_id", "answer", "anls_score", "acc_score"])
            writer.writeheader()
            writer.writerows(report.per_sample)
