"""Deterministic training loop, checkpointing, prediction, and the
finite-difference gradient checker."""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from . import metrics, retrieval
from .answer import loss as prediction_loss
from .answer import make_labels, prediction_record
from .config import RunConfig, config_hash, config_to_dict
from .corpus import Dataset, Sample
from .embeddings import collect_vocabulary
from .model import OcrQaModel, PreparedSample, prepare_sample

CHECKPOINT_FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


def set_determinism(seed: int) -> None:
    """Single-threaded, seeded torch: identical runs on identical inputs."""
    torch.manual_seed(seed)
    torch.set_num_threads(1)


def _retriever(config: RunConfig, pairs):
    if not pairs:
        return lambda question: ()
    index = retrieval.build_index(pairs)
    topk = config.retrieval_topk
    return lambda question: tuple(retrieval.retrieve(index, question.lower(), topk))


def prepare_dataset(
    dataset: Dataset, config: RunConfig, pairs=None
) -> list[PreparedSample]:
    retrieve_for = _retriever(config, pairs)
    return [
        prepare_sample(
            sample,
            additional_texts=retrieve_for(sample.question),
            dictionary_mode=config.dictionary_mode,
        )
        for sample in dataset.samples
    ]


def _batches(n: int, batch_size: int, seed_key: str) -> list[list[int]]:
    order = list(range(n))
    random.Random(seed_key).shuffle(order)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


@dataclass
class TrainResult:
    checkpoint_path: Path
    log: list[dict]
    best_epoch: int
    best_dev_anls: float
    unreachable_answers: int
    log_path: Path


def _predictions_map(model: OcrQaModel, prepared: Sequence[PreparedSample]) -> dict[str, str]:
    out: dict[str, str] = {}
    with torch.no_grad():
        for prep in prepared:
            pred = model(prep)
            out[prep.sample_id] = pred.selected.text if pred.selected else ""
    return out


def _anls_of(prepared: Sequence[PreparedSample], predictions: dict[str, str], cfg) -> float:
    gold = {p.sample_id: list(p.gold_answers) for p in prepared}
    return metrics.anls(predictions, gold, cfg)


def fit(
    config: RunConfig,
    train_ds: Dataset,
    dev_ds: Dataset | None = None,
    out_dir: str | Path = "runs/train",
) -> TrainResult:
    """Train with Adamax; logs per-epoch train loss and ANLS (train and dev)
    and retains the best-dev checkpoint (best train ANLS when dev is absent).

    Fully determined by (seed, config, data): parameter init, batch order,
    and every reduction are seeded and single-threaded."""
    if not train_ds.samples:
        raise ValueError("training split is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    set_determinism(config.seed)

    pairs = (
        retrieval.load_qa_pairs(config.retrieval_corpus) if config.retrieval_corpus else None
    )
    vocab = collect_vocabulary(train_ds.samples, pairs)
    model = OcrQaModel(config, vocab)
    model.train()

    train_prep = prepare_dataset(train_ds, config, pairs)
    dev_prep = prepare_dataset(dev_ds, config, pairs) if dev_ds is not None else None
    labels = [make_labels(p.candidates, p.gold_answers) for p in train_prep]
    unreachable = sum(1 for lab in labels if not lab.reachable)

    optimizer = torch.optim.Adamax(
        model.parameters(),
        lr=config.lr,
        betas=(0.9, 0.999),
        eps=1e-8,
        weight_decay=config.weight_decay,
    )
    metric_cfg = metrics.MetricsConfig(
        tau=config.tau, lowercase=config.lowercase, strip_punct=config.strip_punct
    )

    log: list[dict] = []
    best_key = float("-inf")
    best_epoch = 0
    ckpt_path = out_dir / "checkpoint.pt"
    for epoch in range(1, config.epochs + 1):
        total_loss = 0.0
        for batch in _batches(len(train_prep), config.batch_size, f"{config.seed}:{epoch}"):
            optimizer.zero_grad()
            batch_loss = torch.zeros((), dtype=torch.double)
            for idx in batch:
                pred = model(train_prep[idx])
                batch_loss = batch_loss + prediction_loss(
                    pred, train_prep[idx].gold_answers, train_prep[idx].candidates
                )
            batch_loss = batch_loss / len(batch)
            if not torch.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} (batch of {len(batch)}): {batch_loss.item()}"
                )
            batch_loss.backward()
            optimizer.step()
            total_loss += batch_loss.item() * len(batch)

        model.eval()
        train_anls = _anls_of(train_prep, _predictions_map(model, train_prep), metric_cfg)
        dev_anls = (
            _anls_of(dev_prep, _predictions_map(model, dev_prep), metric_cfg)
            if dev_prep is not None
            else None
        )
        model.train()

        record = {
            "epoch": epoch,
            "train_loss": total_loss / len(train_prep),
            "train_anls": train_anls,
            "dev_anls": dev_anls,
        }
        log.append(record)

        key = dev_anls if dev_anls is not None else train_anls
        if key > best_key:
            best_key = key
            best_epoch = epoch
            save_checkpoint(ckpt_path, model, config, optimizer=optimizer, epoch=epoch)

    log_path = out_dir / "metrics.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record) + "\n")
    return TrainResult(
        checkpoint_path=ckpt_path,
        log=log,
        best_epoch=best_epoch,
        best_dev_anls=best_key,
        unreachable_answers=unreachable,
        log_path=log_path,
    )


# ---------------------------------------------------------------------------
# prediction


def predict_dataset(
    model: OcrQaModel, dataset: Dataset, config: RunConfig, pairs=None
) -> list[dict]:
    """One serializable prediction record per sample, deterministic."""
    model.eval()
    prepared = prepare_dataset(dataset, config, pairs)
    records = []
    with torch.no_grad():
        for prep in prepared:
            pred = model(prep)
            records.append(prediction_record(prep.sample_id, pred))
    return records


def write_predictions(records: Sequence[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(
    path: str | Path,
    model: OcrQaModel,
    config: RunConfig,
    optimizer=None,
    epoch: int = 0,
) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "vocab": model.vocab,
        "state_dict": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "rng": {"torch": torch.get_rng_state(), "python": random.getstate()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(
    path: str | Path, expected_config: RunConfig | None = None, force: bool = False
) -> tuple[OcrQaModel, RunConfig, dict]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {payload.get('format_version')!r}"
        )
    config = RunConfig(**payload["config"]).validate()
    if expected_config is not None and not force:
        if config_hash(expected_config) != payload["config_hash"]:
            raise CheckpointError(
                "checkpoint was written under a different architecture config "
                "(pass force to load anyway)"
            )
    model = OcrQaModel(config, payload["vocab"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, config, payload


# ---------------------------------------------------------------------------
# finite-difference gradient checking


@dataclass
class GradcheckReport:
    passed: bool
    max_relative_error: float
    worst_tensor: str
    per_tensor: dict[str, float] = field(default_factory=dict)
    threshold: float = 1e-4
    checked_elements: int = 0
    total_elements: int = 0

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_relative_error": self.max_relative_error,
            "worst_tensor": self.worst_tensor,
            "threshold": self.threshold,
            "checked_elements": self.checked_elements,
            "total_elements": self.total_elements,
            "per_tensor": self.per_tensor,
        }


def _gradcheck_fixture(config: RunConfig, seed: int):
    """A tiny corpus that routes gradient through every parameter tensor:
    a span-answer sample with an object and an additional text (full mode),
    an empty-OCR sample (null evidence path), and a weighted-sum-mode
    sample.  The additional text's words stay out of the vocabulary so the
    OOV hash buckets receive gradient too."""
    from .corpus import OcrToken, Quad, SceneObject

    def token(text: str, cx: float, cy: float) -> OcrToken:
        return OcrToken(text=text, quad=Quad(cx - 8, cy - 5, cx + 8, cy - 5, cx + 8, cy + 5, cx - 8, cy + 5))

    def obj(name: str, attrs: tuple[str, ...], cx: float, cy: float) -> SceneObject:
        return SceneObject(name=name, attributes=attrs, quad=Quad(cx - 10, cy - 10, cx + 10, cy - 10, cx + 10, cy + 10, cx - 10, cy + 10))

    span_sample = Sample(
        sample_id="g/0000",
        image_width=100.0,
        image_height=100.0,
        question="what does the sign say",
        gold_answers=("ab cd",),
        ocr_tokens=(token("ab", 20, 20), token("cd", 50, 20), token("ef", 50, 80)),
        objects=(obj("sign", ("red",), 30, 20),),
    )
    empty_sample = Sample(
        sample_id="g/0001",
        image_width=100.0,
        image_height=100.0,
        question="what is written here",
        gold_answers=("unanswerable",),
        ocr_tokens=(),
        objects=(),
    )
    pooled_sample = Sample(
        sample_id="g/0002",
        image_width=100.0,
        image_height=100.0,
        question="what word is on the box",
        gold_answers=("ef",),
        ocr_tokens=(token("ef", 30, 30), token("gh", 70, 70)),
        objects=(obj("box", (), 30, 30), obj("car", (), 80, 80)),
    )
    vocab = collect_vocabulary([span_sample, empty_sample, pooled_sample])
    cases = [
        (prepare_sample(span_sample, additional_texts=("zz qq",)), "full"),
        (prepare_sample(empty_sample, additional_texts=("zz",)), "full"),
        (prepare_sample(pooled_sample), "weighted_sum"),
    ]
    return cases, vocab


def gradcheck(
    config: RunConfig,
    seed: int = 0,
    eps: float = 1e-5,
    threshold: float = 1e-4,
    max_elements_per_tensor: int | None = 32,
    _corrupt_tensor: str | None = None,
) -> GradcheckReport:
    """Central finite differences (64-bit, step eps) against autograd for
    every parameter tensor through the full loss.

    Relative error per element is |fd - grad| / max(|fd|, |grad|, 1e-3); the
    floor keeps the comparison meaningful where the true gradient vanishes
    and finite differences see only roundoff.  Every tensor is checked; for
    tensors larger than `max_elements_per_tensor` a seeded random subset of
    elements is swept (pass None for the exhaustive sweep).  An element that
    exceeds the threshold is re-measured at steps eps/10 and eps/100: a ReLU
    kink inside the original interval disappears at a smaller step, while a
    real analytic-gradient bug persists at every step; the smallest observed
    error counts.  Dims must stay toy (<= 16).
    """
    for name in ("word_dim", "ctx_dim", "hidden_dim", "attn_dim", "answer_dim"):
        if getattr(config, name) > 16:
            raise ValueError(f"gradcheck requires toy dims (<= 16); {name} is too large")
    if config.dropout != 0.0:
        raise ValueError("gradcheck requires dropout = 0")
    set_determinism(seed)
    cases, vocab = _gradcheck_fixture(config, seed)
    model = OcrQaModel(config, vocab)
    model.train()

    def objective() -> torch.Tensor:
        total = torch.zeros((), dtype=torch.double)
        for prep, mode in cases:
            pred = model(prep, relational_mode=mode)
            total = total + prediction_loss(pred, prep.gold_answers, prep.candidates)
        return total

    model.zero_grad()
    objective().backward()
    analytic = {
        name: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    if _corrupt_tensor is not None:
        if _corrupt_tensor not in analytic:
            raise ValueError(f"no parameter tensor named {_corrupt_tensor!r}")
        analytic[_corrupt_tensor] = analytic[_corrupt_tensor] + 1e-2

    per_tensor: dict[str, float] = {}
    checked = 0
    total_elements = 0
    with torch.no_grad():
        for name, param in model.named_parameters():
            grads = analytic[name].reshape(-1)
            flat = param.data.reshape(-1)
            total_elements += flat.numel()
            indices = range(flat.numel())
            if max_elements_per_tensor is not None and flat.numel() > max_elements_per_tensor:
                indices = random.Random(f"{seed}:{name}").sample(
                    range(flat.numel()), max_elements_per_tensor
                )
            def central(i: int, step: float) -> float:
                original = flat[i].item()
                flat[i] = original + step
                up = objective().item()
                flat[i] = original - step
                down = objective().item()
                flat[i] = original
                return (up - down) / (2.0 * step)

            worst = 0.0
            for i in indices:
                g = grads[i].item()
                rel = float("inf")
                for step in (eps, eps / 10.0, eps / 100.0):
                    fd = central(i, step)
                    rel = min(rel, abs(fd - g) / max(abs(fd), abs(g), 1e-3))
                    if rel < threshold:
                        break
                worst = max(worst, rel)
                checked += 1
            per_tensor[name] = worst

    worst_tensor = max(per_tensor, key=per_tensor.get)
    worst = per_tensor[worst_tensor]
    return GradcheckReport(
        passed=worst < threshold,
        max_relative_error=worst,
        worst_tensor=worst_tensor,
        per_tensor=per_tensor,
        threshold=threshold,
        checked_elements=checked,
        total_elements=total_elements,
    )
