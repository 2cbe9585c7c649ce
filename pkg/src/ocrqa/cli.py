"""Command-line interface.

Subcommands: prepare, synth, train, predict, eval, gradcheck,
retrieve-build.  Errors exit nonzero with a machine-readable JSON object on
stderr.  Input datasets are never mutated.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import corpus, metrics, retrieval
from .config import make_config
from .corpus import SyntheticConfig, generate_synthetic, load_dataset_with_report, write_dataset


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="random seed (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocrqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="validate a dataset and write its canonical form")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train", choices=("train", "dev", "test"))

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-samples", type=int, default=200)
    p.add_argument("--vocab-size", type=int, default=50)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    p.add_argument("--data", required=True, help="training JSONL")
    p.add_argument("--dev", help="dev JSONL for per-epoch ANLS and best-checkpoint choice")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--relational-mode")
    p.add_argument("--dictionary-mode", action="store_true", default=None)
    p.add_argument("--retrieval-corpus", help="QA-pair JSONL enabling additional candidates")
    p.add_argument("--topk", type=int, help="retrieval depth")

    p = sub.add_parser("predict", help="write one prediction per sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--relational-mode")
    p.add_argument("--dictionary-mode", action="store_true", default=None)
    p.add_argument("--retrieval-corpus")
    p.add_argument("--topk", type=int)
    p.add_argument("--force", action="store_true", help="ignore config-hash mismatches")

    p = sub.add_parser("eval", help="score predictions against gold answers")
    p.add_argument("--data", required=True, help="gold JSONL")
    p.add_argument("--pred", required=True, help="predictions JSONL")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--per-sample-csv")
    p.add_argument("--tau", type=float)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    _add_common(p)
    p.add_argument("--out", help="write the report JSON here")

    p = sub.add_parser("retrieve-build", help="build a QA-pair corpus from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    return parser


def _cmd_prepare(args) -> int:
    dataset, report = load_dataset_with_report(args.data, split=args.split, strict=False)
    write_dataset(dataset, args.out)
    payload = {
        "lines": report.lines,
        "loaded": report.loaded,
        "rejected": report.rejected,
        "warnings": report.warnings,
        "messages": report.messages,
    }
    print(json.dumps(payload, indent=2))
    return 0 if report.rejected == 0 else 1


def _cmd_synth(args) -> int:
    dataset = generate_synthetic(
        SyntheticConfig(num_samples=args.num_samples, vocab_size=args.vocab_size, seed=args.seed)
    )
    write_dataset(dataset, args.out)
    print(json.dumps({"samples": len(dataset), "out": args.out}))
    return 0


def _cmd_train(args) -> int:
    from .train import fit

    config = make_config(
        args.config,
        seed=args.seed,
        relational_mode=args.relational_mode,
        dictionary_mode=args.dictionary_mode,
        retrieval_corpus=args.retrieval_corpus,
        retrieval_topk=args.topk,
    )
    train_ds = corpus.load_dataset(args.data, split="train")
    dev_ds = corpus.load_dataset(args.dev, split="dev") if args.dev else None
    result = fit(config, train_ds, dev_ds, out_dir=args.out)
    print(
        json.dumps(
            {
                "checkpoint": str(result.checkpoint_path),
                "log": str(result.log_path),
                "best_epoch": result.best_epoch,
                "best_anls": result.best_dev_anls,
                "unreachable_answers": result.unreachable_answers,
            }
        )
    )
    return 0


def _cmd_predict(args) -> int:
    from .train import load_checkpoint, predict_dataset, set_determinism, write_predictions

    model, config, _ = load_checkpoint(args.checkpoint, force=args.force)
    if args.relational_mode:
        config = replace(config, relational_mode=args.relational_mode).validate()
    if args.dictionary_mode:
        config = replace(config, dictionary_mode=True)
    if args.topk is not None:
        config = replace(config, retrieval_topk=args.topk).validate()
    set_determinism(config.seed)
    dataset = corpus.load_dataset(args.data, split=args.split)
    pairs = (
        retrieval.load_qa_pairs(args.retrieval_corpus)
        if args.retrieval_corpus
        else (retrieval.load_qa_pairs(config.retrieval_corpus) if config.retrieval_corpus else None)
    )
    records = predict_dataset(model, dataset, config, pairs)
    write_predictions(records, args.out)
    print(json.dumps({"predictions": len(records), "out": args.out}))
    return 0


def _cmd_eval(args) -> int:
    gold = corpus.load_dataset(args.data, split="dev")
    cfg = metrics.MetricsConfig(tau=args.tau) if args.tau else metrics.MetricsConfig()
    report = metrics.evaluate(args.pred, gold, cfg)
    metrics.write_report(report, args.out, per_sample_csv=args.per_sample_csv)
    print(json.dumps({"anls": report.anls, "vqa_accuracy": report.vqa_accuracy}))
    return 0


def _cmd_gradcheck(args) -> int:
    from .train import gradcheck

    if args.config is None:
        # toy dims keep the element-wise finite-difference sweep fast
        config = make_config(
            None,
            seed=args.seed,
            word_dim=8,
            ctx_dim=8,
            hidden_dim=8,
            attn_dim=8,
            answer_dim=8,
            oov_buckets=8,
            context_layers=1,
        )
    else:
        config = make_config(args.config, seed=args.seed)
    report = gradcheck(config, seed=config.seed)
    payload = report.to_dict()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(
        json.dumps(
            {
                "passed": report.passed,
                "max_relative_error": report.max_relative_error,
                "worst_tensor": report.worst_tensor,
            }
        )
    )
    return 0 if report.passed else 1


def _cmd_retrieve_build(args) -> int:
    dataset = corpus.load_dataset(args.data, split="train")
    pairs = retrieval.dataset_to_pairs(dataset)
    retrieval.save_qa_pairs(pairs, args.out)
    print(json.dumps({"pairs": len(pairs), "out": args.out}))
    return 0


_COMMANDS = {
    "prepare": _cmd_prepare,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "retrieve-build": _cmd_retrieve_build,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # surface a machine-readable error
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
