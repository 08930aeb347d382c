"""Command-line pipeline: gen-data, pretrain, distill, eval-nshot, isotropy, embed.

Every subcommand resolves its settings as flag > config file > default,
writes a run manifest into the output directory before doing any work, and
is byte-for-byte reproducible given the same inputs, config, and seed.
Exit codes: 0 success, 2 validation error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys

from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import inspect_checkpoint, load_checkpoint, save_checkpoint
from .data import (
    SyntheticConfig,
    generate_synthetic_corpus,
    load_labeled_jsonl,
    load_parallel_jsonl,
    save_labeled_jsonl,
    save_parallel_jsonl,
)
from .distill import DistillConfig, train_distill
from .encoder import EncoderConfig, embed_texts, init_model
from .errors import (
    CheckpointError,
    NumericalInstabilityError,
    ValidationError,
)
from .fewshot import FitConfig, evaluate_nshot
from .isotropy import compare_isotropy, isotropy_report
from .linalg import pca_project
from .pretrain import PretrainConfig, train_supervised
from .tokenizer import build_vocab

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3


def _read_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ValidationError(f"config file {path} must contain a JSON object")
    return config


def _resolve(defaults: dict, file_values: dict, flag_values: dict) -> dict:
    unknown = set(file_values) - set(defaults)
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    resolved = dict(defaults)
    resolved.update(file_values)
    resolved.update({k: v for k, v in flag_values.items() if v is not None})
    return resolved


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, subcommand: str, config: dict, inputs: list, seed, outputs: list):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "tool_version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "config": config,
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": outputs,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_projection_csv(path, projection: np.ndarray, labels, langs):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "label", "language"])
        for row, label, lang in zip(projection, labels, langs):
            writer.writerow([repr(float(row[0])), repr(float(row[1])), label or "", lang or ""])


# -- subcommands --------------------------------------------------------------

GEN_DATA_DEFAULTS = {
    "n_intents": 4,
    "templates_per_intent": 5,
    "vocab_size_per_language": 48,
    "samples_per_intent": 50,
    "permute_word_order": True,
    "seed": 0,
}


def cmd_gen_data(args) -> int:
    file_values = _read_config_file(args.config)
    resolved = _resolve(GEN_DATA_DEFAULTS, file_values, {"seed": args.seed})
    out_dir = Path(args.out)
    outputs = ["labeled_a.jsonl", "labeled_b.jsonl", "parallel.jsonl"]
    inputs = [args.config] if args.config else []
    _write_manifest(out_dir, "gen-data", resolved, inputs, resolved["seed"], outputs)
    corpus = generate_synthetic_corpus(SyntheticConfig(**resolved))
    save_labeled_jsonl(corpus.labeled_a, out_dir / "labeled_a.jsonl")
    save_labeled_jsonl(corpus.labeled_b, out_dir / "labeled_b.jsonl")
    save_parallel_jsonl(corpus.parallel, out_dir / "parallel.jsonl")
    print(f"wrote {len(corpus.labeled_a)} + {len(corpus.labeled_b)} utterances and "
          f"{len(corpus.parallel)} pairs to {out_dir}")
    return EXIT_OK


PRETRAIN_DEFAULTS = {
    "d_model": 64,
    "n_layers": 2,
    "n_heads": 2,
    "d_ff": 128,
    "max_len": 32,
    "max_vocab": 2048,
    "lambda": 0.1,
    "learning_rate": 1e-3,
    "batch_size": 16,
    "epochs": 10,
    "seed": 0,
}


def _vocab_corpus_texts(path) -> list[str]:
    # Accept either labeled ({"text": ...}) or parallel ({"src","tgt"}) JSONL.
    texts = []
    with open(path, "r", encoding="utf-8") as fh:
        sample = fh.readline().strip()
    if not sample:
        raise ValidationError(f"{path} is empty")
    obj = json.loads(sample) if sample.startswith("{") else {}
    if "text" in obj:
        texts.extend(load_labeled_jsonl(path).texts())
    else:
        corpus = load_parallel_jsonl(path)
        texts.extend(p.src for p in corpus.pairs)
        texts.extend(p.tgt for p in corpus.pairs)
    return texts


def cmd_pretrain(args) -> int:
    file_values = _read_config_file(args.config)
    flags = {
        "lambda": args.lambda_,
        "epochs": args.epochs,
        "seed": args.seed,
        "learning_rate": args.learning_rate,
        "batch_size": args.batch_size,
    }
    resolved = _resolve(PRETRAIN_DEFAULTS, file_values, flags)
    out_dir = Path(args.out)
    inputs = [args.data] + ([args.config] if args.config else []) + list(args.vocab_data or [])
    outputs = ["model.ckpt", "metrics.jsonl"]
    _write_manifest(out_dir, "pretrain", resolved, inputs, resolved["seed"], outputs)

    dataset = load_labeled_jsonl(args.data)
    vocab_texts = dataset.texts()
    for extra in args.vocab_data or []:
        vocab_texts = vocab_texts + _vocab_corpus_texts(extra)
    vocab = build_vocab(vocab_texts, max_vocab=resolved["max_vocab"])

    encoder_config = EncoderConfig(
        vocab_size=len(vocab),
        d_model=resolved["d_model"],
        n_layers=resolved["n_layers"],
        n_heads=resolved["n_heads"],
        d_ff=resolved["d_ff"],
        max_len=resolved["max_len"],
        seed=resolved["seed"],
    )
    pretrain_config = PretrainConfig(
        lambda_=resolved["lambda"],
        learning_rate=resolved["learning_rate"],
        batch_size=resolved["batch_size"],
        epochs=resolved["epochs"],
        seed=resolved["seed"],
    )
    model, _, report = train_supervised(init_model(encoder_config), vocab, dataset, pretrain_config)
    save_checkpoint(model, vocab, out_dir / "model.ckpt")
    report.save_jsonl(out_dir / "metrics.jsonl")
    if len(report):
        last = report.last
        print(f"epoch {last['epoch']}: joint={last['joint']:.4f} "
              f"accuracy={last['accuracy']:.3f} isotropy={last['isotropy']:.3f}")
    print(f"wrote {out_dir / 'model.ckpt'}")
    return EXIT_OK


DISTILL_DEFAULTS = {
    "student_d_model": None,
    "student_n_layers": 1,
    "student_n_heads": None,
    "student_d_ff": None,
    "learning_rate": 1e-3,
    "batch_size": 16,
    "epochs": 20,
    "seed": 0,
}


def cmd_distill(args) -> int:
    file_values = _read_config_file(args.config)
    flags = {"epochs": args.epochs, "seed": args.seed}
    resolved = _resolve(DISTILL_DEFAULTS, file_values, flags)
    out_dir = Path(args.out)
    inputs = [args.teacher, args.parallel] + ([args.config] if args.config else [])
    outputs = ["model.ckpt", "metrics.jsonl"]
    _write_manifest(out_dir, "distill", resolved, inputs, resolved["seed"], outputs)

    teacher, vocab = load_checkpoint(args.teacher)
    corpus = load_parallel_jsonl(args.parallel)
    student_config = EncoderConfig(
        vocab_size=len(vocab),
        d_model=resolved["student_d_model"] or teacher.config.d_model,
        n_layers=resolved["student_n_layers"],
        n_heads=resolved["student_n_heads"] or teacher.config.n_heads,
        d_ff=resolved["student_d_ff"] or teacher.config.d_ff,
        max_len=teacher.config.max_len,
        seed=resolved["seed"],
    )
    config = DistillConfig(
        student=student_config,
        learning_rate=resolved["learning_rate"],
        batch_size=resolved["batch_size"],
        epochs=resolved["epochs"],
        seed=resolved["seed"],
    )
    student, report = train_distill(teacher, vocab, corpus, config)
    save_checkpoint(student, vocab, out_dir / "model.ckpt")
    report.save_jsonl(out_dir / "metrics.jsonl")
    if len(report):
        last = report.last
        cosine = last.get("heldout_cosine")
        extra = f" heldout_cosine={cosine:.4f}" if cosine is not None else ""
        print(f"epoch {last['epoch']}: loss={last['loss']:.6f}{extra}")
    print(f"wrote {out_dir / 'model.ckpt'}")
    return EXIT_OK


EVAL_DEFAULTS = {
    "n_shot": 5,
    "episodes": 50,
    "seed": 0,
    "classifier": "logistic",
    "fit_epochs": 200,
    "fit_learning_rate": 0.5,
    "fit_l2": 1e-3,
}


def cmd_eval_nshot(args) -> int:
    file_values = _read_config_file(args.config)
    flags = {
        "n_shot": args.n_shot,
        "episodes": args.episodes,
        "seed": args.seed,
        "classifier": args.classifier,
    }
    resolved = _resolve(EVAL_DEFAULTS, file_values, flags)
    out_dir = Path(args.out)
    inputs = [args.ckpt, args.data] + ([args.config] if args.config else [])
    _write_manifest(out_dir, "eval-nshot", resolved, inputs, resolved["seed"], ["result.json"])

    model, vocab = load_checkpoint(args.ckpt)
    dataset = load_labeled_jsonl(args.data)
    fit = FitConfig(
        kind=resolved["classifier"],
        epochs=resolved["fit_epochs"],
        learning_rate=resolved["fit_learning_rate"],
        l2=resolved["fit_l2"],
    )
    result = evaluate_nshot(
        model,
        vocab,
        dataset,
        n_shot=resolved["n_shot"],
        episodes=resolved["episodes"],
        seed=resolved["seed"],
        fit_config=fit,
    )
    result.to_json(out_dir / "result.json")
    print(f"{resolved['n_shot']}-shot over {resolved['episodes']} episodes: "
          f"mean={result.mean:.4f} std={result.std:.4f}")
    return EXIT_OK


def _load_embedding_rows(ckpt_path, dataset):
    model, vocab = load_checkpoint(ckpt_path)
    return embed_texts(model, vocab, dataset.texts())


def cmd_isotropy(args) -> int:
    out_dir = Path(args.out)
    inputs = [args.ckpt, args.data] + ([args.before] if args.before else [])
    outputs = ["report.json", "projection.csv"] + (
        ["projection_before.csv"] if args.before else []
    )
    _write_manifest(out_dir, "isotropy", {}, inputs, None, outputs)

    dataset = load_labeled_jsonl(args.data)
    labels = [u.label for u in dataset.utterances]
    langs = [u.lang for u in dataset.utterances]
    after_rows = _load_embedding_rows(args.ckpt, dataset)
    if args.before:
        before_rows = _load_embedding_rows(args.before, dataset)
        comparison = compare_isotropy(before_rows, after_rows)
        payload = comparison.to_dict()
        _write_projection_csv(out_dir / "projection.csv", comparison.projection_after, labels, langs)
        _write_projection_csv(
            out_dir / "projection_before.csv", comparison.projection_before, labels, langs
        )
        print(f"isotropy before={comparison.before.score:.4f} "
              f"after={comparison.after.score:.4f} delta={comparison.delta:+.4f}")
    else:
        report = isotropy_report(after_rows)
        payload = report.to_dict()
        _write_projection_csv(out_dir / "projection.csv", pca_project(after_rows, 2), labels, langs)
        print(f"isotropy score={report.score:.4f} over n={report.n}, d={report.d}")
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def cmd_embed(args) -> int:
    out_dir = Path(args.out)
    _write_manifest(out_dir, "embed", {}, [args.ckpt, args.data], None,
                    ["embeddings.csv", "projection.csv"])
    dataset = load_labeled_jsonl(args.data)
    rows = _load_embedding_rows(args.ckpt, dataset)
    labels = [u.label for u in dataset.utterances]
    langs = [u.lang for u in dataset.utterances]
    with open(out_dir / "embeddings.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "language"] + [f"e{i}" for i in range(rows.shape[1])])
        for row, label, lang in zip(rows, labels, langs):
            writer.writerow([label or "", lang or ""] + [repr(float(v)) for v in row])
    _write_projection_csv(out_dir / "projection.csv", pca_project(rows, 2), labels, langs)
    print(f"wrote {rows.shape[0]} embedding rows to {out_dir}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    header = inspect_checkpoint(args.ckpt)
    print(json.dumps({"version": header["version"], "config": header["config"]},
                     indent=2, sort_keys=True))
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyintent",
        description="Train, distill, and evaluate desk-scale multilingual intent embedders.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic bilingual corpus")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="supervised pre-training of a teacher encoder")
    p.add_argument("--data", required=True, help="labeled JSONL file")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--vocab-data", action="append",
                   help="extra JSONL file(s) whose text joins the vocabulary corpus")
    p.add_argument("--lambda", dest="lambda_", type=float,
                   help="weight of the correlation regularizer")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("distill", help="distill a teacher checkpoint into a student")
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.add_argument("--parallel", required=True, help="parallel JSONL file")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval-nshot", help="episodic N-shot evaluation of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="labeled JSONL file")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--n-shot", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--classifier", choices=["logistic", "hinge"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_nshot)

    p = sub.add_parser("isotropy", help="isotropy report (optionally vs a baseline checkpoint)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--before", help="baseline checkpoint for a before/after comparison")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_isotropy)

    p = sub.add_parser("embed", help="export embeddings and a 2-D PCA projection as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("inspect", help="print a checkpoint header without loading weights")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, NumericalInstabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
