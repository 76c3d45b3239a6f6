"""Command-line interface: prepare, train, evaluate, analyze, synth.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
All file formats are the line-delimited JSON contracts of the owning
modules (see README).
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import re
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

from . import analysis, corpus, pipeline
from .config import RunConfig, load_run_config
from .errors import CheckpointError, DataError, NumericalError
from .metrics import evaluate as evaluate_metrics
from .model import ModelConfig, expected_shapes
from .parsing import PredictionRecord, read_predictions, write_predictions
from .textproc import Vocabulary, build_vocab, chunk, segment_sentences
from .training import TrainSchedule, load_checkpoint, save_checkpoint, train

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "best.ckpt"
TRAIN_LOG_NAME = "train_log.jsonl"
STATE_NAME = "state.json"


@dataclass
class PipelineState:
    """Lifecycle record kept next to a run's checkpoints."""

    stage: str  # prepared | intermediate_trained | target_trained | evaluated
    checkpoint: str | None = None
    init_from: str | None = None
    vocab_hash: str | None = None
    n_train_examples: int | None = None
    best_step: int | None = None
    best_val_tf1: float | None = None
    seed: int | None = None

    def save(self, directory: Path) -> None:
        (directory / STATE_NAME).write_text(
            json.dumps(asdict(self), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, directory: Path) -> "PipelineState | None":
        path = directory / STATE_NAME
        if not path.exists():
            return None
        return cls(**json.loads(path.read_text(encoding="utf-8")))


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_budget(text: str):
    if re.fullmatch(r"\d+", text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected a count or a fraction, got {text!r}"
        ) from None


def _parse_sizes(text: str):
    parts = text.split(",")
    if len(parts) != 3 or not all(re.fullmatch(r"\d+", p) for p in parts):
        raise argparse.ArgumentTypeError(
            f"expected TRAIN,VAL,TEST counts, got {text!r}"
        )
    sizes = tuple(int(p) for p in parts)
    if any(s <= 0 for s in sizes):
        raise argparse.ArgumentTypeError("all split sizes must be positive")
    return sizes


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "fewshot", None) is not None:
        cfg.fewshot = args.fewshot
    return cfg.validate()


def _model_config(cfg: RunConfig, vocab_len: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_len,
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        n_enc_layers=cfg.n_enc_layers,
        n_dec_layers=cfg.n_dec_layers,
        d_ffn=cfg.d_ffn,
        l_ctx=cfg.l_ctx,
        max_target_len=cfg.max_target_len,
        dropout_rate=cfg.dropout_rate,
        seed=cfg.seed,
    )


# ------------------------------------------------------------------
# prepare
# ------------------------------------------------------------------

def _read_jsonl(path: Path):
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line:
                yield lineno, line


def _span_qa_record(obj: dict) -> corpus.SpanQARecord:
    span = obj["answer_char_span"]
    return corpus.SpanQARecord(
        question=obj["question"],
        passage=obj["passage"],
        answer_text=obj["answer_text"],
        answer_char_span=(int(span[0]), int(span[1])),
    )


def _multidoc_record(obj: dict) -> corpus.MultiDocQARecord:
    docs = [
        corpus.DocEvidence(
            title=doc.get("title", ""),
            sentences=list(doc["sentences"]),
            supporting_indices=set(int(i) for i in doc["supporting_indices"]),
        )
        for doc in obj["docs"]
    ]
    return corpus.MultiDocQARecord(
        question=obj["question"], answer_text=obj["answer_text"], docs=docs
    )


def cmd_prepare(args) -> int:
    examples: list[corpus.Example] = []
    total = 0
    failed = 0

    def ingest(path_str: str, build):
        nonlocal total, failed
        for lineno, line in _read_jsonl(Path(path_str)):
            total += 1
            try:
                obj = json.loads(line)
                built = build(obj)
                examples.extend(built if isinstance(built, list) else [built])
            except (DataError, KeyError, TypeError, ValueError,
                    json.JSONDecodeError) as exc:
                failed += 1
                logger.warning("%s:%d: skipped record: %s", path_str, lineno, exc)

    for path in args.span_qa or []:
        ingest(path, lambda obj: corpus.restructure_span_qa(
            _span_qa_record(obj), segment_sentences))
    for path in args.multidoc_qa or []:
        ingest(path, lambda obj: corpus.restructure_multidoc_qa(
            _multidoc_record(obj)))

    if total == 0:
        raise DataError("no input records (pass --span-qa and/or --multidoc-qa)")
    if failed > 0.1 * total:
        raise DataError(f"{failed}/{total} records failed to restructure")

    seen: dict[str, int] = {}
    for ex in examples:
        count = seen.get(ex.id, 0)
        seen[ex.id] = count + 1
        if count:
            ex.id = f"{ex.id}-{count + 1}"
    random.Random(args.seed).shuffle(examples)
    corpus.save_examples(examples, args.out)
    print(f"prepare: wrote {len(examples)} examples to {args.out} "
          f"({failed}/{total} input records skipped)")
    return 0


# ------------------------------------------------------------------
# train
# ------------------------------------------------------------------

def _resolve_vocab(cfg: RunConfig, train_examples, require_existing: bool):
    if not cfg.vocab_path:
        raise DataError("config must set vocab_path")
    vocab_file = Path(cfg.vocab_path)
    if vocab_file.exists():
        return Vocabulary.load(vocab_file)
    if require_existing:
        raise DataError(
            f"--init-from requires the vocabulary the checkpoint was trained "
            f"with; missing: {vocab_file}"
        )
    vocab = build_vocab(train_examples, size=cfg.vocab_size,
                        max_markers=cfg.max_markers)
    vocab_file.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(vocab_file)
    return vocab


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if not cfg.train_path or not cfg.val_path:
        raise DataError("config must set train_path and val_path")
    if not cfg.checkpoint_dir:
        raise DataError("config must set checkpoint_dir")
    train_examples = corpus.load_examples(cfg.train_path)
    val_examples = corpus.load_examples(cfg.val_path)
    if cfg.fewshot is not None:
        train_examples = corpus.fewshot_sample(train_examples, cfg.fewshot,
                                               cfg.seed)
    vocab = _resolve_vocab(cfg, train_examples,
                           require_existing=args.init_from is not None)
    model_config = _model_config(cfg, len(vocab))

    init = None
    if args.init_from:
        checkpoint = load_checkpoint(args.init_from)
        if checkpoint.vocab_hash != vocab.content_hash():
            raise CheckpointError(
                f"{args.init_from}: checkpoint is bound to vocabulary "
                f"{checkpoint.vocab_hash}, configured vocabulary is "
                f"{vocab.content_hash()}"
            )
        if expected_shapes(checkpoint.params.config) != expected_shapes(model_config):
            raise CheckpointError(
                f"{args.init_from}: checkpoint shapes do not match the config"
            )
        init = checkpoint.params

    schedule = TrainSchedule(
        lr=cfg.lr,
        total_steps=cfg.total_steps,
        batch_size=cfg.batch_size,
        eval_every=cfg.eval_every,
        lr_decay=cfg.lr_decay,
    )
    result = train(train_examples, val_examples, model_config, schedule,
                   vocab, n_chunks=cfg.n_chunks, init=init)

    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = ckpt_dir / CHECKPOINT_NAME
    save_checkpoint(ckpt_path, result.params, result.best_step,
                    vocab.content_hash(), init_from=args.init_from)
    with (ckpt_dir / TRAIN_LOG_NAME).open("w", encoding="utf-8",
                                          newline="\n") as fh:
        for entry in result.log:
            fh.write(json.dumps(entry.to_dict(), sort_keys=True))
            fh.write("\n")
    PipelineState(
        stage="target_trained" if args.init_from else "intermediate_trained",
        checkpoint=str(ckpt_path),
        init_from=args.init_from,
        vocab_hash=vocab.content_hash(),
        n_train_examples=len(train_examples),
        best_step=result.best_step,
        best_val_tf1=result.best_val_tf1,
        seed=cfg.seed,
    ).save(ckpt_dir)
    best = f"{result.best_val_tf1:.4f}" if result.best_val_tf1 is not None else "n/a"
    print(f"train: {len(train_examples)} examples, best step "
          f"{result.best_step}, best val TF1 {best}, checkpoint {ckpt_path}")
    return 0


# ------------------------------------------------------------------
# evaluate
# ------------------------------------------------------------------

def _split_path(cfg: RunConfig, split: str) -> str:
    path = getattr(cfg, f"{split}_path")
    if not path:
        raise DataError(f"config does not set {split}_path")
    return path


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    examples = corpus.load_examples(_split_path(cfg, args.split))
    if cfg.vocab_path and Path(cfg.vocab_path).exists():
        vocab = Vocabulary.load(cfg.vocab_path)
    elif args.replay_gold:
        # Replay mode never runs the model; chunk coverage only needs
        # token counts, so an ad-hoc vocabulary is equivalent.
        vocab = build_vocab(examples, size=cfg.vocab_size,
                            max_markers=cfg.max_markers)
    else:
        raise DataError(f"no such vocabulary file: {cfg.vocab_path}")

    out_dir = Path(args.out) if args.out else (
        Path(cfg.report_dir) if cfg.report_dir
        else Path(cfg.checkpoint_dir or ".") / f"eval-{args.split}"
    )
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.replay_gold:
        # Pipeline self-test: replay gold labels and rationales as
        # predictions; every metric must come out 1.0.
        records = [
            PredictionRecord(
                id=ex.id,
                label=ex.label,
                marker_ids=[i + 1 for i in sorted(ex.rationale_indices)],
            )
            for ex in examples
        ]
        chunksets = [chunk(ex, vocab, cfg.l_ctx, cfg.n_chunks)
                     for ex in examples]
        report = evaluate_metrics(examples, records)
        coverage_rows = [
            {"id": ex.id, "covered_sentences": sorted(cs.covered_sentences),
             "truncated": cs.truncated}
            for ex, cs in zip(examples, chunksets)
        ]
    else:
        ckpt_path = args.checkpoint or (
            str(Path(cfg.checkpoint_dir) / CHECKPOINT_NAME)
            if cfg.checkpoint_dir else None
        )
        if not ckpt_path:
            raise DataError("pass --checkpoint or set checkpoint_dir")
        checkpoint = load_checkpoint(ckpt_path)
        model_config = _model_config(cfg, len(vocab))
        if checkpoint.vocab_hash != vocab.content_hash():
            raise CheckpointError(
                f"{ckpt_path}: checkpoint vocabulary hash "
                f"{checkpoint.vocab_hash} does not match {vocab.content_hash()}"
            )
        if expected_shapes(checkpoint.params.config) != expected_shapes(model_config):
            raise CheckpointError(
                f"{ckpt_path}: checkpoint shapes do not match the config"
            )
        report, predictions = pipeline.evaluate_examples(
            checkpoint.params, vocab, examples, n_chunks=cfg.n_chunks
        )
        records = [p.to_record() for p in predictions]
        coverage_rows = [
            {"id": p.id, "covered_sentences": sorted(p.covered_sentences),
             "truncated": p.truncated}
            for p in predictions
        ]
        ckpt_dir = Path(ckpt_path).parent
        state = PipelineState.load(ckpt_dir)
        if state is not None:
            state.stage = "evaluated"
            state.save(ckpt_dir)

    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    write_predictions(records, out_dir / "predictions.jsonl")
    with (out_dir / "chunks.jsonl").open("w", encoding="utf-8",
                                         newline="\n") as fh:
        for row in coverage_rows:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")
    print(f"evaluate[{args.split}]: n={report.n} em={report.em:.4f} "
          f"rf1={report.rf1:.4f} tf1={report.tf1:.4f} "
          f"iou_f1={report.iou_f1:.4f} -> {out_dir}")
    return 0


# ------------------------------------------------------------------
# analyze
# ------------------------------------------------------------------

def cmd_analyze(args) -> int:
    examples = corpus.load_examples(args.examples)
    predictions = read_predictions(args.predictions)
    coverage = pipeline.read_chunk_metadata(args.chunks)
    adequacy = analysis.read_adequacy(args.adequacy) if args.adequacy else None
    report = analysis.taxonomy_report(
        examples, predictions, coverage, adequacy,
        sample_k=args.sample, seed=args.seed,
    )
    out = Path(args.out) if args.out else None
    if out:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.to_json(), encoding="utf-8")
    print(f"analyze: {report.n_analyzed} of {report.n_nonperfect_rf1} "
          f"non-perfect examples (corpus n={report.n_examples})")
    for category, (count, pct) in report.table.items():
        print(f"  {category.value:<24} {count:>5}  {pct:6.1f}%")
    return 0


# ------------------------------------------------------------------
# synth
# ------------------------------------------------------------------

def cmd_synth(args) -> int:
    n_train, n_val, n_test = args.sizes
    examples = corpus.synth_dataset(
        seed=args.seed,
        n_examples=n_train + n_val + n_test,
        n_sentences_range=(args.min_sentences, args.max_sentences),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = {
        "train.jsonl": examples[:n_train],
        "val.jsonl": examples[n_train : n_train + n_val],
        "test.jsonl": examples[n_train + n_val :],
    }
    for name, split in splits.items():
        corpus.save_examples(split, out_dir / name)
    print(f"synth: wrote {n_train}/{n_val}/{n_test} examples to {out_dir}")
    return 0


# ------------------------------------------------------------------
# parser and entry point
# ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sentmark",
                     description="Extractive rationale prediction pipeline")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("prepare",
                       help="restructure QA records into example files")
    p.add_argument("--span-qa", action="append", metavar="PATH",
                   help="span-annotated QA records (repeatable)")
    p.add_argument("--multidoc-qa", action="append", metavar="PATH",
                   help="multi-document QA records (repeatable)")
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--init-from", metavar="PATH",
                   help="checkpoint to continue from (e.g. after "
                        "intermediate fine-tuning)")
    p.add_argument("--fewshot", type=_parse_budget, metavar="FLOAT|INT",
                   help="train on a budgeted subset (fraction or count)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run the pipeline over a split")
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--split", choices=("train", "val", "test"),
                   default="test")
    p.add_argument("--out", metavar="PATH", help="output directory")
    p.add_argument("--replay-gold", action="store_true",
                   help="score gold labels/rationales replayed as "
                        "predictions (pipeline self-test)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="structural error taxonomy")
    p.add_argument("--examples", required=True, metavar="PATH")
    p.add_argument("--predictions", required=True, metavar="PATH")
    p.add_argument("--chunks", required=True, metavar="PATH")
    p.add_argument("--adequacy", metavar="PATH")
    p.add_argument("--sample", type=int, metavar="K",
                   help="analyze a seeded sample of K non-perfect examples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="generate the synthetic keyword task")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--sizes", type=_parse_sizes, default=(2000, 200, 200),
                   metavar="TRAIN,VAL,TEST")
    p.add_argument("--min-sentences", type=int, default=3)
    p.add_argument("--max-sentences", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
