"""End-to-end inference: chunk, encode, greedily decode, parse markers,
map them to sentences, and score.  Every consumer (training-time
validation, the estimator, the CLI) goes through this one path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Example
from .errors import DataError
from .metrics import EvalReport, evaluate
from .model import Parameters, greedy_decode_batch
from .parsing import ParsedPrediction, PredictionRecord, map_to_sentences, parse_output
from .textproc import Vocabulary, chunk, detokenize


@dataclass
class ExamplePrediction:
    """Everything the pipeline derives for one example."""

    id: str
    decoded_text: str
    parsed: ParsedPrediction
    rationale_indices: set[int]
    not_in_input: bool
    covered_sentences: frozenset[int]
    truncated: bool

    def to_record(self) -> PredictionRecord:
        return PredictionRecord(
            id=self.id,
            label=self.parsed.label_text,
            marker_ids=list(self.parsed.marker_ids),
            out_of_range=list(self.parsed.out_of_range),
            malformed_segments=self.parsed.malformed_segments,
        )


def predict_examples(
    params: Parameters,
    vocab: Vocabulary,
    examples: Sequence[Example],
    n_chunks: int = 1,
    batch_size: int = 64,
) -> list[ExamplePrediction]:
    """Run the full inference pipeline over examples, in order."""
    cfg = params.config
    out: list[ExamplePrediction] = []
    for lo in range(0, len(examples), batch_size):
        group = examples[lo : lo + batch_size]
        chunksets = [chunk(ex, vocab, cfg.l_ctx, n_chunks) for ex in group]
        decoded = greedy_decode_batch(params, chunksets)
        for ex, cs, ids in zip(group, chunksets, decoded):
            text = detokenize(ids, vocab)
            parsed = parse_output(text)
            indices, not_in_input = map_to_sentences(parsed, len(ex.sentences))
            out.append(
                ExamplePrediction(
                    id=ex.id,
                    decoded_text=text,
                    parsed=parsed,
                    rationale_indices=indices,
                    not_in_input=not_in_input,
                    covered_sentences=cs.covered_sentences,
                    truncated=cs.truncated,
                )
            )
    return out


def evaluate_examples(
    params: Parameters,
    vocab: Vocabulary,
    examples: Sequence[Example],
    n_chunks: int = 1,
    batch_size: int = 64,
) -> tuple[EvalReport, list[ExamplePrediction]]:
    predictions = predict_examples(params, vocab, examples, n_chunks, batch_size)
    report = evaluate(examples, [p.to_record() for p in predictions])
    return report, predictions


def write_chunk_metadata(
    predictions: Sequence[ExamplePrediction], path: str | Path
) -> None:
    """Per-example chunk coverage: {"id", "covered_sentences", "truncated"}."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for pred in predictions:
            fh.write(json.dumps({
                "id": pred.id,
                "covered_sentences": sorted(pred.covered_sentences),
                "truncated": pred.truncated,
            }, ensure_ascii=False))
            fh.write("\n")


def read_chunk_metadata(path: str | Path) -> dict[str, frozenset[int]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such chunk metadata file: {path}")
    coverage: dict[str, frozenset[int]] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                coverage[obj["id"]] = frozenset(
                    int(i) for i in obj["covered_sentences"]
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: invalid chunk metadata: {exc}") from exc
    return coverage
