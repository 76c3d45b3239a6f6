"""Task-accuracy and rationale-quality metrics with corpus aggregation.

Conventions: set-level F1 scores are 1.0 when both sides are empty and
0.0 when exactly one side is; corpus values are arithmetic (macro) means
of per-example scores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import Example
from .errors import MetricsError
from .parsing import PredictionRecord


def exact_match(pred_label: str, gold_label: str) -> int:
    """1 iff the labels' whitespace token sequences match (case-sensitive)."""
    return int(pred_label.split() == gold_label.split())


def _prf1(tp: int, n_pred: int, n_gold: int) -> float:
    if n_pred == 0 and n_gold == 0:
        return 1.0
    if n_pred == 0 or n_gold == 0:
        return 0.0
    if tp == 0:
        return 0.0
    precision = tp / n_pred
    recall = tp / n_gold
    return 2 * precision * recall / (precision + recall)


def set_f1(pred: Iterable[int], gold: Iterable[int]) -> float:
    """F1 over two finite sets (exact-match intersection)."""
    pred, gold = set(pred), set(gold)
    return _prf1(len(pred & gold), len(pred), len(gold))


def sentence_token_spans(sentences: Sequence[str]) -> list[tuple[int, int]]:
    """[start, end) whitespace-token positions of each sentence within the
    unmarked passage (marker tokens are never counted)."""
    spans = []
    pos = 0
    for sent in sentences:
        n = len(sent.split())
        spans.append((pos, pos + n))
        pos += n
    return spans


def _token_positions(
    indices: Iterable[int], spans: Sequence[tuple[int, int]]
) -> set[int]:
    out: set[int] = set()
    for i in indices:
        if not 0 <= i < len(spans):
            raise MetricsError(f"sentence index {i} has no token span")
        start, end = spans[i]
        out.update(range(start, end))
    return out


def token_f1(
    pred_idx: Iterable[int],
    gold_idx: Iterable[int],
    spans: Sequence[tuple[int, int]],
) -> float:
    """F1 over the token positions covered by each side's sentences."""
    pred = _token_positions(pred_idx, spans)
    gold = _token_positions(gold_idx, spans)
    return _prf1(len(pred & gold), len(pred), len(gold))


def iou_f1_from_token_sets(
    pred_sets: Sequence[set[int]],
    gold_sets: Sequence[set[int]],
    threshold: float = 0.5,
) -> float:
    """F1 after one-to-one matching of rationale token-position sets.

    A (pred, gold) pair is a candidate when intersection/union >=
    threshold; candidates are matched greedily in descending IOU, ties
    broken by lower (pred, gold) index pair.  Matches are true positives;
    unmatched predictions/golds are false positives/negatives.
    """
    if not pred_sets and not gold_sets:
        return 1.0
    if not pred_sets or not gold_sets:
        return 0.0
    candidates = []
    for p, ps in enumerate(pred_sets):
        for g, gs in enumerate(gold_sets):
            union = len(ps | gs)
            iou = len(ps & gs) / union if union else 0.0
            if iou >= threshold:
                candidates.append((-iou, p, g))
    candidates.sort()
    used_p: set[int] = set()
    used_g: set[int] = set()
    tp = 0
    for _, p, g in candidates:
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        tp += 1
    return _prf1(tp, len(pred_sets), len(gold_sets))


def iou_f1(
    pred_idx: Iterable[int],
    gold_idx: Iterable[int],
    spans: Sequence[tuple[int, int]],
    threshold: float = 0.5,
) -> float:
    """Sentence-level IOU F1: each rationale is one sentence's token span."""
    pred_sets = [_token_positions([i], spans) for i in sorted(set(pred_idx))]
    gold_sets = [_token_positions([i], spans) for i in sorted(set(gold_idx))]
    return iou_f1_from_token_sets(pred_sets, gold_sets, threshold)


@dataclass(frozen=True)
class ExampleScore:
    em: int
    rf1: float
    tf1: float
    iou_f1: float

    def to_dict(self) -> dict:
        return {"em": self.em, "rf1": self.rf1, "tf1": self.tf1,
                "iou_f1": self.iou_f1}


ZERO_SCORE = ExampleScore(em=0, rf1=0.0, tf1=0.0, iou_f1=0.0)


@dataclass
class EvalReport:
    per_example: dict[str, ExampleScore]
    em: float
    rf1: float
    tf1: float
    iou_f1: float
    n: int
    warnings: int = 0

    def to_dict(self) -> dict:
        return {
            "em": self.em,
            "rf1": self.rf1,
            "tf1": self.tf1,
            "iou_f1": self.iou_f1,
            "n": self.n,
            "warnings": self.warnings,
            "per_example": {
                k: self.per_example[k].to_dict() for k in sorted(self.per_example)
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def score_example(
    example: Example,
    pred_label: str,
    pred_indices: Iterable[int],
    iou_threshold: float = 0.5,
) -> ExampleScore:
    spans = sentence_token_spans(example.sentences)
    pred_indices = set(pred_indices)
    gold = example.rationale_indices
    return ExampleScore(
        em=exact_match(pred_label, example.label),
        rf1=set_f1(pred_indices, gold),
        tf1=token_f1(pred_indices, gold, spans),
        iou_f1=iou_f1(pred_indices, gold, spans, iou_threshold),
    )


def evaluate(
    examples: Sequence[Example],
    predictions: Sequence[PredictionRecord],
    chunk_metadata: Mapping[str, object] | None = None,
    iou_threshold: float = 0.5,
) -> EvalReport:
    """Score every example against its prediction record.

    Markers outside 1..N are ignored for scoring (they can only lower
    recall via the sentences they failed to name).  Examples without a
    prediction score zero and increment the warning count.  chunk_metadata
    is accepted for interface parity with error analysis and not used in
    scoring.
    """
    del chunk_metadata
    by_id: dict[str, PredictionRecord] = {}
    for rec in predictions:
        if rec.id in by_id:
            raise MetricsError(f"duplicate prediction id: {rec.id}")
        by_id[rec.id] = rec
    known = {ex.id for ex in examples}
    stray = sorted(set(by_id) - known)
    if stray:
        raise MetricsError(f"predictions for unknown example ids: {stray[:5]}")

    per_example: dict[str, ExampleScore] = {}
    warnings = 0
    for ex in examples:
        rec = by_id.get(ex.id)
        if rec is None:
            warnings += 1
            per_example[ex.id] = ZERO_SCORE
            continue
        n = len(ex.sentences)
        pred_indices = {m - 1 for m in rec.marker_ids if 1 <= m <= n}
        per_example[ex.id] = score_example(
            ex, rec.label, pred_indices, iou_threshold
        )

    n = len(examples)
    scores = list(per_example.values())

    def mean(values: list[float]) -> float:
        return sum(values) / n if n else 0.0

    return EvalReport(
        per_example=per_example,
        em=mean([s.em for s in scores]),
        rf1=mean([s.rf1 for s in scores]),
        tf1=mean([s.tf1 for s in scores]),
        iou_f1=mean([s.iou_f1 for s in scores]),
        n=n,
        warnings=warnings,
    )
