"""Structural error taxonomy for non-perfect rationale predictions.

Each prediction falls into exactly one structural category.  Input-level
anomalies (markers absent from the input, gold sentences the model never
saw) take precedence over set-relation categories, since comparing the
predicted and gold sets is meaningless when the model could not have
produced the right answer.  Adequacy is a human judgement carried as an
optional side annotation, never computed.
"""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Example
from .errors import DataError
from .metrics import set_f1
from .parsing import PredictionRecord


class Category(Enum):
    PERFECT = "perfect"
    OVERLAP = "overlap"
    OVER_PREDICTION = "over_prediction"
    NO_OVERLAP = "no_overlap"
    PREDICTION_NOT_IN_INPUT = "prediction_not_in_input"
    INPUT_TRUNCATED = "input_truncated"


class Adequacy(Enum):
    ADEQUATE = "adequate"
    INADEQUATE = "inadequate"
    UNLABELED = "unlabeled"


def classify(
    gold: Iterable[int],
    pred: Iterable[int],
    not_in_input: bool,
    covered_sentences: Iterable[int],
) -> Category:
    """First matching rule wins: markers not in input, gold outside the
    encoded chunks, exact match, strict superset, overlap, no overlap."""
    gold, pred = set(gold), set(pred)
    if not_in_input:
        return Category.PREDICTION_NOT_IN_INPUT
    if not gold <= set(covered_sentences):
        return Category.INPUT_TRUNCATED
    if pred == gold:
        return Category.PERFECT
    if pred > gold:
        return Category.OVER_PREDICTION
    if pred & gold:
        return Category.OVERLAP
    return Category.NO_OVERLAP


def summarize(
    categories: Sequence[Category], include_perfect: bool = False
) -> dict[Category, tuple[int, float]]:
    """Frequency table mapping category -> (count, percentage).

    Percentages are over non-PERFECT entries unless include_perfect is
    set, matching an error analysis restricted to imperfect predictions.
    """
    population = [
        c for c in categories if include_perfect or c is not Category.PERFECT
    ]
    counts = Counter(population)
    total = len(population)
    return {
        cat: (counts[cat], 100.0 * counts[cat] / total)
        for cat in Category
        if counts[cat]
    }


def read_adequacy(path: str | Path) -> dict[str, Adequacy]:
    """Load an adequacy side file: one {"id", "adequacy"} object per line."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such adequacy file: {path}")
    out: dict[str, Adequacy] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                example_id = obj["id"]
                adequacy = Adequacy(obj["adequacy"])
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: invalid adequacy record: {exc}") from exc
            if adequacy is Adequacy.UNLABELED:
                raise DataError(f"{path}:{lineno}: side file may not mark 'unlabeled'")
            out[example_id] = adequacy
    return out


@dataclass
class AnalyzedExample:
    id: str
    category: Category
    adequacy: Adequacy
    rf1: float
    gold: list[int]
    pred: list[int]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "category": self.category.value,
            "adequacy": self.adequacy.value,
            "rf1": self.rf1,
            "gold": self.gold,
            "pred": self.pred,
        }


@dataclass
class TaxonomyReport:
    n_examples: int
    n_nonperfect_rf1: int
    n_analyzed: int
    table: dict[Category, tuple[int, float]]
    examples: list[AnalyzedExample]

    def to_dict(self) -> dict:
        return {
            "n_examples": self.n_examples,
            "n_nonperfect_rf1": self.n_nonperfect_rf1,
            "n_analyzed": self.n_analyzed,
            "table": {
                cat.value: {"count": count, "percent": pct}
                for cat, (count, pct) in self.table.items()
            },
            "examples": [ex.to_dict() for ex in self.examples],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def taxonomy_report(
    examples: Sequence[Example],
    predictions: Sequence[PredictionRecord],
    chunk_coverage: Mapping[str, Iterable[int]],
    adequacy: Mapping[str, Adequacy] | None = None,
    sample_k: int | None = None,
    seed: int = 0,
) -> TaxonomyReport:
    """Classify every prediction with rationale F1 < 1 and tabulate.

    chunk_coverage maps example id -> sentence indices the encoder saw.
    sample_k, when set, analyzes a seeded uniform subset of the
    non-perfect examples (original order preserved).
    """
    by_id = {rec.id: rec for rec in predictions}
    example_ids = {ex.id for ex in examples}
    missing = sorted(example_ids - set(by_id))
    if missing:
        raise DataError(f"no prediction for example ids: {missing[:5]}")
    stray = sorted(set(by_id) - example_ids)
    if stray:
        raise DataError(f"predictions for unknown example ids: {stray[:5]}")

    nonperfect: list[tuple[Example, PredictionRecord, set[int], float]] = []
    for ex in examples:
        rec = by_id[ex.id]
        n = len(ex.sentences)
        pred_indices = {m - 1 for m in rec.marker_ids if 1 <= m <= n}
        rf1 = set_f1(pred_indices, ex.rationale_indices)
        if rf1 < 1.0:
            nonperfect.append((ex, rec, pred_indices, rf1))

    chosen = nonperfect
    if sample_k is not None and sample_k < len(nonperfect):
        perm = list(range(len(nonperfect)))
        random.Random(seed).shuffle(perm)
        chosen = [nonperfect[i] for i in sorted(perm[:sample_k])]

    analyzed = []
    for ex, rec, pred_indices, rf1 in chosen:
        if ex.id not in chunk_coverage:
            raise DataError(f"no chunk metadata for example id: {ex.id}")
        category = classify(
            gold=ex.rationale_indices,
            pred=pred_indices,
            not_in_input=bool(rec.out_of_range),
            covered_sentences=chunk_coverage[ex.id],
        )
        label = Adequacy.UNLABELED
        if adequacy and category in (Category.OVERLAP, Category.NO_OVERLAP):
            label = adequacy.get(ex.id, Adequacy.UNLABELED)
        analyzed.append(
            AnalyzedExample(
                id=ex.id,
                category=category,
                adequacy=label,
                rf1=rf1,
                gold=sorted(ex.rationale_indices),
                pred=sorted(pred_indices),
            )
        )

    return TaxonomyReport(
        n_examples=len(examples),
        n_nonperfect_rf1=len(nonperfect),
        n_analyzed=len(analyzed),
        table=summarize([a.category for a in analyzed], include_perfect=False),
        examples=analyzed,
    )
