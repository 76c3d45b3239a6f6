"""Corpus data model and dataset construction.

Examples are persisted one JSON object per line (UTF-8, LF) with fields
"id", "task", "query", "sentences", "label", "rationale_indices".  That
record format is the interchange contract for every CLI subcommand.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .errors import CorpusError

logger = logging.getLogger(__name__)

# Labels may be any non-empty text that never contains this substring,
# which delimits rationale markers in serialized targets.
LABEL_FORBIDDEN = "explanation:"

EXAMPLE_FIELDS = ("id", "task", "query", "sentences", "label", "rationale_indices")


@dataclass
class Example:
    """One task instance: a query over ordered sentences, the labelled
    answer, and the 0-based indices of the sentences that justify it."""

    id: str
    task: str
    query: str
    sentences: list[str]
    label: str
    rationale_indices: set[int] = field(default_factory=set)

    def validate(self) -> "Example":
        if not self.sentences:
            raise CorpusError(f"example {self.id!r}: sentences must be non-empty")
        for j, s in enumerate(self.sentences):
            if not isinstance(s, str) or not s.strip():
                raise CorpusError(f"example {self.id!r}: sentence {j} is empty")
        for i in self.rationale_indices:
            if not isinstance(i, int) or not 0 <= i < len(self.sentences):
                raise CorpusError(
                    f"example {self.id!r}: rationale index out of range: {i!r} "
                    f"(have {len(self.sentences)} sentences)"
                )
        if not self.label:
            raise CorpusError(f"example {self.id!r}: label is empty")
        if self.label != self.label.strip():
            raise CorpusError(
                f"example {self.id!r}: label has leading/trailing whitespace"
            )
        if LABEL_FORBIDDEN in self.label:
            raise CorpusError(
                f"example {self.id!r}: label contains {LABEL_FORBIDDEN!r}"
            )
        return self

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "task": self.task,
            "query": self.query,
            "sentences": list(self.sentences),
            "label": self.label,
            "rationale_indices": sorted(self.rationale_indices),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Example":
        if not isinstance(obj, dict):
            raise CorpusError("record is not an object")
        for name in EXAMPLE_FIELDS:
            if name not in obj:
                raise CorpusError(f"missing field {name!r}")
        for name in ("id", "task", "query", "label"):
            if not isinstance(obj[name], str):
                raise CorpusError(f"field {name!r} must be a string")
        if not isinstance(obj["sentences"], list):
            raise CorpusError("field 'sentences' must be an array of strings")
        if not isinstance(obj["rationale_indices"], list) or any(
            isinstance(i, bool) or not isinstance(i, int)
            for i in obj["rationale_indices"]
        ):
            raise CorpusError("field 'rationale_indices' must be an array of integers")
        return cls(
            id=obj["id"],
            task=obj["task"],
            query=obj["query"],
            sentences=list(obj["sentences"]),
            label=obj["label"],
            rationale_indices=set(obj["rationale_indices"]),
        ).validate()


def load_examples(path: str | Path) -> list[Example]:
    """Read a line-delimited example file, validating every record."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"no such file: {path}")
    examples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                examples.append(Example.from_dict(obj))
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return examples


def save_examples(examples: Sequence[Example], path: str | Path) -> None:
    """Write examples one JSON object per line; load_examples round-trips."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_dict(), ensure_ascii=False))
            fh.write("\n")


@dataclass
class SpanQARecord:
    """A QA pair whose answer is a character span into a raw passage."""

    question: str
    passage: str
    answer_text: str
    answer_char_span: tuple[int, int]

    def validate(self) -> "SpanQARecord":
        start, end = self.answer_char_span
        if not (0 <= start < end <= len(self.passage)):
            raise CorpusError(
                f"answer span [{start}, {end}) out of bounds for passage of "
                f"length {len(self.passage)}"
            )
        if self.passage[start:end] != self.answer_text:
            raise CorpusError("answer span does not match answer_text")
        return self


@dataclass
class DocEvidence:
    """One supporting document with sentence-level evidence annotations."""

    title: str
    sentences: list[str]
    supporting_indices: set[int] = field(default_factory=set)


@dataclass
class MultiDocQARecord:
    """A QA pair whose evidence sentences live in several documents."""

    question: str
    answer_text: str
    docs: list[DocEvidence]

    def validate(self) -> "MultiDocQARecord":
        if not self.docs:
            raise CorpusError("multi-doc record has no documents")
        for k, doc in enumerate(self.docs):
            if not doc.sentences:
                # Empty documents are skipped (with a warning) at
                # restructuring time rather than rejected here.
                continue
            for i in doc.supporting_indices:
                if not 0 <= i < len(doc.sentences):
                    raise CorpusError(
                        f"doc {k}: supporting index {i} out of range "
                        f"({len(doc.sentences)} sentences)"
                    )
        return self


def _match_from(passage: str, i: int, chars: Sequence[str]) -> int | None:
    """Try to match `chars` starting at passage[i], skipping whitespace in
    the passage.  Returns one past the last matched character, or None."""
    j, k = i, 0
    n = len(passage)
    while k < len(chars):
        if j >= n:
            return None
        if passage[j].isspace():
            j += 1
            continue
        if passage[j] != chars[k]:
            return None
        j += 1
        k += 1
    return j


def align_sentence_offsets(
    passage: str, sentences: Sequence[str]
) -> list[tuple[int, int]]:
    """Locate each sentence's character span inside the original passage.

    Sentences must contain the passage's non-whitespace characters in
    order (whitespace may differ); text the segmenter dropped is allowed
    between sentences and belongs to no span.
    """
    spans: list[tuple[int, int]] = []
    pos = 0
    for si, sent in enumerate(sentences):
        chars = [c for c in sent if not c.isspace()]
        if not chars:
            raise CorpusError(f"sentence {si} is empty")
        start = None
        i = pos
        while i < len(passage):
            if passage[i] == chars[0]:
                end = _match_from(passage, i, chars)
                if end is not None:
                    start = i
                    break
            i += 1
        if start is None:
            raise CorpusError(f"sentence {si} could not be aligned to the passage")
        spans.append((start, end))
        pos = end
    return spans


def _short_hash(*parts: str) -> str:
    digest = hashlib.sha1("\x1f".join(parts).encode("utf-8")).hexdigest()
    return digest[:12]


def restructure_span_qa(
    record: SpanQARecord,
    segmenter: Callable[[str], list[str]],
    example_id: str | None = None,
) -> Example:
    """Convert a span-annotated QA record into an example whose single
    rationale is the sentence containing the answer span's start."""
    record.validate()
    sentences = segmenter(record.passage)
    if not sentences:
        raise CorpusError("segmenter produced no sentences")
    offsets = align_sentence_offsets(record.passage, sentences)
    start = record.answer_char_span[0]
    idx = next((j for j, (s, e) in enumerate(offsets) if s <= start < e), None)
    if idx is None:
        raise CorpusError("span not covered by any sentence")
    if example_id is None:
        example_id = "nq-" + _short_hash(
            record.question, record.answer_text, str(start)
        )
    return Example(
        id=example_id,
        task="nq",
        query=record.question,
        sentences=list(sentences),
        label=record.answer_text,
        rationale_indices={idx},
    ).validate()


def restructure_multidoc_qa(
    record: MultiDocQARecord, id_prefix: str | None = None
) -> list[Example]:
    """Split a multi-document QA record into one example per document,
    carrying over that document's supporting sentence indices."""
    record.validate()
    if id_prefix is None:
        id_prefix = "hotpot-" + _short_hash(record.question, record.answer_text)
    out = []
    skipped = 0
    for k, doc in enumerate(record.docs):
        if not doc.sentences:
            skipped += 1
            continue
        out.append(
            Example(
                id=f"{id_prefix}-{k}",
                task="hotpot",
                query=record.question,
                sentences=list(doc.sentences),
                label=record.answer_text,
                rationale_indices=set(doc.supporting_indices),
            ).validate()
        )
    if skipped:
        logger.warning("skipped %d document(s) with no sentences", skipped)
    return out


def fewshot_sample(
    examples: Sequence[Example], budget: float | int, seed: int
) -> list[Example]:
    """Uniform sample without replacement, preserving the original order.

    A float budget in (0, 1] selects max(1, floor(budget * n)) examples;
    an int budget selects exactly that many.  For a fixed seed, smaller
    budgets are subsets of larger ones.
    """
    n = len(examples)
    if n == 0:
        raise CorpusError("cannot sample from an empty example list")
    if isinstance(budget, bool):
        raise CorpusError(f"invalid budget: {budget!r}")
    if isinstance(budget, int):
        k = budget
        if not 1 <= k <= n:
            raise CorpusError(f"budget {k} outside [1, {n}]")
    elif isinstance(budget, float):
        if not 0.0 < budget <= 1.0:
            raise CorpusError(f"fractional budget {budget} outside (0, 1]")
        k = max(1, int(budget * n))
    else:
        raise CorpusError(f"invalid budget: {budget!r}")
    perm = list(range(n))
    random.Random(seed).shuffle(perm)
    chosen = sorted(perm[:k])
    return [examples[i] for i in chosen]


# Synthetic keyword-detection task.  The label is "True" iff at least one
# sentence contains a keyword token, and the rationale is exactly the set
# of keyword-bearing sentences, so a correct model can score perfectly.
SYNTH_KEYWORDS = ("zephyr", "quasar", "obelisk", "krypton", "meridian")
SYNTH_FILLERS = (
    "the", "a", "old", "red", "blue", "small", "tall", "bird", "river",
    "stone", "cloud", "tree", "house", "road", "dog", "cat", "wind",
    "light", "door", "hill", "ran", "sat", "moved", "stood", "fell",
    "turned", "grew", "shone", "stayed", "passed", "slowly", "quietly",
    "near", "over", "under", "beyond", "again", "still", "once", "twice",
)
SYNTH_QUERY = "does the passage mention a signal word"


def synth_dataset(
    seed: int,
    n_examples: int,
    n_sentences_range: tuple[int, int] = (3, 12),
    keyword_vocab: Sequence[str] = SYNTH_KEYWORDS,
    filler_vocab: Sequence[str] = SYNTH_FILLERS,
    id_prefix: str = "synth",
) -> list[Example]:
    """Generate a deterministic keyword-detection corpus."""
    lo, hi = n_sentences_range
    if not 1 <= lo <= hi:
        raise CorpusError(f"invalid sentence-count range: {n_sentences_range!r}")
    if not keyword_vocab or not filler_vocab:
        raise CorpusError("keyword and filler vocabularies must be non-empty")
    if set(keyword_vocab) & set(filler_vocab):
        raise CorpusError("keyword and filler vocabularies must be disjoint")
    rng = random.Random(seed)
    examples = []
    for i in range(n_examples):
        n = rng.randint(lo, hi)
        k = 0 if rng.random() < 0.5 else rng.randint(1, min(3, n))
        marked = set(rng.sample(range(n), k))
        sentences = []
        for j in range(n):
            words = [rng.choice(filler_vocab) for _ in range(rng.randint(4, 7))]
            if j in marked:
                words[rng.randrange(len(words))] = rng.choice(keyword_vocab)
            sentences.append(" ".join(words))
        examples.append(
            Example(
                id=f"{id_prefix}-{i:05d}",
                task="synth",
                query=SYNTH_QUERY,
                sentences=sentences,
                label="True" if marked else "False",
                rationale_indices=marked,
            )
        )
    return examples
