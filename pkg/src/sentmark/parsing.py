"""Parse decoded output text into a label and rationale markers, and map
markers back to input sentences.

Mapping accepts only markers S1..SN for an N-sentence input, so predicted
rationales are always a subset of the input sentences; everything else is
recorded as an anomaly instead of raised, so corpus-level evaluation never
aborts.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import DataError
from .textproc import EXPLANATION_TOKEN

# Valid markers are "S" followed by a positive integer without leading
# zeros; anything else inside an explanation segment is malformed.
_MARKER_RE = re.compile(r"S[1-9][0-9]*")


@dataclass
class ParsedPrediction:
    """Decoded label plus 1-based rationale marker ids.

    marker_ids keeps first occurrences only; out_of_range is filled by
    map_to_sentences with markers exceeding the sentence count; segments
    that are not exactly one marker token count as malformed_segments.
    """

    label_text: str
    marker_ids: list[int] = field(default_factory=list)
    out_of_range: list[int] = field(default_factory=list)
    malformed_segments: int = 0


def parse_output(decoded_text: str) -> ParsedPrediction:
    """Split "{label} explanation: S2 explanation: S3 ..." decoder output.

    The label is everything before the first "explanation:", trimmed.
    Each following segment must be exactly one marker token; duplicates
    are dropped keeping the first occurrence.
    """
    head, *segments = decoded_text.split(EXPLANATION_TOKEN)
    markers: list[int] = []
    seen: set[int] = set()
    malformed = 0
    for segment in segments:
        words = segment.split()
        if len(words) == 1 and _MARKER_RE.fullmatch(words[0]):
            marker = int(words[0][1:])
            if marker not in seen:
                seen.add(marker)
                markers.append(marker)
        else:
            malformed += 1
    return ParsedPrediction(label_text=head.strip(), marker_ids=markers,
                            malformed_segments=malformed)


def map_to_sentences(
    parsed: ParsedPrediction, n_sentences: int
) -> tuple[set[int], bool]:
    """Resolve 1-based markers against an N-sentence input.

    Returns the 0-based indices of in-range markers and whether any
    marker exceeded N.  Over-range markers move from parsed.marker_ids
    to parsed.out_of_range; the returned set is always within 0..N-1.
    """
    if n_sentences < 0:
        raise DataError(f"invalid sentence count: {n_sentences}")
    in_range = [m for m in parsed.marker_ids if m <= n_sentences]
    over = [m for m in parsed.marker_ids if m > n_sentences]
    parsed.marker_ids = in_range
    parsed.out_of_range = parsed.out_of_range + over
    return {m - 1 for m in in_range}, bool(over)


@dataclass
class PredictionRecord:
    """One line of a prediction dump."""

    id: str
    label: str
    marker_ids: list[int] = field(default_factory=list)
    out_of_range: list[int] = field(default_factory=list)
    malformed_segments: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "marker_ids": list(self.marker_ids),
            "out_of_range": list(self.out_of_range),
            "malformed_segments": self.malformed_segments,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PredictionRecord":
        try:
            return cls(
                id=obj["id"],
                label=obj["label"],
                marker_ids=[int(m) for m in obj["marker_ids"]],
                out_of_range=[int(m) for m in obj["out_of_range"]],
                malformed_segments=int(obj["malformed_segments"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"invalid prediction record: {exc}") from exc


def write_predictions(records: Sequence[PredictionRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False))
            fh.write("\n")


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such prediction file: {path}")
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            records.append(PredictionRecord.from_dict(obj))
    return records
