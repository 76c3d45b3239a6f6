"""Text processing: sentence segmentation, marker injection, input/target
serialization, whitespace tokenization with reserved tokens, and chunking.

Marker names are 1-based ("S1" prefixes the first sentence); all indices
handled internally are 0-based.  The +1/-1 conversion lives only in
serialize_target and parsing.map_to_sentences.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Example
from .errors import TextError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
EOS_TOKEN = "<eos>"
PAD_ID = 0
UNK_ID = 1
EOS_ID = 2

EXPLAIN_TOKEN = "explain"
QUESTION_TOKEN = "question:"
PASSAGE_TOKEN = "passage:"
EXPLANATION_TOKEN = "explanation:"

# Fixed reserved-token order; vocabulary files list these first, then the
# markers S1..S{max_markers}, then corpus words by descending frequency.
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, EOS_TOKEN)
PREFIX_TOKENS = (EXPLAIN_TOKEN, QUESTION_TOKEN, PASSAGE_TOKEN, EXPLANATION_TOKEN)

DEFAULT_MAX_MARKERS = 256
DEFAULT_VOCAB_SIZE = 8192

MARKER_RE = re.compile(r"S[1-9][0-9]*")

# Sentence boundaries are placed after '.', '!' or '?' followed by
# whitespace and an uppercase letter or digit, except after these common
# abbreviations (compared lowercase) or single-letter initials.
ABBREVIATIONS = frozenset({
    "dr.", "mr.", "mrs.", "ms.", "prof.", "sr.", "jr.", "st.", "mt.",
    "vs.", "etc.", "e.g.", "i.e.", "cf.", "al.", "inc.", "ltd.", "co.",
    "corp.", "fig.", "no.", "vol.", "pp.", "approx.", "dept.", "est.",
    "gen.", "gov.", "sen.", "rep.", "capt.", "col.", "sgt.", "lt.",
    "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.",
    "sept.", "oct.", "nov.", "dec.", "u.s.", "u.k.", "d.c.", "a.m.",
    "p.m.",
})


def _is_initial(word: str) -> bool:
    return len(word) == 2 and word[0].isalpha() and word[0].isupper() and word[1] == "."


def segment_sentences(text: str) -> list[str]:
    """Rule-based sentence segmentation over whitespace-normalized text.

    The concatenation of the returned sentences (single-space separated)
    contains every non-whitespace character of the input, in order.  If
    no boundary is found, the whole text is one sentence.
    """
    words = text.split()
    if not words:
        raise TextError("cannot segment empty text")
    sentences = []
    current: list[str] = []
    for i, word in enumerate(words):
        current.append(word)
        if word[-1] not in ".!?":
            continue
        if i + 1 >= len(words):
            continue
        nxt = words[i + 1][0]
        if not (nxt.isupper() or nxt.isdigit()):
            continue
        if word[-1] == "." and (word.lower() in ABBREVIATIONS or _is_initial(word)):
            continue
        sentences.append(" ".join(current))
        current = []
    if current:
        sentences.append(" ".join(current))
    return sentences


class Vocabulary:
    """Whitespace-token vocabulary with a fixed reserved prefix.

    Ids 0..2 are <pad>, <unk>, <eos>; ids 3..6 are the serialization
    tokens "explain", "question:", "passage:", "explanation:"; the next
    n_markers ids are the atomic marker tokens S1..S{n_markers}; corpus
    words follow.  The mapping is immutable after construction.
    """

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        expected = SPECIAL_TOKENS + PREFIX_TOKENS
        if tokens[: len(expected)] != expected:
            raise TextError("vocabulary does not start with the reserved tokens")
        n_markers = 0
        pos = len(expected)
        while pos < len(tokens) and tokens[pos] == f"S{n_markers + 1}":
            n_markers += 1
            pos += 1
        for tok in tokens[pos:]:
            if not tok or any(c.isspace() for c in tok):
                raise TextError(f"invalid vocabulary token: {tok!r}")
            if MARKER_RE.fullmatch(tok):
                raise TextError(
                    f"word {tok!r} collides with the marker token namespace"
                )
        self.tokens = tokens
        self.n_markers = n_markers
        self._ids = {tok: i for i, tok in enumerate(tokens)}
        if len(self._ids) != len(tokens):
            raise TextError("vocabulary contains duplicate tokens")
        self._marker_base = len(expected)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def marker_id(self, marker: int) -> int:
        """Id of the marker token S{marker} (1-based marker name)."""
        if not 1 <= marker <= self.n_markers:
            raise TextError(f"marker S{marker} outside S1..S{self.n_markers}")
        return self._marker_base + marker - 1

    def content_hash(self) -> str:
        content = "\n".join(self.tokens) + "\n"
        return hashlib.sha256(content.encode("utf-8")).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        path = Path(path)
        if not path.exists():
            raise TextError(f"no such vocabulary file: {path}")
        lines = path.read_text(encoding="utf-8").splitlines()
        return cls([line for line in lines if line])


def _example_words(example: Example) -> Iterable[str]:
    yield from example.task.split()
    yield from example.query.split()
    for sent in example.sentences:
        yield from sent.split()
    yield from example.label.split()


def build_vocab(
    examples: Sequence[Example],
    size: int = DEFAULT_VOCAB_SIZE,
    max_markers: int = DEFAULT_MAX_MARKERS,
) -> Vocabulary:
    """Frequency-ranked vocabulary over a training split.

    Words that would collide with reserved tokens or with the marker
    namespace (any "S<digits>" string) are never added as plain words;
    they tokenize back to their reserved id or to <unk>.
    """
    if max_markers < 1:
        raise TextError("max_markers must be >= 1")
    reserved = list(SPECIAL_TOKENS + PREFIX_TOKENS)
    reserved += [f"S{i}" for i in range(1, max_markers + 1)]
    if size < len(reserved):
        raise TextError(
            f"vocab size {size} smaller than {len(reserved)} reserved tokens"
        )
    blocked = set(reserved)
    counts: dict[str, int] = {}
    for ex in examples:
        for word in _example_words(ex):
            if word in blocked or MARKER_RE.fullmatch(word):
                continue
            counts[word] = counts.get(word, 0) + 1
    budget = size - len(reserved)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    words = [w for w, _ in ranked[:budget]]
    return Vocabulary(reserved + words)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Whitespace tokenization; out-of-vocabulary words map to <unk>."""
    return [vocab.id(word) for word in text.split()]


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.token(i) for i in ids)


def _input_prefix_words(task: str, query: str) -> list[str]:
    return [EXPLAIN_TOKEN, *task.split(), QUESTION_TOKEN, *query.split(),
            PASSAGE_TOKEN]


def serialize_input(example: Example, max_markers: int = DEFAULT_MAX_MARKERS) -> str:
    """Render "explain {task} question: {q} passage: S1 {s_1} ... SN {s_N}"."""
    n = len(example.sentences)
    if n > max_markers:
        raise TextError(f"too many sentences: {n} > {max_markers}")
    words = _input_prefix_words(example.task, example.query)
    for i, sent in enumerate(example.sentences):
        words.append(f"S{i + 1}")
        words.extend(sent.split())
    return " ".join(words)


def serialize_target(label: str, rationale_indices: Iterable[int]) -> str:
    """Render "{label} explanation: S{i+1} ..." with ascending markers.

    The label is embedded verbatim; an empty rationale set yields the
    label alone.
    """
    parts = [label]
    for i in sorted(set(rationale_indices)):
        parts.append(f"{EXPLANATION_TOKEN} S{i + 1}")
    return " ".join(parts)


@dataclass
class MarkedInput:
    """Token-level view of an example with marker tokens injected before
    each sentence.  sentence_starts[i] is the position of sentence i's
    marker inside marked_passage_tokens."""

    task: str
    query_tokens: list[int]
    marked_passage_tokens: list[int]
    sentence_starts: list[int]


def build_marked_input(example: Example, vocab: Vocabulary) -> MarkedInput:
    n = len(example.sentences)
    if n > vocab.n_markers:
        raise TextError(
            f"too many sentences: {n} > {vocab.n_markers} marker tokens"
        )
    passage_tokens: list[int] = []
    starts = []
    for i, sent in enumerate(example.sentences):
        starts.append(len(passage_tokens))
        passage_tokens.append(vocab.marker_id(i + 1))
        passage_tokens.extend(tokenize(sent, vocab))
    return MarkedInput(
        task=example.task,
        query_tokens=tokenize(example.query, vocab),
        marked_passage_tokens=passage_tokens,
        sentence_starts=starts,
    )


@dataclass
class ChunkSet:
    """Fixed-length encoder inputs for one example.

    Every chunk starts with the same serialized prefix token ids and is
    padded to length l_ctx; pad_mask is True on real tokens.  truncated
    is True iff some sentence's tokens were dropped entirely because the
    chunk budget ran out.
    """

    token_ids: np.ndarray  # (n_chunks, l_ctx) int64
    pad_mask: np.ndarray  # (n_chunks, l_ctx) bool
    sentences_in_chunk: list[frozenset[int]]
    covered_sentences: frozenset[int]
    truncated: bool
    n_sentences: int

    @property
    def n_chunks(self) -> int:
        return int(self.token_ids.shape[0])

    @property
    def l_ctx(self) -> int:
        return int(self.token_ids.shape[1])


def chunk(example: Example, vocab: Vocabulary, l_ctx: int, n_chunks: int) -> ChunkSet:
    """Pack marker-prefixed sentences greedily into up to n_chunks chunks.

    Each chunk is the serialized prefix plus whole sentences in order; a
    sentence only splits when it alone exceeds the per-chunk budget, in
    which case its overflow tokens are dropped.  Packing stops once
    n_chunks chunks are full and remaining sentences are dropped.
    """
    if l_ctx < 2:
        raise TextError("l_ctx must be at least 2")
    if n_chunks < 1:
        raise TextError("n_chunks must be at least 1")
    prefix = [vocab.id(w) for w in _input_prefix_words(example.task, example.query)]
    if len(prefix) >= l_ctx:
        raise TextError(
            f"query too long: prefix is {len(prefix)} tokens, l_ctx is {l_ctx}"
        )
    budget = l_ctx - len(prefix)
    marked = build_marked_input(example, vocab)

    bodies: list[list[int]] = []
    sent_sets: list[set[int]] = []
    cur: list[int] = []
    cur_sents: set[int] = set()
    starts = marked.sentence_starts + [len(marked.marked_passage_tokens)]
    for i in range(len(example.sentences)):
        unit = marked.marked_passage_tokens[starts[i]:starts[i + 1]]
        if cur and len(cur) + len(unit) > budget:
            bodies.append(cur)
            sent_sets.append(cur_sents)
            cur, cur_sents = [], set()
            if len(bodies) == n_chunks:
                break
        cur.extend(unit[:budget])
        cur_sents.add(i)
    if cur and len(bodies) < n_chunks:
        bodies.append(cur)
        sent_sets.append(cur_sents)

    covered = frozenset().union(*sent_sets) if sent_sets else frozenset()
    c = len(bodies)
    token_ids = np.full((c, l_ctx), PAD_ID, dtype=np.int64)
    pad_mask = np.zeros((c, l_ctx), dtype=bool)
    for k, body in enumerate(bodies):
        row = prefix + body
        token_ids[k, : len(row)] = row
        pad_mask[k, : len(row)] = True
    return ChunkSet(
        token_ids=token_ids,
        pad_mask=pad_mask,
        sentences_in_chunk=[frozenset(s) for s in sent_sets],
        covered_sentences=covered,
        truncated=len(covered) != len(example.sentences),
        n_sentences=len(example.sentences),
    )
