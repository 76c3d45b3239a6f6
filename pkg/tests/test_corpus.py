import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sentmark.corpus import (
    DocEvidence,
    Example,
    MultiDocQARecord,
    SpanQARecord,
    fewshot_sample,
    load_examples,
    restructure_multidoc_qa,
    restructure_span_qa,
    save_examples,
    synth_dataset,
)
from sentmark.errors import CorpusError
from sentmark.textproc import segment_sentences


def make_example(i=0, n_sentences=3, rationale=(1,)):
    return Example(
        id=f"ex-{i}",
        task="boolq",
        query="is this a test",
        sentences=[f"sentence number {j} here" for j in range(n_sentences)],
        label="True",
        rationale_indices=set(rationale),
    )


class TestExampleValidation:
    def test_valid(self):
        make_example().validate()

    def test_rationale_out_of_range(self):
        ex = make_example(rationale=(5,))
        with pytest.raises(CorpusError, match="rationale index out of range"):
            ex.validate()

    def test_empty_sentences(self):
        ex = make_example()
        ex.sentences = []
        with pytest.raises(CorpusError, match="non-empty"):
            ex.validate()

    def test_blank_sentence(self):
        ex = make_example()
        ex.sentences[1] = "   "
        with pytest.raises(CorpusError, match="empty"):
            ex.validate()

    def test_label_with_marker_separator(self):
        ex = make_example()
        ex.label = "True explanation: S1"
        with pytest.raises(CorpusError, match="explanation:"):
            ex.validate()

    def test_label_whitespace(self):
        ex = make_example()
        ex.label = " True"
        with pytest.raises(CorpusError, match="whitespace"):
            ex.validate()


class TestLoadSave:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_examples(path) == []

    def test_single_record(self, tmp_path):
        path = tmp_path / "one.jsonl"
        record = {
            "id": "a", "task": "t", "query": "q",
            "sentences": ["a b", "c d", "e f"], "label": "yes",
            "rationale_indices": [1],
        }
        path.write_text(json.dumps(record) + "\n")
        loaded = load_examples(path)
        assert len(loaded) == 1
        assert loaded[0].rationale_indices == {1}

    def test_rationale_out_of_range_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        record = {
            "id": "a", "task": "t", "query": "q",
            "sentences": ["a", "b", "c"], "label": "yes",
            "rationale_indices": [5],
        }
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(CorpusError, match=r":1:.*rationale index out of range"):
            load_examples(path)

    def test_missing_field_names_field(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a"}\n')
        with pytest.raises(CorpusError, match="missing field 'task'"):
            load_examples(path)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("not json\n")
        with pytest.raises(CorpusError, match=":1:"):
            load_examples(path)

    def test_round_trip(self, tmp_path):
        examples = [make_example(i) for i in range(5)]
        path = tmp_path / "out.jsonl"
        save_examples(examples, path)
        assert load_examples(path) == examples

    def test_round_trip_non_ascii(self, tmp_path):
        ex = make_example()
        ex.sentences = ["héllo wörld ünïcode", "日本語 テスト です"]
        ex.query = "qué pasa"
        path = tmp_path / "out.jsonl"
        save_examples([ex], path)
        assert load_examples(path) == [ex]


word = st.text(
    alphabet=st.characters(min_codepoint=33, max_codepoint=0x2FFF,
                           blacklist_characters='"\\',
                           blacklist_categories=("Z", "C")),
    min_size=1, max_size=6,
)
sentence = st.lists(word, min_size=1, max_size=5).map(" ".join)


@st.composite
def examples_strategy(draw):
    sentences = draw(st.lists(sentence, min_size=1, max_size=6))
    n = len(sentences)
    rationale = draw(st.sets(st.integers(min_value=0, max_value=n - 1)))
    label = draw(sentence.filter(lambda s: "explanation:" not in s))
    return Example(
        id=draw(st.uuids()).hex,
        task="t",
        query=draw(sentence),
        sentences=sentences,
        label=label,
        rationale_indices=rationale,
    )


@settings(max_examples=50, deadline=None)
@given(st.lists(examples_strategy(), max_size=8))
def test_save_load_identity_property(tmp_path_factory, xs):
    path = tmp_path_factory.mktemp("corpus") / "xs.jsonl"
    save_examples(xs, path)
    assert load_examples(path) == xs


class TestRestructureSpanQA:
    def test_answer_inside_second_sentence(self):
        passage = "A b. C wrote X in 1990. D e."
        start = passage.index("C wrote")
        record = SpanQARecord(
            question="who wrote X",
            passage=passage,
            answer_text="C",
            answer_char_span=(start, start + 1),
        )
        ex = restructure_span_qa(record, segment_sentences)
        assert ex.task == "nq"
        assert ex.label == "C"
        assert ex.query == "who wrote X"
        assert ex.rationale_indices == {1}
        assert ex.sentences == ["A b.", "C wrote X in 1990.", "D e."]

    def test_whole_passage_answer(self):
        record = SpanQARecord(
            question="q",
            passage="only one sentence",
            answer_text="only one sentence",
            answer_char_span=(0, 17),
        )
        ex = restructure_span_qa(record, segment_sentences)
        assert ex.rationale_indices == {0}

    def test_exactly_one_rationale_always(self):
        rng = random.Random(0)
        for _ in range(30):
            n = rng.randint(1, 6)
            sentences = [
                " ".join(rng.choice("abcdefg") for _ in range(rng.randint(2, 5)))
                + "."
                for _ in range(n)
            ]
            passage = " ".join(s.capitalize() for s in sentences)
            start = rng.randrange(len(passage))
            while passage[start].isspace():
                start = (start + 1) % len(passage)
            record = SpanQARecord("q", passage, passage[start:start + 1],
                                  (start, start + 1))
            ex = restructure_span_qa(record, segment_sentences)
            assert len(ex.rationale_indices) == 1

    def test_span_straddling_boundary_uses_start_sentence(self):
        passage = "First part here. Second part there."
        start = passage.index("here")
        end = passage.index("Second") + len("Second")
        record = SpanQARecord("q", passage, passage[start:end], (start, end))
        ex = restructure_span_qa(record, segment_sentences)
        assert ex.rationale_indices == {0}

    def test_span_not_covered(self):
        # A segmenter that drops the middle of the passage.
        record = SpanQARecord("q", "Keep this. Drop that. Keep too.",
                              "Drop", (11, 15))
        dropper = lambda text: ["Keep this.", "Keep too."]  # noqa: E731
        with pytest.raises(CorpusError, match="span not covered"):
            restructure_span_qa(record, dropper)

    def test_invalid_span_rejected(self):
        with pytest.raises(CorpusError, match="does not match"):
            restructure_span_qa(
                SpanQARecord("q", "some passage", "zzz", (0, 3)),
                segment_sentences,
            )


class TestRestructureMultiDoc:
    def make_record(self, supporting=({0}, {1, 2}, set())):
        docs = [
            DocEvidence(title=f"d{k}",
                        sentences=[f"s {k} {j}" for j in range(3)],
                        supporting_indices=set(idx))
            for k, idx in enumerate(supporting)
        ]
        return MultiDocQARecord(question="who", answer_text="Ada", docs=docs)

    def test_one_example_per_doc(self):
        out = restructure_multidoc_qa(self.make_record(({0}, {1})))
        assert len(out) == 2
        assert all(ex.task == "hotpot" for ex in out)
        assert all(ex.label == "Ada" for ex in out)

    def test_empty_supporting_set(self):
        out = restructure_multidoc_qa(self.make_record((set(),)))
        assert len(out) == 1
        assert out[0].rationale_indices == set()

    def test_supporting_sets_carried_exactly(self):
        supporting = ({0}, {1, 2}, set())
        out = restructure_multidoc_qa(self.make_record(supporting))
        assert [ex.rationale_indices for ex in out] == [set(s) for s in supporting]
        assert [ex.sentences for ex in out] == [
            [f"s {k} {j}" for j in range(3)] for k in range(3)
        ]

    def test_empty_doc_skipped_with_warning(self, caplog):
        record = self.make_record(({0}, {1}))
        record.docs.insert(1, DocEvidence(title="empty", sentences=[]))
        with caplog.at_level("WARNING"):
            out = restructure_multidoc_qa(record)
        assert len(out) == 2
        assert "skipped 1" in caplog.text

    def test_out_of_range_supporting_index(self):
        record = self.make_record(({7},))
        with pytest.raises(CorpusError, match="out of range"):
            restructure_multidoc_qa(record)


class TestFewshotSample:
    def test_fraction_one_is_identity(self):
        xs = [make_example(i) for i in range(7)]
        assert fewshot_sample(xs, 1.0, seed=1) == xs

    def test_count(self):
        xs = [make_example(i) for i in range(50)]
        assert len(fewshot_sample(xs, 20, seed=3)) == 20

    def test_floor_with_minimum_one(self):
        xs = [make_example(i) for i in range(10)]
        assert len(fewshot_sample(xs, 0.25, seed=0)) == 2
        assert len(fewshot_sample(xs, 0.01, seed=0)) == 1

    def test_deterministic_and_seed_sensitive(self):
        xs = [make_example(i) for i in range(100)]
        a = fewshot_sample(xs, 0.3, seed=5)
        b = fewshot_sample(xs, 0.3, seed=5)
        c = fewshot_sample(xs, 0.3, seed=6)
        assert a == b
        assert a != c

    def test_subsequence_order_preserved(self):
        xs = [make_example(i) for i in range(40)]
        sub = fewshot_sample(xs, 0.4, seed=2)
        positions = [xs.index(ex) for ex in sub]
        assert positions == sorted(positions)

    def test_nested_under_decreasing_budgets(self):
        xs = [make_example(i) for i in range(60)]
        small = {ex.id for ex in fewshot_sample(xs, 0.2, seed=9)}
        large = {ex.id for ex in fewshot_sample(xs, 0.6, seed=9)}
        assert small <= large

    def test_count_too_large(self):
        xs = [make_example(i) for i in range(3)]
        with pytest.raises(CorpusError):
            fewshot_sample(xs, 4, seed=0)

    def test_bad_fraction(self):
        xs = [make_example(i) for i in range(3)]
        with pytest.raises(CorpusError):
            fewshot_sample(xs, 1.5, seed=0)


class TestSynthDataset:
    def test_empty(self):
        assert synth_dataset(seed=0, n_examples=0) == []

    def test_keyword_rule_holds_everywhere(self):
        from sentmark.corpus import SYNTH_KEYWORDS

        keywords = set(SYNTH_KEYWORDS)
        for ex in synth_dataset(seed=11, n_examples=200):
            bearing = {
                i for i, s in enumerate(ex.sentences)
                if keywords & set(s.split())
            }
            assert ex.rationale_indices == bearing
            assert ex.label == ("True" if bearing else "False")

    def test_deterministic(self):
        a = synth_dataset(seed=7, n_examples=50)
        b = synth_dataset(seed=7, n_examples=50)
        assert a == b

    def test_sentence_range_respected(self):
        for ex in synth_dataset(seed=3, n_examples=50, n_sentences_range=(2, 5)):
            assert 2 <= len(ex.sentences) <= 5

    def test_overlapping_vocabs_rejected(self):
        with pytest.raises(CorpusError, match="disjoint"):
            synth_dataset(seed=0, n_examples=1, keyword_vocab=("a",),
                          filler_vocab=("a", "b"))
