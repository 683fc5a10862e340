"""Classification and refinement: pattern removal, gold scrubbing, idempotence."""

import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reasforge.answers import normalize_text
from reasforge.records import (
    Classification,
    ExtractionMethod,
    RawSample,
    ReasoningTrace,
    decode_sample,
    decode_trace,
)
from reasforge.refinery import (
    DEFAULT_CONCLUSION_PATTERNS,
    DEFAULT_PATTERN_SET,
    ConclusionPatternSet,
    IdMismatchError,
    classify,
    refine,
    refine_corpus,
    remove_conclusions,
    scrub_ground_truth,
    split_sentences,
)

DATA = Path(__file__).parent / "data"


def load_cabinet():
    blob = json.loads((DATA / "cabinet_trace.json").read_text(encoding="utf-8"))
    return decode_sample(blob["sample"]), decode_trace(blob["trace"])


def make_trace(sample_id, text, classification):
    predicted = None if classification is Classification.UNCLASSIFIABLE else 0
    method = (
        ExtractionMethod.UNPARSEABLE
        if predicted is None
        else ExtractionMethod.MARKER_PATTERN
    )
    return ReasoningTrace(sample_id, text, predicted, method, classification, "test")


# --- classify ---------------------------------------------------------------


def test_classify_incorrect():
    sample, trace = load_cabinet()
    assert trace.predicted_index == 2 and sample.gold_index == 0
    assert classify(trace, sample) is Classification.INCORRECT


def test_classify_correct_and_unclassifiable():
    sample = RawSample("s", "v", "q", ("a", "b"), 1)
    t = ReasoningTrace("s", "x", 1, ExtractionMethod.MARKER_PATTERN, Classification.CORRECT, "g")
    assert classify(t, sample) is Classification.CORRECT
    t = ReasoningTrace("s", "x", None, ExtractionMethod.UNPARSEABLE, Classification.UNCLASSIFIABLE, "g")
    assert classify(t, sample) is Classification.UNCLASSIFIABLE


def test_classify_id_mismatch():
    sample = RawSample("s1", "v", "q", ("a", "b"), 1)
    t = ReasoningTrace("s2", "x", 1, ExtractionMethod.MARKER_PATTERN, Classification.CORRECT, "g")
    with pytest.raises(IdMismatchError):
        classify(t, sample)


# --- split_sentences --------------------------------------------------------


def test_split_terminators():
    assert split_sentences("A. B? C!") == ["A.", "B?", "C!"]


def test_split_header_line_is_isolated():
    assert split_sentences("###Answer: C\nBecause...") == ["###Answer: C", "Because..."]
    assert split_sentences("**Answer**: B. More text") == ["**Answer**: B. More text"]


def test_split_ellipsis_and_no_space():
    assert split_sentences("Wait... what?! Version 2.0 shipped.") == [
        "Wait...",
        "what?!",
        "Version 2.0 shipped.",
    ]


def test_split_blank_lines_dropped():
    assert split_sentences("a\n\n   \nb") == ["a", "b"]


@given(st.text(max_size=200))
@settings(max_examples=300, deadline=None)
def test_split_preserves_nonwhitespace_stream(text):
    joined = "".join(split_sentences(text))
    assert [c for c in joined if not c.isspace()] == [c for c in text if not c.isspace()]


# --- remove_conclusions -----------------------------------------------------


def test_default_pattern_list_pinned():
    assert DEFAULT_CONCLUSION_PATTERNS == (
        "###Answer:",
        "**Answer**:",
        "###Conclusion:",
        "**Conclusion**:",
        "###Detailed Explanation",
        "The correct answer",
        "Thus, the correct answer is",
        "Therefore, the correct answer is",
        "Based on these observations",
        "Given these observations and the context",
    )
    assert len(DEFAULT_PATTERN_SET.patterns) == 10


def test_remove_reports_pattern_ids():
    kept, removed = remove_conclusions(
        [
            "Therefore, the correct answer is C.",
            "The individual is standing in front of a wooden cabinet",
            "Thus, the correct answer is B.",
            "The correct answer must be A.",
        ]
    )
    assert kept == ["The individual is standing in front of a wooden cabinet"]
    assert removed == [
        ("Therefore, the correct answer is C.", 8),
        ("Thus, the correct answer is B.", 7),
        ("The correct answer must be A.", 6),
    ]


def test_remove_noop():
    sentences = ["Nothing here.", "Still nothing."]
    kept, removed = remove_conclusions(sentences)
    assert kept == sentences and removed == []


def test_remove_matches_after_markdown_and_case():
    kept, removed = remove_conclusions(
        ["###ANSWER: b", "**answer**: c", "  **Conclusion**: done", "given these observations and the context, A."]
    )
    assert kept == []
    # patterns that normalize identically resolve to the earliest id
    assert [pid for _, pid in removed] == [1, 1, 3, 10]


def test_comma_exception_hits_midsentence():
    kept, removed = remove_conclusions(
        ["So, the correct answer is D.", "We know that the correct answer matters."]
    )
    assert removed == [("So, the correct answer is D.", 6)]
    # no comma before the phrase: prefix rule does not apply, sentence survives
    assert kept == ["We know that the correct answer matters."]


def test_custom_pattern_set(tmp_path):
    p = tmp_path / "patterns.txt"
    p.write_text("// just one\nIn summary\n", encoding="utf-8")
    pset = ConclusionPatternSet.from_file(p)
    assert pset.patterns == ("In summary",)
    assert pset.comma_exception_id is None
    kept, removed = remove_conclusions(["In summary, B.", "###Answer: B"], pset)
    assert kept == ["###Answer: B"]
    assert removed == [("In summary, B.", 1)]


# --- scrub_ground_truth -----------------------------------------------------


def test_scrub_article_sequence():
    sentences, scrubbed = scrub_ground_truth(["He folded the blanket neatly"], "The blanket")
    assert sentences == ["He folded neatly"]
    assert scrubbed == ["the", "blanket"]


def test_scrub_noop():
    sentences, scrubbed = scrub_ground_truth(["Nothing relevant here"], "The blanket")
    assert sentences == ["Nothing relevant here"]
    assert scrubbed == []


def test_scrub_contained_single_word():
    sentences, scrubbed = scrub_ground_truth(["He lifted the teacup"], "cup")
    assert sentences == ["He lifted the"]
    assert scrubbed == ["teacup"]


def test_scrub_bare_core_word_and_punctuation():
    sentences, scrubbed = scrub_ground_truth(
        ["A blanket, folded twice."], "The blanket"
    )
    assert sentences == ["A folded twice."]
    assert scrubbed == ["blanket,"]


def test_scrub_respan_after_removal():
    # removing the inner span makes the outer tokens adjacent; rescan catches it
    sentences, scrubbed = scrub_ground_truth(["x red red shirt shirt y"], "red shirt")
    assert sentences == ["x y"]
    assert scrubbed == ["red", "shirt", "red", "shirt"]


def test_scrub_multiword_core_not_contains():
    # multi-word answers scrub as spans only, not by substring
    sentences, scrubbed = scrub_ground_truth(["The redshirt crew stood by"], "red shirt")
    assert sentences == ["The redshirt crew stood by"]
    assert scrubbed == []


def test_scrub_drops_emptied_sentence():
    sentences, scrubbed = scrub_ground_truth(["blanket", "keep me"], "blanket")
    assert sentences == ["keep me"]
    assert scrubbed == ["blanket"]


# --- refine -----------------------------------------------------------------


def test_worked_example_refinement():
    sample, trace = load_cabinet()
    result = refine(trace, sample)
    assert "The individual is standing in front of a wooden cabinet" in result.refined_text
    assert (
        "The other objects mentioned in the hints, such as the table and clothes,"
        " are not visible or being interacted with." in result.refined_text
    )
    low = result.refined_text.casefold()
    assert "###answer" not in low and "answer" not in low
    assert "blanket" not in low
    assert ("###Answer: C", 1) in result.removed_sentences
    assert any(pid == 9 for _, pid in result.removed_sentences)
    assert list(result.scrubbed_tokens) == ["The", "blanket"]


def test_refine_full_removal_yields_empty():
    sample = RawSample("s", "v", "q", ("a", "b"), 0)
    trace = make_trace("s", "###Answer: B", Classification.INCORRECT)
    assert refine(trace, sample).refined_text == ""


def test_refine_correct_trace_keeps_gold_words():
    sample = RawSample("s", "v", "q", ("the blanket", "the towel"), 0)
    trace = make_trace("s", "He grabs the blanket. ###Answer: A", Classification.CORRECT)
    result = refine(trace, sample)
    assert result.refined_text == "He grabs the blanket."
    assert result.scrubbed_tokens == ()


def test_refine_unclassifiable_removes_conclusions_only():
    sample = RawSample("s", "v", "q", ("the blanket", "the towel"), 0)
    trace = make_trace("s", "He grabs the blanket.\n###Answer:", Classification.UNCLASSIFIABLE)
    result = refine(trace, sample)
    assert result.refined_text == "He grabs the blanket."
    assert result.scrubbed_tokens == ()


def test_refine_catches_pattern_straddling_lines():
    # the conclusion only becomes sentence-initial after the first join
    sample = RawSample("s", "v", "q", ("left", "right"), 0)
    trace = make_trace("s", "Prelude. Therefore, the correct\nanswer is C.", Classification.CORRECT)
    result = refine(trace, sample)
    assert result.refined_text == "Prelude."
    assert ("Therefore, the correct answer is C.", 8) in result.removed_sentences


def test_refine_scrubs_gold_straddling_sentences():
    sample = RawSample("s", "v", "q", ("red shirt", "blue hat"), 0)
    trace = make_trace("s", "He wore red\nshirt all day", Classification.INCORRECT)
    result = refine(trace, sample)
    assert "red shirt" not in normalize_text(result.refined_text)
    assert result.scrubbed_tokens == ("red", "shirt")


def test_refine_id_mismatch():
    sample = RawSample("s1", "v", "q", ("a", "b"), 0)
    trace = make_trace("s2", "text", Classification.CORRECT)
    with pytest.raises(IdMismatchError):
        refine(trace, sample)


options_strategy = st.lists(
    st.text(st.characters(categories=("Ll",)), min_size=1, max_size=8),
    min_size=2,
    max_size=4,
).map(tuple)


@given(
    text=st.text(max_size=300),
    options=options_strategy,
    gold=st.integers(0, 3),
    cls=st.sampled_from(list(Classification)),
)
@settings(max_examples=300, deadline=None)
def test_refine_is_idempotent(text, options, gold, cls):
    sample = RawSample("s", "v", "q", options, gold % len(options))
    first = refine(make_trace("s", text, cls), sample)
    second = refine(make_trace("s", first.refined_text, cls), sample)
    assert second.refined_text == first.refined_text
    assert second.removed_sentences == ()
    assert second.scrubbed_tokens == ()


def test_refine_corpus_counts_and_flag():
    samples = {
        "a": RawSample("a", "v", "q", ("x", "y"), 0),
        "b": RawSample("b", "v", "q", ("x", "y"), 1),
    }
    traces = [
        make_trace("a", "Fine. ###Answer: A", Classification.CORRECT),
        make_trace("b", "Hmm. ###Answer: A", Classification.INCORRECT),
        make_trace("a", "no idea", Classification.UNCLASSIFIABLE),
    ]
    refined, counts = refine_corpus(traces, samples)
    assert len(refined) == 3
    assert counts == {1: 2}
    refined, _ = refine_corpus(traces, samples, include_unclassifiable=False)
    assert len(refined) == 2


def test_refine_corpus_missing_sample():
    traces = [make_trace("ghost", "text", Classification.CORRECT)]
    with pytest.raises(IdMismatchError):
        refine_corpus(traces, {})
