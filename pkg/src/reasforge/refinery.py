"""Trace classification and the two-step refinement pass.

Refinement removes whole conclusion sentences (lexical prefix match against a
fixed pattern list) and then, for Incorrect traces only, scrubs tokens that
carry the ground-truth answer. Sentences may come out incomplete; that is
accepted, the point is that no refined trace leaks its verdict or the gold
text. Everything here is purely lexical, no paraphrase detection.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

from .answers import normalize_text
from .records import (
    Classification,
    RawSample,
    ReasoningTrace,
    RefinedTrace,
)


class IdMismatchError(Exception):
    """Trace and sample keys disagree; the caller paired the wrong records."""

    def __init__(self, trace_id: str, sample_id: str):
        super().__init__(f"trace {trace_id!r} paired with sample {sample_id!r}")
        self.trace_id = trace_id
        self.sample_id = sample_id


# Sentence-prefix patterns that mark a conclusion. Order matters: the 1-based
# position is the pattern_id recorded in RefinedTrace.removed_sentences, and
# the first match wins when normalization makes two patterns collide.
DEFAULT_CONCLUSION_PATTERNS: tuple[str, ...] = (
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

# "The correct answer" additionally fires mid-sentence when preceded by a
# comma ("So, the correct answer is D"), catching connective variants the
# prefix list does not enumerate.
_COMMA_HOST = "the correct answer"


@dataclass(frozen=True)
class ConclusionPatternSet:
    """Ordered literal patterns; ids are 1-based list positions."""

    patterns: tuple[str, ...] = DEFAULT_CONCLUSION_PATTERNS

    @cached_property
    def normalized(self) -> tuple[str, ...]:
        return tuple(normalize_text(p) for p in self.patterns)

    @cached_property
    def comma_exception_id(self) -> int | None:
        try:
            return self.normalized.index(_COMMA_HOST) + 1
        except ValueError:
            return None

    @classmethod
    def from_file(cls, path) -> "ConclusionPatternSet":
        """One literal pattern per line; blank lines and ``//`` comments skipped."""
        patterns: list[str] = []
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                line = raw.strip()
                if line and not line.startswith("//"):
                    patterns.append(line)
        return cls(patterns=tuple(patterns))


DEFAULT_PATTERN_SET = ConclusionPatternSet()


def classify_prediction(predicted_index: int | None, gold_index: int) -> Classification:
    if predicted_index is None:
        return Classification.UNCLASSIFIABLE
    if predicted_index == gold_index:
        return Classification.CORRECT
    return Classification.INCORRECT


def classify(trace: ReasoningTrace, sample: RawSample) -> Classification:
    """Correct/Incorrect by index equality; Unclassifiable when no prediction."""
    if trace.sample_id != sample.sample_id:
        raise IdMismatchError(trace.sample_id, sample.sample_id)
    return classify_prediction(trace.predicted_index, sample.gold_index)


def split_sentences(text: str) -> list[str]:
    """Sentences split on newline boundaries and on ``.!?`` + whitespace.

    Lines opening with ``###`` or ``**`` stay whole so marker lines like
    "###Answer: C. Because..." are treated as one removable unit. Dropping
    whitespace is the only loss: the concatenated output preserves the
    input's non-whitespace character stream exactly.
    """
    sentences: list[str] = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith(("###", "**")):
            sentences.append(stripped)
            continue
        start = 0
        for i, ch in enumerate(line):
            if ch in ".!?" and (i + 1 == len(line) or line[i + 1].isspace()):
                seg = line[start : i + 1].strip()
                if seg:
                    sentences.append(seg)
                start = i + 1
        tail = line[start:].strip()
        if tail:
            sentences.append(tail)
    return sentences


def remove_conclusions(
    sentences: list[str], patterns: ConclusionPatternSet = DEFAULT_PATTERN_SET
) -> tuple[list[str], list[tuple[str, int]]]:
    """Drop sentences whose normalized form starts with any pattern.

    Returns (kept, removed) with original text and order preserved; removed
    entries carry the 1-based id of the first matching pattern.
    """
    kept: list[str] = []
    removed: list[tuple[str, int]] = []
    for sentence in sentences:
        norm = normalize_text(sentence)
        pattern_id = None
        for i, pat in enumerate(patterns.normalized, start=1):
            if pat and norm.startswith(pat):
                pattern_id = i
                break
        if pattern_id is None and patterns.comma_exception_id is not None:
            if f", {_COMMA_HOST}" in norm:
                pattern_id = patterns.comma_exception_id
        if pattern_id is None:
            kept.append(sentence)
        else:
            removed.append((sentence, pattern_id))
    return kept, removed


def _norm_word(token: str) -> str:
    return "".join(ch for ch in token.casefold() if ch.isalnum())


def gold_word_sequences(gold_text: str) -> list[list[str]]:
    """Target word sequences for scrubbing, longest first.

    The full normalized sequence and the variant with leading articles
    (the/a/an) dropped; "The blanket" must scrub both "the blanket" and a
    bare "blanket".
    """
    words = [w for w in (_norm_word(t) for t in gold_text.split()) if w]
    if not words:
        return []
    core = list(words)
    while len(core) > 1 and core[0] in ("the", "a", "an"):
        core = core[1:]
    seqs = [words]
    if core != words:
        seqs.append(core)
    return seqs


def scrub_ground_truth(
    sentences: list[str], gold_text: str
) -> tuple[list[str], list[str]]:
    """Remove token spans matching the gold answer from each sentence.

    Two removal rules per sentence, repeated until nothing changes:
    (a) any contiguous token span whose normalized words equal a gold word
    sequence; (b) when the gold core is a single word, any token whose
    normalized form contains it ("teacup" goes for gold "cup"). Scrubbed
    tokens are reported in removal order with their original surface text.
    Sentences scrubbed down to nothing are dropped.
    """
    seqs = gold_word_sequences(gold_text)
    if not seqs:
        return list(sentences), []
    single = seqs[-1][0] if len(seqs[-1]) == 1 else None
    out_sentences: list[str] = []
    scrubbed: list[str] = []
    for sentence in sentences:
        tokens = sentence.split()
        changed = True
        while changed:
            changed = False
            norms = [_norm_word(t) for t in tokens]
            i = 0
            result: list[str] = []
            while i < len(tokens):
                span = None
                for seq in seqs:
                    if norms[i : i + len(seq)] == seq:
                        span = len(seq)
                        break
                if span is None and single is not None and single in norms[i]:
                    span = 1
                if span is not None:
                    scrubbed.extend(tokens[i : i + span])
                    i += span
                    changed = True
                else:
                    result.append(tokens[i])
                    i += 1
            tokens = result
        if tokens:
            out_sentences.append(" ".join(tokens))
    return out_sentences, scrubbed


def refine(
    trace: ReasoningTrace,
    sample: RawSample,
    patterns: ConclusionPatternSet = DEFAULT_PATTERN_SET,
) -> RefinedTrace:
    """Full refinement: conclusion removal, then gold scrubbing if Incorrect.

    Runs split/remove/scrub to a fixed point. One pass is not enough: joining
    kept sentences can expose a new sentence-initial pattern, and scrubbing
    runs over the joined token stream so gold sequences straddling a sentence
    boundary cannot survive. The result no longer changes under refine, which
    is what downstream stages assume.
    """
    if trace.sample_id != sample.sample_id:
        raise IdMismatchError(trace.sample_id, sample.sample_id)
    text = trace.raw_text
    removed_all: list[tuple[str, int]] = []
    scrubbed_all: list[str] = []
    while True:
        kept, removed = remove_conclusions(split_sentences(text), patterns)
        removed_all.extend(removed)
        joined = " ".join(kept).strip()
        if joined and trace.classification is Classification.INCORRECT:
            scrubbed_sents, scrubbed = scrub_ground_truth([joined], sample.gold_text)
            scrubbed_all.extend(scrubbed)
            joined = " ".join(scrubbed_sents).strip()
        if joined == text:
            break
        text = joined
    return RefinedTrace(
        sample_id=trace.sample_id,
        refined_text=text,
        removed_sentences=tuple(removed_all),
        scrubbed_tokens=tuple(scrubbed_all),
    )


def refine_corpus(
    traces: Iterable[ReasoningTrace],
    samples_by_id: Mapping[str, RawSample],
    patterns: ConclusionPatternSet = DEFAULT_PATTERN_SET,
    include_unclassifiable: bool = True,
) -> tuple[list[RefinedTrace], Counter]:
    """Refine every trace; returns traces plus removal counts per pattern_id.

    Per-trace work is independent and order-free; output order follows input.
    """
    refined: list[RefinedTrace] = []
    counts: Counter = Counter()
    for trace in traces:
        if (
            trace.classification is Classification.UNCLASSIFIABLE
            and not include_unclassifiable
        ):
            continue
        sample = samples_by_id.get(trace.sample_id)
        if sample is None:
            raise IdMismatchError(trace.sample_id, "<missing>")
        result = refine(trace, sample, patterns)
        for _, pattern_id in result.removed_sentences:
            counts[pattern_id] += 1
        refined.append(result)
    return refined, counts
