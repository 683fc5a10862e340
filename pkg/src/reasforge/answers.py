"""Extract the predicted answer from free-form generator output.

Three rule tiers, tried in priority order:

1. marker rules, e.g. ``###Answer:``, where the first occurrence followed
   within 8 characters by a standalone letter A-H wins;
2. prose rules, e.g. ``the correct answer is``, where the latest occurrence
   followed by a standalone letter, or by exactly one option's text, wins;
3. option-text match over the whole text, firing only when exactly one
   option's normalized text occurs anywhere.

Matching is lexical only: text is casefolded and markdown symbols
(``*``, ``#``, backticks) are stripped before comparison, so ``###Answer:``,
``**Answer**:`` and ``Answer:`` are the same marker. A letter that maps past
the end of the option list is a parse failure, never wrapped or ignored;
silently remapping it would fabricate labels downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

from .records import ExtractionMethod, ValidationError

# how far past a rule's pattern the answer letter may sit
LETTER_WINDOW = 8

_MARKDOWN = str.maketrans("", "", "*#`")


class OutOfRangeError(ValueError):
    """A letter outside A-H was given where an option letter is required."""


def normalize_text(text: str) -> str:
    """Casefold, drop markdown symbols, collapse whitespace runs."""
    return " ".join(text.translate(_MARKDOWN).casefold().split())


def letter_to_index(letter: str) -> int:
    if len(letter) == 1:
        ch = letter.casefold()
        if "a" <= ch <= "h":
            return ord(ch) - ord("a")
    raise OutOfRangeError(f"expected a single letter A-H, got {letter!r}")


@dataclass(frozen=True)
class ExtractionRule:
    rule_id: str
    kind: ExtractionMethod  # MarkerPattern or ProsePattern
    pattern: str


DEFAULT_RULES: tuple[ExtractionRule, ...] = (
    ExtractionRule("marker-1", ExtractionMethod.MARKER_PATTERN, "###Answer:"),
    ExtractionRule("marker-2", ExtractionMethod.MARKER_PATTERN, "**Answer**:"),
    ExtractionRule("marker-3", ExtractionMethod.MARKER_PATTERN, "Answer:"),
    ExtractionRule("prose-1", ExtractionMethod.PROSE_PATTERN, "the correct answer is"),
    ExtractionRule("prose-2", ExtractionMethod.PROSE_PATTERN, "thus, the correct answer"),
    ExtractionRule("prose-3", ExtractionMethod.PROSE_PATTERN, "therefore, the correct answer"),
)


def load_rules(path) -> tuple[ExtractionRule, ...]:
    """Parse a rules file: one ``kind = pattern`` per line, ``//`` comments.

    ``kind`` is ``marker`` or ``prose``. The option-text fallback is always
    active and takes no pattern, so it never appears in a rules file.
    """
    rules: list[ExtractionRule] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("//"):
                continue
            if "=" not in line:
                raise ValidationError(f"line {lineno}", "expected 'kind = pattern'")
            kind_s, pattern = line.split("=", 1)
            kind_s = kind_s.strip().lower()
            pattern = pattern.strip()
            if not pattern:
                raise ValidationError(f"line {lineno}", "empty pattern")
            if kind_s == "marker":
                kind = ExtractionMethod.MARKER_PATTERN
            elif kind_s == "prose":
                kind = ExtractionMethod.PROSE_PATTERN
            else:
                raise ValidationError(f"line {lineno}", f"unknown rule kind {kind_s!r}")
            rules.append(ExtractionRule(f"{kind_s}-{len(rules) + 1}", kind, pattern))
    return tuple(rules)


def _occurrences(text: str, patterns: list[str]) -> list[tuple[int, str]]:
    """All (position, pattern) hits for any pattern, sorted by position."""
    hits: list[tuple[int, str]] = []
    for pat in patterns:
        start = 0
        while True:
            pos = text.find(pat, start)
            if pos < 0:
                break
            hits.append((pos, pat))
            start = pos + 1
    # at equal positions prefer the longer pattern so its window starts after it
    hits.sort(key=lambda h: (h[0], -len(h[1])))
    return hits


def _standalone_letter(text: str, start: int) -> int | None:
    """First standalone a-h letter within LETTER_WINDOW chars of ``start``.

    Standalone means not flanked by alphanumerics, so option labels like
    "(B)" or "C." parse but words like "each" do not.
    """
    for j in range(start, min(start + LETTER_WINDOW, len(text))):
        ch = text[j]
        if "a" <= ch <= "h":
            before = text[j - 1] if j > 0 else " "
            after = text[j + 1] if j + 1 < len(text) else " "
            if not before.isalnum() and not after.isalnum():
                return ord(ch) - ord("a")
    return None


def _dedup(patterns: list[str]) -> list[str]:
    seen: set[str] = set()
    out: list[str] = []
    for p in patterns:
        if p and p not in seen:
            seen.add(p)
            out.append(p)
    return out


def extract_predicted_answer(
    raw_text: str,
    options: tuple[str, ...] | list[str],
    rules: tuple[ExtractionRule, ...] = DEFAULT_RULES,
) -> tuple[int | None, ExtractionMethod]:
    """Predicted option index and the rule tier that produced it.

    Returns ``(None, ExtractionMethod.UNPARSEABLE)`` when no tier fires or
    when the matched letter maps past the end of ``options``.
    """
    if not options:
        raise ValidationError("options", "must be non-empty")
    k = len(options)
    text = normalize_text(raw_text)
    norm_options = [normalize_text(o) for o in options]

    markers = _dedup([normalize_text(r.pattern) for r in rules if r.kind is ExtractionMethod.MARKER_PATTERN])
    proses = _dedup([normalize_text(r.pattern) for r in rules if r.kind is ExtractionMethod.PROSE_PATTERN])

    for pos, pat in _occurrences(text, markers):
        letter = _standalone_letter(text, pos + len(pat))
        if letter is None:
            continue
        if letter >= k:
            return None, ExtractionMethod.UNPARSEABLE
        return letter, ExtractionMethod.MARKER_PATTERN

    for pos, pat in reversed(_occurrences(text, proses)):
        window = text[pos + len(pat):]
        letter = _standalone_letter(text, pos + len(pat))
        if letter is not None:
            if letter >= k:
                return None, ExtractionMethod.UNPARSEABLE
            return letter, ExtractionMethod.PROSE_PATTERN
        hits = [i for i, o in enumerate(norm_options) if o and o in window]
        if len(hits) == 1:
            return hits[0], ExtractionMethod.PROSE_PATTERN

    hits = [i for i, o in enumerate(norm_options) if o and o in text]
    if len(hits) == 1:
        return hits[0], ExtractionMethod.OPTION_TEXT_MATCH
    return None, ExtractionMethod.UNPARSEABLE
