"""Corpora, tagging schemes, spans, and type-name maps.

Everything here is a pure function over immutable values. Sentences carry
per-token tags in a declared scheme (IO, BIO, or BIOES); spans are inclusive
[start, end] token ranges with an optional entity type (None for boundary-only
candidate spans).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from importlib import resources

from .errors import (
    EmptyCorpus,
    InvalidTag,
    MalformedLine,
    OverlappingSpans,
    SpanOutOfRange,
    UnknownLabel,
    UnrepresentableSpans,
)

logger = logging.getLogger(__name__)


class TaggingScheme(Enum):
    IO = "IO"
    BIO = "BIO"
    BIOES = "BIOES"

    @property
    def prefixes(self) -> frozenset[str]:
        return _PREFIXES[self]

    def boundary_tags(self) -> list[str]:
        """Canonical typeless tag inventory, O first (the tag set a span head predicts over)."""
        return ["O"] + sorted(self.prefixes - {"O"})


_PREFIXES = {
    TaggingScheme.IO: frozenset({"O", "I"}),
    TaggingScheme.BIO: frozenset({"O", "B", "I"}),
    TaggingScheme.BIOES: frozenset({"O", "B", "I", "E", "S"}),
}


def parse_tag(tag: str, scheme: TaggingScheme) -> tuple[str, str | None]:
    """Split a tag into (prefix, entity_type). Raises ValueError for tags the scheme cannot hold."""
    if tag == "O":
        return "O", None
    prefix, sep, entity_type = tag.partition("-")
    if prefix not in scheme.prefixes or prefix == "O":
        raise ValueError(f"prefix {prefix!r} not allowed under {scheme.value}")
    if sep and not entity_type:
        raise ValueError("empty entity type after '-'")
    return prefix, (entity_type if sep else None)


def format_tag(prefix: str, entity_type: str | None) -> str:
    return prefix if entity_type is None else f"{prefix}-{entity_type}"


@dataclass(frozen=True)
class SpanAnnotation:
    start: int
    end: int
    entity_type: str | None = None

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"bad span bounds ({self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class LabeledSentence:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    scheme: TaggingScheme

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.tokens) == 0:
            raise ValueError("sentence must have at least one token")
        if len(self.tags) != len(self.tokens):
            raise ValueError(f"{len(self.tags)} tags for {len(self.tokens)} tokens")
        if any(not tok for tok in self.tokens):
            raise ValueError("tokens must be non-empty strings")
        for tag in self.tags:
            parse_tag(tag, self.scheme)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class LabelSet:
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels")
        if "O" in self.labels:
            raise ValueError("the non-entity label O cannot be part of a label set")

    @classmethod
    def from_sentences(cls, sentences) -> "LabelSet":
        seen: dict[str, None] = {}
        for sent in sentences:
            for tag in sent.tags:
                _, entity_type = parse_tag(tag, sent.scheme)
                if entity_type is not None:
                    seen.setdefault(entity_type)
        return cls(tuple(sorted(seen)))

    def __contains__(self, label: str) -> bool:
        return label in self.labels

    def __iter__(self):
        return iter(self.labels)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class TypeNameMap:
    entries: dict[str, str]

    def __post_init__(self):
        for label, name in self.entries.items():
            if not name or not name.strip():
                raise ValueError(f"empty type name for label {label!r}")

    def name_for(self, label: str) -> str:
        try:
            return self.entries[label]
        except KeyError:
            raise UnknownLabel(label) from None

    def covers(self, labels) -> bool:
        return all(label in self.entries for label in labels)

    @classmethod
    def from_json(cls, path) -> "TypeNameMap":
        with open(path, encoding="utf-8") as fh:
            entries = json.load(fh)
        if not isinstance(entries, dict):
            raise ValueError("type-name map file must hold a JSON object {label: name}")
        return cls({str(k): str(v) for k, v in entries.items()})


#: datasets with a packaged default type-name map
BUILTIN_NAME_MAPS = ("fewnerd", "i2b2", "conll", "gum", "wnut", "ontonotes")


def builtin_name_map(dataset: str) -> TypeNameMap:
    key = dataset.lower()
    if key not in BUILTIN_NAME_MAPS:
        raise ValueError(f"no builtin name map {dataset!r}; have {', '.join(BUILTIN_NAME_MAPS)}")
    text = resources.files("tadner.data").joinpath(f"{key}.json").read_text(encoding="utf-8")
    return TypeNameMap(json.loads(text))


def map_type_name(name_map: TypeNameMap, label: str) -> str:
    return name_map.name_for(label)


# ---------------------------------------------------------------------------
# tags <-> spans


def _decode_spans(tags: tuple[str, ...] | list[str], scheme: TaggingScheme) -> list[SpanAnnotation]:
    """Lenient decode: never raises on syntax-valid tags; orphan continuations open spans."""
    spans: list[SpanAnnotation] = []
    run_start: int | None = None
    run_type: str | None = None

    def close(end: int):
        nonlocal run_start, run_type
        if run_start is not None:
            spans.append(SpanAnnotation(run_start, end, run_type))
            run_start = None
            run_type = None

    for i, tag in enumerate(tags):
        prefix, entity_type = parse_tag(tag, scheme)
        if prefix == "O":
            close(i - 1)
        elif prefix == "S":
            close(i - 1)
            spans.append(SpanAnnotation(i, i, entity_type))
        elif prefix == "B":
            close(i - 1)
            run_start, run_type = i, entity_type
        elif prefix == "I":
            if run_start is not None and run_type == entity_type:
                continue
            close(i - 1)
            run_start, run_type = i, entity_type
        elif prefix == "E":
            if run_start is not None and run_type == entity_type:
                close(i)
            else:
                close(i - 1)
                spans.append(SpanAnnotation(i, i, entity_type))
    close(len(tags) - 1)
    return spans


def spans_from_tags(sentence: LabeledSentence) -> list[SpanAnnotation]:
    """Maximal spans, sorted by start, pairwise non-overlapping."""
    return _decode_spans(sentence.tags, sentence.scheme)


def tags_from_spans(spans, length: int, scheme: TaggingScheme) -> list[str]:
    ordered = sorted(spans, key=lambda s: s.start)
    prev: SpanAnnotation | None = None
    for span in ordered:
        if span.start < 0 or span.end >= length:
            raise SpanOutOfRange(f"span ({span.start}, {span.end}) outside [0, {length})")
        if prev is not None and span.start <= prev.end:
            raise OverlappingSpans(f"({prev.start}, {prev.end}) overlaps ({span.start}, {span.end})")
        if (
            scheme is TaggingScheme.IO
            and prev is not None
            and span.start == prev.end + 1
            and span.entity_type == prev.entity_type
        ):
            raise UnrepresentableSpans(
                f"adjacent same-type spans ({prev.start},{prev.end}) and ({span.start},{span.end}) "
                "merge under IO"
            )
        prev = span

    tags = ["O"] * length
    for span in ordered:
        if scheme is TaggingScheme.IO:
            for i in range(span.start, span.end + 1):
                tags[i] = format_tag("I", span.entity_type)
        elif scheme is TaggingScheme.BIO:
            tags[span.start] = format_tag("B", span.entity_type)
            for i in range(span.start + 1, span.end + 1):
                tags[i] = format_tag("I", span.entity_type)
        else:
            if span.length == 1:
                tags[span.start] = format_tag("S", span.entity_type)
            else:
                tags[span.start] = format_tag("B", span.entity_type)
                for i in range(span.start + 1, span.end):
                    tags[i] = format_tag("I", span.entity_type)
                tags[span.end] = format_tag("E", span.entity_type)
    return tags


def convert_tags(sentence: LabeledSentence, target: TaggingScheme) -> LabeledSentence:
    spans = spans_from_tags(sentence)
    tags = tags_from_spans(spans, len(sentence), target)
    return LabeledSentence(sentence.tokens, tuple(tags), target)


def repair_tags(tags, scheme: TaggingScheme) -> tuple[list[str], int]:
    """Canonicalise a tag sequence via lenient decode + re-encode.

    Returns the repaired tags and the number of positions that changed
    (e.g. an orphan I-X after O becomes B-X under BIO).
    """
    spans = _decode_spans(tags, scheme)
    fixed = tags_from_spans(spans, len(tags), scheme)
    changed = sum(1 for a, b in zip(tags, fixed) if a != b)
    return fixed, changed


def transition_violations(tags, scheme: TaggingScheme) -> list[tuple[int, str, str]]:
    """Positions where the tag sequence breaks the scheme's strict transition rules."""
    violations: list[tuple[int, str, str]] = []
    if scheme is TaggingScheme.IO:
        return violations

    if scheme is TaggingScheme.BIO:
        prev_prefix, prev_type = "O", None
        for i, tag in enumerate(tags):
            prefix, entity_type = parse_tag(tag, scheme)
            if prefix == "I" and not (prev_prefix in ("B", "I") and prev_type == entity_type):
                violations.append((i, tag, "I continues nothing"))
            prev_prefix, prev_type = prefix, entity_type
        return violations

    inside: str | None = None  # open run's type, or None
    last = len(tags) - 1
    for i, tag in enumerate(tags):
        prefix, entity_type = parse_tag(tag, scheme)
        if inside is None:
            if prefix == "B":
                inside = entity_type
            elif prefix in ("I", "E"):
                violations.append((i, tag, f"{prefix} outside any span"))
                inside = entity_type if prefix == "I" else None
        else:
            if prefix == "I" and entity_type == inside:
                pass
            elif prefix == "E" and entity_type == inside:
                inside = None
            else:
                violations.append((i, tag, "open span not closed with E"))
                inside = entity_type if prefix in ("B", "I") else None
    if inside is not None:
        violations.append((last, tags[last], "span still open at sentence end"))
    return violations


# ---------------------------------------------------------------------------
# CoNLL column format


def parse_conll(text: str, scheme: TaggingScheme, strict: bool = False) -> list[LabeledSentence]:
    """Parse token-per-line text: first column token, last column tag, blank line between sentences.

    With strict=False (default), tag sequences that break the scheme's transition
    rules are repaired (lenient decode + re-encode) and a summary warning is
    logged; strict=True raises InvalidTag at the offending line instead.
    """
    sentences: list[LabeledSentence] = []
    tokens: list[str] = []
    tags: list[str] = []
    token_lines: list[int] = []
    repairs = 0

    def flush():
        nonlocal repairs, tokens, tags, token_lines
        if not tokens:
            return
        violations = transition_violations(tags, scheme)
        if violations and strict:
            idx, tag, why = violations[0]
            raise InvalidTag(token_lines[idx], tag, why)
        if violations:
            fixed, changed = repair_tags(tags, scheme)
            repairs += changed
            tags = fixed
        sentences.append(LabeledSentence(tuple(tokens), tuple(tags), scheme))
        tokens, tags, token_lines = [], [], []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            flush()
            continue
        if line.startswith("-DOCSTART-"):
            continue
        cols = line.split()
        if len(cols) < 2:
            raise MalformedLine(line_no, f"expected at least 2 columns, got {len(cols)}")
        token, tag = cols[0], cols[-1]
        try:
            parse_tag(tag, scheme)
        except ValueError as exc:
            raise InvalidTag(line_no, tag, str(exc)) from None
        tokens.append(token)
        tags.append(tag)
        token_lines.append(line_no)
    flush()

    if not sentences:
        raise EmptyCorpus("no sentences found")
    if repairs:
        logger.warning("repaired %d invalid tag continuation(s)", repairs)
    return sentences


def serialize_conll(sentences) -> str:
    blocks = []
    for sent in sentences:
        blocks.append("\n".join(f"{tok} {tag}" for tok, tag in zip(sent.tokens, sent.tags)))
    return "\n\n".join(blocks) + "\n"
