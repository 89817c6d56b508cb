"""Hearst-pattern baseline extractor.

Templates are whitespace-separated elements: an X slot (the entity mention),
a Y slot (the captured concept), literal anchors with `|` alternations
("is|was"), and an optional trailing "..." that ignores the rest of the
sentence. Elements match contiguously; a literal alternative may span
several tokens after mode tokenization, which is how multi-character
Chinese anchors work.

The Y capture is a head token plus a bounded window of preceding modifier
tokens: the region between Y's neighboring anchors (or up to sentence
punctuation when Y ends the template, or back to it when Y starts one) is
stripped of trailing function words, its last token is the head, and up to
max_leading_modifiers preceding tokens are absorbed, stopping at the first
function word. No parser, no POS tags — bounded windows only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import IO, Sequence

from .corpus import CHARACTER, LANGUAGE_MODES, WORD, EntityRecord, detokenize, normalize_surface, tokenize
from .errors import ConfigError, DataError, FormatError

PATTERNS_SCHEMA_VERSION = 1

SENTENCE_PUNCTUATION = frozenset(".!?;:,。！？；：，、")

# element kinds
_X, _Y, _LITERAL, _REST = "x", "y", "literal", "rest"


@dataclass(frozen=True)
class HearstPattern:
    pattern_id: str
    template: str
    max_leading_modifiers: int = 3
    max_trailing_tokens: int = 2

    def __post_init__(self):
        if self.max_leading_modifiers < 0 or self.max_trailing_tokens < 0:
            raise ConfigError(f"pattern {self.pattern_id!r}: modifier bounds must be non-negative")


@dataclass(frozen=True)
class _Element:
    kind: str
    # for literals: tuple of alternatives, each a token tuple
    alternatives: tuple[tuple[str, ...], ...] = ()


@dataclass(frozen=True)
class CompiledPattern:
    pattern: HearstPattern
    elements: tuple[_Element, ...]
    y_position: int


@dataclass(frozen=True)
class PatternSet:
    language_mode: str
    function_words: frozenset[str]
    patterns: tuple[CompiledPattern, ...]


def _compile_one(pattern: HearstPattern, mode: str) -> CompiledPattern:
    raw = pattern.template.split()
    if not raw:
        raise ConfigError(f"pattern {pattern.pattern_id!r}: empty template")
    elements: list[_Element] = []
    for pos, chunk in enumerate(raw):
        if chunk == "X":
            elements.append(_Element(_X))
        elif chunk == "Y":
            elements.append(_Element(_Y))
        elif chunk == "...":
            if pos != len(raw) - 1:
                raise ConfigError(f"pattern {pattern.pattern_id!r}: '...' only allowed at the end")
            elements.append(_Element(_REST))
        else:
            alternatives = tuple(
                tuple(tokenize(alt, mode)) for alt in chunk.split("|") if alt
            )
            if not alternatives:
                raise ConfigError(f"pattern {pattern.pattern_id!r}: empty literal {chunk!r}")
            elements.append(_Element(_LITERAL, alternatives))

    x_count = sum(1 for e in elements if e.kind == _X)
    y_count = sum(1 for e in elements if e.kind == _Y)
    if x_count != 1 or y_count != 1:
        raise ConfigError(
            f"pattern {pattern.pattern_id!r}: need exactly one X and one Y slot, got {x_count} and {y_count}"
        )
    if not any(e.kind == _LITERAL for e in elements):
        raise ConfigError(f"pattern {pattern.pattern_id!r}: needs at least one literal anchor")
    y_position = next(k for k, e in enumerate(elements) if e.kind == _Y)
    return CompiledPattern(pattern=pattern, elements=tuple(elements), y_position=y_position)


def compile_patterns(
    patterns: Sequence[HearstPattern],
    language_mode: str,
    function_words: Sequence[str] = (),
) -> PatternSet:
    if language_mode not in LANGUAGE_MODES:
        raise ConfigError(f"unknown language mode {language_mode!r}")
    fold = (lambda w: w.lower()) if language_mode == WORD else (lambda w: w)
    return PatternSet(
        language_mode=language_mode,
        function_words=frozenset(fold(w) for w in function_words),
        patterns=tuple(_compile_one(p, language_mode) for p in patterns),
    )


def load_patterns(source: IO[str]) -> PatternSet:
    try:
        payload = json.load(source)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid pattern JSON: {exc.msg}") from exc
    if payload.get("schema_version") != PATTERNS_SCHEMA_VERSION:
        raise FormatError(f"unsupported pattern schema_version {payload.get('schema_version')!r}")
    patterns = [
        HearstPattern(
            pattern_id=p["id"],
            template=p["template"],
            max_leading_modifiers=p.get("max_leading_modifiers", 3),
            max_trailing_tokens=p.get("max_trailing_tokens", 2),
        )
        for p in payload.get("patterns", [])
    ]
    return compile_patterns(patterns, payload["language_mode"], payload.get("function_words", ()))


def default_patterns(language_mode: str) -> PatternSet:
    name = {WORD: "hearst_patterns_en.json", CHARACTER: "hearst_patterns_zh.json"}.get(language_mode)
    if name is None:
        raise ConfigError(f"unknown language mode {language_mode!r}")
    with resources.files("conceptminer.data").joinpath(name).open("r", encoding="utf-8") as fh:
        return load_patterns(fh)


def _fold(token: str, mode: str) -> str:
    return token.lower() if mode == WORD else token


def _literal_matches(tokens: Sequence[str], pos: int, element: _Element, mode: str) -> int | None:
    """Length of the matching alternative at pos, longest first, or None."""
    for alt in sorted(element.alternatives, key=len, reverse=True):
        end = pos + len(alt)
        if end <= len(tokens) and all(
            _fold(tokens[pos + k], mode) == _fold(alt[k], mode) for k in range(len(alt))
        ):
            return len(alt)
    return None


def _capture(
    tokens: Sequence[str],
    region_start: int,
    region_end: int,
    pattern: HearstPattern,
    function_words: frozenset[str],
    mode: str,
) -> tuple[str, ...] | None:
    """Pick the head + modifier window out of a Y region."""
    region = list(tokens[region_start:region_end])
    while region and (_fold(region[-1], mode) in function_words or region[-1] in SENTENCE_PUNCTUATION):
        region.pop()
    if not region:
        return None
    head_index = len(region) - 1
    start = head_index
    while (
        head_index - start < pattern.max_leading_modifiers
        and start > 0
        and _fold(region[start - 1], mode) not in function_words
        and region[start - 1] not in SENTENCE_PUNCTUATION
    ):
        start -= 1
    return tuple(region[start : head_index + 1])


def _match_pattern(
    record: EntityRecord, compiled: CompiledPattern, function_words: frozenset[str], mode: str
) -> list[tuple[str, ...]]:
    tokens = record.tokens
    n = len(tokens)
    entity_tokens = tuple(tokenize(record.surface_name, mode)) if record.surface_name.strip() else ()
    if not entity_tokens:
        return []
    pattern = compiled.pattern

    def element_span(pos: int, element: _Element) -> int | None:
        """Tokens consumed by a non-Y element matching at pos, else None."""
        if element.kind == _X:
            end = pos + len(entity_tokens)
            if end <= n and all(
                _fold(tokens[pos + k], mode) == _fold(entity_tokens[k], mode)
                for k in range(len(entity_tokens))
            ):
                return len(entity_tokens)
            return None
        if element.kind == _REST:
            return 0
        return _literal_matches(tokens, pos, element, mode)

    def sequence_matches(pos: int, elements: Sequence[_Element]) -> int | None:
        """End position after matching the elements contiguously from pos."""
        for element in elements:
            consumed = element_span(pos, element)
            if consumed is None:
                return None
            pos += consumed
        return pos

    captures: list[tuple[str, ...]] = []
    before = compiled.elements[: compiled.y_position]
    after = compiled.elements[compiled.y_position + 1 :]
    scan_limit = pattern.max_leading_modifiers + 1 + pattern.max_trailing_tokens

    if before:
        for anchor in range(n):
            region_start = sequence_matches(anchor, before)
            if region_start is None:
                continue
            if after:
                # nearest non-empty region whose right edge starts the tail
                region_end = next(
                    (
                        candidate
                        for candidate in range(region_start + 1, min(n, region_start + scan_limit) + 1)
                        if sequence_matches(candidate, after) is not None
                    ),
                    None,
                )
                if region_end is None:
                    continue
            else:
                region_end = region_start
                while region_end < n and tokens[region_end] not in SENTENCE_PUNCTUATION:
                    region_end += 1
                if region_end == region_start:
                    continue
                # the head sits at the right edge, so a long region keeps its tail
                region_start = max(region_start, region_end - scan_limit)
            capture = _capture(tokens, region_start, region_end, pattern, function_words, mode)
            if capture:
                captures.append(capture)
    else:
        # Y opens the template: the region runs backwards from wherever the
        # tail matches, to the previous sentence punctuation
        for anchor in range(1, n + 1):
            if sequence_matches(anchor, after) is None:
                continue
            region_start = anchor
            while (
                region_start > 0
                and tokens[region_start - 1] not in SENTENCE_PUNCTUATION
                and anchor - region_start < scan_limit
            ):
                region_start -= 1
            if region_start == anchor:
                continue
            capture = _capture(tokens, region_start, anchor, pattern, function_words, mode)
            if capture:
                captures.append(capture)
    return captures


def match(record: EntityRecord, pattern_set: PatternSet) -> list[str]:
    """Extract concepts from one record; deduplicated, first occurrence wins."""
    if record.language_mode != pattern_set.language_mode:
        raise DataError(
            f"record mode {record.language_mode!r} does not match pattern set mode {pattern_set.language_mode!r}"
        )
    mode = pattern_set.language_mode
    seen = set()
    out: list[str] = []
    for compiled in pattern_set.patterns:
        for capture in _match_pattern(record, compiled, pattern_set.function_words, mode):
            surface = detokenize(capture, mode)
            key = normalize_surface(surface, mode)
            if key not in seen:
                seen.add(key)
                out.append(surface)
    return out
