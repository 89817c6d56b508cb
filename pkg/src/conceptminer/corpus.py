"""Corpus handling: KG dumps, tokenization, weak span labels and dataset splits.

The two language modes differ in what a token is: ``word`` mode splits on
whitespace and detaches leading/trailing punctuation, ``character`` mode makes
one token per grapheme cluster (skipping whitespace). Surfaces are compared
after :func:`normalize_surface`, which lowercases in word mode only.
"""

from __future__ import annotations

import io
import json
import random
import unicodedata
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError, FormatError

WORD = "word"
CHARACTER = "character"
LANGUAGE_MODES = (CHARACTER, WORD)


def _check_mode(mode: str) -> None:
    if mode not in LANGUAGE_MODES:
        raise DataError(f"unknown language mode {mode!r}, expected one of {LANGUAGE_MODES}")


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _iter_graphemes(text: str) -> Iterator[tuple[str, int, int]]:
    """Yield (grapheme, start, end) clusters: a base character plus any
    following combining marks."""
    i = 0
    n = len(text)
    while i < n:
        j = i + 1
        while j < n and unicodedata.combining(text[j]):
            j += 1
        yield text[i:j], i, j
        i = j


def tokenize_with_offsets(text: str, mode: str) -> list[tuple[str, int, int]]:
    """Tokenize ``text``, returning (token, char_start, char_end) triples.

    Raises DataError on empty or whitespace-only input.
    """
    _check_mode(mode)
    if not text or not text.strip():
        raise DataError("empty abstract")

    out: list[tuple[str, int, int]] = []
    if mode == CHARACTER:
        for g, s, e in _iter_graphemes(text):
            if g.isspace():
                continue
            out.append((g, s, e))
        return out

    # word mode: whitespace chunks, then peel punctuation off both ends
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        start, end = i, j
        while start < end and _is_punct(text[start]):
            out.append((text[start], start, start + 1))
            start += 1
        trailing: list[tuple[str, int, int]] = []
        while end > start and _is_punct(text[end - 1]):
            trailing.append((text[end - 1], end - 1, end))
            end -= 1
        if start < end:
            out.append((text[start:end], start, end))
        out.extend(reversed(trailing))
        i = j
    return out


def tokenize(text: str, mode: str) -> list[str]:
    return [tok for tok, _, _ in tokenize_with_offsets(text, mode)]


def detokenize(tokens: Sequence[str], mode: str) -> str:
    _check_mode(mode)
    return (" " if mode == WORD else "").join(tokens)


def normalize_surface(surface: str, mode: str) -> str:
    """Canonical form used for every surface comparison (KG membership,
    weak-label matching, judgment lookups)."""
    _check_mode(mode)
    if mode == WORD:
        return " ".join(surface.split()).lower()
    return "".join(surface.split())


def _collapse_ws(s: str) -> str:
    return " ".join(s.split())


@dataclass(frozen=True)
class KgStore:
    """Immutable entity -> concepts map plus the overall concept vocabulary."""

    entity_to_concepts: dict[str, frozenset[str]]
    concept_vocabulary: frozenset[str]

    def __post_init__(self):
        union = frozenset().union(*self.entity_to_concepts.values()) if self.entity_to_concepts else frozenset()
        if union != self.concept_vocabulary:
            raise DataError("concept_vocabulary must equal the union of all entity concept sets")
        if any(not c.strip() for c in self.concept_vocabulary):
            raise DataError("concept strings must be non-empty after whitespace normalization")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "KgStore":
        by_entity: dict[str, set[str]] = {}
        for entity, concept in pairs:
            concept = _collapse_ws(concept)
            if not concept:
                continue
            by_entity.setdefault(entity, set()).add(concept)
        frozen = {e: frozenset(cs) for e, cs in by_entity.items()}
        vocab = frozenset().union(*frozen.values()) if frozen else frozenset()
        return cls(entity_to_concepts=frozen, concept_vocabulary=vocab)

    @cached_property
    def _vocab_word(self) -> frozenset[str]:
        return frozenset(normalize_surface(c, WORD) for c in self.concept_vocabulary)

    @cached_property
    def _vocab_character(self) -> frozenset[str]:
        return frozenset(normalize_surface(c, CHARACTER) for c in self.concept_vocabulary)

    def has_surface(self, surface: str, mode: str) -> bool:
        """True when some entity in the KG carries this concept surface."""
        vocab = self._vocab_word if mode == WORD else self._vocab_character
        return normalize_surface(surface, mode) in vocab

    def is_concept_of(self, entity_id: str, surface: str, mode: str) -> bool:
        concepts = self.entity_to_concepts.get(entity_id)
        if not concepts:
            return False
        needle = normalize_surface(surface, mode)
        return any(normalize_surface(c, mode) == needle for c in concepts)

    def concepts_of(self, entity_id: str) -> frozenset[str]:
        return self.entity_to_concepts.get(entity_id, frozenset())


def load_kg_dump(source: IO[bytes] | IO[str], format: str = "tsv") -> KgStore:
    """Parse a KG dump into a KgStore.

    ``tsv``: one ``entity<TAB>concept`` pair per line.
    ``jsonl``: one ``{"entity": ..., "concepts": [...]}`` object per line.
    Duplicate pairs are deduplicated; blank lines are skipped.
    """
    if format not in ("tsv", "jsonl"):
        raise FormatError(f"unknown KG dump format {format!r}")
    reader = io.TextIOWrapper(source, encoding="utf-8") if isinstance(source.read(0), bytes) else source
    pairs: list[tuple[str, str]] = []
    for lineno, raw in enumerate(reader, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        if format == "tsv":
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise FormatError("expected 'entity<TAB>concept'", line_number=lineno)
            pairs.append((parts[0].strip(), parts[1]))
        else:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line_number=lineno) from exc
            if not isinstance(obj, dict) or "entity" not in obj or "concepts" not in obj:
                raise FormatError("expected object with 'entity' and 'concepts'", line_number=lineno)
            entity = obj["entity"]
            concepts = obj["concepts"]
            if not isinstance(entity, str) or not isinstance(concepts, list):
                raise FormatError("'entity' must be a string and 'concepts' a list", line_number=lineno)
            for c in concepts:
                if not isinstance(c, str):
                    raise FormatError("concepts must be strings", line_number=lineno)
                pairs.append((entity, c))
    return KgStore.from_pairs(pairs)


def _is_single_grapheme(token: str) -> bool:
    if not token:
        return False
    return all(unicodedata.combining(ch) for ch in token[1:])


@dataclass(frozen=True)
class EntityRecord:
    """An entity, its tokenized abstract and its gold concepts."""

    entity_id: str
    surface_name: str
    tokens: tuple[str, ...]
    language_mode: str
    gold_concepts: frozenset[str]
    abstract: str | None = None

    def __post_init__(self):
        _check_mode(self.language_mode)
        if len(self.tokens) < 1:
            raise DataError(f"entity {self.entity_id!r}: needs at least one token")
        if any(not t for t in self.tokens):
            raise DataError(f"entity {self.entity_id!r}: tokens must be non-empty")
        if self.language_mode == CHARACTER:
            if any(not _is_single_grapheme(t) for t in self.tokens):
                raise DataError(f"entity {self.entity_id!r}: character-mode tokens must be single graphemes")
        else:
            if any(any(ch.isspace() for ch in t) for t in self.tokens):
                raise DataError(f"entity {self.entity_id!r}: word-mode tokens must not contain whitespace")

    @property
    def n(self) -> int:
        return len(self.tokens)


def record_from_abstract(
    entity_id: str,
    name: str,
    abstract: str,
    mode: str,
    gold_concepts: Iterable[str] = (),
) -> EntityRecord:
    return EntityRecord(
        entity_id=entity_id,
        surface_name=name,
        tokens=tuple(tokenize(abstract, mode)),
        language_mode=mode,
        gold_concepts=frozenset(_collapse_ws(c) for c in gold_concepts if c.strip()),
        abstract=abstract,
    )


@dataclass(eq=False)
class WeakLabels:
    """Binary start/end position flags plus the labeled (start, end) span set."""

    start_flags: np.ndarray
    end_flags: np.ndarray
    span_flags: frozenset[tuple[int, int]]

    def __post_init__(self):
        n = len(self.start_flags)
        if len(self.end_flags) != n:
            raise DataError("start/end flag vectors must have equal length")
        for i, j in self.span_flags:
            if not (0 <= i <= j < n):
                raise DataError(f"span ({i}, {j}) out of range for n={n}")
            if not (self.start_flags[i] and self.end_flags[j]):
                raise DataError(f"span ({i}, {j}) not reflected in position flags")

    @property
    def n(self) -> int:
        return len(self.start_flags)

    def is_empty(self) -> bool:
        return not self.span_flags


def build_weak_labels(record: EntityRecord, kg: KgStore | None = None) -> WeakLabels:
    """Derive span labels by locating the record's gold concepts in its tokens.

    Every contiguous occurrence of a concept's tokenization contributes one
    span; concepts that do not occur contribute nothing. When the record
    carries no gold concepts of its own, the entity's KG concepts are used.
    """
    n = record.n
    mode = record.language_mode
    start = np.zeros(n, dtype=np.int8)
    end = np.zeros(n, dtype=np.int8)
    spans: set[tuple[int, int]] = set()

    gold = record.gold_concepts
    if not gold and kg is not None:
        gold = kg.concepts_of(record.entity_id)

    if mode == WORD:
        haystack = [t.lower() for t in record.tokens]
    else:
        haystack = list(record.tokens)

    for concept in sorted(gold):
        try:
            ctoks = tokenize(concept, mode)
        except DataError:
            continue
        if mode == WORD:
            ctoks = [t.lower() for t in ctoks]
        m = len(ctoks)
        if m == 0 or m > n:
            continue
        for i in range(n - m + 1):
            if haystack[i : i + m] == ctoks:
                spans.add((i, i + m - 1))
                start[i] = 1
                end[i + m - 1] = 1
    return WeakLabels(start_flags=start, end_flags=end, span_flags=frozenset(spans))


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[EntityRecord, ...]
    validation: tuple[EntityRecord, ...]
    test: tuple[EntityRecord, ...]
    seed: int

    def manifest(self) -> dict:
        return {
            "schema_version": 1,
            "seed": self.seed,
            "train": [r.entity_id for r in self.train],
            "validation": [r.entity_id for r in self.validation],
            "test": [r.entity_id for r in self.test],
        }


def split_dataset(
    records: Sequence[EntityRecord],
    seed: int,
    test_count: int,
    train_val_ratio: float = 0.9,
) -> DatasetSplit:
    """Seeded shuffle, carve off ``test_count`` test records, then divide the
    remainder train:validation by ``train_val_ratio``."""
    if not 0 < train_val_ratio < 1:
        raise DataError(f"train_val_ratio must be in (0, 1), got {train_val_ratio}")
    if test_count < 0:
        raise DataError("test_count must be non-negative")
    if len(records) < test_count:
        raise DataError(f"need at least {test_count} records for the test set, got {len(records)}")
    ids = [r.entity_id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError("records must have unique entity_ids")

    order = list(records)
    random.Random(seed).shuffle(order)
    test = tuple(order[:test_count])
    rest = order[test_count:]
    train_n = round(len(rest) * train_val_ratio)
    return DatasetSplit(
        train=tuple(rest[:train_n]),
        validation=tuple(rest[train_n:]),
        test=test,
        seed=seed,
    )


def load_corpus(source: IO[bytes] | IO[str]) -> list[EntityRecord]:
    """Read the corpus JSONL: one entity per line with its raw abstract."""
    reader = io.TextIOWrapper(source, encoding="utf-8") if isinstance(source.read(0), bytes) else source
    records: list[EntityRecord] = []
    for lineno, raw in enumerate(reader, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", line_number=lineno) from exc
        try:
            records.append(
                record_from_abstract(
                    entity_id=obj["entity_id"],
                    name=obj["name"],
                    abstract=obj["abstract"],
                    mode=obj["language_mode"],
                    gold_concepts=obj.get("gold_concepts", ()),
                )
            )
        except KeyError as exc:
            raise FormatError(f"missing field {exc.args[0]!r}", line_number=lineno) from exc
        except DataError as exc:
            raise FormatError(str(exc), line_number=lineno) from exc
    return records


def corpus_line(record: EntityRecord) -> str:
    if record.abstract is None:
        raise DataError(f"entity {record.entity_id!r}: no raw abstract to serialize")
    return json.dumps(
        {
            "entity_id": record.entity_id,
            "name": record.surface_name,
            "abstract": record.abstract,
            "language_mode": record.language_mode,
            "gold_concepts": sorted(record.gold_concepts),
        },
        ensure_ascii=False,
        sort_keys=True,
    )


def write_corpus(records: Iterable[EntityRecord], sink: IO[str]) -> None:
    for record in records:
        sink.write(corpus_line(record) + "\n")


def split_from_manifest(records: Sequence[EntityRecord], manifest: dict) -> DatasetSplit:
    by_id = {r.entity_id: r for r in records}
    missing = [
        eid
        for key in ("train", "validation", "test")
        for eid in manifest[key]
        if eid not in by_id
    ]
    if missing:
        raise DataError(f"split manifest references unknown entity_ids: {missing[:5]}")
    return DatasetSplit(
        train=tuple(by_id[eid] for eid in manifest["train"]),
        validation=tuple(by_id[eid] for eid in manifest["validation"]),
        test=tuple(by_id[eid] for eid in manifest["test"]),
        seed=manifest["seed"],
    )
