"""KG-anchored evaluation of extracted concepts.

Every extracted concept is classified exactly once: existing (already a KG
concept of its entity), new (judged correct by a human but absent from the
KG — one new instanceOf relation), or wrong. Precision is (existing+new)/
total; recall is relative: a system's new-concept pairs over the pooled new
pairs of all compared systems. Metrics with a zero denominator are reported
as absent (None), never as 0 — silent zeros corrupt comparisons.
"""

from __future__ import annotations

import csv
import json
import unicodedata
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

from .corpus import WORD, KgStore, normalize_surface, tokenize
from .errors import DataError, FormatError

EXISTING, NEW, WRONG = "existing", "new", "wrong"
REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SystemOutput:
    system_id: str
    language_mode: str
    concepts_by_entity: Mapping[str, tuple[str, ...]]


def load_system_output(source: IO[str]) -> SystemOutput:
    system_id = None
    mode = None
    by_entity: dict[str, tuple[str, ...]] = {}
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", line_number=lineno) from exc
        try:
            entity_id = obj["entity_id"]
            concepts = tuple(obj["concepts"])
            line_system = obj["system_id"]
            line_mode = obj["language_mode"]
        except KeyError as exc:
            raise FormatError(f"missing field {exc.args[0]!r}", line_number=lineno) from exc
        if system_id is None:
            system_id, mode = line_system, line_mode
        elif line_system != system_id or line_mode != mode:
            raise FormatError(
                f"mixed system_id/language_mode ({line_system!r}, {line_mode!r})", line_number=lineno
            )
        if entity_id in by_entity:
            raise FormatError(f"duplicate entity_id {entity_id!r}", line_number=lineno)
        by_entity[entity_id] = concepts
    if system_id is None:
        raise FormatError("empty system output")
    return SystemOutput(system_id=system_id, language_mode=mode, concepts_by_entity=by_entity)


def system_output_lines(output: SystemOutput) -> Iterable[str]:
    for entity_id in output.concepts_by_entity:
        yield json.dumps(
            {
                "entity_id": entity_id,
                "system_id": output.system_id,
                "language_mode": output.language_mode,
                "concepts": list(output.concepts_by_entity[entity_id]),
            },
            ensure_ascii=False,
            sort_keys=True,
        )


class JudgmentStore:
    """Human verdicts keyed by (entity_id, mode-normalized concept)."""

    def __init__(self, verdicts: Mapping[tuple[str, str], bool], language_mode: str):
        self._verdicts = dict(verdicts)
        self.language_mode = language_mode

    def __len__(self) -> int:
        return len(self._verdicts)

    def lookup(self, entity_id: str, concept: str) -> bool | None:
        return self._verdicts.get((entity_id, normalize_surface(concept, self.language_mode)))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str, bool]], language_mode: str) -> "JudgmentStore":
        verdicts = {}
        for entity_id, concept, correct in pairs:
            verdicts[(entity_id, normalize_surface(concept, language_mode))] = correct
        return cls(verdicts, language_mode)


def load_judgments_csv(source: IO[str], language_mode: str) -> JudgmentStore:
    reader = csv.reader(source)
    header = next(reader, None)
    if header != ["entity_id", "concept", "verdict"]:
        raise FormatError(f"bad judgments header {header!r}, expected entity_id,concept,verdict")
    pairs = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise FormatError(f"expected 3 columns, got {len(row)}", line_number=lineno)
        entity_id, concept, verdict = row
        if verdict not in ("correct", "incorrect"):
            raise FormatError(f"verdict must be correct|incorrect, got {verdict!r}", line_number=lineno)
        pairs.append((entity_id, concept, verdict == "correct"))
    return JudgmentStore.from_pairs(pairs, language_mode)


def write_judgments_csv(pairs: Iterable[tuple[str, str, str]], sink: IO[str]) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["entity_id", "concept", "verdict"])
    for entity_id, concept, verdict in pairs:
        writer.writerow([entity_id, concept, verdict])


def classify_concepts(
    output: SystemOutput, kg: KgStore, judgments: JudgmentStore
) -> list[tuple[str, str, str]]:
    """(entity_id, concept, class) per extracted concept, deduplicated per
    entity by normalized surface."""
    mode = output.language_mode
    out = []
    for entity_id in output.concepts_by_entity:
        seen = set()
        for concept in output.concepts_by_entity[entity_id]:
            key = normalize_surface(concept, mode)
            if key in seen:
                continue
            seen.add(key)
            if kg.is_concept_of(entity_id, concept, mode):
                out.append((entity_id, concept, EXISTING))
                continue
            verdict = judgments.lookup(entity_id, concept)
            if verdict is None:
                raise DataError(f"missing judgment for ({entity_id!r}, {concept!r})")
            out.append((entity_id, concept, NEW if verdict else WRONG))
    return out


def concept_length(concept: str, language_mode: str) -> int:
    """Word-mode: whitespace tokens. Character-mode: non-space graphemes."""
    if not concept.strip():
        raise DataError("empty concept")
    if language_mode == WORD:
        return len(concept.split())
    count = 0
    for ch in concept:
        if ch.isspace():
            continue
        if unicodedata.combining(ch):
            continue
        count += 1
    return count


def _is_contiguous_subsequence(needle: Sequence[str], haystack: Sequence[str]) -> bool:
    m, n = len(needle), len(haystack)
    if m > n:
        return False
    return any(list(haystack[i : i + m]) == list(needle) for i in range(n - m + 1))


def oc_ratio(output: SystemOutput) -> float:
    """Fraction of extracted concepts participating in at least one
    same-entity containment pair. 0.0 when nothing was extracted."""
    mode = output.language_mode
    total = 0
    overlapping = 0
    for entity_id in output.concepts_by_entity:
        surfaces = []
        seen = set()
        for concept in output.concepts_by_entity[entity_id]:
            key = normalize_surface(concept, mode)
            if key not in seen:
                seen.add(key)
                surfaces.append(concept)
        token_lists = [
            [t.lower() for t in tokenize(c, mode)] if mode == WORD else list(tokenize(c, mode))
            for c in surfaces
        ]
        total += len(surfaces)
        for a in range(len(surfaces)):
            for b in range(len(surfaces)):
                if a == b:
                    continue
                if _is_contiguous_subsequence(token_lists[a], token_lists[b]) or _is_contiguous_subsequence(
                    token_lists[b], token_lists[a]
                ):
                    overlapping += 1
                    break
    return overlapping / total if total else 0.0


def relative_f1(precision_value: float | None, relative_recall_value: float | None) -> float | None:
    if precision_value is None or relative_recall_value is None:
        return None
    if precision_value + relative_recall_value == 0:
        return 0.0
    return 2 * precision_value * relative_recall_value / (precision_value + relative_recall_value)


@dataclass(frozen=True)
class EvalReport:
    system_id: str
    existing_count: int
    new_count: int
    wrong_count: int
    existing_length_mean: float | None
    new_length_mean: float | None
    overlap_ratio: float
    precision: float | None
    relative_recall: float | None
    relative_f1: float | None

    def as_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "system_id": self.system_id,
            "existing_count": self.existing_count,
            "new_count": self.new_count,
            "wrong_count": self.wrong_count,
            "existing_length_mean": self.existing_length_mean,
            "new_length_mean": self.new_length_mean,
            "overlap_ratio": self.overlap_ratio,
            "precision": self.precision,
            "relative_recall": self.relative_recall,
            "relative_f1": self.relative_f1,
        }


def evaluate_systems(
    outputs: Sequence[SystemOutput], kg: KgStore, judgments: JudgmentStore
) -> list[EvalReport]:
    """Evaluate all systems against one KG + judgment set, pooling the new
    concepts across systems for relative recall."""
    if not outputs:
        raise DataError("need at least one system output")
    ids = [o.system_id for o in outputs]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate system_id across outputs")

    classified = {o.system_id: classify_concepts(o, kg, judgments) for o in outputs}
    pool: set[tuple[str, str]] = set()
    for output in outputs:
        for entity_id, concept, klass in classified[output.system_id]:
            if klass == NEW:
                pool.add((entity_id, normalize_surface(concept, output.language_mode)))

    reports = []
    for output in outputs:
        rows = classified[output.system_id]
        existing = [(e, c) for e, c, k in rows if k == EXISTING]
        new = [(e, c) for e, c, k in rows if k == NEW]
        wrong = [(e, c) for e, c, k in rows if k == WRONG]
        total = len(rows)

        def mean_length(items):
            if not items:
                return None
            return sum(concept_length(c, output.language_mode) for _, c in items) / len(items)

        precision = (len(existing) + len(new)) / total if total else None
        recall = (
            len({(e, normalize_surface(c, output.language_mode)) for e, c in new}) / len(pool)
            if pool
            else None
        )
        reports.append(
            EvalReport(
                system_id=output.system_id,
                existing_count=len(existing),
                new_count=len(new),
                wrong_count=len(wrong),
                existing_length_mean=mean_length(existing),
                new_length_mean=mean_length(new),
                overlap_ratio=oc_ratio(output),
                precision=precision,
                relative_recall=recall,
                relative_f1=relative_f1(precision, recall),
            )
        )
    return reports


def write_report(reports: Sequence[EvalReport], sink: IO[str]) -> None:
    json.dump(
        {"schema_version": REPORT_SCHEMA_VERSION, "systems": [r.as_dict() for r in reports]},
        sink,
        indent=2,
        sort_keys=True,
    )
    sink.write("\n")
