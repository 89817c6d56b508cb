"""Candidate-span decoding from a probability profile.

Every span up to the length cap is scored as p_start[i] + p_end[j] and kept —
nested and overlapping spans included, since multi-granular output is the
point. Suppression and filtering belong to the selector and pruner stages.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

from .corpus import EntityRecord, detokenize
from .errors import ConfigError, DataError, FormatError
from .head import ProbabilityProfile, enumerate_spans

DUMP_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CandidateSpan:
    """One scored (start, end) token span, inclusive on both ends."""

    start_index: int
    end_index: int
    confidence: float
    surface: str
    start_prob: float
    end_prob: float

    def __post_init__(self):
        if not (0 <= self.start_index <= self.end_index):
            raise DataError(f"invalid span indices ({self.start_index}, {self.end_index})")
        if abs(self.confidence - (self.start_prob + self.end_prob)) > 1e-12:
            raise DataError(
                f"confidence {self.confidence} is not the sum of boundary probabilities "
                f"{self.start_prob} + {self.end_prob}"
            )

    @property
    def indices(self) -> tuple[int, int]:
        return (self.start_index, self.end_index)


@dataclass(frozen=True)
class DecodeConfig:
    threshold: float = 0.85
    max_span_length: int = 16
    top_k: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.threshold <= 2.0):
            raise ConfigError(f"threshold must be in [0, 2], got {self.threshold}")
        if self.max_span_length < 1:
            raise ConfigError(f"max_span_length must be >= 1, got {self.max_span_length}")
        if self.top_k is not None and self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1 when set, got {self.top_k}")


def _sort_key(span: CandidateSpan):
    # confidence descending, then shorter span, then leftmost
    return (-span.confidence, span.end_index - span.start_index, span.start_index)


def enumerate_candidates(
    profile: ProbabilityProfile,
    record: EntityRecord,
    config: DecodeConfig = DecodeConfig(),
) -> list[CandidateSpan]:
    """All spans under the length cap, ranked by confidence."""
    if profile.n != record.n:
        raise DataError(f"profile length {profile.n} does not match record length {record.n}")
    out = []
    for i, j in enumerate_spans(profile.n, config.max_span_length):
        p_i = float(profile.p_start[i])
        p_j = float(profile.p_end[j])
        out.append(
            CandidateSpan(
                start_index=i,
                end_index=j,
                confidence=p_i + p_j,
                surface=detokenize(record.tokens[i : j + 1], record.language_mode),
                start_prob=p_i,
                end_prob=p_j,
            )
        )
    out.sort(key=_sort_key)
    if config.top_k is not None:
        out = out[: config.top_k]
    return out


def fixed_threshold_truncate(candidates: Sequence[CandidateSpan], threshold: float) -> list[CandidateSpan]:
    """Keep exactly the candidates with confidence strictly above the threshold."""
    for prev, cur in zip(candidates, candidates[1:]):
        if cur.confidence > prev.confidence:
            raise DataError("candidates must be sorted by confidence descending")
    return [c for c in candidates if c.confidence > threshold]


@dataclass(frozen=True)
class CandidateRecord:
    """One corpus record's decoded candidates — the wire unit of the dump."""

    entity_id: str
    language_mode: str
    spans: tuple[CandidateSpan, ...]


def candidate_record_line(record: CandidateRecord) -> str:
    return json.dumps(
        {
            "entity_id": record.entity_id,
            "language_mode": record.language_mode,
            "spans": [
                {
                    "i": s.start_index,
                    "j": s.end_index,
                    "surface": s.surface,
                    "cs": s.confidence,
                    "p_start": s.start_prob,
                    "p_end": s.end_prob,
                }
                for s in record.spans
            ],
        },
        ensure_ascii=False,
        sort_keys=True,
    )


def write_candidates(records: Iterable[CandidateRecord], sink: IO[str]) -> None:
    for record in records:
        sink.write(candidate_record_line(record) + "\n")


def load_candidates(source: IO[str]) -> list[CandidateRecord]:
    out = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", line_number=lineno) from exc
        try:
            spans = tuple(
                CandidateSpan(
                    start_index=s["i"],
                    end_index=s["j"],
                    confidence=s["cs"],
                    surface=s["surface"],
                    start_prob=s["p_start"],
                    end_prob=s["p_end"],
                )
                for s in obj["spans"]
            )
            record = CandidateRecord(
                entity_id=obj["entity_id"], language_mode=obj["language_mode"], spans=spans
            )
        except KeyError as exc:
            raise FormatError(f"missing field {exc.args[0]!r}", line_number=lineno) from exc
        except DataError as exc:
            raise FormatError(str(exc), line_number=lineno) from exc
        if any(not math.isfinite(s.confidence) for s in spans):
            raise FormatError("non-finite confidence", line_number=lineno)
        out.append(record)
    return out
