"""Rule-based pruning of selected concepts, with a full audit trail.

Three rule families, applied strip -> fragment -> exclusivity so that
stripped surfaces participate in the later comparisons:

  function-word strip   a concept starting with function words is rewritten
                        without them ("in high school" -> "high school");
                        rewrites that collide with an existing surface drop.
  modifier fragment     a concept that is a strict token-prefix (but not a
                        suffix) of another surviving concept and is unknown
                        to the KG is dropped ("railway" vs "railway station";
                        "station" survives as a suffix).
  exclusive groups      configured sets of mutually exclusive surfaces keep
                        only the best-voted member (ties: longer surface,
                        then lexicographic).

Every input concept receives exactly one decision: kept, rewritten (and
kept under the new surface), or dropped with the rule that fired.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import IO, Sequence

from .corpus import CHARACTER, LANGUAGE_MODES, WORD, KgStore, detokenize, normalize_surface, tokenize
from .errors import ConfigError, DataError, FormatError

RULES_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ScoredConcept:
    surface: str
    vote_fraction: float

    def __post_init__(self):
        if not self.surface.strip():
            raise DataError("concept surface must be non-empty")
        if not (0.0 <= self.vote_fraction <= 1.0):
            raise DataError(f"vote_fraction must be in [0, 1], got {self.vote_fraction}")


@dataclass(frozen=True)
class PruneDecision:
    concept: str
    action: str  # kept | dropped | rewritten
    rewritten_to: str | None = None
    rule_id: str | None = None
    reason: str = ""

    def __post_init__(self):
        if self.action not in ("kept", "dropped", "rewritten"):
            raise DataError(f"unknown action {self.action!r}")
        if self.action == "rewritten" and not self.rewritten_to:
            raise DataError("rewritten decisions must carry rewritten_to")


@dataclass(frozen=True)
class RuleSet:
    exclusive_groups: tuple[tuple[str, ...], ...] = ()
    function_words: dict[str, tuple[str, ...]] = None  # per language mode
    modifier_rule_enabled: bool = True

    def __post_init__(self):
        if self.function_words is None:
            object.__setattr__(self, "function_words", {WORD: (), CHARACTER: ()})
        for group in self.exclusive_groups:
            if len(group) < 2:
                raise ConfigError(f"exclusive group {group!r} needs at least 2 members")
        for mode in self.function_words:
            if mode not in LANGUAGE_MODES:
                raise ConfigError(f"unknown language mode {mode!r} in function_words")

    def function_word_set(self, mode: str) -> frozenset[str]:
        words = self.function_words.get(mode, ())
        if mode == WORD:
            return frozenset(w.lower() for w in words)
        return frozenset(words)


def load_rules(source: IO[str]) -> RuleSet:
    try:
        payload = json.load(source)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid rules JSON: {exc.msg}") from exc
    if payload.get("schema_version") != RULES_SCHEMA_VERSION:
        raise FormatError(f"unsupported rules schema_version {payload.get('schema_version')!r}")
    return RuleSet(
        exclusive_groups=tuple(tuple(g) for g in payload.get("exclusive_groups", [])),
        function_words={m: tuple(ws) for m, ws in payload.get("function_words", {}).items()},
        modifier_rule_enabled=bool(payload.get("modifier_rule_enabled", True)),
    )


def default_rules() -> RuleSet:
    with resources.files("conceptminer.data").joinpath("pruning_rules.json").open("r", encoding="utf-8") as fh:
        return load_rules(fh)


def _is_function(token: str, function_words: frozenset[str], mode: str) -> bool:
    return (token.lower() if mode == WORD else token) in function_words


@dataclass
class _Entry:
    original: str
    surface: str
    vote: float
    tokens: tuple[str, ...]
    norm_tokens: tuple[str, ...]
    rewritten: bool
    input_index: int


def _norm_tokens(tokens: Sequence[str], mode: str) -> tuple[str, ...]:
    return tuple(t.lower() for t in tokens) if mode == WORD else tuple(tokens)


def prune(
    concepts: Sequence[ScoredConcept],
    rules: RuleSet,
    kg: KgStore,
    language_mode: str,
) -> tuple[list[ScoredConcept], list[PruneDecision]]:
    """Apply the rules to one entity's selected concepts."""
    decisions: dict[int, PruneDecision] = {}
    function_words = rules.function_word_set(language_mode)

    # ---- strip leading function words, then merge collisions
    staged: list[_Entry] = []
    for idx, concept in enumerate(concepts):
        tokens = tuple(tokenize(concept.surface, language_mode))
        k = 0
        while k < len(tokens) and _is_function(tokens[k], function_words, language_mode):
            k += 1
        if k == len(tokens):
            decisions[idx] = PruneDecision(
                concept=concept.surface,
                action="dropped",
                rule_id="function-word-strip",
                reason="nothing left after stripping function words",
            )
            continue
        stripped = tokens[k:]
        surface = detokenize(stripped, language_mode) if k else concept.surface
        staged.append(
            _Entry(
                original=concept.surface,
                surface=surface,
                vote=concept.vote_fraction,
                tokens=stripped,
                norm_tokens=_norm_tokens(stripped, language_mode),
                rewritten=k > 0,
                input_index=idx,
            )
        )

    merged: dict[str, _Entry] = {}
    for entry in sorted(staged, key=lambda e: (e.rewritten, e.input_index)):
        key = normalize_surface(entry.surface, language_mode)
        incumbent = merged.get(key)
        if incumbent is None:
            merged[key] = entry
            continue
        # vote survives as the max of the merged entries, so the outcome is
        # independent of input order
        incumbent.vote = max(incumbent.vote, entry.vote)
        if entry.rewritten:
            decisions[entry.input_index] = PruneDecision(
                concept=entry.original,
                action="dropped",
                rule_id="function-word-strip",
                reason=f"rewrite duplicates {incumbent.surface!r}",
            )
        else:
            decisions[entry.input_index] = PruneDecision(
                concept=entry.original,
                action="dropped",
                rule_id=None,
                reason=f"duplicate of {incumbent.surface!r}",
            )
    survivors = sorted(merged.values(), key=lambda e: e.input_index)

    # ---- drop modifier fragments: strict prefix, not suffix, unknown to KG
    if rules.modifier_rule_enabled:
        remaining = []
        for entry in survivors:
            if kg.has_surface(entry.surface, language_mode):
                remaining.append(entry)
                continue
            witness = None
            for other in survivors:
                if other is entry or len(entry.norm_tokens) >= len(other.norm_tokens):
                    continue
                is_prefix = other.norm_tokens[: len(entry.norm_tokens)] == entry.norm_tokens
                is_suffix = other.norm_tokens[-len(entry.norm_tokens) :] == entry.norm_tokens
                if is_prefix and not is_suffix:
                    witness = other
                    break
            if witness is None:
                remaining.append(entry)
            else:
                decisions[entry.input_index] = PruneDecision(
                    concept=entry.original,
                    action="dropped",
                    rule_id="modifier-fragment",
                    reason=f"prefix fragment of {witness.surface!r}, not in KG",
                )
        survivors = remaining

    # ---- exclusive groups: best vote wins, ties to the longer surface
    for group in rules.exclusive_groups:
        group_norms = {normalize_surface(m, language_mode) for m in group}
        members = [e for e in survivors if normalize_surface(e.surface, language_mode) in group_norms]
        if len(members) < 2:
            continue
        members.sort(key=lambda e: (-e.vote, -len(e.surface), e.surface))
        winner = members[0]
        losers = {id(e) for e in members[1:]}
        for entry in members[1:]:
            decisions[entry.input_index] = PruneDecision(
                concept=entry.original,
                action="dropped",
                rule_id="exclusive-group",
                reason=f"exclusive with {winner.surface!r}",
            )
        survivors = [e for e in survivors if id(e) not in losers]

    kept = []
    for entry in survivors:
        kept.append(ScoredConcept(surface=entry.surface, vote_fraction=entry.vote))
        if entry.rewritten:
            decisions[entry.input_index] = PruneDecision(
                concept=entry.original,
                action="rewritten",
                rewritten_to=entry.surface,
                rule_id="function-word-strip",
                reason="stripped leading function words",
            )
        else:
            decisions[entry.input_index] = PruneDecision(concept=entry.original, action="kept")

    ordered = [decisions[idx] for idx in sorted(decisions)]
    return kept, ordered


def decision_line(decision: PruneDecision) -> str:
    return json.dumps(
        {
            "concept": decision.concept,
            "action": decision.action,
            "rewritten_to": decision.rewritten_to,
            "rule_id": decision.rule_id,
            "reason": decision.reason,
        },
        ensure_ascii=False,
        sort_keys=True,
    )
