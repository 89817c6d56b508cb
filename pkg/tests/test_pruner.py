import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptminer.corpus import CHARACTER, WORD, KgStore
from conceptminer.errors import ConfigError, DataError, FormatError
from conceptminer.pruner import (
    PruneDecision,
    RuleSet,
    ScoredConcept,
    decision_line,
    default_rules,
    load_rules,
    prune,
)

EMPTY_KG = KgStore.from_pairs([])
RULES = default_rules()


def _concepts(*pairs):
    return [ScoredConcept(surface, vote) for surface, vote in pairs]


def _kept_surfaces(kept):
    return [c.surface for c in kept]


# ------------------------------------------------------------- worked cases

def test_exclusive_pair_tie_keeps_longer():
    kept, decisions = prune(
        _concepts(("president", 0.8), ("vice president", 0.8)), RULES, EMPTY_KG, WORD
    )
    assert _kept_surfaces(kept) == ["vice president"]
    by_concept = {d.concept: d for d in decisions}
    assert by_concept["president"].action == "dropped"
    assert by_concept["president"].rule_id == "exclusive-group"
    assert by_concept["vice president"].action == "kept"


def test_exclusive_pair_vote_beats_length():
    kept, _ = prune(
        _concepts(("president", 0.95), ("vice president", 0.6)), RULES, EMPTY_KG, WORD
    )
    assert _kept_surfaces(kept) == ["president"]


def test_modifier_fragment_dropped_suffix_immune():
    kg = KgStore.from_pairs([("e1", "railway station"), ("e1", "station")])
    kept, decisions = prune(
        _concepts(("railway", 0.7), ("railway station", 0.9), ("station", 0.8)),
        RULES,
        kg,
        WORD,
    )
    assert _kept_surfaces(kept) == ["railway station", "station"]
    frag = next(d for d in decisions if d.concept == "railway")
    assert frag.action == "dropped"
    assert frag.rule_id == "modifier-fragment"
    assert "railway station" in frag.reason


def test_kg_known_fragment_is_immune():
    kg = KgStore.from_pairs([("e1", "railway"), ("e1", "railway station")])
    kept, _ = prune(
        _concepts(("railway", 0.7), ("railway station", 0.9)), RULES, kg, WORD
    )
    assert _kept_surfaces(kept) == ["railway", "railway station"]


def test_modifier_rule_can_be_disabled():
    rules = RuleSet(
        exclusive_groups=RULES.exclusive_groups,
        function_words=dict(RULES.function_words),
        modifier_rule_enabled=False,
    )
    kept, _ = prune(
        _concepts(("railway", 0.7), ("railway station", 0.9)), rules, EMPTY_KG, WORD
    )
    assert _kept_surfaces(kept) == ["railway", "railway station"]


def test_leading_copula_stripped():
    kept, decisions = prune(
        _concepts(("is ancient costume drama", 0.9)), RULES, EMPTY_KG, WORD
    )
    assert _kept_surfaces(kept) == ["ancient costume drama"]
    (decision,) = decisions
    assert decision.action == "rewritten"
    assert decision.rewritten_to == "ancient costume drama"
    assert decision.rule_id == "function-word-strip"


def test_rewrite_collision_drops():
    kept, decisions = prune(
        _concepts(("high school", 0.9), ("in high school", 0.7)), RULES, EMPTY_KG, WORD
    )
    assert _kept_surfaces(kept) == ["high school"]
    dropped = next(d for d in decisions if d.concept == "in high school")
    assert dropped.action == "dropped"
    assert dropped.rule_id == "function-word-strip"


def test_rewrite_collision_keeps_max_vote():
    kept, _ = prune(
        _concepts(("high school", 0.4), ("in high school", 0.9)), RULES, EMPTY_KG, WORD
    )
    (survivor,) = kept
    assert survivor.surface == "high school"
    assert survivor.vote_fraction == 0.9


def test_plain_duplicate_case_folded():
    kept, decisions = prune(
        _concepts(("Company", 0.6), ("company", 0.8)), RULES, EMPTY_KG, WORD
    )
    (survivor,) = kept
    assert survivor.surface == "Company"
    assert survivor.vote_fraction == 0.8
    dup = next(d for d in decisions if d.concept == "company")
    assert dup.action == "dropped"
    assert dup.rule_id is None


def test_all_function_words_dropped():
    kept, decisions = prune(_concepts(("of the", 0.5)), RULES, EMPTY_KG, WORD)
    assert kept == []
    (decision,) = decisions
    assert decision.action == "dropped"
    assert decision.rule_id == "function-word-strip"


def test_character_mode_strip():
    kept, decisions = prune(_concepts(("是古装剧", 0.9)), RULES, EMPTY_KG, CHARACTER)
    assert _kept_surfaces(kept) == ["古装剧"]
    assert decisions[0].action == "rewritten"


def test_strip_feeds_exclusive_group():
    kept, _ = prune(
        _concepts(("the president", 0.8), ("vice president", 0.8)), RULES, EMPTY_KG, WORD
    )
    # strip first, then the group resolves the tie toward the longer surface
    assert _kept_surfaces(kept) == ["vice president"]


# -------------------------------------------------------------- bookkeeping

def test_every_input_gets_one_decision():
    concepts = _concepts(
        ("president", 0.8),
        ("vice president", 0.9),
        ("railway", 0.7),
        ("railway station", 0.9),
        ("of the", 0.2),
        ("in high school", 0.5),
        ("high school", 0.6),
    )
    kept, decisions = prune(concepts, RULES, EMPTY_KG, WORD)
    assert [d.concept for d in decisions] == [c.surface for c in concepts]
    kept_count = sum(d.action in ("kept", "rewritten") for d in decisions)
    assert kept_count == len(kept)


def test_kept_order_follows_input():
    concepts = _concepts(("station", 0.5), ("drama", 0.9), ("school", 0.7))
    kept, _ = prune(concepts, RULES, EMPTY_KG, WORD)
    assert _kept_surfaces(kept) == ["station", "drama", "school"]


_WORDS = ["the", "a", "in", "railway", "station", "president", "vice", "drama", "high", "school"]
_SURFACE = st.lists(st.sampled_from(_WORDS), min_size=1, max_size=3).map(" ".join)
_CONCEPT = st.builds(
    ScoredConcept,
    surface=_SURFACE,
    vote_fraction=st.floats(0, 1, allow_nan=False),
)
_FRAGMENT_KG = KgStore.from_pairs([("e", "station"), ("e", "railway station")])


@given(concepts=st.lists(_CONCEPT, max_size=8))
@settings(max_examples=150)
def test_prune_is_idempotent(concepts):
    kept, _ = prune(concepts, RULES, _FRAGMENT_KG, WORD)
    again, decisions = prune(kept, RULES, _FRAGMENT_KG, WORD)
    assert again == kept
    assert all(d.action == "kept" for d in decisions)


@given(concepts=st.lists(_CONCEPT, max_size=8), seed=st.integers(0, 1000))
@settings(max_examples=150)
def test_prune_is_order_independent(concepts, seed):
    import random

    kept_a, _ = prune(concepts, RULES, _FRAGMENT_KG, WORD)
    shuffled = list(concepts)
    random.Random(seed).shuffle(shuffled)
    kept_b, _ = prune(shuffled, RULES, _FRAGMENT_KG, WORD)
    as_set = lambda kept: {(c.surface.lower(), c.vote_fraction) for c in kept}
    assert as_set(kept_a) == as_set(kept_b)


# ------------------------------------------------------------ rules loading

def test_default_rules_shape():
    assert ("president", "vice president") in RULES.exclusive_groups
    assert "is" in RULES.function_word_set(WORD)
    assert "是" in RULES.function_word_set(CHARACTER)
    assert RULES.modifier_rule_enabled


def test_load_rules_rejects_bad_schema():
    with pytest.raises(FormatError):
        load_rules(io.StringIO(json.dumps({"schema_version": 99})))


def test_load_rules_rejects_bad_json():
    with pytest.raises(FormatError):
        load_rules(io.StringIO("{nope"))


def test_ruleset_validation():
    with pytest.raises(ConfigError):
        RuleSet(exclusive_groups=(("lonely",),))
    with pytest.raises(ConfigError):
        RuleSet(function_words={"klingon": ("x",)})


def test_scored_concept_validation():
    with pytest.raises(DataError):
        ScoredConcept("  ", 0.5)
    with pytest.raises(DataError):
        ScoredConcept("x", 1.5)


def test_decision_validation():
    with pytest.raises(DataError):
        PruneDecision(concept="x", action="exploded")
    with pytest.raises(DataError):
        PruneDecision(concept="x", action="rewritten")


def test_decision_line_json():
    line = decision_line(
        PruneDecision(concept="是古装剧", action="rewritten", rewritten_to="古装剧", rule_id="function-word-strip")
    )
    payload = json.loads(line)
    assert payload["concept"] == "是古装剧"
    assert "古装剧" in line  # ensure_ascii off
