"""Templated synthetic corpus with known gold concepts.

Desk-scale stand-in for the real corpora: each entity gets a one-sentence
abstract "<Name> is a/an <concept> <filler> ." where the concept is either a
bare head noun ("widget") or a modifier+head pair ("digital widget"). For
nested entities the gold set contains BOTH the pair and its bare head, so
the spans overlap and the decoder/selector/pruner stack is exercised on the
overlapping-concept case the pipeline exists for.

The KG dump always knows each entity's head concept; a configurable slice of
the nested pairs is also pre-known, so evaluation sees existing and new
concepts side by side. Everything is driven by one seeded RNG: same config,
same bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from random import Random
from typing import Iterable

from .corpus import WORD, EntityRecord, record_from_abstract
from .errors import ConfigError

_HEADS = (
    "widget", "gadget", "company", "beverage", "journal", "festival",
    "polymer", "engine", "airline", "museum", "orchard", "circuit",
    "antenna", "reactor", "glacier", "harbor", "temple", "cannery",
    "foundry", "sawmill", "vineyard", "brewery", "quarry", "depot", "atlas",
)

_MODIFIERS = (
    "digital", "coastal", "antique", "modular", "solar", "nomadic",
    "ceramic", "orbital", "alpine", "hybrid", "velvet", "arctic",
)

_NAME_BASES = (
    "Orvex", "Tellan", "Quorix", "Maveno", "Zentra", "Fyrox", "Lumora",
    "Vantor", "Cindral", "Pyxis", "Halvek", "Norix", "Bramwell", "Kestra",
    "Dunlore", "Verrick", "Solmara", "Tandrix", "Galvani", "Umbrix",
)

_FILLERS = (
    "based in Norvale",
    "founded decades ago",
    "known for rapid growth",
    "serving the northern region",
    "praised by local critics",
    "operating since 1987",
)


@dataclass(frozen=True)
class SyntheticConfig:
    entity_count: int = 200
    vocabulary_size: int = 50
    nesting_rate: float = 0.5
    kg_nested_rate: float = 0.1  # chance a nested pair is already in the KG
    seed: int = 0

    def __post_init__(self):
        if self.entity_count < 1:
            raise ConfigError(f"entity_count must be >= 1, got {self.entity_count}")
        if not 0.0 <= self.nesting_rate <= 1.0:
            raise ConfigError(f"nesting_rate must be in [0, 1], got {self.nesting_rate}")
        if not 0.0 <= self.kg_nested_rate <= 1.0:
            raise ConfigError(f"kg_nested_rate must be in [0, 1], got {self.kg_nested_rate}")
        head_budget = _head_count(self.vocabulary_size)
        pair_budget = len(_HEADS) * len(_MODIFIERS)
        if self.vocabulary_size < 2 or self.vocabulary_size - head_budget > pair_budget:
            raise ConfigError(f"vocabulary_size {self.vocabulary_size} outside the supported range")


@dataclass(frozen=True)
class SyntheticCorpus:
    records: tuple[EntityRecord, ...]
    kg_pairs: tuple[tuple[str, str], ...]
    vocabulary: tuple[str, ...]
    stats: dict = field(compare=False)


def _head_count(vocabulary_size: int) -> int:
    return min(len(_HEADS), max(1, round(vocabulary_size * 0.4)))


def _build_vocabulary(config: SyntheticConfig, rng: Random) -> tuple[list[str], list[str]]:
    heads = rng.sample(_HEADS, _head_count(config.vocabulary_size))
    pair_count = config.vocabulary_size - len(heads)
    combos = [f"{mod} {head}" for head in heads for mod in _MODIFIERS]
    pairs = rng.sample(combos, pair_count)
    return heads, pairs


def _article(noun_phrase: str) -> str:
    return "an" if noun_phrase[0] in "aeiou" else "a"


def generate(config: SyntheticConfig) -> SyntheticCorpus:
    rng = Random(config.seed)
    heads, pairs = _build_vocabulary(config, rng)

    records: list[EntityRecord] = []
    kg_pairs: list[tuple[str, str]] = []
    nested_entities = 0
    for index in range(config.entity_count):
        entity_id = f"syn-{index:04d}"
        name = f"{_NAME_BASES[index % len(_NAME_BASES)]}{index}"
        nested = bool(pairs) and rng.random() < config.nesting_rate
        if nested:
            pair = rng.choice(pairs)
            head = pair.split()[-1]
            gold = (pair, head)
            nested_entities += 1
        else:
            head = rng.choice(heads)
            pair = None
            gold = (head,)
        phrase = gold[0]
        filler = rng.choice(_FILLERS)
        abstract = f"{name} is {_article(phrase)} {phrase} {filler} ."
        records.append(record_from_abstract(entity_id, name, abstract, WORD, gold))

        kg_pairs.append((entity_id, head))
        if nested and rng.random() < config.kg_nested_rate:
            kg_pairs.append((entity_id, pair))

    stats = {
        "entities": config.entity_count,
        "nested_entities": nested_entities,
        "nested_fraction": nested_entities / config.entity_count,
        "vocabulary_size": len(heads) + len(pairs),
    }
    return SyntheticCorpus(
        records=tuple(records),
        kg_pairs=tuple(kg_pairs),
        vocabulary=tuple(heads + pairs),
        stats=stats,
    )


def kg_dump_lines(kg_pairs: Iterable[tuple[str, str]]) -> Iterable[str]:
    for entity_id, concept in kg_pairs:
        yield f"{entity_id}\t{concept}"
