"""Multi-granular concept extraction from entity abstracts.

Pipeline stages: tokenize + weak-label a corpus against a KG dump, train a
pointer-style span scorer over a deterministic embedder, decode overlapping
candidate spans, filter them with a random-forest selector, prune with
ordered surface rules, and score the result against the KG plus human
judgments. A Hearst-pattern extractor provides a rule-based baseline and an
HTTP service drives the human annotation loop.
"""

from .errors import (
    ConceptMinerError,
    ConfigError,
    DataError,
    FormatError,
    SeedConflict,
    TrainingDivergence,
)

__version__ = "0.1.0"

__all__ = [
    "ConceptMinerError",
    "ConfigError",
    "DataError",
    "FormatError",
    "SeedConflict",
    "TrainingDivergence",
    "__version__",
]
