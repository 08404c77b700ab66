"""Reduce per-agent behavior vectors to one population-level vector.

Summation runs in the order vectors are given (persona id order upstream),
which keeps floating-point results bit-stable across runs.
"""

from __future__ import annotations

from typing import Sequence

from .cognition import BehaviorVector
from .errors import DataError


def _check_schemas(vectors: Sequence[BehaviorVector]) -> tuple[str, ...]:
    if not vectors:
        raise DataError("cannot aggregate an empty vector sequence")
    categories = vectors[0].categories
    for v in vectors[1:]:
        if v.categories != categories:
            raise DataError(
                f"behavior vectors disagree on categories: {categories} vs {v.categories}"
            )
    return categories


def aggregate_mean(vectors: Sequence[BehaviorVector]) -> BehaviorVector:
    """Per-category arithmetic mean."""
    categories = _check_schemas(vectors)
    n = len(vectors)
    probs = {}
    for key in categories:
        total = 0.0
        for v in vectors:
            total += v[key]
        probs[key] = min(1.0, total / n)  # guard the <=1 invariant against rounding
    return BehaviorVector(probs)


def aggregate_weighted(
    vectors: Sequence[BehaviorVector], weights: Sequence[float]
) -> BehaviorVector:
    """Weighted per-category mean; weights are normalized to sum 1."""
    categories = _check_schemas(vectors)
    if len(weights) != len(vectors):
        raise DataError(f"{len(weights)} weights for {len(vectors)} vectors")
    if any(w < 0 for w in weights):
        raise DataError("weights must be nonnegative")
    total_weight = sum(weights)
    if total_weight == 0:
        raise DataError("weights must not all be zero")
    probs = {}
    for key in categories:
        total = 0.0
        for v, w in zip(vectors, weights):
            total += w * v[key]
        probs[key] = min(1.0, total / total_weight)
    return BehaviorVector(probs)
