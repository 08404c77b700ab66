"""The composed pipeline: population -> cognitive engine -> aggregation,
with an optional fitted calibration on top.

Cells whose engine query cannot be parsed after retries are excluded from
aggregation and logged; the per-date survivor counts go into the run log so
exclusions are auditable. Aggregation always consumes vectors in persona
order, so results are bit-stable regardless of query parallelism.
"""

from __future__ import annotations

import datetime as dt
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .aggregate import aggregate_mean, aggregate_weighted
from .calibrate import CalibrationParams, apply_calibration
from .cognition import (
    BehaviorVector,
    PromptText,
    ResponseCache,
    SimContext,
    query,
    render_prompt,
)
from .errors import ConfigError, ParseError
from .persona import Persona
from .schema import CategorySchema


@dataclass
class SimulationLog:
    """Survivor counts and excluded cells for one simulation pass."""

    survivors_by_date: dict[dt.date, int] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "survivors_by_date": {
                d.isoformat(): n for d, n in sorted(self.survivors_by_date.items())
            },
            "failures": self.failures,
        }


@dataclass
class DigitalTwin:
    """Everything needed to turn a (date, stringency) context into metrics."""

    population: list[Persona]
    engine: object
    cache: ResponseCache
    template: str
    schema: CategorySchema
    aggregation: str = "mean"  # or "weighted"
    calibration: CalibrationParams | None = None
    parallelism: int = 1

    def __post_init__(self):
        if self.aggregation not in ("mean", "weighted"):
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if not self.population:
            raise ConfigError("twin needs a nonempty population")

    def _query_cell(self, persona: Persona, context: SimContext):
        prompt: PromptText = render_prompt(persona, context, self.template)
        try:
            return query(self.engine, prompt, persona, context, self.schema, self.cache)
        except ParseError as exc:
            return exc

    def simulate_context(
        self, context: SimContext, log: SimulationLog | None = None
    ) -> BehaviorVector | None:
        """Aggregate over all personas for one context.

        Returns None when every cell failed (the date is then excluded
        upstream). Parse failures are logged per cell; transport or replay
        errors propagate.
        """
        if self.parallelism > 1:
            with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
                outcomes = list(
                    pool.map(lambda p: self._query_cell(p, context), self.population)
                )
        else:
            outcomes = [self._query_cell(p, context) for p in self.population]

        vectors: list[BehaviorVector] = []
        weights: list[float] = []
        for persona, outcome in zip(self.population, outcomes):
            if isinstance(outcome, ParseError):
                if log is not None:
                    log.failures.append(
                        {
                            "date": context.date.isoformat(),
                            "persona": persona.id,
                            "error": str(outcome),
                        }
                    )
                continue
            vectors.append(outcome)
            weights.append(persona.weight)
        if log is not None:
            log.survivors_by_date[context.date] = len(vectors)
        if not vectors:
            return None
        if self.aggregation == "weighted":
            return aggregate_weighted(vectors, weights)
        return aggregate_mean(vectors)

    def simulate_contexts(
        self, contexts: Sequence[SimContext]
    ) -> tuple[dict[dt.date, BehaviorVector], SimulationLog]:
        """One aggregated vector per context date (dates without survivors
        are omitted)."""
        log = SimulationLog()
        aggregates: dict[dt.date, BehaviorVector] = {}
        for context in contexts:
            vector = self.simulate_context(context, log)
            if vector is not None:
                aggregates[context.date] = vector
        return aggregates, log

    def predict_metrics(self, aggregate: BehaviorVector) -> dict[str, float]:
        if self.calibration is None:
            raise ConfigError("twin has no fitted calibration; run calibration first")
        return apply_calibration(aggregate, self.calibration)


def contexts_from_policy(policy, date_ranges=None) -> list[SimContext]:
    """Build simulation contexts from policy records, optionally restricted
    to a set of date ranges."""
    contexts = []
    for record in policy:
        if date_ranges is not None and not any(r.contains(record.date) for r in date_ranges):
            continue
        contexts.append(SimContext(date=record.date, stringency=record.stringency))
    return contexts
