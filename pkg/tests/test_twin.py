import datetime as dt
import json

import pytest

from socialtwin.cognition import (
    EngineConfig,
    ResponseCache,
    SimContext,
    build_engine,
    oracle_respond,
)
from socialtwin.errors import ConfigError, EngineError
from socialtwin.persona import Persona, sample_population
from socialtwin.synthetic import default_oracle_params, default_population_spec
from socialtwin.twin import DigitalTwin, SimulationLog, contexts_from_policy
from socialtwin.ingest import DateRange, PolicyRecord


def make_twin(schema, template, parallelism=1, population=None, engine=None, cache=None):
    population = population or sample_population(default_population_spec(6), seed=2)
    engine = engine or build_engine(
        EngineConfig(kind="synthetic-oracle", oracle_params=default_oracle_params()), schema
    )
    return DigitalTwin(
        population=population,
        engine=engine,
        cache=cache or ResponseCache(None),
        template=template,
        schema=schema,
        parallelism=parallelism,
    )


def test_simulate_context_matches_direct_oracle_mean(schema, pandemic_template):
    twin = make_twin(schema, pandemic_template)
    context = SimContext(dt.date(2020, 5, 1), 75.0)
    aggregate = twin.simulate_context(context)
    params = default_oracle_params()
    expected = {
        key: sum(oracle_respond(params, p, context)[key] for p in twin.population)
        / len(twin.population)
        for key in schema.keys
    }
    for key in schema.keys:
        assert aggregate[key] == pytest.approx(expected[key], abs=1e-12)


def test_simulate_contexts_covers_policy_dates(schema, pandemic_template):
    twin = make_twin(schema, pandemic_template)
    policy = [
        PolicyRecord(dt.date(2020, 5, 1) + dt.timedelta(days=i), 50.0 + i) for i in range(5)
    ]
    aggregates, log = twin.simulate_contexts(contexts_from_policy(policy))
    assert sorted(aggregates) == [r.date for r in policy]
    assert all(n == 6 for n in log.survivors_by_date.values())


def test_contexts_from_policy_respects_ranges():
    policy = [
        PolicyRecord(dt.date(2020, 1, 1) + dt.timedelta(days=i), 10.0) for i in range(10)
    ]
    window = DateRange(dt.date(2020, 1, 3), dt.date(2020, 1, 5))
    contexts = contexts_from_policy(policy, [window])
    assert [c.date.day for c in contexts] == [3, 4, 5]


class HalfBrokenEngine:
    """Valid JSON for some personas, garbage for others: exercises exclusion."""

    replay_only = False
    digest = "model:half-broken"
    retry_limit = 1

    def __init__(self, schema, broken_ids):
        self.schema = schema
        self.broken_ids = broken_ids
        self.call_count = 0

    def respond(self, prompt, persona, context):
        self.call_count += 1
        if persona.id in self.broken_ids:
            return "no json here"
        return json.dumps({c.response_key: 0.5 for c in self.schema})


def test_failed_cells_excluded_and_logged(schema, pandemic_template):
    # distinct attributes per persona so prompts (and cache keys) differ
    population = [
        Persona(id=f"p{i}", attributes={"nationality": "Expatriate", "employment": f"sector{i}",
                                        "risk_perception": "Medium", "income": "Middle"})
        for i in range(4)
    ]
    engine = HalfBrokenEngine(schema, broken_ids={"p1", "p3"})
    twin = make_twin(schema, pandemic_template, population=population, engine=engine)
    log = SimulationLog()
    aggregate = twin.simulate_context(SimContext(dt.date(2020, 5, 1), 50.0), log)
    assert aggregate is not None
    assert log.survivors_by_date[dt.date(2020, 5, 1)] == 2
    assert {f["persona"] for f in log.failures} == {"p1", "p3"}
    # mean over the two survivors only
    assert aggregate["stay_home"] == pytest.approx(0.5)


def test_all_cells_failed_gives_none(schema, pandemic_template):
    population = [
        Persona(id="p0", attributes={"nationality": "a", "employment": "b",
                                     "risk_perception": "c", "income": "d"})
    ]
    engine = HalfBrokenEngine(schema, broken_ids={"p0"})
    twin = make_twin(schema, pandemic_template, population=population, engine=engine)
    log = SimulationLog()
    assert twin.simulate_context(SimContext(dt.date(2020, 5, 1), 50.0), log) is None
    assert log.survivors_by_date[dt.date(2020, 5, 1)] == 0


def test_parallel_equals_serial(schema, pandemic_template):
    context = SimContext(dt.date(2020, 6, 1), 42.0)
    serial = make_twin(schema, pandemic_template, parallelism=1).simulate_context(context)
    parallel = make_twin(schema, pandemic_template, parallelism=4).simulate_context(context)
    assert serial == parallel


def test_weighted_aggregation_uses_persona_weights(schema, pandemic_template):
    spec_pop = sample_population(default_population_spec(3), seed=4)
    weighted_pop = [
        Persona(id=p.id, attributes=p.attributes, weight=w)
        for p, w in zip(spec_pop, (1.0, 0.0, 0.0))
    ]
    twin = make_twin(schema, pandemic_template, population=weighted_pop)
    twin.aggregation = "weighted"
    context = SimContext(dt.date(2020, 6, 1), 55.0)
    aggregate = twin.simulate_context(context)
    solo = oracle_respond(default_oracle_params(), weighted_pop[0], context)
    for key in schema.keys:
        assert aggregate[key] == pytest.approx(solo[key], abs=1e-12)


def test_predict_metrics_requires_calibration(schema, pandemic_template):
    twin = make_twin(schema, pandemic_template)
    aggregate = twin.simulate_context(SimContext(dt.date(2020, 6, 1), 50.0))
    with pytest.raises(ConfigError, match="no fitted calibration"):
        twin.predict_metrics(aggregate)


def test_replay_miss_propagates_as_engine_error(schema, pandemic_template):
    engine = build_engine(EngineConfig(kind="replay-cache", model_name="m"), schema)
    twin = make_twin(schema, pandemic_template, engine=engine)
    with pytest.raises(EngineError, match="replay cache miss"):
        twin.simulate_context(SimContext(dt.date(2020, 6, 1), 50.0))
