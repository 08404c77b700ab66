"""Cognitive engine layer: prompts in, behavior vectors out.

Three interchangeable engines sit behind one interface:

* ``remote-http`` posts prompts to a hosted model endpoint (adapter shape is
  configurable, so any JSON chat API fits);
* ``synthetic-oracle`` computes logistic responses from persona attributes
  and policy stringency, giving tests a ground-truth engine with known
  monotonicity;
* ``replay-cache`` serves previously recorded responses only and errors on
  any miss, for hermetic re-runs.

Every response, whatever its source, flows through the same JSON parsing and
validation; parsed vectors are cached on disk keyed by (engine digest, prompt
text, category list) so a populated cache replays a full run byte-for-byte.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
import string
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, EngineError, ParseError
from .persona import Persona
from .schema import CategorySchema

VALUE_SLACK = 0.001  # values within this margin outside [0, 1] are clamped


@dataclass(frozen=True)
class SimContext:
    """The situational half of a prompt: date, policy stringency, extras."""

    date: dt.date
    stringency: float
    extra: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.stringency <= 100.0:
            raise ConfigError(f"stringency must be in [0, 100], got {self.stringency}")

    def digest(self) -> str:
        payload = json.dumps(
            {
                "date": self.date.isoformat(),
                "stringency": self.stringency,
                "extra": dict(sorted(self.extra.items())),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PromptText:
    """A fully rendered prompt, traceable to its persona and context."""

    text: str
    persona_id: str
    context_digest: str


@dataclass(frozen=True)
class BehaviorVector:
    """Ordered per-category probabilities in [0, 1]."""

    probs: dict[str, float]

    def __post_init__(self):
        if not self.probs:
            raise ConfigError("behavior vector must have at least one category")
        for key, value in self.probs.items():
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"probability for {key!r} out of [0, 1]: {value}")

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(self.probs.keys())

    def __getitem__(self, key: str) -> float:
        return self.probs[key]

    def values_array(self) -> np.ndarray:
        return np.array(list(self.probs.values()), dtype=float)

    def to_dict(self) -> dict[str, float]:
        return dict(self.probs)


def render_prompt(persona: Persona, context: SimContext, template: str) -> PromptText:
    """Substitute ``{placeholder}`` fields from persona attributes and context.

    Placeholders resolve from, in order of availability: persona attributes,
    ``date`` (ISO format), ``stringency`` (trailing-zero-free), a computed
    ``persona_block`` (bulleted attribute list, for generic templates), and
    context extras. An unresolved placeholder is an error naming the field,
    never a silent passthrough.
    """
    mapping: dict[str, str] = dict(persona.attributes)
    mapping["date"] = context.date.isoformat()
    mapping["stringency"] = format(context.stringency, "g")
    mapping.setdefault(
        "persona_block",
        "\n".join(f"- {name}: {value}" for name, value in persona.attributes.items()),
    )
    mapping.update(context.extra)

    out_parts: list[str] = []
    for literal, field_name, format_spec, conversion in string.Formatter().parse(template):
        out_parts.append(literal)
        if field_name is None:
            continue
        if field_name == "" or format_spec or conversion:
            raise ConfigError(
                f"template placeholder {{{field_name}{'!' + conversion if conversion else ''}"
                f"{':' + format_spec if format_spec else ''}}} is not a plain name"
            )
        if field_name not in mapping:
            raise ConfigError(
                f"template placeholder {{{field_name}}} has no matching persona "
                f"attribute or context field"
            )
        out_parts.append(mapping[field_name])
    return PromptText(
        text="".join(out_parts), persona_id=persona.id, context_digest=context.digest()
    )


def _first_json_object(raw: str) -> dict:
    decoder = json.JSONDecoder()
    idx = raw.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(raw, idx)
        except json.JSONDecodeError:
            idx = raw.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = raw.find("{", idx + 1)
    raise ParseError(f"no JSON object found in response: {raw[:200]!r}")


def parse_response(raw: str, categories: CategorySchema) -> BehaviorVector:
    """Extract and validate the first JSON object in an engine response.

    Engines wrap JSON in prose or markdown fences, so the scan starts at each
    ``{`` until a decodable object is found. All configured response keys must
    be present with numeric values; values within 0.001 outside [0, 1] are
    clamped, anything further out is an error.
    """
    obj = _first_json_object(raw)
    probs: dict[str, float] = {}
    for cat in categories:
        if cat.response_key not in obj:
            raise ParseError(f"response missing key {cat.response_key!r}")
        value = obj[cat.response_key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(
                f"response key {cat.response_key!r} has non-numeric value {value!r}"
            )
        value = float(value)
        if math.isnan(value) or value < -VALUE_SLACK or value > 1.0 + VALUE_SLACK:
            raise ParseError(
                f"response key {cat.response_key!r} value {value} outside "
                f"[-{VALUE_SLACK}, {1 + VALUE_SLACK}]"
            )
        probs[cat.key] = min(1.0, max(0.0, value))
    return BehaviorVector(probs)


# ---------------------------------------------------------------------------
# Synthetic oracle
# ---------------------------------------------------------------------------


def logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


@dataclass(frozen=True)
class OracleParams:
    """Ground-truth response surface for the synthetic oracle.

    Per category: an intercept and a stringency slope (the slope's sign fixes
    the response direction). Attribute offsets are shared across categories
    and shift the logistic argument per persona. With noise_scale 0 the
    oracle is fully deterministic and strictly monotone in stringency.
    """

    intercepts: dict[str, float]
    slopes: dict[str, float]
    attribute_offsets: dict[str, dict[str, float]] = field(default_factory=dict)
    noise_scale: float = 0.0

    def __post_init__(self):
        if set(self.intercepts) != set(self.slopes):
            raise ConfigError(
                f"oracle intercepts and slopes must cover the same categories: "
                f"{sorted(self.intercepts)} vs {sorted(self.slopes)}"
            )
        if self.noise_scale < 0:
            raise ConfigError(f"noise_scale must be nonnegative, got {self.noise_scale}")

    def validate_directions(self, schema: CategorySchema) -> None:
        """Check slope signs against the schema's configured directions."""
        for cat in schema:
            slope = self.slopes.get(cat.key)
            if slope is None:
                raise ConfigError(f"oracle params missing category {cat.key!r}")
            if slope == 0 or (1 if slope > 0 else -1) != cat.direction:
                raise ConfigError(
                    f"oracle slope for {cat.key!r} is {slope}, expected sign {cat.direction:+d}"
                )

    def digest(self) -> str:
        payload = json.dumps(
            {
                "intercepts": self.intercepts,
                "slopes": self.slopes,
                "attribute_offsets": self.attribute_offsets,
                "noise_scale": self.noise_scale,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "OracleParams":
        return cls(
            intercepts={k: float(v) for k, v in data["intercepts"].items()},
            slopes={k: float(v) for k, v in data["slopes"].items()},
            attribute_offsets={
                attr: {v: float(o) for v, o in offsets.items()}
                for attr, offsets in data.get("attribute_offsets", {}).items()
            },
            noise_scale=float(data.get("noise_scale", 0.0)),
        )


def _offset_sum(params: OracleParams, persona: Persona) -> float:
    total = 0.0
    for attr, value in persona.attributes.items():
        total += params.attribute_offsets.get(attr, {}).get(value, 0.0)
    return total


def oracle_respond(params: OracleParams, persona: Persona, context: SimContext) -> BehaviorVector:
    """prob_k = logistic(a_k + b_k * stringency/100 + attribute offsets + noise).

    Noise is seeded from (params, persona attributes, context), never from
    the persona id, so two personas with identical attributes get identical
    responses; that keeps the oracle consistent with prompt-keyed caching.
    """
    offsets = _offset_sum(params, persona)
    s = context.stringency / 100.0
    if params.noise_scale > 0:
        seed_payload = json.dumps(
            [
                params.digest(),
                sorted(persona.attributes.items()),
                context.date.isoformat(),
                context.stringency,
            ]
        )
        seed = int.from_bytes(
            hashlib.sha256(seed_payload.encode("utf-8")).digest()[:8], "big"
        )
        noise = np.random.default_rng(seed).normal(0.0, params.noise_scale, len(params.intercepts))
    else:
        noise = np.zeros(len(params.intercepts))
    probs = {}
    for i, (key, a) in enumerate(params.intercepts.items()):
        z = a + params.slopes[key] * s + offsets + float(noise[i])
        probs[key] = logistic(z)
    return BehaviorVector(probs)


# ---------------------------------------------------------------------------
# Engines
# ---------------------------------------------------------------------------

ENGINE_KINDS = ("remote-http", "synthetic-oracle", "replay-cache")


@dataclass(frozen=True)
class EngineConfig:
    """Which engine to run and how; decoding params are provenance, recorded
    in run manifests."""

    kind: str
    endpoint: str | None = None
    model_name: str | None = None
    retry_limit: int = 3
    oracle_params: OracleParams | None = None
    decoding: dict = field(default_factory=dict)
    request_fields: dict = field(
        default_factory=lambda: {"model": "model", "prompt": "prompt"}
    )
    response_text_path: str | None = None
    timeout: float = 30.0

    def __post_init__(self):
        if self.kind not in ENGINE_KINDS:
            raise ConfigError(f"unknown engine kind {self.kind!r}; expected one of {ENGINE_KINDS}")
        if self.kind == "remote-http" and (not self.endpoint or not self.model_name):
            raise ConfigError("remote-http engine requires endpoint and model_name")
        if self.kind == "synthetic-oracle" and self.oracle_params is None:
            raise ConfigError("synthetic-oracle engine requires oracle_params")
        if self.retry_limit < 0:
            raise ConfigError(f"retry_limit must be >= 0, got {self.retry_limit}")

    def engine_digest(self) -> str:
        """The identity folded into cache keys: model name or oracle digest."""
        if self.oracle_params is not None:
            return f"oracle:{self.oracle_params.digest()}"
        if self.model_name:
            return f"model:{self.model_name}"
        raise ConfigError(f"{self.kind} engine has no model_name or oracle_params to key the cache")


class SyntheticOracleEngine:
    """Deterministic engine that emits the oracle's vector as a JSON string."""

    replay_only = False

    def __init__(self, config: EngineConfig, schema: CategorySchema):
        params = config.oracle_params
        assert params is not None
        params.validate_directions(schema)
        self.params = params
        self.schema = schema
        self.digest = config.engine_digest()
        self.retry_limit = config.retry_limit
        self.call_count = 0

    def respond(self, prompt: PromptText, persona: Persona, context: SimContext) -> str:
        self.call_count += 1
        vector = oracle_respond(self.params, persona, context)
        return json.dumps({c.response_key: vector[c.key] for c in self.schema})


def walk_response_path(node, path: str):
    """Follow a dot-separated path through nested JSON; integer segments
    index lists."""
    for segment in path.split("."):
        try:
            node = node[int(segment)] if segment.lstrip("-").isdigit() else node[segment]
        except (KeyError, IndexError, TypeError):
            raise EngineError(
                f"response path {path!r} failed at segment {segment!r}"
            ) from None
    return node


class RemoteHttpEngine:
    """POSTs the prompt to a hosted model endpoint and returns the text body.

    The request body is {model_field: model_name, prompt_field: text, plus
    decoding params}; the response text is taken from ``response_text_path``
    (dot-separated, integer segments index lists) or the raw body when the
    path is unset. Transport errors are retried by the query layer.
    """

    replay_only = False

    def __init__(self, config: EngineConfig):
        self.config = config
        self.digest = config.engine_digest()
        self.retry_limit = config.retry_limit
        self.call_count = 0

    def respond(self, prompt: PromptText, persona: Persona, context: SimContext) -> str:
        import requests

        self.call_count += 1
        cfg = self.config
        body = {
            cfg.request_fields.get("model", "model"): cfg.model_name,
            cfg.request_fields.get("prompt", "prompt"): prompt.text,
        }
        body.update(cfg.decoding)
        try:
            resp = requests.post(cfg.endpoint, json=body, timeout=cfg.timeout)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise EngineError(f"engine request to {cfg.endpoint} failed: {exc}") from exc
        if cfg.response_text_path is None:
            return resp.text
        return str(walk_response_path(resp.json(), cfg.response_text_path))


class ReplayEngine:
    """Never contacts anything: every query must be served from the cache."""

    replay_only = True

    def __init__(self, config: EngineConfig):
        self.digest = config.engine_digest()
        self.retry_limit = config.retry_limit
        self.call_count = 0

    def respond(self, prompt: PromptText, persona: Persona, context: SimContext) -> str:
        raise EngineError(
            f"replay-cache engine queried for persona {prompt.persona_id}; "
            "populate the cache first or switch engine kind"
        )


def build_engine(config: EngineConfig, schema: CategorySchema):
    if config.kind == "synthetic-oracle":
        return SyntheticOracleEngine(config, schema)
    if config.kind == "remote-http":
        return RemoteHttpEngine(config)
    return ReplayEngine(config)


# ---------------------------------------------------------------------------
# Response cache
# ---------------------------------------------------------------------------


class ResponseCache:
    """Append-safe store of raw responses and parsed vectors.

    On-disk format is line-delimited JSON, one record per key. Writes are
    serialized under a lock; readers tolerate concurrent writers because
    lookups go through the in-memory index. A ``path`` of None keeps the
    cache purely in memory.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._entries: dict[str, dict] = {}
        self.hits = 0
        self.misses = 0
        if self.path is not None and self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    self._entries[rec["key"]] = rec

    @staticmethod
    def make_key(engine_digest: str, prompt_text: str, response_keys: tuple[str, ...]) -> str:
        payload = json.dumps([engine_digest, prompt_text, list(response_keys)])
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> dict | None:
        with self._lock:
            rec = self._entries.get(key)
        if rec is None:
            self.misses += 1
        else:
            self.hits += 1
        return rec

    def put(self, key: str, raw: str, probs: dict[str, float], engine_digest: str) -> None:
        rec = {
            "key": key,
            "raw": raw,
            "probs": probs,
            "engine": engine_digest,
            "created": time.time(),
        }
        with self._lock:
            self._entries[key] = rec
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")


def query(
    engine,
    prompt: PromptText,
    persona: Persona,
    context: SimContext,
    categories: CategorySchema,
    cache: ResponseCache,
) -> BehaviorVector:
    """Resolve one (persona, context) cell through the cache and engine.

    A cache hit returns the stored vector without touching the engine. On a
    miss the engine is asked; parse failures re-ask the identical prompt up
    to the engine config's retry limit, then hard-fail the cell so the caller
    can exclude and log it. Replay engines error on any miss.
    """
    key = cache.make_key(engine.digest, prompt.text, categories.response_keys)
    cached = cache.get(key)
    if cached is not None:
        return BehaviorVector({c.key: float(cached["probs"][c.key]) for c in categories})
    if engine.replay_only:
        raise EngineError(
            f"replay cache miss for persona {prompt.persona_id} on {context.date} "
            f"(stringency {context.stringency:g})"
        )
    retry_limit = getattr(engine, "retry_limit", 3)
    last_error: Exception | None = None
    for _ in range(1 + retry_limit):
        try:
            raw = engine.respond(prompt, persona, context)
        except EngineError as exc:  # transport failure: retry the same prompt
            last_error = exc
            continue
        try:
            vector = parse_response(raw, categories)
        except ParseError as exc:
            last_error = exc
            continue
        cache.put(key, raw, vector.to_dict(), engine.digest)
        return vector
    message = (
        f"persona {prompt.persona_id} on {context.date}: "
        f"{'response unparseable' if isinstance(last_error, ParseError) else 'engine failed'} "
        f"after {1 + retry_limit} attempts: {last_error}"
    )
    if isinstance(last_error, ParseError):
        raise ParseError(message)
    raise EngineError(message)
