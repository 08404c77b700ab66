"""Learn and apply per-category clipped affine maps from aggregated
probabilities to observed metric units.

The map is y_hat_k = clip(alpha_k * pbar_k + beta_k, y_min_k, y_max_k). The
map shares no parameters across categories, so the default objective fits
each category independently; a macro-average mode (all categories searched
jointly on the mean RMSE) is kept for fidelity experiments, and a
single-slope fit (one shared alpha, beta) backs the corresponding ablation.

Fitting uses a density-based sampler: past trials are split into the best
gamma fraction and the rest, new candidates are drawn from a Gaussian kernel
density over the good trials and ranked by the good-to-rest density ratio.
A closed-form least-squares fit of the unclipped map is always evaluated as
trial 0, so the search can never end worse than the initializer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .cognition import BehaviorVector
from .errors import ConfigError, DataError
from .ingest import ObservationRecord

DEFAULT_ALPHA_RANGE = (-400.0, 400.0)
DEFAULT_BETA_RANGE = (-200.0, 200.0)
DEFAULT_CLIP_BOUNDS = (-100.0, 200.0)

TPE_GAMMA = 0.25
TPE_STARTUP_TRIALS = 10
TPE_CANDIDATES = 24


@dataclass(frozen=True)
class CategoryCalibration:
    alpha: float
    beta: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not self.y_min < self.y_max:
            raise ConfigError(f"clip bounds must satisfy y_min < y_max, got [{self.y_min}, {self.y_max}]")

    def apply(self, p: float) -> float:
        return min(self.y_max, max(self.y_min, self.alpha * p + self.beta))


@dataclass(frozen=True)
class CalibrationParams:
    """Per-category affine coefficients and clip bounds."""

    per_category: dict[str, CategoryCalibration]

    def categories(self) -> tuple[str, ...]:
        return tuple(self.per_category.keys())

    def to_dict(self) -> dict:
        def enc(x: float):
            return {math.inf: "inf", -math.inf: "-inf"}.get(x, x)

        return {
            key: {
                "alpha": c.alpha,
                "beta": c.beta,
                "y_min": enc(c.y_min),
                "y_max": enc(c.y_max),
            }
            for key, c in self.per_category.items()
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationParams":
        def dec(x):
            return float(x) if not isinstance(x, str) else {"inf": math.inf, "-inf": -math.inf}[x]

        return cls(
            {
                key: CategoryCalibration(
                    alpha=float(c["alpha"]),
                    beta=float(c["beta"]),
                    y_min=dec(c["y_min"]),
                    y_max=dec(c["y_max"]),
                )
                for key, c in data.items()
            }
        )


@dataclass(frozen=True)
class FitConfig:
    """Sampler configuration for calibration fitting."""

    trials: int = 200
    alpha_range: tuple[float, float] = DEFAULT_ALPHA_RANGE
    beta_range: tuple[float, float] = DEFAULT_BETA_RANGE
    seed: int = 0
    objective: str = "per-category-independent"  # or "macro-average"
    sampler: str = "tpe-style"  # or "random", "least-squares-init"
    clip_bounds: tuple[float, float] = DEFAULT_CLIP_BOUNDS

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        for name, (low, high) in (("alpha", self.alpha_range), ("beta", self.beta_range)):
            if not low < high:
                raise ConfigError(f"{name} search range must be nonempty, got [{low}, {high}]")
        if self.objective not in ("per-category-independent", "macro-average"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.sampler not in ("tpe-style", "random", "least-squares-init"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")


@dataclass
class CategoryFitRecord:
    best_loss: float
    initializer_loss: float
    trials_run: int
    degenerate: bool = False
    range_widened: bool = False


@dataclass
class FitReport:
    """Machine-readable record of one calibration fit."""

    sampler: str
    objective: str
    seed: int
    trials: int
    alpha_range: tuple[float, float]
    beta_range: tuple[float, float]
    per_category: dict[str, CategoryFitRecord] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sampler": self.sampler,
            "objective": self.objective,
            "seed": self.seed,
            "trials": self.trials,
            "alpha_range": list(self.alpha_range),
            "beta_range": list(self.beta_range),
            "per_category": {
                key: {
                    "best_loss": rec.best_loss,
                    "initializer_loss": rec.initializer_loss,
                    "trials_run": rec.trials_run,
                    "degenerate": rec.degenerate,
                    "range_widened": rec.range_widened,
                }
                for key, rec in self.per_category.items()
            },
        }

    def to_text(self) -> str:
        lines = [
            f"calibration fit: sampler={self.sampler} objective={self.objective} "
            f"trials={self.trials} seed={self.seed}",
            f"search ranges: alpha={list(self.alpha_range)} beta={list(self.beta_range)}",
        ]
        for key, rec in self.per_category.items():
            notes = []
            if rec.degenerate:
                notes.append("degenerate (constant probabilities)")
            if rec.range_widened:
                notes.append("range widened to include initializer")
            suffix = f"  [{'; '.join(notes)}]" if notes else ""
            lines.append(
                f"  {key}: best RMSE {rec.best_loss:.6g} "
                f"(initializer {rec.initializer_loss:.6g}, {rec.trials_run} trials){suffix}"
            )
        return "\n".join(lines)


def apply_calibration(pbar: BehaviorVector, params: CalibrationParams) -> dict[str, float]:
    """y_hat_k = clip(alpha_k * pbar_k + beta_k, y_min_k, y_max_k)."""
    missing = [k for k in pbar.categories if k not in params.per_category]
    if missing:
        raise DataError(f"calibration params missing categories {missing}")
    return {key: params.per_category[key].apply(pbar[key]) for key in pbar.categories}


PairsByCategory = Mapping[str, Sequence[tuple[float, float]]]


def pair_by_date(
    aggregates: Mapping, observations
) -> list[tuple[BehaviorVector, ObservationRecord]]:
    """Align simulated aggregates with observations on common dates."""
    by_date = observations.by_date()
    pairs = []
    for date in sorted(aggregates.keys()):
        if date in by_date:
            pairs.append((aggregates[date], by_date[date]))
    return pairs


def _pairs_from_training(
    train: Sequence[tuple[BehaviorVector, ObservationRecord]]
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    if len(train) < 2:
        raise DataError(f"calibration needs >= 2 training dates, got {len(train)}")
    categories = train[0][0].categories
    out = {}
    for key in categories:
        p = np.array([vec[key] for vec, _ in train], dtype=float)
        y = np.array([obs.values[key] for _, obs in train], dtype=float)
        out[key] = (p, y)
    return out


def _ols_line(p: np.ndarray, y: np.ndarray) -> tuple[float, float, bool]:
    """Ordinary least squares slope/intercept; degenerate flat inputs get
    slope 0 and the mean target."""
    var = float(np.var(p))
    if var < 1e-12:
        return 0.0, float(np.mean(y)), True
    slope = float(np.cov(p, y, bias=True)[0, 1] / var)
    intercept = float(np.mean(y) - slope * np.mean(p))
    return slope, intercept, False


def least_squares_fit(
    pairs: PairsByCategory,
    clip_bounds: tuple[float, float] = DEFAULT_CLIP_BOUNDS,
) -> CalibrationParams:
    """Closed-form per-category OLS of the unclipped map.

    Serves both as the sampler's trial-0 initializer and as an independent
    check on fitted results. Clip bounds are set to the configured defaults,
    not fitted.
    """
    per_category = {}
    for key, cat_pairs in pairs.items():
        arr = np.asarray(list(cat_pairs), dtype=float)
        if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] != 2:
            raise DataError(f"category {key!r}: need >= 2 (probability, observation) pairs")
        alpha, beta, _ = _ols_line(arr[:, 0], arr[:, 1])
        per_category[key] = CategoryCalibration(
            alpha=alpha, beta=beta, y_min=clip_bounds[0], y_max=clip_bounds[1]
        )
    return CalibrationParams(per_category)


# ---------------------------------------------------------------------------
# Density-guided search
# ---------------------------------------------------------------------------


def _silverman_bandwidth(samples: np.ndarray, width: float) -> float:
    n = len(samples)
    spread = float(np.std(samples))
    bw = 1.06 * spread * n ** (-0.2) if spread > 0 else 0.0
    return max(bw, 1e-3 * width)


def _kde_logpdf(x: np.ndarray, samples: np.ndarray, bandwidth: float) -> np.ndarray:
    z = (x[:, None] - samples[None, :]) / bandwidth
    log_kernels = -0.5 * z**2 - math.log(bandwidth * math.sqrt(2 * math.pi))
    max_log = np.max(log_kernels, axis=1, keepdims=True)
    return (
        max_log[:, 0]
        + np.log(np.mean(np.exp(log_kernels - max_log), axis=1))
    )


def _suggest_tpe(
    rng: np.random.Generator,
    history_x: np.ndarray,  # (n_trials, n_dims)
    history_loss: np.ndarray,
    bounds: Sequence[tuple[float, float]],
) -> np.ndarray:
    """One suggestion: sample candidates from the good-trial density per
    dimension and keep the candidate with the highest good/rest log-ratio."""
    n = len(history_loss)
    order = np.argsort(history_loss, kind="stable")
    n_good = max(1, math.ceil(TPE_GAMMA * n))
    good_idx, rest_idx = order[:n_good], order[n_good:]
    n_dims = history_x.shape[1]
    candidates = np.empty((TPE_CANDIDATES, n_dims))
    score = np.zeros(TPE_CANDIDATES)
    for d in range(n_dims):
        low, high = bounds[d]
        width = high - low
        good = history_x[good_idx, d]
        bw_good = _silverman_bandwidth(good, width)
        centers = good[rng.integers(0, len(good), TPE_CANDIDATES)]
        cand = np.clip(centers + rng.normal(0.0, bw_good, TPE_CANDIDATES), low, high)
        candidates[:, d] = cand
        score += _kde_logpdf(cand, good, bw_good)
        if len(rest_idx) > 0:
            rest = history_x[rest_idx, d]
            score -= _kde_logpdf(cand, rest, _silverman_bandwidth(rest, width))
    return candidates[int(np.argmax(score))]


def _run_search(
    loss_fn: Callable[[np.ndarray], float],
    bounds: Sequence[tuple[float, float]],
    init: np.ndarray,
    trials: int,
    sampler: str,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float, float]:
    """Minimize loss_fn over a box, always evaluating ``init`` as trial 0.

    Returns (best_x, best_loss, initializer_loss).
    """
    history_x = [np.asarray(init, dtype=float)]
    history_loss = [loss_fn(history_x[0])]
    init_loss = history_loss[0]
    if sampler == "least-squares-init":
        return history_x[0], init_loss, init_loss
    lows = np.array([b[0] for b in bounds])
    highs = np.array([b[1] for b in bounds])
    for t in range(1, trials):
        if sampler == "random" or t <= TPE_STARTUP_TRIALS:
            x = rng.uniform(lows, highs)
        else:
            x = _suggest_tpe(rng, np.vstack(history_x), np.array(history_loss), bounds)
        history_x.append(x)
        history_loss.append(loss_fn(x))
    best = int(np.argmin(history_loss))
    return history_x[best], history_loss[best], init_loss


def _clipped_rmse(
    alpha: float, beta: float, p: np.ndarray, y: np.ndarray, clip: tuple[float, float]
) -> float:
    pred = np.clip(alpha * p + beta, clip[0], clip[1])
    return float(np.sqrt(np.mean((pred - y) ** 2)))


def _widen(target: float, rng_: tuple[float, float]) -> tuple[tuple[float, float], bool]:
    low, high = rng_
    if low <= target <= high:
        return (low, high), False
    pad = 0.1 * (high - low)
    return (min(low, target - pad), max(high, target + pad)), True


def fit_calibration(
    train: Sequence[tuple[BehaviorVector, ObservationRecord]],
    config: FitConfig,
) -> tuple[CalibrationParams, FitReport]:
    """Fit (alpha_k, beta_k) per category by minimizing clipped-prediction RMSE.

    Under the default per-category-independent objective each category is
    searched alone (the map is separable); the macro-average objective
    searches all categories jointly on the mean of per-category RMSEs. The
    least-squares line is trial 0 either way, so the best trial never loses
    to the initializer. Search ranges that exclude the initializer are
    widened to cover it and flagged in the report.
    """
    pairs = _pairs_from_training(train)
    report = FitReport(
        sampler=config.sampler,
        objective=config.objective,
        seed=config.seed,
        trials=config.trials,
        alpha_range=config.alpha_range,
        beta_range=config.beta_range,
    )
    clip = config.clip_bounds
    init_lines = {key: _ols_line(p, y) for key, (p, y) in pairs.items()}

    if config.objective == "per-category-independent":
        per_category = {}
        for k_index, (key, (p, y)) in enumerate(pairs.items()):
            init_alpha, init_beta, _ = init_lines[key]
            a_range, a_widened = _widen(init_alpha, config.alpha_range)
            b_range, b_widened = _widen(init_beta, config.beta_range)
            rng = np.random.default_rng([config.seed, k_index])
            best, best_loss, init_loss = _run_search(
                loss_fn=lambda x, p=p, y=y: _clipped_rmse(x[0], x[1], p, y, clip),
                bounds=[a_range, b_range],
                init=np.array([init_alpha, init_beta]),
                trials=config.trials,
                sampler=config.sampler,
                rng=rng,
            )
            per_category[key] = CategoryCalibration(
                alpha=float(best[0]), beta=float(best[1]), y_min=clip[0], y_max=clip[1]
            )
            report.per_category[key] = CategoryFitRecord(
                best_loss=best_loss,
                initializer_loss=init_loss,
                trials_run=config.trials if config.sampler != "least-squares-init" else 1,
                degenerate=float(np.var(p)) < 1e-12,
                range_widened=a_widened or b_widened,
            )
        return CalibrationParams(per_category), report

    # macro-average: one joint search over all (alpha_k, beta_k)
    keys = list(pairs.keys())
    bounds: list[tuple[float, float]] = []
    init_vec: list[float] = []
    widened = False
    for key in keys:
        init_alpha, init_beta, _ = init_lines[key]
        a_range, aw = _widen(init_alpha, config.alpha_range)
        b_range, bw = _widen(init_beta, config.beta_range)
        widened = widened or aw or bw
        bounds.extend([a_range, b_range])
        init_vec.extend([init_alpha, init_beta])

    def macro_loss(x: np.ndarray) -> float:
        losses = [
            _clipped_rmse(x[2 * i], x[2 * i + 1], *pairs[key], clip)
            for i, key in enumerate(keys)
        ]
        return float(np.mean(losses))

    rng = np.random.default_rng(config.seed)
    best, best_loss, init_loss = _run_search(
        macro_loss, bounds, np.array(init_vec), config.trials, config.sampler, rng
    )
    per_category = {}
    for i, key in enumerate(keys):
        p, y = pairs[key]
        per_category[key] = CategoryCalibration(
            alpha=float(best[2 * i]), beta=float(best[2 * i + 1]), y_min=clip[0], y_max=clip[1]
        )
        report.per_category[key] = CategoryFitRecord(
            best_loss=_clipped_rmse(best[2 * i], best[2 * i + 1], p, y, clip),
            initializer_loss=_clipped_rmse(
                init_vec[2 * i], init_vec[2 * i + 1], p, y, clip
            ),
            trials_run=config.trials if config.sampler != "least-squares-init" else 1,
            degenerate=float(np.var(p)) < 1e-12,
            range_widened=widened,
        )
    return CalibrationParams(per_category), report


def fit_single_slope(
    train: Sequence[tuple[BehaviorVector, ObservationRecord]],
    config: FitConfig,
) -> tuple[CalibrationParams, FitReport]:
    """Fit one shared (alpha, beta) across all categories (ablation arm).

    The shared pair minimizes the macro-average RMSE; the initializer is the
    least-squares line through the pooled (probability, observation) pairs.
    """
    pairs = _pairs_from_training(train)
    clip = config.clip_bounds
    pooled_p = np.concatenate([p for p, _ in pairs.values()])
    pooled_y = np.concatenate([y for _, y in pairs.values()])
    alpha0, beta0, degenerate = _ols_line(pooled_p, pooled_y)
    a_range, aw = _widen(alpha0, config.alpha_range)
    b_range, bw = _widen(beta0, config.beta_range)

    def shared_loss(x: np.ndarray) -> float:
        losses = [_clipped_rmse(x[0], x[1], p, y, clip) for p, y in pairs.values()]
        return float(np.mean(losses))

    rng = np.random.default_rng(config.seed)
    best, best_loss, init_loss = _run_search(
        shared_loss, [a_range, b_range], np.array([alpha0, beta0]),
        config.trials, config.sampler, rng,
    )
    per_category = {
        key: CategoryCalibration(float(best[0]), float(best[1]), clip[0], clip[1])
        for key in pairs
    }
    report = FitReport(
        sampler=config.sampler,
        objective="shared-single-slope",
        seed=config.seed,
        trials=config.trials,
        alpha_range=config.alpha_range,
        beta_range=config.beta_range,
    )
    for key, (p, y) in pairs.items():
        report.per_category[key] = CategoryFitRecord(
            best_loss=_clipped_rmse(best[0], best[1], p, y, clip),
            initializer_loss=_clipped_rmse(alpha0, beta0, p, y, clip),
            trials_run=config.trials if config.sampler != "least-squares-init" else 1,
            degenerate=degenerate,
            range_widened=aw or bw,
        )
    return CalibrationParams(per_category), report


# ---------------------------------------------------------------------------
# Artifact IO
# ---------------------------------------------------------------------------

ARTIFACT_SCHEMA_VERSION = 1


def save_calibration(
    params: CalibrationParams,
    path: str | Path,
    report: FitReport | None = None,
    config_hash: str | None = None,
) -> None:
    payload = {
        "schema_version": ARTIFACT_SCHEMA_VERSION,
        "config_hash": config_hash,
        "categories": params.to_dict(),
        "fit": report.to_dict() if report is not None else None,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_calibration(
    path: str | Path, expected_config_hash: str | None = None
) -> tuple[CalibrationParams, dict]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"calibration artifact not found: {p}")
    payload = json.loads(p.read_text(encoding="utf-8"))
    if payload.get("schema_version") != ARTIFACT_SCHEMA_VERSION:
        raise DataError(
            f"{p}: unsupported calibration artifact version {payload.get('schema_version')}"
        )
    if expected_config_hash is not None and payload.get("config_hash") not in (
        None,
        expected_config_hash,
    ):
        raise ConfigError(
            f"{p}: calibration artifact was fitted under config {payload.get('config_hash')[:12]}..., "
            f"current config is {expected_config_hash[:12]}...; refusing to mix artifacts"
        )
    return CalibrationParams.from_dict(payload["categories"]), payload
