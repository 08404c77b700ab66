import csv
import datetime as dt
from pathlib import Path

import pytest
import yaml

from socialtwin.config import load_profile, packaged_template
from socialtwin.ingest import DateRange, TemporalSplit, write_observations_csv
from socialtwin.schema import CategorySchema
from socialtwin.synthetic import default_oracle_params, make_synthetic_dataset


@pytest.fixture(scope="session")
def schema() -> CategorySchema:
    return CategorySchema.from_dicts(load_profile("pandemic-uae")["categories"])


@pytest.fixture(scope="session")
def pandemic_template() -> str:
    return packaged_template("pandemic_uae.txt")


@pytest.fixture(scope="session")
def oracle_params():
    return default_oracle_params()


@pytest.fixture(scope="session")
def synth_dataset():
    """One-year zero-noise dataset shared by read-only tests."""
    return make_synthetic_dataset(days=365)


@pytest.fixture(scope="session")
def paper_style_split() -> TemporalSplit:
    return TemporalSplit(
        train=DateRange(dt.date(2020, 4, 1), dt.date(2021, 3, 31)),
        validation=DateRange(dt.date(2021, 4, 1), dt.date(2021, 9, 30)),
        test=DateRange(dt.date(2021, 10, 1), dt.date(2022, 6, 30)),
    )


def write_run_workspace(
    root: Path,
    dataset,
    split: dict,
    fit_trials: int = 40,
    gbm_trees: int = 60,
    engine: dict | None = None,
    seeds: dict | None = None,
) -> Path:
    """Materialize CSVs, a run config, and a scenario file under ``root``.

    Returns the config path. Used by CLI and acceptance tests.
    """
    root.mkdir(parents=True, exist_ok=True)
    with (root / "policy.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "stringency"])
        for rec in dataset.policy:
            writer.writerow([rec.date.isoformat(), repr(rec.stringency)])
    write_observations_csv(
        dataset.observations, root / "observations.csv", dataset.schema.observation_columns
    )
    if engine is None:
        engine = {
            "kind": "synthetic-oracle",
            "retry_limit": 3,
            "oracle": {
                "intercepts": dataset.oracle_params.intercepts,
                "slopes": dataset.oracle_params.slopes,
                "attribute_offsets": dataset.oracle_params.attribute_offsets,
                "noise_scale": dataset.oracle_params.noise_scale,
            },
        }
    config = {
        "profile": "pandemic-uae",
        "paths": {
            "policy_csv": "policy.csv",
            "observations_csv": "observations.csv",
            "cache_dir": "cache",
            "output_dir": "out",
        },
        "split": split,
        "engine": engine,
        "fit": {"trials": fit_trials, "sampler": "tpe-style"},
        "gbm": {"n_trees": gbm_trees},
        "seeds": seeds or {"population": dataset.population_seed, "fit": 3, "gbm": 5},
    }
    config_path = root / "run.yaml"
    config_path.write_text(yaml.safe_dump(config), encoding="utf-8")
    scenarios = [
        {"name": "relaxed", "date": "2020-04-15", "stringency_override": 60},
        {"name": "baseline", "date": "2020-04-15", "stringency_override": 90},
        {"name": "extreme", "date": "2020-04-15", "stringency_override": 100},
    ]
    (root / "scenarios.yaml").write_text(yaml.safe_dump(scenarios), encoding="utf-8")
    return config_path


SPLIT_18MO = {
    "train": {"start": "2020-04-01", "end": "2021-03-31"},
    "validation": {"start": "2021-04-01", "end": "2021-06-30"},
    "test": {"start": "2021-07-01", "end": "2021-09-27"},
}
