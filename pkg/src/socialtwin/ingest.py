"""Load, validate, and temporally split policy and observation time series.

CSV layouts are configuration-driven: callers name the columns, so exports
from different trackers load without code changes. Dates are daily ISO-8601
calendar dates; intra-day data is out of scope. All loaders return records
sorted ascending by date and report dropped rows rather than imputing.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TypeVar

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class PolicyRecord:
    """One day of policy signal."""

    date: dt.date
    stringency: float
    government_response: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.stringency <= 100.0:
            raise DataError(
                f"stringency must be in [0, 100], got {self.stringency} on {self.date}"
            )
        if self.government_response is not None and not 0.0 <= self.government_response <= 100.0:
            raise DataError(
                f"government_response must be in [0, 100], got "
                f"{self.government_response} on {self.date}"
            )


@dataclass(frozen=True)
class ObservationRecord:
    """Observed per-category metrics for one day, in percent-change units."""

    date: dt.date
    values: dict[str, float]


@dataclass(frozen=True)
class ObservationSeries:
    """Dated sequence of observation records over a fixed category set."""

    categories: tuple[str, ...]
    records: tuple[ObservationRecord, ...]

    def __post_init__(self):
        seen: set[dt.date] = set()
        prev: dt.date | None = None
        for rec in self.records:
            if rec.date in seen:
                raise DataError(f"duplicate observation date {rec.date}")
            if prev is not None and rec.date < prev:
                raise DataError("observation records must be sorted ascending by date")
            if tuple(rec.values.keys()) != self.categories:
                raise DataError(
                    f"record {rec.date} has categories {tuple(rec.values)}, "
                    f"expected {self.categories}"
                )
            seen.add(rec.date)
            prev = rec.date

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def dates(self) -> list[dt.date]:
        return [r.date for r in self.records]

    def by_date(self) -> dict[dt.date, ObservationRecord]:
        return {r.date: r for r in self.records}

    def column(self, category: str) -> list[float]:
        if category not in self.categories:
            raise DataError(f"unknown category {category!r}; have {self.categories}")
        return [r.values[category] for r in self.records]

    def restrict(self, date_range: "DateRange") -> "ObservationSeries":
        return ObservationSeries(
            self.categories,
            tuple(r for r in self.records if date_range.contains(r.date)),
        )


@dataclass(frozen=True)
class DateRange:
    """Inclusive calendar-date range."""

    start: dt.date
    end: dt.date

    def __post_init__(self):
        if self.start > self.end:
            raise ConfigError(f"date range start {self.start} is after end {self.end}")

    def contains(self, date: dt.date) -> bool:
        return self.start <= date <= self.end


@dataclass(frozen=True)
class TemporalSplit:
    """Strictly ordered, disjoint train/validation/test date ranges."""

    train: DateRange
    validation: DateRange
    test: DateRange

    def __post_init__(self):
        if not (self.train.end < self.validation.start and self.validation.end < self.test.start):
            raise ConfigError(
                "split ranges must be disjoint and ordered train < validation < test: "
                f"train={self.train}, validation={self.validation}, test={self.test}"
            )

    def range_for(self, name: str) -> DateRange:
        try:
            return {"train": self.train, "validation": self.validation, "test": self.test}[name]
        except KeyError:
            raise ConfigError(f"unknown split name {name!r}") from None


@dataclass
class LoadReport:
    """Counts of rows dropped while loading a CSV."""

    path: str
    rows_read: int = 0
    rows_kept: int = 0
    dropped: list[tuple[int, str]] = field(default_factory=list)  # (row index, reason)

    @property
    def n_dropped(self) -> int:
        return len(self.dropped)

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "rows_read": self.rows_read,
            "rows_kept": self.rows_kept,
            "dropped": [{"row": r, "reason": why} for r, why in self.dropped],
        }


def _parse_date(raw: str, path: str, row: int) -> dt.date:
    try:
        return dt.date.fromisoformat(raw.strip())
    except ValueError:
        raise DataError(f"{path}: row {row}: unparseable date {raw!r}") from None


def _parse_float(raw: str, path: str, row: int, column: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise DataError(
            f"{path}: row {row}: unparseable number {raw!r} in column {column!r}"
        ) from None


def _open_reader(path: str | Path):
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {p}")
    return p.open("r", encoding="utf-8", newline="")


def _require_columns(header: Sequence[str], required: Iterable[str], path: str) -> None:
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"{path}: missing required columns {missing}; header has {list(header)}")


def load_policy_csv(
    path: str | Path,
    column_map: dict[str, str] | None = None,
) -> tuple[list[PolicyRecord], LoadReport]:
    """Load a policy-signal CSV into PolicyRecord rows sorted by date.

    ``column_map`` names the columns: keys ``date`` and ``stringency`` are
    required, ``government_response`` optional. Rows with an empty stringency
    cell are dropped and counted in the returned LoadReport; malformed dates
    or numbers raise DataError naming the offending row.
    """
    cols = {"date": "date", "stringency": "stringency"}
    cols.update(column_map or {})
    report = LoadReport(path=str(path))
    records: list[PolicyRecord] = []
    with _open_reader(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return [], report
        required = [cols["date"], cols["stringency"]]
        gov_col = cols.get("government_response")
        if gov_col is not None and gov_col not in reader.fieldnames:
            gov_col = None
        _require_columns(reader.fieldnames, required, str(path))
        for i, row in enumerate(reader, start=2):  # row 1 is the header
            report.rows_read += 1
            raw_date = (row.get(cols["date"]) or "").strip()
            raw_str = (row.get(cols["stringency"]) or "").strip()
            if not raw_str:
                report.dropped.append((i, "missing stringency"))
                continue
            date = _parse_date(raw_date, str(path), i)
            stringency = _parse_float(raw_str, str(path), i, cols["stringency"])
            gov = None
            if gov_col:
                raw_gov = (row.get(gov_col) or "").strip()
                if raw_gov:
                    gov = _parse_float(raw_gov, str(path), i, gov_col)
            records.append(PolicyRecord(date=date, stringency=stringency, government_response=gov))
    dates = [r.date for r in records]
    if len(set(dates)) != len(dates):
        dupes = sorted({d for d in dates if dates.count(d) > 1})
        raise DataError(f"{path}: duplicate policy dates {dupes}")
    records.sort(key=lambda r: r.date)
    report.rows_kept = len(records)
    return records, report


def load_observations_csv(
    path: str | Path,
    category_columns: dict[str, str],
    date_column: str = "date",
) -> tuple[ObservationSeries, LoadReport]:
    """Load an observations CSV into an ObservationSeries.

    ``category_columns`` maps each category key to its CSV column. Rows
    missing any category value are excluded whole (per-category imputation
    would contaminate downstream error metrics) and counted in the report.
    Duplicate dates are an error naming the date.
    """
    report = LoadReport(path=str(path))
    categories = tuple(category_columns.keys())
    records: list[ObservationRecord] = []
    with _open_reader(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return ObservationSeries(categories, ()), report
        _require_columns(reader.fieldnames, [date_column, *category_columns.values()], str(path))
        for i, row in enumerate(reader, start=2):
            report.rows_read += 1
            date = _parse_date((row.get(date_column) or "").strip(), str(path), i)
            raw_values = {key: (row.get(col) or "").strip() for key, col in category_columns.items()}
            missing = [key for key, raw in raw_values.items() if not raw]
            if missing:
                report.dropped.append((i, f"missing values for {missing}"))
                continue
            values = {
                key: _parse_float(raw, str(path), i, category_columns[key])
                for key, raw in raw_values.items()
            }
            records.append(ObservationRecord(date=date, values=values))
    dates = [r.date for r in records]
    dupes = sorted({d for d in dates if dates.count(d) > 1})
    if dupes:
        raise DataError(f"{path}: duplicate observation dates {[d.isoformat() for d in dupes]}")
    records.sort(key=lambda r: r.date)
    report.rows_kept = len(records)
    return ObservationSeries(categories, tuple(records)), report


def write_observations_csv(
    series: ObservationSeries,
    path: str | Path,
    category_columns: dict[str, str] | None = None,
    date_column: str = "date",
) -> None:
    """Write a series back to CSV (inverse of load_observations_csv)."""
    colmap = category_columns or {c: c for c in series.categories}
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([date_column, *(colmap[c] for c in series.categories)])
        for rec in series.records:
            writer.writerow(
                [rec.date.isoformat(), *(repr(rec.values[c]) for c in series.categories)]
            )


Dated = TypeVar("Dated")


def split_by_dates(
    series: Sequence[Dated], split: TemporalSplit
) -> tuple[list[Dated], list[Dated], list[Dated]]:
    """Partition any dated sequence into (train, validation, test).

    Records outside all three ranges are excluded. Order is preserved within
    each partition; a record lands in at most one partition because the split
    ranges are disjoint by construction.
    """
    train: list[Dated] = []
    val: list[Dated] = []
    test: list[Dated] = []
    for rec in series:
        date = rec.date
        if split.train.contains(date):
            train.append(rec)
        elif split.validation.contains(date):
            val.append(rec)
        elif split.test.contains(date):
            test.append(rec)
    return train, val, test


def split_observations(
    series: ObservationSeries, split: TemporalSplit
) -> tuple[ObservationSeries, ObservationSeries, ObservationSeries]:
    """split_by_dates specialised to ObservationSeries (preserves the type)."""
    train, val, test = split_by_dates(series.records, split)
    return (
        ObservationSeries(series.categories, tuple(train)),
        ObservationSeries(series.categories, tuple(val)),
        ObservationSeries(series.categories, tuple(test)),
    )
