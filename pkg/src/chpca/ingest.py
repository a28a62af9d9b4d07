"""Parsing of raw case data and auxiliary attribute files.

Turns delimited case exports into gap-free :class:`~chpca.panel.Panel`
objects and joins per-country attribute files (region, population, GDP,
policy indices, vaccination, democracy) into an :class:`AuxiliaryTable`
keyed to a reference year.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import IO, Iterable, Mapping

import numpy as np

from .panel import Panel

__all__ = [
    "CaseRecord",
    "IngestConfig",
    "ParseResult",
    "AuxiliaryTable",
    "PERIODS",
    "NUMERIC_ATTRIBUTES",
    "GROUPING_ATTRIBUTES",
    "parse_cases",
    "clean_cases",
    "build_panel",
    "load_auxiliary",
    "rank_normalize",
]

logger = logging.getLogger("chpca.ingest")

#: Calendar bounds of each analysis window. The entire period runs from the
#: first reporting day (2020-01-03) through the end of 2022; the 2020 slice
#: therefore starts on January 3 as well.
PERIODS: dict[str, tuple[date, date]] = {
    "entire": (date(2020, 1, 3), date(2022, 12, 31)),
    "2020": (date(2020, 1, 3), date(2020, 12, 31)),
    "2021": (date(2021, 1, 1), date(2021, 12, 31)),
    "2022": (date(2022, 1, 1), date(2022, 12, 31)),
}

#: Outer window covered by ingestion (reporting days kept before slicing).
FULL_WINDOW: tuple[date, date] = (date(2020, 1, 3), date(2023, 1, 5))

_CODE_RE = re.compile(r"^[A-Za-z]{2,3}$")

#: Attribute files understood by :func:`load_auxiliary`.
NUMERIC_ATTRIBUTES = (
    "population",
    "gdp",
    "stringency",
    "containment",
    "vaccination",
    "democracy",
)

#: The seven per-country characterizations used for grouping eigenvector
#: components, in report order.
GROUPING_ATTRIBUTES = (
    "region",
    "population",
    "gdp_per_capita",
    "stringency",
    "containment",
    "vaccination_per_capita",
    "democracy",
)

#: Attributes whose entire-period value is the mean over the yearly values;
#: the rest use the 2020 value for the entire-period analysis.
_PERIOD_MEAN_ATTRIBUTES = frozenset({"stringency", "containment", "vaccination"})


@dataclass(frozen=True)
class CaseRecord:
    """One (country, day) observation of newly reported cases."""

    country_code: str
    day: date
    new_cases: float


@dataclass
class IngestConfig:
    """Column mapping and filters for the raw case export.

    Defaults target the WHO dashboard CSV header names. ``countries`` limits
    the panel to an explicit code list; when omitted, any 2- or 3-letter
    alpha code is kept and other rows (entities without an ISO 3166-1 code)
    are excluded.
    """

    date_column: str = "Date_reported"
    country_column: str = "Country_code"
    cases_column: str = "New_cases"
    delimiter: str = ","
    countries: list[str] | None = None
    start: date = FULL_WINDOW[0]
    end: date = FULL_WINDOW[1]

    def __post_init__(self) -> None:
        if self.end < self.start:
            raise ValueError("ingest window end precedes start")


@dataclass
class ParseResult:
    """Records plus the provenance needed for the ingest sidecar."""

    records: list[CaseRecord]
    countries: list[str]
    excluded_countries: list[str]
    n_source_rows: int
    n_filled_days: int
    n_duplicate_rows: int


def parse_cases(source: str | Path | IO[str], config: IngestConfig | None = None) -> ParseResult:
    """Parse a delimited case export into per-(country, day) records.

    Countries outside the configured list are excluded; days missing from
    the source within the configured window are synthesized with
    ``new_cases = 0`` so downstream panels are gap-free. Malformed rows
    raise ``ValueError`` with the offending line number.
    """
    config = config or IngestConfig()
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return parse_cases(fh, config)

    reader = csv.DictReader(source, delimiter=config.delimiter)
    if reader.fieldnames is None:
        raise ValueError("empty case input: no header row")
    for col in (config.date_column, config.country_column, config.cases_column):
        if col not in reader.fieldnames:
            raise ValueError(f"case input is missing required column {col!r}")

    wanted = set(config.countries) if config.countries is not None else None
    by_key: dict[tuple[str, date], float] = {}
    seen: set[str] = set()
    excluded: set[str] = set()
    n_rows = 0
    n_dup = 0
    for row in reader:
        n_rows += 1
        lineno = reader.line_num
        code = (row[config.country_column] or "").strip()
        if wanted is not None:
            if code not in wanted:
                excluded.add(code)
                continue
        elif not _CODE_RE.match(code):
            excluded.add(code)
            continue
        try:
            day = date.fromisoformat((row[config.date_column] or "").strip())
        except ValueError:
            raise ValueError(f"line {lineno}: bad date {row[config.date_column]!r}") from None
        raw = (row[config.cases_column] or "").strip()
        try:
            cases = int(raw) if raw else 0
        except ValueError:
            raise ValueError(f"line {lineno}: bad case count {raw!r}") from None
        if day < config.start or day > config.end:
            continue
        key = (code, day)
        if key in by_key:
            n_dup += 1
        by_key[key] = float(cases)
        seen.add(code)
    if n_rows == 0:
        raise ValueError("empty case input: no data rows")
    if not seen:
        raise ValueError("no case records matched the configured countries/window")

    countries = sorted(seen)
    days = _day_range(config.start, config.end)
    records: list[CaseRecord] = []
    n_filled = 0
    for code in countries:
        for day in days:
            value = by_key.get((code, day))
            if value is None:
                value = 0.0
                n_filled += 1
            records.append(CaseRecord(code, day, value))
    return ParseResult(records, countries, sorted(excluded), n_rows, n_filled, n_dup)


def clean_cases(records: Iterable[CaseRecord]) -> tuple[list[CaseRecord], int]:
    """Replace every non-positive case count with 0.1.

    Returns the cleaned records and the number of replacements. Idempotent:
    already-cleaned records pass through unchanged.
    """
    cleaned: list[CaseRecord] = []
    n_replaced = 0
    for rec in records:
        if rec.new_cases <= 0:
            cleaned.append(CaseRecord(rec.country_code, rec.day, 0.1))
            n_replaced += 1
        else:
            cleaned.append(rec)
    return cleaned, n_replaced


def build_panel(records: Iterable[CaseRecord], period: str) -> Panel:
    """Assemble records into a Panel sliced to the named analysis window.

    Countries are ordered by code and every country must cover every day of
    the slice, so the result is deterministic and gap-free.
    """
    if period not in PERIODS:
        raise ValueError(f"unknown period {period!r}; expected one of {sorted(PERIODS)}")
    start, end = PERIODS[period]
    by_country: dict[str, dict[date, float]] = {}
    for rec in records:
        if start <= rec.day <= end:
            by_country.setdefault(rec.country_code, {})[rec.day] = rec.new_cases
    if not by_country:
        raise ValueError(f"period {period!r} contains no days of the supplied records")

    all_days = sorted({d for days in by_country.values() for d in days})
    first, last = all_days[0], all_days[-1]
    dates = _day_range(first, last)
    countries = sorted(by_country)
    values = np.empty((len(countries), len(dates)))
    for i, code in enumerate(countries):
        days = by_country[code]
        if len(days) != len(dates):
            missing = next(d for d in dates if d not in days)
            raise ValueError(f"country {code} has no record for {missing}; records are not gap-free")
        values[i] = [days[d] for d in dates]
    return Panel(countries, dates, values)


def _day_range(start: date, end: date) -> list[date]:
    n = (end - start).days + 1
    return [start + timedelta(days=k) for k in range(n)]


# ---------------------------------------------------------------------------
# Auxiliary attributes
# ---------------------------------------------------------------------------

@dataclass
class AuxiliaryTable:
    """Per-country attributes for one reference year (or the entire period).

    ``region[i]`` is the region label of ``countries[i]`` or ``None``;
    numeric attributes live in ``values`` as arrays with NaN marking a
    missing record. Countries without a record are flagged, never dropped.
    """

    countries: list[str]
    year: str
    region: list[str | None]
    values: dict[str, np.ndarray] = field(default_factory=dict)

    def attribute(self, name: str) -> np.ndarray:
        if name not in self.values:
            raise KeyError(f"attribute {name!r} not loaded; have {sorted(self.values)}")
        return self.values[name]

    def missing_count(self, name: str) -> int:
        if name == "region":
            return sum(r is None for r in self.region)
        return int(np.isnan(self.attribute(name)).sum())

    def rank_values(self, name: str) -> np.ndarray:
        """Rank-normalized attribute values on [0, 1], NaN preserved."""
        return rank_normalize(self.attribute(name), self.countries)


def load_auxiliary(
    files: Mapping[str, str | Path],
    year: str,
    countries: list[str],
    delimiter: str = ",",
) -> AuxiliaryTable:
    """Join auxiliary files on country code for one analysis window.

    ``files`` maps attribute names (``region`` plus any of
    ``population, gdp, stringency, containment, vaccination, democracy``)
    to delimited files. The region file has columns ``country,region``; the
    numeric files have ``country,year,value``.

    For a yearly window each attribute uses that year's value. For
    ``year="entire"``, population, GDP and democracy use their 2020 values
    while the policy indices and vaccination use the mean over 2020-2022,
    matching how the figures pair attributes with the full window.

    GDP per capita and vaccination per capita are derived wherever both
    inputs are present. Unknown country codes are skipped with a warning.
    """
    if year not in PERIODS:
        raise ValueError(f"unknown year {year!r}; expected one of {sorted(PERIODS)}")
    unknown = [name for name in files if name != "region" and name not in NUMERIC_ATTRIBUTES]
    if unknown:
        raise ValueError(f"unknown auxiliary attributes {unknown}; expected region or {NUMERIC_ATTRIBUTES}")

    index = {code: i for i, code in enumerate(countries)}
    table = AuxiliaryTable(list(countries), year, [None] * len(countries))

    for name, path in sorted(files.items()):
        if name == "region":
            for code, label in _read_region_file(path, delimiter):
                if code in index:
                    table.region[index[code]] = label
                else:
                    logger.warning("region file %s: unknown country %s skipped", path, code)
            continue
        per_year = _read_value_file(path, delimiter, index, name)
        values = np.full(len(countries), np.nan)
        if year == "entire":
            if name in _PERIOD_MEAN_ATTRIBUTES:
                years = [y for y in ("2020", "2021", "2022") if y in per_year]
                if years:
                    stacked = np.vstack([per_year[y] for y in years])
                    with np.errstate(invalid="ignore"):
                        values = np.nanmean(stacked, axis=0)
            else:
                values = per_year.get("2020", values)
        else:
            values = per_year.get(year, values)
        table.values[name] = values

    for derived, numer in (("gdp_per_capita", "gdp"), ("vaccination_per_capita", "vaccination")):
        if numer in table.values and "population" in table.values:
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = table.values[numer] / table.values["population"]
            ratio[~np.isfinite(ratio)] = np.nan
            table.values[derived] = ratio
    return table


def _read_region_file(path: str | Path, delimiter: str) -> list[tuple[str, str]]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None or "country" not in reader.fieldnames or "region" not in reader.fieldnames:
            raise ValueError(f"{path}: region file needs 'country,region' columns")
        for row in reader:
            code = (row["country"] or "").strip()
            label = (row["region"] or "").strip()
            if code and label:
                out.append((code, label))
    return out


def _read_value_file(
    path: str | Path, delimiter: str, index: Mapping[str, int], name: str
) -> dict[str, np.ndarray]:
    """Read a country,year,value file into per-year arrays over the index."""
    per_year: dict[str, np.ndarray] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        required = {"country", "year", "value"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"{path}: attribute file needs 'country,year,value' columns")
        for row in reader:
            code = (row["country"] or "").strip()
            yr = (row["year"] or "").strip()
            raw = (row["value"] or "").strip()
            if not raw:
                continue
            if code not in index:
                logger.warning("%s file %s: unknown country %s skipped", name, path, code)
                continue
            try:
                value = float(raw)
            except ValueError:
                raise ValueError(f"{path}: line {reader.line_num}: bad value {raw!r}") from None
            per_year.setdefault(yr, np.full(len(index), np.nan))[index[code]] = value
    return per_year


def rank_normalize(values: np.ndarray, countries: list[str] | None = None) -> np.ndarray:
    """Map non-missing values to their rank on a uniform [0, 1] grid.

    NaN entries stay NaN. Ties are broken by country-code order so the
    result is deterministic; the output depends only on the ordering of the
    inputs, never on their magnitudes.
    """
    values = np.asarray(values, dtype=float)
    present = np.flatnonzero(~np.isnan(values))
    if present.size == 0:
        raise ValueError("rank_normalize: all values are missing")
    keys = countries if countries is not None else [str(i) for i in range(len(values))]
    order = sorted(present, key=lambda i: (values[i], keys[i]))
    out = np.full(len(values), np.nan)
    n = len(order)
    for rank, i in enumerate(order):
        out[i] = 0.5 if n == 1 else rank / (n - 1)
    return out
