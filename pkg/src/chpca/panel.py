"""Country-by-day panel container and its delimited-text round trip.

A :class:`Panel` is the carrier used through the whole pipeline: raw case
counts, cleaned counts, log ratios and standardized log ratios all live in
the same structure, a C x T real matrix with a country index and a
consecutive-day date index.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np

__all__ = ["Panel", "format_float"]


def format_float(x: float) -> str:
    """Render a float with 17 significant digits so it round-trips exactly."""
    return format(float(x), ".17g")


@dataclass
class Panel:
    """C countries x T consecutive days of real values.

    ``values[i, t]`` belongs to ``countries[i]`` on ``dates[t]``. Dates must
    be strictly consecutive calendar days and country codes unique; both are
    enforced at construction.
    """

    countries: list[str]
    dates: list[date]
    values: np.ndarray

    def __post_init__(self) -> None:
        self.countries = list(self.countries)
        self.dates = list(self.dates)
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("panel values must be a 2-d matrix")
        if self.values.shape != (len(self.countries), len(self.dates)):
            raise ValueError(
                f"panel shape {self.values.shape} does not match "
                f"{len(self.countries)} countries x {len(self.dates)} dates"
            )
        if len(set(self.countries)) != len(self.countries):
            raise ValueError("duplicate country codes in panel")
        one_day = timedelta(days=1)
        for prev, cur in zip(self.dates, self.dates[1:]):
            if cur - prev != one_day:
                raise ValueError(f"dates must be consecutive days; gap between {prev} and {cur}")

    @property
    def n_countries(self) -> int:
        return len(self.countries)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def row(self, country: str) -> np.ndarray:
        return self.values[self.countries.index(country)]

    def with_values(self, values: np.ndarray, dates: list[date] | None = None) -> "Panel":
        """Same countries (and dates unless replaced) with a new value matrix."""
        return Panel(self.countries, self.dates if dates is None else dates, values)

    def to_csv(self, path: str | Path) -> None:
        """Write as CSV: header row of ISO dates, first column country code."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["country"] + [d.isoformat() for d in self.dates])
            for code, row in zip(self.countries, self.values):
                writer.writerow([code] + [format_float(v) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Panel":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{path}: empty panel file") from None
            if len(header) < 2 or header[0] != "country":
                raise ValueError(f"{path}: expected header 'country,<date>,...'")
            dates = [date.fromisoformat(s) for s in header[1:]]
            countries: list[str] = []
            rows: list[list[float]] = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise ValueError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
                countries.append(row[0])
                try:
                    rows.append([float(v) for v in row[1:]])
                except ValueError as exc:
                    raise ValueError(f"{path}: line {lineno}: {exc}") from None
        if not countries:
            raise ValueError(f"{path}: panel has no rows")
        return cls(countries, dates, np.array(rows))
