"""Core records and CSV ingestion for the time-series and covariate inputs."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import SchemaError, ValidationError

logger = logging.getLogger(__name__)

TIMESERIES_COLUMNS = ("city_id", "county", "state", "date", "mobility", "new_cases")
COVARIATE_KEY_COLUMNS = ("city_id", "stay_at_home_date")
_ABSENT_DATE = {"", "na", "nan", "none"}
_ONE_DAY = timedelta(days=1)


def _frozen(values, dtype):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CityRecord:
    """One location with aligned daily mobility and new-case series."""

    city_id: str
    county: str
    state: str
    dates: tuple[date, ...]
    mobility: np.ndarray
    new_cases: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "mobility", _frozen(self.mobility, float))
        object.__setattr__(self, "new_cases", _frozen(self.new_cases, np.int64))
        problems = _record_problems(self)
        if problems:
            raise ValidationError(f"city {self.city_id}: " + "; ".join(problems))

    def __len__(self):
        return len(self.dates)

    def __eq__(self, other):
        if not isinstance(other, CityRecord):
            return NotImplemented
        return (
            (self.city_id, self.county, self.state, self.dates)
            == (other.city_id, other.county, other.state, other.dates)
            and np.array_equal(self.mobility, other.mobility)
            and np.array_equal(self.new_cases, other.new_cases)
        )

    __hash__ = None

    @property
    def total_cases(self) -> int:
        return int(self.new_cases.sum())


def _record_problems(rec: CityRecord) -> list[str]:
    problems = []
    n = len(rec.dates)
    if len(rec.mobility) != n or len(rec.new_cases) != n:
        problems.append(
            f"length mismatch: {n} dates, {len(rec.mobility)} mobility, "
            f"{len(rec.new_cases)} new_cases"
        )
        return problems
    if n < 3:
        problems.append(f"series has {n} days, need at least 3")
    for prev, cur in zip(rec.dates, rec.dates[1:]):
        if cur - prev != _ONE_DAY:
            if cur <= prev:
                problems.append(f"dates not strictly increasing at {cur.isoformat()}")
            else:
                problems.append(f"gap in dates: missing {(prev + _ONE_DAY).isoformat()}")
            break
    if not np.all(np.isfinite(rec.mobility)):
        problems.append("non-finite mobility value")
    elif np.any(rec.mobility < 0):
        bad = rec.dates[int(np.argmax(rec.mobility < 0))]
        problems.append(f"negative mobility on {bad.isoformat()}")
    if np.any(rec.new_cases < 0):
        bad = rec.dates[int(np.argmax(rec.new_cases < 0))]
        problems.append(f"negative new_cases on {bad.isoformat()}")
    return problems


@dataclass(frozen=True)
class CovariateRow:
    city_id: str
    stay_at_home_date: date | None
    covariates: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class SpatialWeights:
    """Neighbourhood weights used by Moran's I.

    ``weights[i, j]`` is the weight of ``ids[j]`` as a neighbour of ``ids[i]``.
    """

    ids: tuple[str, ...]
    weights: np.ndarray
    asymmetric: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        w = _frozen(self.weights, float)
        object.__setattr__(self, "weights", w)
        n = len(self.ids)
        if w.shape != (n, n):
            raise ValidationError(f"weights shape {w.shape} does not match {n} ids")
        if len(set(self.ids)) != n:
            raise ValidationError("duplicate ids in spatial weights")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("spatial weights must be finite and non-negative")
        if np.any(np.diag(w) != 0):
            raise ValidationError("spatial weights must have a zero diagonal")
        if not np.any(w > 0):
            raise ValidationError("spatial weights are all zero")
        if not self.asymmetric and not np.allclose(w, w.T, rtol=0, atol=1e-12):
            raise ValidationError("spatial weights are asymmetric; pass asymmetric=True")

    def reindex(self, ids: Sequence[str]) -> "SpatialWeights":
        pos = {c: i for i, c in enumerate(self.ids)}
        missing = [c for c in ids if c not in pos]
        if missing:
            raise ValidationError(f"ids missing from spatial weights: {missing[:5]}")
        idx = np.array([pos[c] for c in ids], dtype=int)
        return SpatialWeights(tuple(ids), self.weights[np.ix_(idx, idx)], self.asymmetric)


def _parse_date(text: str, where: str) -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError:
        raise ValidationError(f"{where}: invalid ISO date {text!r}") from None


def _require_columns(header, required, path):
    if header is None:
        raise SchemaError(required[0], path)
    cols = [h.strip() for h in header]
    for col in required:
        if col not in cols:
            raise SchemaError(col, path)
    return cols


def load_timeseries(
    path,
    date_range: tuple[date | str, date | str] | None = None,
    errors: str = "raise",
) -> list[CityRecord]:
    """Read the long-format time-series CSV into one record per city.

    Rows are grouped by ``city_id`` (first-appearance order) and sorted by
    date. ``date_range`` is inclusive on both ends. Cities that violate the
    record invariants (gaps, negative values, too short) raise a
    :class:`ValidationError` listing every offending city; with
    ``errors="skip"`` they are logged and left out instead.
    """
    if errors not in ("raise", "skip"):
        raise ValueError("errors must be 'raise' or 'skip'")
    path = Path(path)
    start = end = None
    if date_range is not None:
        start, end = (d if isinstance(d, date) else _parse_date(d, "date_range") for d in date_range)
        if start > end:
            raise ValueError(f"empty date range {start} .. {end}")

    groups: dict[str, dict] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        cols = _require_columns(next(reader, None), TIMESERIES_COLUMNS, path)
        idx = {c: cols.index(c) for c in TIMESERIES_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            where = f"{path.name}:{lineno}"
            if len(row) < len(cols):
                raise ValidationError(f"{where}: row has {len(row)} fields, expected {len(cols)}")
            cid = row[idx["city_id"]].strip()
            d = _parse_date(row[idx["date"]], where)
            try:
                mob = float(row[idx["mobility"]])
                cases_txt = row[idx["new_cases"]].strip()
                cases = int(float(cases_txt))
                if float(cases_txt) != cases:
                    raise ValueError
            except ValueError:
                raise ValidationError(f"{where}: non-numeric mobility or new_cases") from None
            if start is not None and not (start <= d <= end):
                continue
            g = groups.setdefault(
                cid,
                {"county": row[idx["county"]].strip(), "state": row[idx["state"]].strip(), "rows": []},
            )
            g["rows"].append((d, mob, cases))

    records, diagnostics = [], []
    for cid, g in groups.items():
        rows = sorted(g["rows"], key=lambda r: r[0])
        dups = [a[0] for a, b in zip(rows, rows[1:]) if a[0] == b[0]]
        if dups:
            diagnostics.append(f"city {cid}: duplicate date {dups[0].isoformat()}")
            continue
        try:
            records.append(
                CityRecord(
                    cid,
                    g["county"],
                    g["state"],
                    [r[0] for r in rows],
                    [r[1] for r in rows],
                    [r[2] for r in rows],
                )
            )
        except ValidationError as exc:
            diagnostics.append(str(exc))
    if diagnostics:
        if errors == "raise":
            err = ValidationError("; ".join(diagnostics))
            err.diagnostics = diagnostics
            raise err
        for msg in diagnostics:
            logger.warning("rejected %s", msg)
    return records


def write_timeseries(records: Iterable[CityRecord], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMESERIES_COLUMNS)
        for rec in records:
            for d, m, n in zip(rec.dates, rec.mobility, rec.new_cases):
                w.writerow([rec.city_id, rec.county, rec.state, d.isoformat(), repr(float(m)), int(n)])


def load_covariates(path) -> list[CovariateRow]:
    """Read the covariate CSV.

    Every column besides ``city_id`` and ``stay_at_home_date`` is parsed as a
    numeric covariate. An empty (or ``NA``) date cell means no order was issued.
    """
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        cols = _require_columns(next(reader, None), COVARIATE_KEY_COLUMNS, path)
        if len(set(cols)) != len(cols):
            raise ValidationError(f"{path.name}: duplicate column names")
        i_id, i_date = cols.index("city_id"), cols.index("stay_at_home_date")
        numeric = [(j, c) for j, c in enumerate(cols) if j not in (i_id, i_date)]
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(cols):
                raise ValidationError(f"{path.name}:{lineno}: expected {len(cols)} fields, got {len(row)}")
            cid = row[i_id].strip()
            if cid in seen:
                raise ValidationError(f"{path.name}:{lineno}: duplicate city_id {cid!r}")
            seen.add(cid)
            txt = row[i_date].strip()
            sah = None if txt.lower() in _ABSENT_DATE else _parse_date(txt, f"{path.name}:{lineno}")
            values = {}
            for j, name in numeric:
                try:
                    v = float(row[j])
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise ValidationError(
                        f"{path.name}: row {lineno}, column {name!r}: non-numeric value {row[j]!r}"
                    )
                if "percent" in name.lower() and not 0 <= v <= 100:
                    raise ValidationError(
                        f"{path.name}: row {lineno}, column {name!r}: percentage {v} outside [0, 100]"
                    )
                values[name] = v
            rows.append(CovariateRow(cid, sah, values))
    return rows


def write_covariates(rows: Sequence[CovariateRow], path) -> None:
    names = list(rows[0].covariates) if rows else []
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["city_id", "stay_at_home_date", *names])
        for r in rows:
            sah = r.stay_at_home_date.isoformat() if r.stay_at_home_date else ""
            w.writerow([r.city_id, sah, *(repr(float(r.covariates[k])) for k in names)])


def filter_by_min_cases(records: Sequence[CityRecord], threshold: int) -> list[CityRecord]:
    """Keep records whose total new cases reach ``threshold`` (inclusive)."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    return [r for r in records if r.total_cases >= threshold]
