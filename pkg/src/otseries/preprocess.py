"""Mobility variants and the rank (empirical copula) embedding of a city."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .data import CityRecord
from .exceptions import SizeError, ValidationError


class MobilityVariant(str, enum.Enum):
    M = "M"
    DeltaM = "DeltaM"
    Mprime = "Mprime"

    @classmethod
    def parse(cls, value) -> "MobilityVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value))
        except ValueError:
            raise ValueError(f"unknown mobility variant {value!r}; expected one of M, DeltaM, Mprime") from None

    @property
    def trimmed(self) -> tuple[int, int]:
        """Number of days dropped at the (start, end) of the series."""
        return {"M": (0, 0), "DeltaM": (1, 0), "Mprime": (1, 1)}[self.value]


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Uniformly weighted points in the unit cube, one row per day."""

    city_id: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise SizeError(f"point cloud {self.city_id!r} is empty or not 2-D")
        if not np.all(np.isfinite(pts)):
            raise ValidationError(f"point cloud {self.city_id!r} has non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def weights(self) -> np.ndarray:
        n = len(self)
        return np.full(n, 1.0 / n)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "z"][: self.points.shape[1]])
            for row in self.points:
                w.writerow([repr(float(v)) for v in row])


def delta_mobility(m) -> np.ndarray:
    """First difference ``m[t] - m[t-1]``."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 1 or m.size < 2:
        raise SizeError("delta_mobility needs a series of length >= 2")
    return m[1:] - m[:-1]


def local_derivative(m) -> np.ndarray:
    """Smoothed local derivative at interior days.

    ``out[i] = ((m[i+1] - m[i]) + 0.5 * (m[i+2] - m[i])) / 2``; the two
    endpoints, which lack a neighbour, are dropped.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 1 or m.size < 3:
        raise SizeError("local_derivative needs a series of length >= 3")
    return ((m[1:-1] - m[:-2]) + 0.5 * (m[2:] - m[:-2])) / 2


def rank_normalize(x) -> np.ndarray:
    """Average ranks divided by the sample size, so values lie in (0, 1]."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise SizeError("rank_normalize needs a non-empty 1-D series")
    if np.isnan(x).any():
        raise ValidationError("rank_normalize: NaN in input")
    return rankdata(x, method="average") / x.size


def variant_series(record: CityRecord, variant) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return the aligned ``(mobility_variant, new_cases, day_index)`` triple.

    Each derived value is paired with the new-case count on the calendar day
    it is attributed to (day ``t`` for both the first difference and the
    interior derivative).
    """
    variant = MobilityVariant.parse(variant)
    m = record.mobility
    if variant is MobilityVariant.M:
        values = np.asarray(m, dtype=float)
    elif variant is MobilityVariant.DeltaM:
        values = delta_mobility(m)
    else:
        values = local_derivative(m)
    lo, hi = variant.trimmed
    t = np.arange(lo, len(m) - hi)
    return values, np.asarray(record.new_cases[lo : len(m) - hi], dtype=float), t


def embed_city(record: CityRecord, variant="Mprime") -> PointCloud:
    values, cases, t = variant_series(record, variant)
    pts = np.column_stack([rank_normalize(values), rank_normalize(cases), rank_normalize(t)])
    return PointCloud(record.city_id, pts)
