"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .barycenter import GridHistogram, discretize
from .data import CityRecord
from .exceptions import SizeError, ValidationError
from .preprocess import PointCloud
from .transport import DistanceMatrix, check_distance_matrix


def check_records(records, min_count: int = 1) -> list[CityRecord]:
    records = list(records)
    if len(records) < min_count:
        raise SizeError(f"need at least {min_count} city records, got {len(records)}")
    bad = [type(r).__name__ for r in records if not isinstance(r, CityRecord)]
    if bad:
        raise ValidationError(f"expected CityRecord items, got {bad[0]}")
    ids = [r.city_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate city ids")
    return records


def check_clouds(clouds, min_count: int = 1) -> list[PointCloud]:
    out = []
    for i, c in enumerate(clouds):
        out.append(c if isinstance(c, PointCloud) else PointCloud(str(i), c))
    if len(out) < min_count:
        raise SizeError(f"need at least {min_count} point clouds, got {len(out)}")
    dims = {c.points.shape[1] for c in out}
    if len(dims) > 1:
        raise ValidationError(f"point clouds have mixed dimensions {sorted(dims)}")
    return out


def check_distances(d, ids: Sequence[str] | None = None) -> DistanceMatrix:
    if isinstance(d, DistanceMatrix):
        return d
    arr = check_distance_matrix(np.asarray(d, dtype=float))
    return DistanceMatrix(tuple(ids) if ids is not None else tuple(str(i) for i in range(arr.shape[0])), arr)


def check_histograms(items, resolution) -> list[GridHistogram]:
    hists = [h if isinstance(h, GridHistogram) else discretize(h, resolution) for h in items]
    if not hists:
        raise SizeError("no histograms given")
    return hists
