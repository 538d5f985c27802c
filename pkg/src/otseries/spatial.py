"""Reaction time, Moran's I and spatial weights helpers."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import SpatialWeights
from .exceptions import SchemaError, UndefinedStatisticError, ValidationError

REFERENCE_DATE = date(2020, 3, 15)
NO_ORDER_DAYS = 85


def reaction_time(
    stay_at_home: date | None,
    reference: date = REFERENCE_DATE,
    absent_value: int = NO_ORDER_DAYS,
) -> int:
    """Days from ``reference`` to the stay-at-home order; ``absent_value`` when there was none."""
    if stay_at_home is None:
        return absent_value
    if stay_at_home < reference - timedelta(days=366):
        raise ValidationError(f"stay-at-home date {stay_at_home} is implausibly early")
    return (stay_at_home - reference).days


def _as_weights(w, n):
    mat = w.weights if isinstance(w, SpatialWeights) else np.asarray(w, dtype=float)
    if mat.shape != (n, n):
        raise ValidationError(f"weights shape {mat.shape} does not match {n} observations")
    if not np.any(mat != 0):
        raise ValidationError("spatial weights are all zero")
    return mat


def morans_i(x, w) -> float:
    """Global Moran's I of ``x`` under weights ``w`` (matrix or :class:`SpatialWeights`)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise ValidationError("Moran's I needs at least two observations")
    mat = _as_weights(w, n)
    z = x - x.mean()
    denom = float(z @ z)
    if denom == 0:
        raise UndefinedStatisticError("Moran's I is undefined for a constant field")
    return float(n / mat.sum() * (z @ mat @ z) / denom)


@dataclass(frozen=True)
class LabelMoranResult:
    labels: tuple[int, ...]
    i_values: dict
    p_values: dict
    statistic: float
    p_value: float
    n_perm: int


def morans_i_labels(clustering, w, n_perm: int = 999, seed: int = 0) -> LabelMoranResult:
    """Moran's I of each cluster indicator with one-sided permutation p-values.

    Labels are shuffled across locations ``n_perm`` times;
    ``p = (1 + #{I_perm >= I_obs}) / (1 + n_perm)``. The headline statistic
    is the cluster-size weighted mean of the indicator values, tested
    against the same permutations.
    """
    labels = np.asarray(clustering.labels)
    ids = list(clustering.ids)
    if isinstance(w, SpatialWeights) and list(w.ids) != ids:
        w = w.reindex(ids)
    n = labels.size
    mat = _as_weights(w, n)
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise UndefinedStatisticError("need at least two clusters for label autocorrelation")
    onehot = (labels[:, None] == uniq[None, :]).astype(float)
    sizes = onehot.sum(axis=0)
    z = onehot - onehot.mean(axis=0)
    denom = (z * z).sum(axis=0)
    scale = n / mat.sum()

    def stats(zm):
        return scale * ((mat @ zm) * zm).sum(axis=0) / denom

    obs = stats(z)
    headline = float(sizes @ obs / n)
    rng = np.random.default_rng(seed)
    ge = np.zeros(uniq.size)
    ge_head = 0
    for _ in range(n_perm):
        perm = stats(z[rng.permutation(n)])
        ge += perm >= obs - 1e-12
        ge_head += sizes @ perm / n >= headline - 1e-12
    pvals = (1 + ge) / (1 + n_perm)
    keys = tuple(int(u) for u in uniq)
    return LabelMoranResult(
        keys,
        dict(zip(keys, (float(v) for v in obs))),
        dict(zip(keys, (float(v) for v in pvals))),
        headline,
        float((1 + ge_head) / (1 + n_perm)),
        n_perm,
    )


def load_weights(path, ids: Sequence[str] | None = None, asymmetric: bool = False) -> SpatialWeights:
    """Read an edge list ``src_id,dst_id,weight``.

    A missing reverse edge is mirrored unless ``asymmetric``; conflicting
    weights for the two directions are an error in that case.
    """
    path = Path(path)
    edges = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in ("src_id", "dst_id", "weight"):
            if reader.fieldnames is None or col not in reader.fieldnames:
                raise SchemaError(col, path)
        for lineno, row in enumerate(reader, start=2):
            try:
                wt = float(row["weight"])
            except (TypeError, ValueError):
                raise ValidationError(f"{path.name}:{lineno}: non-numeric weight") from None
            edges.append((row["src_id"].strip(), row["dst_id"].strip(), wt))
    if ids is None:
        seen: dict[str, None] = {}
        for s, d, _ in edges:
            seen.setdefault(s, None)
            seen.setdefault(d, None)
        ids = list(seen)
    pos = {c: i for i, c in enumerate(ids)}
    mat = np.zeros((len(ids), len(ids)))
    given = np.zeros_like(mat, dtype=bool)
    for s, d, wt in edges:
        if s not in pos or d not in pos:
            continue
        i, j = pos[s], pos[d]
        if i == j:
            raise ValidationError(f"self-loop for {s!r} in spatial weights")
        mat[i, j] = wt
        given[i, j] = True
    if not asymmetric:
        mirror = given.T & ~given
        mat[mirror] = mat.T[mirror]
        conflict = given & given.T & (mat != mat.T)
        if conflict.any():
            i, j = np.argwhere(conflict)[0]
            raise ValidationError(f"conflicting weights between {ids[i]!r} and {ids[j]!r}")
    return SpatialWeights(tuple(ids), mat, asymmetric)


def haversine_km(lat, lon) -> np.ndarray:
    lat, lon = np.radians(np.asarray(lat, dtype=float)), np.radians(np.asarray(lon, dtype=float))
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    h = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
    return 2 * 6371.0088 * np.arcsin(np.sqrt(np.clip(h, 0, 1)))


def knn_weights(ids: Sequence[str], lat, lon, k: int = 5) -> SpatialWeights:
    """Row-standardised k-nearest-neighbour weights from coordinates (great-circle distance)."""
    n = len(ids)
    if not 1 <= k < n:
        raise ValueError(f"k must be in 1..{n - 1}")
    d = haversine_km(lat, lon)
    np.fill_diagonal(d, np.inf)
    nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
    mat = np.zeros((n, n))
    np.put_along_axis(mat, nearest, 1.0 / k, axis=1)
    return SpatialWeights(tuple(ids), mat, asymmetric=True)
