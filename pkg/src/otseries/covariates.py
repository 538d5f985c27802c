"""Cluster-composition analysis: covariate features, random forest and Shapley values."""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.ensemble import RandomForestClassifier
from sklearn.utils.validation import check_is_fitted

from .data import CovariateRow
from .exceptions import ValidationError
from .spatial import NO_ORDER_DAYS, REFERENCE_DATE, reaction_time

COORDINATE_COLUMNS = ("lat", "lon", "latitude", "longitude")


@dataclass(frozen=True, eq=False)
class FeatureTable:
    ids: tuple[str, ...]
    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "names", tuple(self.names))
        v = np.array(self.values, dtype=float).reshape(len(self.ids), len(self.names))
        if not np.all(np.isfinite(v)):
            raise ValidationError("feature table has missing or non-finite values")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("duplicate feature names")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def subset(self, ids: Sequence[str]) -> "FeatureTable":
        pos = {c: i for i, c in enumerate(self.ids)}
        missing = [c for c in ids if c not in pos]
        if missing:
            raise ValidationError(f"no covariates for ids {missing[:5]}")
        return FeatureTable(tuple(ids), self.names, self.values[[pos[c] for c in ids]])

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


def build_feature_table(
    rows: Sequence[CovariateRow],
    ids: Sequence[str] | None = None,
    include_date: bool = False,
    reference: date = REFERENCE_DATE,
    absent_value: int = NO_ORDER_DAYS,
    exclude: Sequence[str] = COORDINATE_COLUMNS,
) -> FeatureTable:
    """Numeric covariates plus the derived ``reaction_time`` column.

    ``include_date`` adds the order date itself as day-of-year (the absent
    sentinel maps to the same day offset as ``absent_value``). Coordinate
    columns are left out since they only feed the spatial weights.
    """
    by_id = {r.city_id: r for r in rows}
    ids = list(by_id) if ids is None else list(ids)
    missing = [c for c in ids if c not in by_id]
    if missing:
        raise ValidationError(f"no covariate row for ids {missing[:5]}")
    names = [n for n in (rows[0].covariates if rows else {}) if n.lower() not in exclude]
    for r in rows:
        if [n for n in r.covariates if n.lower() not in exclude] != names:
            raise ValidationError(f"covariate row {r.city_id} has different columns")
    offset = (reference - date(reference.year, 1, 1)).days + 1
    values = []
    for cid in ids:
        r = by_id[cid]
        rt = reaction_time(r.stay_at_home_date, reference, absent_value)
        row = [float(rt)]
        if include_date:
            row.append(float(rt + offset))
        row.extend(float(r.covariates[n]) for n in names)
        values.append(row)
    head = ["reaction_time"] + (["stay_at_home_doy"] if include_date else [])
    return FeatureTable(tuple(ids), tuple(head + names), np.array(values).reshape(len(ids), -1))


class ClusterForest(ClassifierMixin, BaseEstimator):
    """Bagged Gini CART trees with sqrt-feature subsampling and majority voting.

    ``predict_proba`` returns each class's share of tree votes.
    """

    def __init__(self, n_trees=500, max_depth=None, min_samples_leaf=1, max_features="sqrt", seed=0, n_jobs=1):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        classes, counts = np.unique(y, return_counts=True)
        if classes.size < 2:
            raise ValidationError("need at least two clusters to train a classifier")
        if X.shape[0] < 10:
            raise ValidationError(f"need at least 10 samples, got {X.shape[0]}")
        small = classes[counts < 2]
        if small.size:
            warnings.warn(f"clusters with fewer than 2 members: {small.tolist()}", UserWarning, stacklevel=2)
        self.forest_ = RandomForestClassifier(
            n_estimators=self.n_trees,
            criterion="gini",
            max_depth=self.max_depth,
            min_samples_leaf=self.min_samples_leaf,
            max_features=self.max_features,
            bootstrap=True,
            oob_score=True,
            random_state=self.seed,
            n_jobs=self.n_jobs,
        )
        with warnings.catch_warnings():
            # tiny samples can leave an instance without out-of-bag trees
            warnings.filterwarnings("ignore", message="Some inputs do not have OOB scores")
            self.forest_.fit(X, y)
        self.classes_ = self.forest_.classes_
        self.n_features_in_ = X.shape[1]
        self.oob_accuracy_ = float(self.forest_.oob_score_)
        # majority class of every node, so voting needs only a leaf lookup
        self._leaf_classes = [np.argmax(t.tree_.value[:, 0, :], axis=1) for t in self.forest_.estimators_]
        return self

    @property
    def trees_(self):
        check_is_fitted(self, "forest_")
        return self.forest_.estimators_

    def predict_proba(self, X):
        check_is_fitted(self, "forest_")
        X = np.ascontiguousarray(X, dtype=np.float32)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} features, got shape {X.shape}")
        votes = np.zeros((X.shape[0], self.classes_.size))
        rows = np.arange(X.shape[0])
        for tree, leaf_class in zip(self.forest_.estimators_, self._leaf_classes):
            votes[rows, leaf_class[tree.tree_.apply(X)]] += 1
        return votes / len(self.forest_.estimators_)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def root_features(self) -> np.ndarray:
        """Feature index used at the root of each tree (-2 for a leaf-only tree)."""
        return np.array([t.tree_.feature[0] for t in self.trees_])


ForestModel = ClusterForest


def train_forest(ft: FeatureTable, clustering, n_trees=500, max_depth=None, seed=0, n_jobs=1) -> ClusterForest:
    ft = ft.subset(clustering.ids)
    return ClusterForest(n_trees=n_trees, max_depth=max_depth, seed=seed, n_jobs=n_jobs).fit(
        ft.values, np.asarray(clustering.labels)
    )


@dataclass(frozen=True)
class ShapleyEstimate:
    values: np.ndarray  # (instances, features, outputs)
    std_errors: np.ndarray
    baseline_error: np.ndarray  # (instances, outputs): SE of the sampled background mean


def _predict(model, X):
    if hasattr(model, "predict_proba"):
        return np.asarray(model.predict_proba(X), dtype=float)
    out = np.asarray(model(X), dtype=float)
    return out[:, None] if out.ndim == 1 else out


def _shapley_one(model, x, background, n_samples, rng):
    f = x.size
    perms = np.argsort(rng.random((n_samples, f)), axis=1)
    z = background[rng.integers(background.shape[0], size=n_samples)]
    rank = np.argsort(perms, axis=1)
    steps = np.arange(f + 1)
    rows = np.where(rank[:, None, :] < steps[None, :, None], x[None, None, :], z[:, None, :])
    out = _predict(model, rows.reshape(-1, f)).reshape(n_samples, f + 1, -1)
    diff = out[:, 1:, :] - out[:, :-1, :]
    contrib = np.take_along_axis(diff, rank[:, :, None], axis=1)
    phi = contrib.mean(axis=0)
    se = contrib.std(axis=0, ddof=1) / np.sqrt(n_samples)
    base_se = out[:, 0, :].std(axis=0, ddof=1) / np.sqrt(n_samples)
    return phi, se, base_se


def shapley_values(model, X, background=None, n_samples=2000, seed=0, n_jobs=1) -> ShapleyEstimate:
    """Monte Carlo permutation estimate of Shapley values for every output.

    For each sample a random feature order and a random background row are
    drawn; features are switched from the background row to the instance
    one at a time and each switch's change in output is credited to that
    feature. Every instance gets its own RNG stream spawned from ``seed``,
    so results do not depend on ``n_jobs``.
    """
    if n_samples < 10:
        raise ValueError("n_samples must be at least 10")
    X = np.asarray(X, dtype=float)
    background = X if background is None else np.asarray(background, dtype=float)
    streams = np.random.SeedSequence(seed).spawn(X.shape[0])

    def one(i):
        return _shapley_one(model, X[i], background, n_samples, np.random.default_rng(streams[i]))

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(one, range(X.shape[0])))
    else:
        parts = [one(i) for i in range(X.shape[0])]
    return ShapleyEstimate(
        np.stack([p[0] for p in parts]), np.stack([p[1] for p in parts]), np.stack([p[2] for p in parts])
    )


@dataclass(frozen=True, eq=False)
class ImportanceReport:
    features: tuple[str, ...]
    clusters: tuple[int, ...]
    per_cluster: np.ndarray  # (features, clusters) mean |phi|
    overall: np.ndarray  # (features,)
    ranking: tuple[str, ...]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "cluster", "mean_abs_shapley"])
            order = [self.features.index(n) for n in self.ranking]
            for j in order:
                for c_i, c in enumerate(self.clusters):
                    w.writerow([self.features[j], c, repr(float(self.per_cluster[j, c_i]))])

    def ranking_rows(self) -> list[tuple[str, float]]:
        return [(n, float(self.overall[self.features.index(n)])) for n in self.ranking]


def shapley_importance(model, ft: FeatureTable, clustering, n_samples=2000, seed=0, n_jobs=1) -> ImportanceReport:
    """Mean |Shapley value| per feature and cluster.

    Each city contributes the attribution towards its own cluster's vote
    share; the background distribution is the full feature table.
    """
    if n_samples < 10:
        raise ValueError("n_samples must be at least 10")
    ft = ft.subset(clustering.ids)
    est = shapley_values(model, ft.values, ft.values, n_samples, seed, n_jobs)
    labels = np.asarray(clustering.labels)
    cls_index = {int(c): i for i, c in enumerate(model.classes_)}
    own = np.abs(est.values[np.arange(labels.size), :, [cls_index[int(v)] for v in labels]])
    clusters = tuple(int(c) for c in model.classes_)
    per_cluster = np.column_stack([own[labels == c].mean(axis=0) for c in clusters])
    overall = own.mean(axis=0)
    order = np.argsort(-overall, kind="stable")
    return ImportanceReport(ft.names, clusters, per_cluster, overall, tuple(ft.names[j] for j in order))


def write_cluster_covariates(ft: FeatureTable, clustering, path) -> None:
    """Long-format ``city_id,cluster,<features>`` table for per-cluster box plots."""
    ft = ft.subset(clustering.ids)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["city_id", "cluster", *ft.names])
        for cid, lab, row in zip(ft.ids, clustering.labels, ft.values):
            w.writerow([cid, int(lab), *(repr(float(v)) for v in row)])
