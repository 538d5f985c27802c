"""Estimator-style wrappers so each stage composes with scikit-learn tooling."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.pipeline import Pipeline
from sklearn.utils.validation import check_is_fitted

from .barycenter import wasserstein_barycenter
from .hierarchy import Clustering, flat_cut, seriate, ward_linkage
from .preprocess import MobilityVariant, embed_city
from .transport import distance_matrix, wasserstein_exact, wasserstein_sinkhorn
from .validation import check_clouds, check_distances, check_histograms, check_records


class RankCopulaEmbedding(TransformerMixin, BaseEstimator):
    """Turn city records into rank-normalised ``(mobility variant, cases, time)`` clouds."""

    def __init__(self, variant="Mprime"):
        self.variant = variant

    def fit(self, X, y=None):
        check_records(X)
        self.variant_ = MobilityVariant.parse(self.variant)
        return self

    def transform(self, X):
        check_is_fitted(self, "variant_")
        return [embed_city(r, self.variant_) for r in check_records(X)]


class WassersteinDistances(TransformerMixin, BaseEstimator):
    """Pairwise W_p between point clouds.

    ``fit_transform`` returns the symmetric matrix over the training clouds
    (kept in ``distance_matrix_``); ``transform`` returns distances from new
    clouds to the training ones, shape ``(n_new, n_train)``.
    """

    def __init__(self, solver="exact", p=2.0, epsilon=0.01, max_iter=10_000, tol=1e-9, n_jobs=1):
        self.solver = solver
        self.p = p
        self.epsilon = epsilon
        self.max_iter = max_iter
        self.tol = tol
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        self.clouds_ = check_clouds(X, min_count=1)
        return self

    def fit_transform(self, X, y=None):
        self.fit(X)
        self.distance_matrix_ = distance_matrix(
            self.clouds_, self.solver, self.p, self.epsilon, self.max_iter, self.tol, self.n_jobs
        )
        return np.array(self.distance_matrix_.d)

    def _pair(self, a, b):
        if self.solver == "exact":
            return wasserstein_exact(a, b, self.p)[0]
        return wasserstein_sinkhorn(a, b, self.p, self.epsilon, self.max_iter, self.tol)[0]

    def transform(self, X):
        check_is_fitted(self, "clouds_")
        new = check_clouds(X)
        return np.array([[self._pair(a, b) for b in self.clouds_] for a in new])


class WardClustering(ClusterMixin, BaseEstimator):
    """Ward agglomeration on a precomputed distance matrix, cut into ``n_clusters``."""

    def __init__(self, n_clusters=10):
        self.n_clusters = n_clusters

    def fit(self, X, y=None, ids=None):
        dm = check_distances(X, ids)
        if not 1 <= self.n_clusters <= len(dm):
            raise ValueError(f"n_clusters={self.n_clusters} outside 1..{len(dm)}")
        self.dendrogram_ = ward_linkage(dm)
        self.clustering_ = flat_cut(self.dendrogram_, self.n_clusters)
        self.labels_ = np.array(self.clustering_.labels)
        self.leaf_order_ = seriate(self.dendrogram_)
        return self


class FixedSupportBarycenter(BaseEstimator):
    """Wasserstein barycenter of clouds (binned) or grid histograms."""

    def __init__(self, resolution=(20, 20, 20), epsilon=0.01, max_iter=5000, tol=1e-8, debias=False):
        self.resolution = resolution
        self.epsilon = epsilon
        self.max_iter = max_iter
        self.tol = tol
        self.debias = debias

    def fit(self, X, y=None, sample_weight=None):
        hists = check_histograms(X, self.resolution)
        w = None
        if sample_weight is not None:
            w = np.asarray(sample_weight, dtype=float)
            w = w / w.sum()
        self.result_ = wasserstein_barycenter(hists, w, self.epsilon, self.max_iter, self.tol, self.debias)
        self.barycenter_ = self.result_.histogram
        return self


def make_otseries_pipeline(variant="Mprime", n_clusters=10, solver="exact", p=2.0, n_jobs=1, **solver_params):
    """Embedding -> pairwise OT -> Ward as a scikit-learn :class:`Pipeline`."""
    return Pipeline(
        [
            ("embed", RankCopulaEmbedding(variant)),
            ("distance", WassersteinDistances(solver=solver, p=p, n_jobs=n_jobs, **solver_params)),
            ("ward", WardClustering(n_clusters)),
        ]
    )


def clustering_from_pipeline(pipe: Pipeline, name: str = "") -> Clustering:
    """Attach city ids from the distance step to the fitted Ward labels."""
    ids = pipe.named_steps["distance"].distance_matrix_.ids
    return Clustering(ids, pipe.named_steps["ward"].labels_, name)
