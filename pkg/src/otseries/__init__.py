"""Cluster locations by the copula dependence between a mobility signal and case counts.

The building blocks are rank-copula point clouds, exact and entropic
Wasserstein distances, Ward agglomeration, fixed-support barycenters and a
covariate analysis of the resulting clusters.
"""

from .barycenter import GridHistogram, cluster_barycenters, discretize, wasserstein_barycenter
from .covariates import ClusterForest, build_feature_table, shapley_importance, shapley_values
from .data import CityRecord, CovariateRow, SpatialWeights, filter_by_min_cases, load_covariates, load_timeseries
from .estimators import (
    FixedSupportBarycenter,
    RankCopulaEmbedding,
    WardClustering,
    WassersteinDistances,
    make_otseries_pipeline,
)
from .exceptions import (
    ConfigError,
    ConvergenceWarning,
    NotConvergedError,
    OTSeriesError,
    SchemaError,
    SizeError,
    UndefinedStatisticError,
    ValidationError,
)
from .hierarchy import Clustering, Dendrogram, compare_clusterings, flat_cut, seriate, ward_linkage
from .pipeline import PipelineConfig, load_config, run_pipeline
from .preprocess import MobilityVariant, PointCloud, embed_city
from .spatial import morans_i, morans_i_labels, reaction_time
from .transport import DistanceMatrix, distance_matrix, wasserstein_exact, wasserstein_sinkhorn

__version__ = "0.1.0"

__all__ = [
    "CityRecord", "ClusterForest", "Clustering", "ConfigError", "ConvergenceWarning", "CovariateRow",
    "Dendrogram", "DistanceMatrix", "FixedSupportBarycenter", "GridHistogram", "MobilityVariant",
    "NotConvergedError", "OTSeriesError", "PipelineConfig", "PointCloud", "RankCopulaEmbedding",
    "SchemaError", "SizeError", "SpatialWeights", "UndefinedStatisticError", "ValidationError",
    "WardClustering", "WassersteinDistances", "build_feature_table", "cluster_barycenters",
    "compare_clusterings", "discretize", "distance_matrix", "embed_city", "filter_by_min_cases",
    "flat_cut", "load_config", "load_covariates", "load_timeseries", "make_otseries_pipeline", "morans_i",
    "morans_i_labels", "reaction_time", "run_pipeline", "seriate", "shapley_importance", "shapley_values",
    "wasserstein_barycenter", "wasserstein_exact", "wasserstein_sinkhorn", "ward_linkage",
]
