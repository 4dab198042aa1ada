"""Percentile rating transformations, distribution flatness and top-N evaluation."""

from .data import Dataset, DataError, FoldSplit, Rating, RatingScale, infer_scale, kfold_split, load_ratings, write_ratings
from .distmetrics import (
    DiscreteDistribution,
    DistributionReport,
    analyze,
    bin_values,
    discrete_distribution,
    flatness,
    kurtosis,
    pearson_correlation,
    uniform_profile_census,
)
from .transform import (
    IndexRule,
    Orientation,
    TransformSpec,
    ValueMatrix,
    apply_transform,
    percentile_value,
    position,
    smoothed_percentile_value,
    transform_item,
    transform_user,
    zscore_transform,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "Dataset",
    "DiscreteDistribution",
    "DistributionReport",
    "FoldSplit",
    "IndexRule",
    "Orientation",
    "Rating",
    "RatingScale",
    "TransformSpec",
    "ValueMatrix",
    "analyze",
    "apply_transform",
    "bin_values",
    "discrete_distribution",
    "flatness",
    "infer_scale",
    "kfold_split",
    "kurtosis",
    "load_ratings",
    "pearson_correlation",
    "percentile_value",
    "position",
    "smoothed_percentile_value",
    "transform_item",
    "transform_user",
    "uniform_profile_census",
    "write_ratings",
    "zscore_transform",
]
