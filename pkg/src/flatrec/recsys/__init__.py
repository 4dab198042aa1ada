"""Rating-magnitude recommenders trained on transformed value matrices."""

from .checkpoint import load_model, save_model
from .config import ALGORITHMS, BIASEDMF, ITEMKNN, SVDPP, USERKNN, ConfigError, ModelConfig, parse_algorithm
from .factorization import FactorModel, TrainingDiverged, sample_gradient, sample_loss, train_biasedmf, train_svdpp
from .knn import KNNModel, knn_predict, pearson_matrix, pearson_similarity, train_knn
from .ranking import RecommendationList, rank_scores, recommend_topn, train_model

__all__ = [
    "ALGORITHMS",
    "BIASEDMF",
    "ITEMKNN",
    "SVDPP",
    "USERKNN",
    "ConfigError",
    "FactorModel",
    "KNNModel",
    "ModelConfig",
    "RecommendationList",
    "TrainingDiverged",
    "knn_predict",
    "load_model",
    "parse_algorithm",
    "pearson_matrix",
    "pearson_similarity",
    "rank_scores",
    "recommend_topn",
    "sample_gradient",
    "sample_loss",
    "save_model",
    "train_biasedmf",
    "train_knn",
    "train_model",
    "train_svdpp",
]
