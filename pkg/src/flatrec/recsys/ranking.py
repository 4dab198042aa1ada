from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..transform import ValueMatrix
from .config import BIASEDMF, ITEMKNN, SVDPP, USERKNN, ModelConfig
from .factorization import FactorModel, train_biasedmf, train_svdpp
from .knn import KNNModel, train_knn

Model = FactorModel | KNNModel


@dataclass
class RecommendationList:
    user: str
    items: list[tuple[str, float]] = field(default_factory=list)
    excluded: frozenset[str] = frozenset()
    cold: bool = False

    @property
    def item_ids(self) -> list[str]:
        return [item for item, _ in self.items]

    def __len__(self) -> int:
        return len(self.items)


def train_model(matrix: ValueMatrix, config: ModelConfig) -> Model:
    if config.algorithm == BIASEDMF:
        return train_biasedmf(matrix, config)
    if config.algorithm == SVDPP:
        return train_svdpp(matrix, config)
    if config.algorithm in (USERKNN, ITEMKNN):
        return train_knn(matrix, config)
    raise ValueError(f"unknown algorithm {config.algorithm!r}")


def _id_rank(model: Model) -> np.ndarray:
    # position of each item id in ascending string order, cached per model
    rank = getattr(model, "_id_rank", None)
    if rank is None:
        order = sorted(range(len(model.item_ids)), key=model.item_ids.__getitem__)
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        model._id_rank = rank
    return rank


def rank_scores(scores: np.ndarray, id_rank: np.ndarray, exclude: np.ndarray, n: int) -> np.ndarray:
    """Indices of the ``n`` best candidates: score descending, then item id ascending."""
    candidates = np.ones(len(scores), dtype=bool)
    candidates[exclude] = False
    idx = np.flatnonzero(candidates)
    if len(idx) == 0 or n <= 0:
        return idx[:0]
    if len(idx) > n:
        # keep everything tied with the n-th best so the id tie rule still applies
        s = scores[idx]
        kth = np.partition(s, len(s) - n)[len(s) - n]
        idx = idx[s >= kth]
    order = np.lexsort((id_rank[idx], -scores[idx]))
    return idx[order[:n]]


def recommend_topn(model: Model, user: str, n: int = 10, scores: np.ndarray | None = None) -> RecommendationList:
    """Top-``n`` unseen items for ``user``; unknown users get an empty list flagged cold."""
    if not model.knows_user(user):
        return RecommendationList(user, [], cold=True)
    u = model.user_index[user]
    rated = model.rated_items(u)
    if scores is None:
        scores = model.score_all(user)
    top = rank_scores(scores, _id_rank(model), rated, n)
    return RecommendationList(
        user,
        [(model.item_ids[j], float(scores[j])) for j in top],
        excluded=frozenset(model.item_ids[j] for j in rated),
    )
