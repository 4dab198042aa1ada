"""User- and item-based neighbourhood models with co-rated Pearson similarity."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from numba import njit

from ..transform import ValueMatrix
from .config import ITEMKNN, USERKNN, ModelConfig

MIN_OVERLAP = 2


def pearson_similarity(profile_a: Mapping, profile_b: Mapping) -> float | None:
    """Pearson correlation over the keys both profiles share.

    Means are taken over the co-rated values only.  Returns ``None`` when
    fewer than two keys are shared or either side is constant on them.
    """
    common = [key for key in profile_a if key in profile_b]
    if len(common) < MIN_OVERLAP:
        return None
    a = np.array([profile_a[key] for key in common], dtype=float)
    b = np.array([profile_b[key] for key in common], dtype=float)
    da = a - a.mean()
    db = b - b.mean()
    va = np.sum(da * da)
    vb = np.sum(db * db)
    if va <= 1e-12 * max(1.0, np.sum(a * a)) or vb <= 1e-12 * max(1.0, np.sum(b * b)):
        return None
    return float(np.clip(np.sum(da * db) / np.sqrt(va * vb), -1.0, 1.0))


def pearson_matrix(rows: sp.csr_matrix) -> np.ndarray:
    """All-pairs co-rated Pearson similarity between the rows of a sparse matrix.

    Undefined pairs (overlap < 2 or zero co-rated variance) are ``NaN``; the
    diagonal is ``NaN`` as well so an entity is never its own neighbour.
    """
    R = rows.tocsr().astype(np.float64)
    M = R.copy()
    M.data[:] = 1.0
    R2 = R.multiply(R).tocsr()
    n = (M @ M.T).toarray()
    sa = (R @ M.T).toarray()  # sum of a's values over items shared with b
    saa = (R2 @ M.T).toarray()
    sab = (R @ R.T).toarray()
    sb = sa.T
    sbb = saa.T
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = sab - sa * sb / n
        va = saa - sa * sa / n
        vb = sbb - sb * sb / n
        ok = (n >= MIN_OVERLAP) & (va > 1e-12 * np.maximum(saa, 1.0)) & (vb > 1e-12 * np.maximum(sbb, 1.0))
        sim = np.where(ok, cov / np.sqrt(np.where(ok, va * vb, 1.0)), np.nan)
    np.fill_diagonal(sim, np.nan)
    return np.clip(sim, -1.0, 1.0)


@njit(cache=True)
def _resnick(sims, devs, k):
    # weighted mean deviation over the k most similar defined neighbours
    m = 0
    for t in range(sims.shape[0]):
        if not np.isnan(sims[t]):
            m += 1
    if m == 0:
        return np.nan
    s = np.empty(m)
    d = np.empty(m)
    m = 0
    for t in range(sims.shape[0]):
        if not np.isnan(sims[t]):
            s[m] = sims[t]
            d[m] = devs[t]
            m += 1
    order = np.argsort(-s, kind="mergesort")
    num = 0.0
    den = 0.0
    for t in range(min(k, m)):
        j = order[t]
        num += s[j] * d[j]
        den += abs(s[j])
    if den == 0.0:
        return np.nan
    return num / den


@njit(cache=True)
def _score_user_based(u, S, item_ptr, item_users, item_vals, user_mean, k):
    n_items = item_ptr.shape[0] - 1
    out = np.empty(n_items)
    for i in range(n_items):
        a = item_ptr[i]
        b = item_ptr[i + 1]
        sims = np.empty(b - a)
        devs = np.empty(b - a)
        for t in range(a, b):
            v = item_users[t]
            sims[t - a] = S[u, v]
            devs[t - a] = item_vals[t] - user_mean[v]
        out[i] = user_mean[u] + _resnick(sims, devs, k)
    return out


@njit(cache=True)
def _score_item_based(u, S, user_ptr, user_items, user_vals, item_mean, k):
    n_items = S.shape[0]
    a = user_ptr[u]
    b = user_ptr[u + 1]
    out = np.empty(n_items)
    sims = np.empty(b - a)
    devs = np.empty(b - a)
    for i in range(n_items):
        for t in range(a, b):
            j = user_items[t]
            sims[t - a] = S[i, j]
            devs[t - a] = user_vals[t] - item_mean[j]
        out[i] = item_mean[i] + _resnick(sims, devs, k)
    return out


@dataclass
class KNNModel:
    config: ModelConfig
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    global_mean: float
    user_mean: np.ndarray
    item_mean: np.ndarray
    similarity: np.ndarray
    ratings: sp.csr_matrix  # users x items, transformed values

    def __post_init__(self) -> None:
        self.user_index = {u: j for j, u in enumerate(self.user_ids)}
        self.item_index = {i: j for j, i in enumerate(self.item_ids)}
        self._by_item = self.ratings.T.tocsr()
        self._by_item.sort_indices()
        self.ratings.sort_indices()

    @property
    def algorithm(self) -> str:
        return self.config.algorithm

    def knows_user(self, user: str) -> bool:
        return user in self.user_index

    def rated_items(self, u: int) -> np.ndarray:
        r = self.ratings
        return r.indices[r.indptr[u] : r.indptr[u + 1]]

    def raw_scores(self, user: str) -> np.ndarray:
        """Neighbourhood predictions for every item; ``NaN`` where no neighbour helps."""
        u = self.user_index[user]
        k = self.config.neighbors
        if self.algorithm == USERKNN:
            c = self._by_item
            return _score_user_based(u, self.similarity, c.indptr, c.indices, c.data, self.user_mean, k)
        r = self.ratings
        return _score_item_based(u, self.similarity, r.indptr, r.indices, r.data, self.item_mean, k)

    def score_all(self, user: str) -> np.ndarray:
        scores = self.raw_scores(user)
        return np.where(np.isnan(scores), self.global_mean, scores)

    def predict(self, user: str, item: str) -> float | None:
        score = self.raw_scores(user)[self.item_index[item]]
        return None if np.isnan(score) else float(score)


def knn_predict(model: KNNModel, user: str, item: str) -> float | None:
    return model.predict(user, item)


def train_knn(matrix: ValueMatrix, config: ModelConfig) -> KNNModel:
    config.validate()
    if config.algorithm not in (USERKNN, ITEMKNN):
        raise ValueError(f"{config.algorithm} is not a neighbourhood algorithm")
    ds = matrix.source
    R = sp.csr_matrix((matrix.values, (ds.u_idx, ds.i_idx)), shape=(ds.n_users, ds.n_items))
    counts_u = np.bincount(ds.u_idx, minlength=ds.n_users)
    counts_i = np.bincount(ds.i_idx, minlength=ds.n_items)
    user_mean = np.bincount(ds.u_idx, weights=matrix.values, minlength=ds.n_users) / counts_u
    item_mean = np.bincount(ds.i_idx, weights=matrix.values, minlength=ds.n_items) / counts_i
    sim = pearson_matrix(R if config.algorithm == USERKNN else R.T.tocsr())
    return KNNModel(
        config=config,
        user_ids=ds.user_ids,
        item_ids=ds.item_ids,
        global_mean=float(matrix.values.mean()),
        user_mean=user_mean,
        item_mean=item_mean,
        similarity=sim,
        ratings=R,
    )
