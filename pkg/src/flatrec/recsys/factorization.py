"""Biased matrix factorization and SVD++ trained by plain SGD.

Prediction for BiasedMF is ``mu + b_u + b_i + p_u . q_i``; SVD++ replaces
``p_u`` by ``p_u + |N(u)|^-1/2 * sum_{j in N(u)} y_j`` with ``N(u)`` the items
the user rated in training.  Every SGD step follows the negative gradient of
the per-rating loss

    0.5 * e**2 + 0.5 * reg_bias * (b_u**2 + b_i**2)
        + 0.5 * reg_factors * (|p_u|**2 + |q_i|**2 [+ sum_j |y_j|**2])

with all parameter gradients evaluated before any parameter moves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..transform import ValueMatrix
from .config import ModelConfig

_logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, algorithm: str):
        super().__init__(f"{algorithm} training diverged at epoch {epoch} (non-finite loss)")
        self.epoch = epoch


@dataclass
class FactorModel:
    """Trained factorization parameters plus the training interactions."""

    config: ModelConfig
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    global_mean: float
    user_bias: np.ndarray
    item_bias: np.ndarray
    user_factors: np.ndarray
    item_factors: np.ndarray
    implicit_factors: np.ndarray | None = None
    # CSR of each user's training items (N(u) for SVD++, exclusions for top-N)
    indptr: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    loss_trace: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.user_index = {u: j for j, u in enumerate(self.user_ids)}
        self.item_index = {i: j for j, i in enumerate(self.item_ids)}

    @property
    def algorithm(self) -> str:
        return self.config.algorithm

    def knows_user(self, user: str) -> bool:
        return user in self.user_index

    def rated_items(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u] : self.indptr[u + 1]]

    def user_vector(self, u: int) -> np.ndarray:
        """Effective user factor (``p_u`` plus the implicit term for SVD++)."""
        p = self.user_factors[u]
        if self.implicit_factors is None:
            return p
        rated = self.rated_items(u)
        if len(rated) == 0:
            return p
        return p + self.implicit_factors[rated].sum(axis=0) / np.sqrt(len(rated))

    def score_all(self, user: str) -> np.ndarray:
        """Predicted value of every training item for ``user`` (aligned with ``item_ids``)."""
        u = self.user_index[user]
        return self.global_mean + self.user_bias[u] + self.item_bias + self.item_factors @ self.user_vector(u)

    def predict(self, user: str, item: str) -> float:
        u = self.user_index[user]
        i = self.item_index[item]
        return float(
            self.global_mean + self.user_bias[u] + self.item_bias[i] + self.item_factors[i] @ self.user_vector(u)
        )


# -- reference loss / gradient (numpy) ---------------------------------------


def sample_loss(params: dict, rating: float, mu: float, reg_bias: float, reg_factors: float) -> float:
    """Regularised squared error of one rating.

    ``params`` holds ``bu``, ``bi``, ``pu``, ``qi`` and, for SVD++, ``y``
    (the ``|N(u)| x f`` block of implicit factors of the user's rated items).
    """
    pu = params["pu"]
    qi = params["qi"]
    y = params.get("y")
    eff = pu if y is None else pu + y.sum(axis=0) / np.sqrt(len(y))
    e = rating - (mu + params["bu"] + params["bi"] + qi @ eff)
    loss = 0.5 * e * e
    loss += 0.5 * reg_bias * (params["bu"] ** 2 + params["bi"] ** 2)
    loss += 0.5 * reg_factors * (pu @ pu + qi @ qi)
    if y is not None:
        loss += 0.5 * reg_factors * np.sum(y * y)
    return float(loss)


def sample_gradient(params: dict, rating: float, mu: float, reg_bias: float, reg_factors: float) -> dict:
    """Analytic gradient of :func:`sample_loss` with respect to every block."""
    pu = params["pu"]
    qi = params["qi"]
    y = params.get("y")
    norm = 0.0 if y is None else 1.0 / np.sqrt(len(y))
    eff = pu if y is None else pu + norm * y.sum(axis=0)
    e = rating - (mu + params["bu"] + params["bi"] + qi @ eff)
    grad = {
        "bu": -e + reg_bias * params["bu"],
        "bi": -e + reg_bias * params["bi"],
        "pu": -e * qi + reg_factors * pu,
        "qi": -e * eff + reg_factors * qi,
    }
    if y is not None:
        grad["y"] = -e * norm * np.broadcast_to(qi, y.shape) + reg_factors * y
    return grad


# -- numba kernels -----------------------------------------------------------


@njit(cache=True)
def _biasedmf_epoch(order, uu, ii, rr, mu, bu, bi, P, Q, lr, reg_b, reg_f):
    f = P.shape[1]
    for t in range(order.shape[0]):
        j = order[t]
        u = uu[j]
        i = ii[j]
        dot = 0.0
        for c in range(f):
            dot += P[u, c] * Q[i, c]
        e = rr[j] - (mu + bu[u] + bi[i] + dot)
        bu[u] += lr * (e - reg_b * bu[u])
        bi[i] += lr * (e - reg_b * bi[i])
        for c in range(f):
            pc = P[u, c]
            qc = Q[i, c]
            P[u, c] = pc + lr * (e * qc - reg_f * pc)
            Q[i, c] = qc + lr * (e * pc - reg_f * qc)


@njit(cache=True)
def _biasedmf_loss(uu, ii, rr, mu, bu, bi, P, Q, reg_b, reg_f):
    f = P.shape[1]
    total = 0.0
    for j in range(rr.shape[0]):
        u = uu[j]
        i = ii[j]
        dot = 0.0
        pp = 0.0
        qq = 0.0
        for c in range(f):
            dot += P[u, c] * Q[i, c]
            pp += P[u, c] * P[u, c]
            qq += Q[i, c] * Q[i, c]
        e = rr[j] - (mu + bu[u] + bi[i] + dot)
        total += 0.5 * e * e + 0.5 * reg_b * (bu[u] ** 2 + bi[i] ** 2) + 0.5 * reg_f * (pp + qq)
    return total


@njit(cache=True)
def _svdpp_epoch(order, uu, ii, rr, indptr, indices, mu, bu, bi, P, Q, Y, lr, lr_y, reg_b, reg_f):
    f = P.shape[1]
    eff = np.empty(f)
    for t in range(order.shape[0]):
        j = order[t]
        u = uu[j]
        i = ii[j]
        start = indptr[u]
        stop = indptr[u + 1]
        n = stop - start
        norm = 1.0 / np.sqrt(n) if n > 0 else 0.0
        for c in range(f):
            s = 0.0
            for k in range(start, stop):
                s += Y[indices[k], c]
            eff[c] = P[u, c] + norm * s
        dot = 0.0
        for c in range(f):
            dot += Q[i, c] * eff[c]
        e = rr[j] - (mu + bu[u] + bi[i] + dot)
        bu[u] += lr * (e - reg_b * bu[u])
        bi[i] += lr * (e - reg_b * bi[i])
        for c in range(f):
            pc = P[u, c]
            qc = Q[i, c]
            P[u, c] = pc + lr * (e * qc - reg_f * pc)
            Q[i, c] = qc + lr * (e * eff[c] - reg_f * qc)
            for k in range(start, stop):
                yc = Y[indices[k], c]
                Y[indices[k], c] = yc + lr_y * (e * norm * qc - reg_f * yc)


@njit(cache=True)
def _svdpp_loss(uu, ii, rr, indptr, indices, mu, bu, bi, P, Q, Y, reg_b, reg_f):
    n_users = P.shape[0]
    f = P.shape[1]
    E = np.zeros((n_users, f))
    yreg = np.zeros(n_users)
    for u in range(n_users):
        start = indptr[u]
        stop = indptr[u + 1]
        n = stop - start
        norm = 1.0 / np.sqrt(n) if n > 0 else 0.0
        for c in range(f):
            s = 0.0
            for k in range(start, stop):
                yv = Y[indices[k], c]
                s += yv
                yreg[u] += yv * yv
            E[u, c] = P[u, c] + norm * s
    total = 0.0
    for j in range(rr.shape[0]):
        u = uu[j]
        i = ii[j]
        dot = 0.0
        pp = 0.0
        qq = 0.0
        for c in range(f):
            dot += Q[i, c] * E[u, c]
            pp += P[u, c] * P[u, c]
            qq += Q[i, c] * Q[i, c]
        e = rr[j] - (mu + bu[u] + bi[i] + dot)
        total += 0.5 * e * e + 0.5 * reg_b * (bu[u] ** 2 + bi[i] ** 2)
        total += 0.5 * reg_f * (pp + qq + yreg[u])
    return total


# -- training ----------------------------------------------------------------


def _csr(u_idx: np.ndarray, i_idx: np.ndarray, n_users: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((i_idx, u_idx))
    indptr = np.zeros(n_users + 1, dtype=np.int64)
    np.cumsum(np.bincount(u_idx, minlength=n_users), out=indptr[1:])
    return indptr, i_idx[order].astype(np.int64)


def _init(matrix: ValueMatrix, config: ModelConfig, with_implicit: bool, zero_implicit: bool):
    ds = matrix.source
    init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    init_rng = np.random.default_rng(init_seq)
    f = config.factors
    P = init_rng.uniform(0.0, config.init_scale, size=(ds.n_users, f))
    Q = init_rng.uniform(0.0, config.init_scale, size=(ds.n_items, f))
    Y = None
    if with_implicit:
        Y = init_rng.uniform(0.0, config.init_scale, size=(ds.n_items, f))
        if zero_implicit:
            Y[:] = 0.0
    indptr, indices = _csr(ds.u_idx, ds.i_idx, ds.n_users)
    model = FactorModel(
        config=config,
        user_ids=ds.user_ids,
        item_ids=ds.item_ids,
        global_mean=float(matrix.values.mean()),
        user_bias=np.zeros(ds.n_users),
        item_bias=np.zeros(ds.n_items),
        user_factors=P,
        item_factors=Q,
        implicit_factors=Y,
        indptr=indptr,
        indices=indices,
    )
    return model, np.random.default_rng(shuffle_seq)


def train_biasedmf(matrix: ValueMatrix, config: ModelConfig) -> FactorModel:
    config.validate()
    model, rng = _init(matrix, config, with_implicit=False, zero_implicit=False)
    ds = matrix.source
    rr = np.ascontiguousarray(matrix.values, dtype=np.float64)
    for epoch in range(1, config.iterations + 1):
        order = rng.permutation(len(rr))
        _biasedmf_epoch(
            order, ds.u_idx, ds.i_idx, rr, model.global_mean, model.user_bias, model.item_bias,
            model.user_factors, model.item_factors, config.learning_rate, config.reg_bias, config.reg_factors,
        )
        loss = _biasedmf_loss(
            ds.u_idx, ds.i_idx, rr, model.global_mean, model.user_bias, model.item_bias,
            model.user_factors, model.item_factors, config.reg_bias, config.reg_factors,
        )
        if not np.isfinite(loss):
            raise TrainingDiverged(epoch, "BiasedMF")
        model.loss_trace.append(float(loss))
    _logger.debug("BiasedMF final loss %.6g after %d epochs", model.loss_trace[-1], config.iterations)
    return model


def train_svdpp(matrix: ValueMatrix, config: ModelConfig, zero_implicit: bool = False) -> FactorModel:
    """Train SVD++.

    ``zero_implicit`` starts the implicit factors at zero instead of noise;
    combined with ``learning_rate_implicit=0`` it reduces to BiasedMF.
    """
    config.validate()
    model, rng = _init(matrix, config, with_implicit=True, zero_implicit=zero_implicit)
    ds = matrix.source
    rr = np.ascontiguousarray(matrix.values, dtype=np.float64)
    lr_y = config.learning_rate if config.learning_rate_implicit is None else config.learning_rate_implicit
    for epoch in range(1, config.iterations + 1):
        order = rng.permutation(len(rr))
        _svdpp_epoch(
            order, ds.u_idx, ds.i_idx, rr, model.indptr, model.indices, model.global_mean,
            model.user_bias, model.item_bias, model.user_factors, model.item_factors, model.implicit_factors,
            config.learning_rate, lr_y, config.reg_bias, config.reg_factors,
        )
        loss = _svdpp_loss(
            ds.u_idx, ds.i_idx, rr, model.indptr, model.indices, model.global_mean, model.user_bias,
            model.item_bias, model.user_factors, model.item_factors, model.implicit_factors,
            config.reg_bias, config.reg_factors,
        )
        if not np.isfinite(loss):
            raise TrainingDiverged(epoch, "SVD++")
        model.loss_trace.append(float(loss))
    return model
