"""Model checkpoints: a single ``.npz`` with a JSON header and every parameter block."""

from __future__ import annotations

import json
import os

import numpy as np
import scipy.sparse as sp

from .config import ModelConfig
from .factorization import FactorModel
from .knn import KNNModel

FORMAT_VERSION = 1


def save_model(model: FactorModel | KNNModel, path: str | os.PathLike) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": "factor" if isinstance(model, FactorModel) else "knn",
        "config": model.config.to_dict(),
        "global_mean": model.global_mean,
    }
    arrays = {
        "user_ids": np.array(model.user_ids, dtype=str),
        "item_ids": np.array(model.item_ids, dtype=str),
    }
    if isinstance(model, FactorModel):
        meta["loss_trace"] = model.loss_trace
        arrays.update(
            user_bias=model.user_bias,
            item_bias=model.item_bias,
            user_factors=model.user_factors,
            item_factors=model.item_factors,
            indptr=model.indptr,
            indices=model.indices,
        )
        if model.implicit_factors is not None:
            arrays["implicit_factors"] = model.implicit_factors
    else:
        r = model.ratings
        arrays.update(
            user_mean=model.user_mean,
            item_mean=model.item_mean,
            similarity=model.similarity,
            r_indptr=r.indptr,
            r_indices=r.indices,
            r_data=r.data,
        )
    with open(path, "wb") as fh:
        np.savez_compressed(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_model(path: str | os.PathLike) -> FactorModel | KNNModel:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')!r}")
        config = ModelConfig.from_dict(meta["config"])
        user_ids = tuple(z["user_ids"].tolist())
        item_ids = tuple(z["item_ids"].tolist())
        if meta["kind"] == "factor":
            return FactorModel(
                config=config,
                user_ids=user_ids,
                item_ids=item_ids,
                global_mean=meta["global_mean"],
                user_bias=z["user_bias"],
                item_bias=z["item_bias"],
                user_factors=z["user_factors"],
                item_factors=z["item_factors"],
                implicit_factors=z["implicit_factors"] if "implicit_factors" in z else None,
                indptr=z["indptr"],
                indices=z["indices"],
                loss_trace=list(meta["loss_trace"]),
            )
        ratings = sp.csr_matrix(
            (z["r_data"], z["r_indices"], z["r_indptr"]), shape=(len(user_ids), len(item_ids))
        )
        return KNNModel(
            config=config,
            user_ids=user_ids,
            item_ids=item_ids,
            global_mean=meta["global_mean"],
            user_mean=z["user_mean"],
            item_mean=z["item_mean"],
            similarity=z["similarity"],
            ratings=ratings,
        )
