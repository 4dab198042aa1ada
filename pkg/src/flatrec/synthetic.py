"""Synthetic explicit-rating data with selection bias and per-user rating styles."""

from __future__ import annotations

import numpy as np

from .data import Dataset, RatingScale


def skewed_ratings(
    n_users: int = 300,
    n_items: int = 400,
    mean_profile: int = 25,
    scale: RatingScale | None = None,
    rank: int = 5,
    popularity_exponent: float = 0.8,
    selection_bias: float = 1.5,
    seed: int = 0,
) -> Dataset:
    """Latent-factor preferences rendered through heterogeneous rating habits.

    Items are picked with probability proportional to a Zipf-like popularity
    times ``exp(selection_bias * affinity)``, so users mostly rate things they
    like.  Each user then maps affinities to scale levels with their own
    centre and spread: some use the whole scale, many pile up at the top.
    """
    scale = scale or RatingScale.from_range(1, 5)
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(n_users, rank)) / np.sqrt(rank)
    V = rng.normal(size=(n_items, rank)) / np.sqrt(rank)
    item_quality = rng.normal(scale=0.5, size=n_items)
    popularity = 1.0 / np.arange(1, n_items + 1) ** popularity_exponent
    popularity = popularity[rng.permutation(n_items)]

    levels = np.asarray(scale.values)
    n_levels = len(levels)
    rows = []
    for u in range(n_users):
        affinity = V @ U[u] + item_quality
        weights = popularity * np.exp(selection_bias * affinity)
        size = int(np.clip(rng.geometric(1.0 / mean_profile), 3, n_items // 2))
        items = rng.choice(n_items, size=size, replace=False, p=weights / weights.sum())
        a = affinity[items]
        a = (a - a.mean()) / (a.std() + 1e-9)
        centre = rng.normal(0.75, 0.15) * (n_levels - 1)   # generous by default
        spread = rng.uniform(0.2, 1.0) * (n_levels - 1) / 3
        pos = np.clip(np.rint(centre + spread * a), 0, n_levels - 1).astype(int)
        rows.extend((f"u{u}", f"i{i}", float(levels[p])) for i, p in zip(items, pos))
    return Dataset(rows, scale=scale)
