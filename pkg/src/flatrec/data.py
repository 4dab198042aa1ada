"""Rating datasets: loading, rating scales, profiles and cross-validation folds."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

_logger = logging.getLogger(__name__)

#: Named delimiters accepted by :func:`load_ratings` (``None`` splits on any whitespace).
DELIMITERS: dict[str, str | None] = {
    "tab": "\t",
    "comma": ",",
    "colons": "::",
    "space": None,
    "whitespace": None,
}


class DataError(ValueError):
    """Raised for unreadable, malformed or inconsistent rating data."""


@dataclass(frozen=True)
class RatingScale:
    """Ordered set of legal rating values, e.g. ``1..5`` or ``0.5..4.0``."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise DataError("rating scale must contain at least one value")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise DataError(f"rating scale must be strictly increasing: {vals}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_range(cls, lo: float, hi: float, step: float = 1.0) -> "RatingScale":
        n = int(round((hi - lo) / step)) + 1
        return cls(tuple(round(lo + j * step, 10) for j in range(n)))

    @property
    def count(self) -> int:
        return len(self.values)

    @property
    def min(self) -> float:
        return self.values[0]

    @property
    def max(self) -> float:
        return self.values[-1]

    def __contains__(self, x: object) -> bool:
        return x in self.values

    def index(self, x: float) -> int:
        """1-based rank of ``x`` among the scale levels."""
        try:
            return self.values.index(float(x)) + 1
        except ValueError:
            raise DataError(f"rating {x!r} is not on the scale {list(self.values)}") from None

    def indices(self, xs: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`index` (1-based)."""
        levels = np.asarray(self.values)
        xs = np.asarray(xs, dtype=float)
        pos = np.searchsorted(levels, xs)
        ok = (pos < len(levels)) & (levels[np.minimum(pos, len(levels) - 1)] == xs)
        if not np.all(ok):
            bad = xs[~ok][0]
            raise DataError(f"rating {bad!r} is not on the scale {list(self.values)}")
        return pos + 1

    def render(self) -> str:
        return ",".join(f"{v:g}" for v in self.values)

    @classmethod
    def parse(cls, text: str) -> "RatingScale":
        """Parse ``"1,2,3,4,5"`` or a range ``"0.5:4.0:0.5"`` (lo:hi[:step])."""
        text = text.strip()
        try:
            if ":" in text:
                parts = [float(p) for p in text.split(":")]
                if len(parts) not in (2, 3):
                    raise ValueError(text)
                return cls.from_range(*parts)
            return cls(tuple(float(p) for p in text.split(",") if p.strip()))
        except ValueError:
            raise DataError(f"cannot parse rating scale {text!r}") from None


class Rating(NamedTuple):
    user: str
    item: str
    value: float


class Dataset:
    """Immutable bag of ``(user, item, value)`` ratings with profile indexes.

    Users and items are stored as dense integer codes in order of first
    appearance; ``user_ids[u_idx[j]]`` is the user of rating ``j``.  Duplicate
    ``(user, item)`` pairs keep the last value seen.
    """

    def __init__(self, ratings: Iterable[tuple[str, str, float]], scale: RatingScale | None = None):
        merged: dict[tuple[str, str], float] = {}
        for user, item, value in ratings:
            merged[(str(user), str(item))] = float(value)
        if not merged:
            raise DataError("no ratings")

        user_codes: dict[str, int] = {}
        item_codes: dict[str, int] = {}
        n = len(merged)
        u_idx = np.empty(n, dtype=np.int64)
        i_idx = np.empty(n, dtype=np.int64)
        values = np.empty(n, dtype=np.float64)
        for j, ((user, item), value) in enumerate(merged.items()):
            u_idx[j] = user_codes.setdefault(user, len(user_codes))
            i_idx[j] = item_codes.setdefault(item, len(item_codes))
            values[j] = value
        if not np.all(np.isfinite(values)):
            raise DataError("ratings must be finite real numbers")

        self.user_ids: tuple[str, ...] = tuple(user_codes)
        self.item_ids: tuple[str, ...] = tuple(item_codes)
        self.user_index: Mapping[str, int] = MappingProxyType(user_codes)
        self.item_index: Mapping[str, int] = MappingProxyType(item_codes)
        for arr in (u_idx, i_idx, values):
            arr.flags.writeable = False
        self.u_idx = u_idx
        self.i_idx = i_idx
        self.values = values
        self.scale = infer_scale(self, scale)
        self._by_user: dict[str, dict[str, float]] | None = None
        self._by_item: dict[str, dict[str, float]] | None = None
        self._user_groups: list[np.ndarray] | None = None
        self._item_groups: list[np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        for u, i, v in zip(self.u_idx, self.i_idx, self.values):
            yield Rating(self.user_ids[u], self.item_ids[i], float(v))

    def __reduce__(self):
        # rebuilding from the rating list preserves code order and the scale
        return (Dataset, (self.ratings, self.scale))

    def __repr__(self) -> str:
        return (
            f"Dataset(users={self.n_users}, items={self.n_items}, "
            f"ratings={len(self)}, scale=[{self.scale.render()}])"
        )

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def ratings(self) -> list[Rating]:
        return list(self)

    def keys(self) -> list[tuple[str, str]]:
        return [(self.user_ids[u], self.item_ids[i]) for u, i in zip(self.u_idx, self.i_idx)]

    @property
    def by_user(self) -> Mapping[str, dict[str, float]]:
        """user -> {item: rating}."""
        if self._by_user is None:
            profiles: dict[str, dict[str, float]] = {u: {} for u in self.user_ids}
            for r in self:
                profiles[r.user][r.item] = r.value
            self._by_user = profiles
        return MappingProxyType(self._by_user)

    @property
    def by_item(self) -> Mapping[str, dict[str, float]]:
        """item -> {user: rating}."""
        if self._by_item is None:
            profiles: dict[str, dict[str, float]] = {i: {} for i in self.item_ids}
            for r in self:
                profiles[r.item][r.user] = r.value
            self._by_item = profiles
        return MappingProxyType(self._by_item)

    def user_groups(self) -> list[np.ndarray]:
        """Row positions of each user's ratings, indexed by user code."""
        if self._user_groups is None:
            self._user_groups = _group_positions(self.u_idx, self.n_users)
        return self._user_groups

    def item_groups(self) -> list[np.ndarray]:
        """Row positions of each item's ratings, indexed by item code."""
        if self._item_groups is None:
            self._item_groups = _group_positions(self.i_idx, self.n_items)
        return self._item_groups

    def subset(self, positions: Sequence[int] | np.ndarray) -> "Dataset":
        """New dataset holding the ratings at ``positions`` (same scale)."""
        positions = np.asarray(positions, dtype=np.int64)
        rows = (
            (self.user_ids[self.u_idx[j]], self.item_ids[self.i_idx[j]], self.values[j])
            for j in positions
        )
        return Dataset(rows, scale=self.scale)

    def stats(self) -> dict[str, float]:
        n = len(self)
        return {
            "users": self.n_users,
            "items": self.n_items,
            "ratings": n,
            "density": n / (self.n_users * self.n_items),
        }


def _group_positions(codes: np.ndarray, n_groups: int) -> list[np.ndarray]:
    order = np.argsort(codes, kind="stable")
    bounds = np.searchsorted(codes[order], np.arange(n_groups + 1))
    return [order[bounds[g] : bounds[g + 1]] for g in range(n_groups)]


def infer_scale(dataset: Dataset, override: RatingScale | None = None) -> RatingScale:
    """Sorted distinct observed values, or ``override`` if it covers them all."""
    observed = np.unique(dataset.values)
    if len(observed) == 0:
        raise DataError("no ratings")
    if override is None:
        return RatingScale(tuple(observed.tolist()))
    missing = [v for v in observed.tolist() if v not in override.values]
    if missing:
        raise DataError(f"observed rating(s) {missing} outside supplied scale [{override.render()}]")
    return override


def _resolve_delimiter(fmt: str | None) -> str | None:
    if fmt is None:
        return None
    if fmt in DELIMITERS:
        return DELIMITERS[fmt]
    if fmt in ("\t", ",", "::", ";", "|"):
        return fmt
    raise DataError(f"unknown delimiter {fmt!r}; choose from {sorted(DELIMITERS)}")


def load_ratings(
    path: str | os.PathLike,
    format: str | None = None,
    scale: RatingScale | None = None,
    header: bool = False,
) -> Dataset:
    """Read ``user item rating [extras...]`` rows from a delimited text file.

    Args:
        path: file to read.
        format: one of ``tab``, ``comma``, ``colons`` (``::``), ``space``;
            ``None`` splits on any whitespace.
        scale: explicit rating scale; must cover every observed value.
        header: skip the first non-comment line.

    Blank lines and lines starting with ``#`` are ignored.
    """
    sep = _resolve_delimiter(format)
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    rows: list[tuple[str, str, float]] = []
    skipped_header = not header
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if not skipped_header:
            skipped_header = True
            continue
        fields = text.split(sep) if sep is not None else text.split()
        if len(fields) < 3:
            raise DataError(f"{path}:{lineno}: expected user, item, rating; got {text!r}")
        try:
            value = float(fields[2])
        except ValueError:
            raise DataError(f"{path}:{lineno}: rating {fields[2]!r} is not a number") from None
        rows.append((fields[0].strip(), fields[1].strip(), value))
    if not rows:
        raise DataError(f"{path}: no ratings")
    dataset = Dataset(rows, scale=scale)
    _logger.info("loaded %s from %s", dataset, path)
    return dataset


def write_ratings(dataset: Dataset, path: str | os.PathLike) -> None:
    """Write the canonical tab-separated form (``repr`` floats round-trip exactly)."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in dataset:
            fh.write(f"{r.user}\t{r.item}\t{r.value!r}\n")


@dataclass(frozen=True)
class FoldSplit:
    train: Dataset
    test: Dataset
    fold_index: int


def fold_assignment(dataset: Dataset, k: int, seed: int, stratified: bool = False) -> np.ndarray:
    """Fold number of every rating position.

    Global mode shuffles all ratings and deals them into ``k`` contiguous
    chunks whose sizes differ by at most one.  Stratified mode shuffles
    each user's profile separately and deals it round-robin, starting at a
    random fold, so every user is spread across folds.
    """
    if k < 2:
        raise DataError(f"k must be at least 2, got {k}")
    n = len(dataset)
    if k > n:
        raise DataError(f"k={k} exceeds the number of ratings ({n})")
    rng = np.random.default_rng(seed)
    folds = np.empty(n, dtype=np.int64)
    if not stratified:
        perm = rng.permutation(n)
        for f, chunk in enumerate(np.array_split(perm, k)):
            folds[chunk] = f
        return folds
    for group in dataset.user_groups():
        shuffled = rng.permutation(group)
        start = int(rng.integers(k))
        folds[shuffled] = (start + np.arange(len(shuffled))) % k
    return folds


def kfold_split(dataset: Dataset, k: int = 5, seed: int = 0, stratified: bool = False) -> list[FoldSplit]:
    folds = fold_assignment(dataset, k, seed, stratified=stratified)
    splits = []
    for f in range(k):
        test_pos = np.flatnonzero(folds == f)
        train_pos = np.flatnonzero(folds != f)
        if len(test_pos) == 0 or len(train_pos) == 0:
            raise DataError(f"fold {f} is empty; use fewer folds")
        splits.append(FoldSplit(dataset.subset(train_pos), dataset.subset(test_pos), f))
    return splits
