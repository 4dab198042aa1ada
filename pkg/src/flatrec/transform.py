"""Per-profile rating transformations: identity, z-score, percentile and smoothed percentile.

A percentile maps a rating ``x`` inside a profile ``M`` to
``100 * position(x) / (|M| + 1)``, where ``position`` is the 1-based rank of
``x`` in the sorted profile and the index rule decides which occurrence of a
tied value is used.  The smoothed variant behaves as if ``k`` artificial
ratings at every scale level had been added to the profile first.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset, RatingScale


class TransformError(ValueError):
    pass


class IndexRule(enum.Enum):
    FIRST = "first"
    MEDIAN = "median"
    LAST = "last"

    @classmethod
    def parse(cls, text: str | "IndexRule") -> "IndexRule":
        if isinstance(text, IndexRule):
            return text
        key = text.strip().lower()
        for rule in cls:
            if key in (rule.value, rule.value[0]):
                return rule
        raise TransformError(f"unknown index rule {text!r} (first|median|last)")


class Orientation(enum.Enum):
    USER = "user"
    ITEM = "item"

    @classmethod
    def parse(cls, text: str | "Orientation") -> "Orientation":
        if isinstance(text, Orientation):
            return text
        key = text.strip().lower()
        for o in cls:
            if key in (o.value, o.value[0]):
                return o
        raise TransformError(f"unknown orientation {text!r} (user|item)")


IDENTITY = "identity"
ZSCORE = "zscore"
PERCENTILE = "per"
SMOOTHED = "smoothed"

_KIND_ALIASES = {
    "identity": IDENTITY,
    "rating": IDENTITY,
    "raw": IDENTITY,
    "rate": IDENTITY,
    "zscore": ZSCORE,
    "z": ZSCORE,
    "per": PERCENTILE,
    "percentile": PERCENTILE,
    "smoothed": SMOOTHED,
    "sper": SMOOTHED,
}
_OFFSET_POLICIES = ("min0", "none")


@dataclass(frozen=True)
class TransformSpec:
    """Which transformation to apply.

    String form (``parse``/``render``): ``kind[:rule][:orientation][:key=value]``,
    e.g. ``identity``, ``zscore:user``, ``per:last:user``,
    ``smoothed:median:user:k=2``.
    """

    kind: str = IDENTITY
    rule: IndexRule | None = None
    orientation: Orientation = Orientation.USER
    k: int = 0
    offset: str = "min0"

    def __post_init__(self) -> None:
        if self.kind not in (IDENTITY, ZSCORE, PERCENTILE, SMOOTHED):
            raise TransformError(f"unknown transform kind {self.kind!r}")
        if self.kind in (PERCENTILE, SMOOTHED) and self.rule is None:
            raise TransformError(f"{self.kind} needs an index rule")
        if self.kind not in (PERCENTILE, SMOOTHED) and self.rule is not None:
            raise TransformError(f"{self.kind} takes no index rule")
        if self.k < 0:
            raise TransformError(f"smoothing k must be non-negative, got {self.k}")
        if self.kind != SMOOTHED and self.k:
            raise TransformError("k only applies to smoothed transforms")
        if self.offset not in _OFFSET_POLICIES:
            raise TransformError(f"unknown offset policy {self.offset!r}")

    @classmethod
    def identity(cls) -> "TransformSpec":
        return cls(IDENTITY)

    @classmethod
    def zscore(cls, orientation="user", offset: str = "min0") -> "TransformSpec":
        return cls(ZSCORE, orientation=Orientation.parse(orientation), offset=offset)

    @classmethod
    def percentile(cls, rule, orientation="user") -> "TransformSpec":
        return cls(PERCENTILE, IndexRule.parse(rule), Orientation.parse(orientation))

    @classmethod
    def smoothed(cls, rule, k: int, orientation="user") -> "TransformSpec":
        return cls(SMOOTHED, IndexRule.parse(rule), Orientation.parse(orientation), k=k)

    @property
    def is_continuous(self) -> bool:
        return self.kind != IDENTITY

    def render(self) -> str:
        if self.kind == IDENTITY:
            return IDENTITY
        if self.kind == ZSCORE:
            text = f"{ZSCORE}:{self.orientation.value}"
            return text if self.offset == "min0" else f"{text}:offset={self.offset}"
        text = f"{self.kind}:{self.rule.value}:{self.orientation.value}"
        return f"{text}:k={self.k}" if self.kind == SMOOTHED else text

    def __str__(self) -> str:
        return self.render()

    @classmethod
    def parse(cls, text: str) -> "TransformSpec":
        parts = [p.strip() for p in text.strip().split(":") if p.strip()]
        if not parts:
            raise TransformError("empty transform spec")
        kind = _KIND_ALIASES.get(parts[0].lower())
        if kind is None:
            raise TransformError(f"unknown transform kind {parts[0]!r} in {text!r}")
        rule = None
        orientation = Orientation.USER
        options: dict[str, str] = {}
        for part in parts[1:]:
            if "=" in part:
                key, _, value = part.partition("=")
                options[key.strip().lower()] = value.strip()
                continue
            try:
                orientation = Orientation.parse(part)
                continue
            except TransformError:
                pass
            try:
                rule = IndexRule.parse(part)
            except TransformError:
                raise TransformError(f"unrecognised token {part!r} in {text!r}") from None
        unknown = set(options) - {"k", "offset"}
        if unknown:
            raise TransformError(f"unknown option(s) {sorted(unknown)} in {text!r}")
        try:
            k = int(options.get("k", 0))
        except ValueError:
            raise TransformError(f"k must be an integer in {text!r}") from None
        if kind == SMOOTHED and "k" not in options:
            raise TransformError(f"smoothed transform needs k=INT in {text!r}")
        return cls(kind, rule, orientation, k=k, offset=options.get("offset", "min0"))


def standard_inputs() -> list[TransformSpec]:
    """The five user-oriented inputs compared throughout: raw, z-score, three percentiles."""
    return [
        TransformSpec.identity(),
        TransformSpec.zscore("user"),
        TransformSpec.percentile("first"),
        TransformSpec.percentile("median"),
        TransformSpec.percentile("last"),
    ]


@dataclass
class ValueMatrix:
    """Transformed values aligned with the rating positions of ``source``."""

    source: Dataset
    values: np.ndarray
    spec: TransformSpec
    scale_hint: tuple[float, float]
    offset: float = 0.0
    _entries: dict | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def entries(self) -> dict[tuple[str, str], float]:
        if self._entries is None:
            self._entries = dict(zip(self.source.keys(), self.values.tolist()))
        return self._entries

    def __getitem__(self, key: tuple[str, str]) -> float:
        return self.entries[key]

    def profile(self, user: str) -> dict[str, float]:
        """Transformed values of one user's ratings, keyed by item."""
        ds = self.source
        pos = ds.user_groups()[ds.user_index[user]]
        return {ds.item_ids[ds.i_idx[j]]: float(self.values[j]) for j in pos}


# -- scalar operations -------------------------------------------------------


def _counts(x: float, profile: Sequence[float]) -> tuple[int, int, bool]:
    if len(profile) == 0:
        raise TransformError("profile must not be empty")
    arr = np.asarray(profile, dtype=float)
    c_lt = int(np.count_nonzero(arr < x))
    c_le = int(np.count_nonzero(arr <= x))
    return c_lt, c_le, c_le > c_lt


def _position(c_lt, c_le, rule: IndexRule):
    # c_lt / c_le may be scalars or arrays; absent values (c_le == c_lt) land on c_lt + 1
    first = c_lt + 1
    last = np.maximum(c_le, first)
    if rule is IndexRule.FIRST:
        return first
    if rule is IndexRule.LAST:
        return last
    return (first + last) / 2.0


def position(x: float, profile: Sequence[float], rule: IndexRule | str) -> float:
    """1-based position of ``x`` in the sorted ``profile`` under ``rule``.

    FIRST and LAST pick the first and last occurrence of a tied value and
    MEDIAN their midpoint (possibly fractional).  A value absent from the
    profile gets the position where it would be inserted.
    """
    rule = IndexRule.parse(rule)
    c_lt, c_le, _ = _counts(x, profile)
    return float(_position(c_lt, c_le, rule))


def percentile_value(x: float, profile: Sequence[float], rule: IndexRule | str) -> float:
    rule = IndexRule.parse(rule)
    return 100.0 * position(x, profile, rule) / (len(profile) + 1)


def smoothed_percentile_value(
    x: float,
    profile: Sequence[float],
    rule: IndexRule | str,
    k: int,
    scale: RatingScale,
) -> float:
    """Percentile of ``x`` after padding the profile with ``k`` ratings per scale level.

    Closed form: the shift added to the position is ``k*(index-1)`` for FIRST,
    ``k*(index-1) + k/2`` for MEDIAN and ``k*index`` for LAST, and the
    denominator grows by ``k*|scale|``.
    """
    rule = IndexRule.parse(rule)
    if k < 0:
        raise TransformError(f"k must be non-negative, got {k}")
    idx = scale.index(x)
    pos = position(x, profile, rule)
    return 100.0 * (pos + _smoothing_shift(idx, k, rule)) / (len(profile) + scale.count * k + 1)


def _smoothing_shift(idx, k: int, rule: IndexRule):
    if rule is IndexRule.FIRST:
        return k * (idx - 1)
    if rule is IndexRule.LAST:
        return k * idx
    return k * (idx - 1) + k / 2.0


# -- matrix transforms -------------------------------------------------------


def _profile_percentiles(
    values: np.ndarray, rule: IndexRule, k: int = 0, scale_idx: np.ndarray | None = None, n_levels: int = 0
) -> np.ndarray:
    ordered = np.sort(values)
    c_lt = np.searchsorted(ordered, values, side="left")
    c_le = np.searchsorted(ordered, values, side="right")
    pos = _position(c_lt, c_le, rule).astype(float)
    if k:
        pos = pos + _smoothing_shift(scale_idx, k, rule)
    return 100.0 * pos / (len(values) + n_levels * k + 1)


def _groups(dataset: Dataset, orientation: Orientation) -> list[np.ndarray]:
    return dataset.user_groups() if orientation is Orientation.USER else dataset.item_groups()


def _percentile_matrix(
    dataset: Dataset, rule: IndexRule, orientation: Orientation, k: int = 0
) -> np.ndarray:
    out = np.empty(len(dataset), dtype=float)
    scale_idx = dataset.scale.indices(dataset.values) if k else None
    for pos in _groups(dataset, orientation):
        out[pos] = _profile_percentiles(
            dataset.values[pos],
            rule,
            k=k,
            scale_idx=None if scale_idx is None else scale_idx[pos],
            n_levels=dataset.scale.count,
        )
    return out


def transform_user(dataset: Dataset, rule: IndexRule | str) -> ValueMatrix:
    spec = TransformSpec.percentile(rule, Orientation.USER)
    return ValueMatrix(dataset, _percentile_matrix(dataset, spec.rule, Orientation.USER), spec, (0.0, 100.0))


def transform_item(dataset: Dataset, rule: IndexRule | str) -> ValueMatrix:
    spec = TransformSpec.percentile(rule, Orientation.ITEM)
    return ValueMatrix(dataset, _percentile_matrix(dataset, spec.rule, Orientation.ITEM), spec, (0.0, 100.0))


def smoothed_transform(
    dataset: Dataset, rule: IndexRule | str, k: int, orientation: Orientation | str = Orientation.USER
) -> ValueMatrix:
    spec = TransformSpec.smoothed(rule, k, orientation)
    values = _percentile_matrix(dataset, spec.rule, spec.orientation, k=k)
    return ValueMatrix(dataset, values, spec, (0.0, 100.0))


def zscore_values(dataset: Dataset, orientation: Orientation | str = Orientation.USER) -> np.ndarray:
    """Unshifted per-profile z-scores (population stdev; zero-spread profiles give 0)."""
    orientation = Orientation.parse(orientation)
    out = np.zeros(len(dataset), dtype=float)
    for pos in _groups(dataset, orientation):
        vals = dataset.values[pos]
        sd = vals.std()
        if sd > 0:
            out[pos] = (vals - vals.mean()) / sd
    return out


def zscore_transform(
    dataset: Dataset, orientation: Orientation | str = Orientation.USER, offset_policy: str = "min0"
) -> ValueMatrix:
    spec = TransformSpec.zscore(orientation, offset=offset_policy)
    z = zscore_values(dataset, spec.orientation)
    offset = -float(z.min()) if offset_policy == "min0" else 0.0
    z = z + offset
    return ValueMatrix(dataset, z, spec, (float(z.min()), float(z.max())), offset=offset)


def identity_transform(dataset: Dataset) -> ValueMatrix:
    return ValueMatrix(
        dataset, dataset.values.copy(), TransformSpec.identity(), (dataset.scale.min, dataset.scale.max)
    )


def apply_transform(dataset: Dataset, spec: TransformSpec | str) -> ValueMatrix:
    if isinstance(spec, str):
        spec = TransformSpec.parse(spec)
    if spec.kind == IDENTITY:
        return identity_transform(dataset)
    if spec.kind == ZSCORE:
        return zscore_transform(dataset, spec.orientation, spec.offset)
    if spec.kind == PERCENTILE:
        vm = _percentile_matrix(dataset, spec.rule, spec.orientation)
        return ValueMatrix(dataset, vm, spec, (0.0, 100.0))
    return smoothed_transform(dataset, spec.rule, spec.k, spec.orientation)


def format_matrix(matrix: ValueMatrix, header_lines: Iterable[str] = ()) -> str:
    """Tab-separated ``user item value`` dump with a ``#transform=`` header."""
    lines = [f"#transform={matrix.spec.render()}", *header_lines]
    ds = matrix.source
    for u, i, v in zip(ds.u_idx, ds.i_idx, matrix.values):
        lines.append(f"{ds.user_ids[u]}\t{ds.item_ids[i]}\t{v:.4f}")
    return "\n".join(lines) + "\n"
