"""Shape diagnostics for rating-value distributions.

Flatness is the KL divergence from the observed distribution over rating
levels (or equal-width bins, for continuous transforms) to the uniform
distribution over the same support, using the natural log.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, RatingScale
from .transform import IDENTITY, ValueMatrix


class DistributionError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteDistribution:
    support: tuple
    mass: np.ndarray
    counts: np.ndarray | None = None
    edges: np.ndarray | None = None  # bin edges when the support is bin indices

    def __post_init__(self) -> None:
        mass = np.asarray(self.mass, dtype=float)
        if len(self.support) == 0:
            raise DistributionError("distribution support must not be empty")
        if mass.shape != (len(self.support),):
            raise DistributionError("one mass per support label is required")
        if np.any(mass < 0) or abs(mass.sum() - 1.0) > 1e-9:
            raise DistributionError("masses must be non-negative and sum to 1")
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_counts(cls, counts: Sequence[float], support: Sequence | None = None) -> "DiscreteDistribution":
        counts = np.asarray(counts, dtype=float)
        total = counts.sum()
        if total <= 0:
            raise DistributionError("counts must have a positive total")
        labels = tuple(support) if support is not None else tuple(range(1, len(counts) + 1))
        return cls(labels, counts / total, counts=counts)

    def __len__(self) -> int:
        return len(self.support)


def discrete_distribution(values: Sequence[float], scale: RatingScale) -> DiscreteDistribution:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise DistributionError("cannot build a distribution from no values")
    idx = scale.indices(values) - 1
    counts = np.bincount(idx, minlength=scale.count).astype(float)
    return DiscreteDistribution.from_counts(counts, scale.values)


def log_ratio_terms(dist: DiscreteDistribution) -> np.ndarray:
    """Per-label ``ln(|V| * D(v))`` (``-inf`` where the mass is zero)."""
    with np.errstate(divide="ignore"):
        return np.log(len(dist) * dist.mass)


def flatness(dist: DiscreteDistribution) -> float:
    m = dist.mass
    nz = m > 0
    return float(np.sum(m[nz] * np.log(len(dist) * m[nz])))


def kurtosis(values: Sequence[float], weights: Sequence[float] | None = None) -> float:
    """Non-excess population kurtosis ``m4 / m2**2`` (3 for a normal, 1.8 for a uniform)."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise DistributionError("kurtosis needs at least two values")
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    d = x - np.sum(w * x)
    m2 = np.sum(w * d**2)
    if m2 <= 0 or m2 <= 1e-24 * max(1.0, float(np.max(np.abs(x))) ** 2):
        raise DistributionError("kurtosis is undefined for zero-variance data")
    return float(np.sum(w * d**4) / m2**2)


def bin_values(values: Sequence[float], n_bins: int, range: tuple[float, float]) -> DiscreteDistribution:
    """Equal-width histogram over ``[lo, hi]`` as a probability vector.

    Bins are closed on the right, ``(lo + (j-1)w, lo + jw]``, except that
    ``lo`` itself falls into the first bin.
    """
    lo, hi = float(range[0]), float(range[1])
    if n_bins < 2:
        raise DistributionError("need at least two bins")
    if not hi > lo:
        raise DistributionError(f"degenerate bin range [{lo}, {hi}]")
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise DistributionError("cannot bin no values")
    span = hi - lo
    tol = 1e-9 * span
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        raise DistributionError(f"values outside bin range [{lo}, {hi}]")
    idx = np.ceil((x - lo) / span * n_bins).astype(np.int64) - 1
    idx = np.clip(idx, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(float)
    edges = np.linspace(lo, hi, n_bins + 1)
    return DiscreteDistribution(
        tuple(np.arange(1, n_bins + 1).tolist()), counts / counts.sum(), counts=counts, edges=edges
    )


def uniform_profile_census(dataset: Dataset, min_ratings: int = 1) -> dict[float, float]:
    """Fraction of all users whose profile is one repeated value, per rating level.

    Profiles shorter than ``min_ratings`` are never counted as uniform.
    """
    counts = {v: 0 for v in dataset.scale.values}
    for pos in dataset.user_groups():
        vals = dataset.values[pos]
        if len(vals) >= min_ratings and np.all(vals == vals[0]):
            counts[float(vals[0])] += 1
    return {level: c / dataset.n_users for level, c in counts.items()}


def pearson_correlation(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape:
        raise DistributionError("correlation needs equal-length inputs")
    if x.size < 2:
        raise DistributionError("correlation needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.sum(dx**2))
    sy = np.sqrt(np.sum(dy**2))
    if sx == 0 or sy == 0:
        raise DistributionError("correlation is undefined for zero-variance input")
    return float(np.clip(np.sum(dx * dy) / (sx * sy), -1.0, 1.0))


@dataclass
class DistributionReport:
    transform: str
    flatness: float
    kurtosis: float
    binned: DiscreteDistribution
    n_bins: int
    census: dict[float, float] = field(default_factory=dict)
    kurtosis_mode: str = "raw"

    @property
    def uniform_profile_fraction(self) -> dict[float, float]:
        return self.census

    def bins(self) -> list[dict]:
        d = self.binned
        if d.edges is None:
            return [{"lo": v, "hi": v, "mass": float(m)} for v, m in zip(d.support, d.mass)]
        return [
            {"lo": float(d.edges[j]), "hi": float(d.edges[j + 1]), "mass": float(m)}
            for j, m in enumerate(d.mass)
        ]

    def to_dict(self) -> dict:
        return {
            "transform": self.transform,
            "flatness": self.flatness,
            "kurtosis": None if np.isnan(self.kurtosis) else self.kurtosis,
            "kurtosis_mode": self.kurtosis_mode,
            "n_bins": self.n_bins,
            "bins": self.bins(),
            "census": [{"level": level, "fraction": frac} for level, frac in self.census.items()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def plot_csv(self) -> str:
        """``midpoint,mass`` rows for overlaying the binned distribution."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["midpoint", "mass"])
        for b in self.bins():
            writer.writerow([f"{(b['lo'] + b['hi']) / 2:.6g}", f"{b['mass']:.6f}"])
        return buf.getvalue()


def analyze(
    matrix: ValueMatrix,
    scale: RatingScale | None = None,
    kurtosis_mode: str = "raw",
    census_min_ratings: int = 1,
) -> DistributionReport:
    """Flatness, kurtosis and uniform-profile census for one value matrix.

    Raw ratings are measured over the scale levels; continuous transforms are
    first binned into ``|scale|`` equal-width bins over the transform's range.
    ``kurtosis_mode`` is ``"raw"`` (unbinned values) or ``"binned"`` (bin
    midpoints weighted by count).
    """
    if len(matrix) == 0:
        raise DistributionError("empty value matrix")
    scale = scale or matrix.source.scale
    if matrix.spec.kind == IDENTITY:
        dist = discrete_distribution(matrix.values, scale)
    else:
        lo, hi = matrix.scale_hint
        if not hi > lo:
            # every transformed value identical; widen so they land in one bin
            hi = lo + 1.0
        dist = bin_values(matrix.values, scale.count, (lo, hi))

    if kurtosis_mode == "raw":
        points, weights = matrix.values, None
    elif kurtosis_mode == "binned":
        if dist.edges is None:
            points = np.asarray(dist.support, dtype=float)
        else:
            points = (dist.edges[:-1] + dist.edges[1:]) / 2
        weights = dist.mass
    else:
        raise DistributionError(f"unknown kurtosis mode {kurtosis_mode!r}")
    try:
        k = kurtosis(points, weights=weights)
    except DistributionError:
        k = float("nan")  # a single repeated value has no spread

    return DistributionReport(
        transform=matrix.spec.render(),
        flatness=flatness(dist),
        kurtosis=k,
        binned=dist,
        n_bins=len(dist),
        census=uniform_profile_census(matrix.source, census_min_ratings),
        kurtosis_mode=kurtosis_mode,
    )
