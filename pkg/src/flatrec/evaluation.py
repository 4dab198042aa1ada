"""Cross-validated top-N evaluation over transform x model conditions."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .data import Dataset, FoldSplit, kfold_split
from .distmetrics import DistributionError, analyze, pearson_correlation
from .recsys import ModelConfig, recommend_topn, train_model
from .transform import IDENTITY, TransformSpec, apply_transform

_logger = logging.getLogger(__name__)


class EvaluationError(RuntimeError):
    pass


# -- metrics -----------------------------------------------------------------


def ndcg_at_k(recommended: Sequence, relevant: Iterable, k: int = 10) -> float:
    """Binary-relevance nDCG of the first ``k`` recommended items (0 if nothing is relevant)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rel = set(relevant)
    if not rel:
        return 0.0
    dcg = sum(1.0 / math.log2(pos + 2) for pos, item in enumerate(recommended[:k]) if item in rel)
    idcg = sum(1.0 / math.log2(pos + 2) for pos in range(min(len(rel), k)))
    return dcg / idcg


def precision_at_k(recommended: Sequence, relevant: Iterable, k: int = 10) -> float:
    rel = set(relevant)
    return sum(1 for item in recommended[:k] if item in rel) / k


def recall_at_k(recommended: Sequence, relevant: Iterable, k: int = 10) -> float:
    rel = set(relevant)
    if not rel:
        return 0.0
    return sum(1 for item in recommended[:k] if item in rel) / len(rel)


def long_tail_split(train: Dataset, cut: float = 0.2) -> tuple[set[str], set[str]]:
    """Split items into (short head, long tail) by training popularity.

    Items are ranked by rating count, ties by ascending id; the top
    ``ceil(cut * n_items)`` form the short head.
    """
    if not 0 < cut < 1:
        raise ValueError(f"cut must lie strictly between 0 and 1, got {cut}")
    if len(train) == 0:
        raise EvaluationError("empty training set")
    counts = np.bincount(train.i_idx, minlength=train.n_items)
    ranked = sorted(range(train.n_items), key=lambda j: (-counts[j], train.item_ids[j]))
    n_head = math.ceil(cut * train.n_items)
    head = {train.item_ids[j] for j in ranked[:n_head]}
    tail = {train.item_ids[j] for j in ranked[n_head:]}
    return head, tail


def long_tail_ndcg(
    recommended: Sequence, relevant: Iterable, long_tail: set, k: int = 10, compact: bool = True
) -> float:
    """nDCG restricted to long-tail items.

    With ``compact`` the short-head items are dropped from the list and the
    remaining items move up; otherwise they keep their slots and simply
    count as misses.
    """
    rel = {item for item in relevant if item in long_tail}
    if compact:
        kept = [item for item in recommended if item in long_tail]
        return ndcg_at_k(kept, rel, k)
    return ndcg_at_k(list(recommended), rel, k)


def paired_ttest(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Two-tailed paired t-test of ``xs - ys``; returns ``(t, p)``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape:
        raise ValueError("paired samples must have equal length")
    n = len(x)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = x - y
    sd = d.std(ddof=1)
    if sd == 0:
        raise ValueError("differences have zero variance; nothing to test")
    t = d.mean() / (sd / math.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), df=n - 1)
    return float(t), float(min(1.0, p))


# -- conditions and per-cell evaluation --------------------------------------


@dataclass(frozen=True)
class Condition:
    transform: TransformSpec
    config: ModelConfig
    dataset_id: str = ""

    @property
    def label(self) -> str:
        return f"{self.transform.render()} | {self.config.label()}"


@dataclass
class CellResult:
    fold: int
    ndcg: dict[str, float] = field(default_factory=dict)
    lt_ndcg: dict[str, float] = field(default_factory=dict)
    precision: dict[str, float] = field(default_factory=dict)
    recall: dict[str, float] = field(default_factory=dict)
    flatness: float | None = None
    kurtosis: float | None = None
    cold_users: int = 0
    error: str | None = None


def evaluate_cell(
    split: FoldSplit,
    condition: Condition,
    long_tail: set[str],
    n: int = 10,
    relevance_threshold: float | None = None,
    compact_long_tail: bool = True,
) -> CellResult:
    """Train one condition on one fold's training part and score its test users."""
    result = CellResult(split.fold_index)
    matrix = apply_transform(split.train, condition.transform)
    try:
        report = analyze(matrix)
        result.flatness = report.flatness
        result.kurtosis = None if math.isnan(report.kurtosis) else report.kurtosis
    except DistributionError as exc:
        _logger.warning("no distribution stats for %s: %s", condition.label, exc)
    try:
        model = train_model(matrix, condition.config)
    except Exception as exc:  # a failed condition must not abort the run
        result.error = f"fold {split.fold_index}: {exc}"
        return result

    test = split.test
    for user, profile in test.by_user.items():
        relevant = [
            item for item, value in profile.items() if relevance_threshold is None or value >= relevance_threshold
        ]
        if not relevant:
            continue
        recs = recommend_topn(model, user, n)
        if recs.cold:
            result.cold_users += 1
            continue
        items = recs.item_ids
        result.ndcg[user] = ndcg_at_k(items, relevant, n)
        result.lt_ndcg[user] = long_tail_ndcg(items, relevant, long_tail, n, compact=compact_long_tail)
        result.precision[user] = precision_at_k(items, relevant, n)
        result.recall[user] = recall_at_k(items, relevant, n)
    return result


def _run_unit(args):
    split, condition, long_tail, n, threshold, compact = args
    return evaluate_cell(split, condition, long_tail, n, threshold, compact)


# -- report ------------------------------------------------------------------


def _mean(values) -> float:
    values = list(values)
    return float(np.mean(values)) if values else 0.0


@dataclass
class ConditionResult:
    condition: Condition
    folds: list[CellResult]
    error: str | None = None
    ttest: dict | None = None
    lt_ttest: dict | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def fold_means(self, metric: str = "ndcg") -> list[float]:
        return [_mean(getattr(c, metric).values()) for c in self.folds]

    def mean(self, metric: str = "ndcg") -> float:
        """Average over users within each fold, then over folds."""
        return _mean(self.fold_means(metric))

    def per_user(self, metric: str = "ndcg") -> dict[tuple[int, str], float]:
        return {(c.fold, u): v for c in self.folds for u, v in getattr(c, metric).items()}

    @property
    def flatness(self) -> float | None:
        vals = [c.flatness for c in self.folds if c.flatness is not None]
        return _mean(vals) if vals else None

    @property
    def kurtosis(self) -> float | None:
        vals = [c.kurtosis for c in self.folds if c.kurtosis is not None]
        return _mean(vals) if vals else None

    def to_dict(self, per_user: bool = True) -> dict:
        d = {
            "label": self.condition.label,
            "transform": self.condition.transform.render(),
            "config": self.condition.config.to_dict(),
            "dataset": self.condition.dataset_id,
            "error": self.error,
        }
        if self.failed:
            return d
        d.update(
            ndcg=self.mean("ndcg"),
            long_tail_ndcg=self.mean("lt_ndcg"),
            precision=self.mean("precision"),
            recall=self.mean("recall"),
            fold_ndcg=self.fold_means("ndcg"),
            fold_long_tail_ndcg=self.fold_means("lt_ndcg"),
            flatness=self.flatness,
            kurtosis=self.kurtosis,
            cold_users=sum(c.cold_users for c in self.folds),
            ttest=self.ttest,
            long_tail_ttest=self.lt_ttest,
        )
        if per_user:
            d["per_user_ndcg"] = [[f, u, v] for (f, u), v in sorted(self.per_user("ndcg").items())]
        return d


@dataclass
class EvalReport:
    results: list[ConditionResult]
    correlations: dict[str, dict] = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    def __getitem__(self, key) -> ConditionResult:
        for r in self.results:
            if key in (r.condition, r.condition.label, r.condition.transform.render()):
                return r
        raise KeyError(key)

    @property
    def failures(self) -> dict[str, str]:
        return {r.condition.label: r.error for r in self.results if r.failed}

    def to_dict(self, per_user: bool = True) -> dict:
        return {
            "settings": self.settings,
            "conditions": [r.to_dict(per_user) for r in self.results],
            "correlations": self.correlations,
            "failures": self.failures,
        }

    def to_json(self, per_user: bool = True) -> str:
        return json.dumps(self.to_dict(per_user), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """Flat ``condition,fold,metric,value`` rows (fold ``mean`` is the overall value)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "fold", "metric", "value", "significant_p05"])
        for r in self.results:
            if r.failed:
                continue
            label = r.condition.label
            for metric, name, test in (
                ("ndcg", "ndcg@10", r.ttest),
                ("lt_ndcg", "long_tail_ndcg@10", r.lt_ttest),
                ("precision", "precision@10", None),
                ("recall", "recall@10", None),
            ):
                for f, value in zip((c.fold for c in r.folds), r.fold_means(metric)):
                    w.writerow([label, f, name, f"{value:.6f}", ""])
                sig = "" if test is None else str(bool(test["significant_p05"])).lower()
                w.writerow([label, "mean", name, f"{r.mean(metric):.6f}", sig])
        return buf.getvalue()


def _ttest_entry(result: ConditionResult, baseline: ConditionResult, metric: str) -> dict | None:
    a = result.per_user(metric)
    b = baseline.per_user(metric)
    keys = sorted(set(a) & set(b))
    try:
        t, p = paired_ttest([a[k] for k in keys], [b[k] for k in keys])
    except ValueError as exc:
        return {"baseline": baseline.condition.label, "t": None, "p": None, "significant_p05": False,
                "note": str(exc)}
    return {"baseline": baseline.condition.label, "t": t, "p": p, "significant_p05": p < 0.05}


def _correlations(results: list[ConditionResult]) -> dict[str, dict]:
    groups: dict[tuple, list[ConditionResult]] = {}
    for r in results:
        if not r.failed and r.flatness is not None:
            groups.setdefault((r.condition.dataset_id, r.condition.config), []).append(r)
    out = {}
    for (_, config), members in groups.items():
        if len(members) < 2:
            continue
        ndcg = [m.mean("ndcg") for m in members]
        entry = {"conditions": [m.condition.transform.render() for m in members]}
        for name in ("flatness", "kurtosis"):
            try:
                entry[name] = pearson_correlation([getattr(m, name) for m in members], ndcg)
            except DistributionError:
                entry[name] = None
        out[members[0].condition.config.label()] = entry
    return out


def _attach_ttests(results: list[ConditionResult], same_config: bool) -> None:
    for r in results:
        if r.failed or r.condition.transform.kind == IDENTITY:
            continue
        base = next(
            (
                b
                for b in results
                if not b.failed
                and b.condition.transform.kind == IDENTITY
                and (not same_config or b.condition.config == r.condition.config)
                and b.condition.dataset_id == r.condition.dataset_id
            ),
            None,
        )
        if base is not None:
            r.ttest = _ttest_entry(r, base, "ndcg")
            r.lt_ttest = _ttest_entry(r, base, "lt_ndcg")


def run_experiment(
    dataset: Dataset,
    conditions: Sequence[Condition],
    k_folds: int = 5,
    seed: int = 0,
    n: int = 10,
    long_tail_cut: float = 0.2,
    jobs: int = 1,
    relevance_threshold: float | None = None,
    compact_long_tail: bool = True,
    stratified: bool = False,
) -> EvalReport:
    """Cross-validate every condition on identical folds.

    Each condition's transform is fitted on the training fold only.  Paired
    t-tests compare every condition with the raw-rating condition sharing
    its model configuration, over per-user nDCG within the same folds.
    """
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    if not conditions:
        raise ValueError("no conditions to evaluate")
    splits = kfold_split(dataset, k_folds, seed, stratified=stratified)
    tails = [long_tail_split(s.train, long_tail_cut)[1] for s in splits]
    units = [
        (s, c, tails[f], n, relevance_threshold, compact_long_tail)
        for c in conditions
        for f, s in enumerate(splits)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_run_unit, units))
    else:
        cells = [_run_unit(u) for u in units]

    # keyed merge so the reduction never depends on completion order
    by_key = {(pos // k_folds, cell.fold): cell for pos, cell in enumerate(cells)}
    results = []
    for ci, cond in enumerate(conditions):
        folds = [by_key[(ci, f)] for f in range(k_folds)]
        errors = [c.error for c in folds if c.error]
        results.append(ConditionResult(cond, folds, error="; ".join(errors) if errors else None))
        if errors:
            _logger.warning("condition %s failed: %s", cond.label, errors[0])

    _attach_ttests(results, same_config=True)
    settings = {
        "k_folds": k_folds,
        "seed": seed,
        "list_size": n,
        "long_tail_cut": long_tail_cut,
        "relevance_threshold": relevance_threshold,
        "compact_long_tail": compact_long_tail,
        "stratified": stratified,
    }
    return EvalReport(results, _correlations(results), settings)


# -- grid search -------------------------------------------------------------


def full_grid() -> dict[str, list]:
    """Bias regularisation, factors, iterations and learning rate sets (144 cells)."""
    return {
        "reg_bias": [0.0001, 0.001, 0.005, 0.01],
        "factors": [50, 100, 150],
        "iterations": [30, 50, 100],
        "learning_rate": [0.0001, 0.001, 0.005, 0.01],
    }


def expand_grid(base: ModelConfig, grid: Mapping[str, Sequence]) -> list[ModelConfig]:
    """Every combination, in lexicographic order of the axis value indices."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must have at least one value on every axis")
    axes = list(grid)
    return [base.with_(**dict(zip(axes, combo))) for combo in itertools.product(*(grid[a] for a in axes))]


@dataclass
class GridResult:
    best_config: ModelConfig
    best_ndcg: float
    report: EvalReport
    cells: list[tuple[ModelConfig, float | None]]

    def to_dict(self) -> dict:
        return {
            "best_config": self.best_config.to_dict(),
            "best_ndcg": self.best_ndcg,
            "cells": [{"config": c.to_dict(), "ndcg": v} for c, v in self.cells],
        }


def grid_search(
    dataset: Dataset,
    base_config: ModelConfig,
    grid: Mapping[str, Sequence],
    transform: TransformSpec | str = TransformSpec(),
    k_folds: int = 5,
    seed: int = 0,
    **kwargs,
) -> GridResult:
    """Cross-validate each grid cell; the best mean nDCG wins, earliest cell on ties."""
    if isinstance(transform, str):
        transform = TransformSpec.parse(transform)
    configs = expand_grid(base_config, grid)
    conditions = [Condition(transform, c) for c in configs]
    report = run_experiment(dataset, conditions, k_folds, seed, **kwargs)
    cells = [(r.condition.config, None if r.failed else r.mean("ndcg")) for r in report.results]
    best = None
    for config, value in cells:
        if value is not None and (best is None or value > best[1]):
            best = (config, value)
    if best is None:
        raise EvaluationError(f"every grid cell failed: {report.failures}")
    return GridResult(best[0], best[1], report, cells)


@dataclass
class InputComparison:
    """Best grid cell per input transform plus the flatness/performance correlation."""

    best: dict[str, GridResult]
    flatness: dict[str, float]
    kurtosis: dict[str, float]
    corr_flatness: float | None
    corr_kurtosis: float | None

    def best_ndcg(self, transform: str) -> float:
        return self.best[transform].best_ndcg

    def winners_report(self) -> EvalReport:
        """Each input at its best cell, t-tested against the best raw-rating cell.

        Every grid shares the same folds, so per-user scores still pair up.
        """
        results = []
        for g in self.best.values():
            winner = next(r for r in g.report.results if r.condition.config == g.best_config)
            results.append(ConditionResult(winner.condition, winner.folds))
        _attach_ttests(results, same_config=False)
        settings = dict(next(iter(self.best.values())).report.settings, selection="best grid cell per input")
        return EvalReport(results, {"best cells": self.correlation_entry()}, settings)

    def correlation_entry(self) -> dict:
        return {"conditions": list(self.best), "flatness": self.corr_flatness, "kurtosis": self.corr_kurtosis}

    def to_dict(self) -> dict:
        return {
            "inputs": {
                t: {
                    "best_ndcg": g.best_ndcg,
                    "best_config": g.best_config.to_dict(),
                    "flatness": self.flatness[t],
                    "kurtosis": self.kurtosis[t],
                }
                for t, g in self.best.items()
            },
            "corr_flatness_ndcg": self.corr_flatness,
            "corr_kurtosis_ndcg": self.corr_kurtosis,
        }


def compare_inputs(
    dataset: Dataset,
    transforms: Sequence[TransformSpec],
    base_config: ModelConfig,
    grid: Mapping[str, Sequence],
    k_folds: int = 5,
    seed: int = 0,
    **kwargs,
) -> InputComparison:
    best: dict[str, GridResult] = {}
    flat: dict[str, float] = {}
    kurt: dict[str, float] = {}
    for spec in transforms:
        g = grid_search(dataset, base_config, grid, spec, k_folds, seed, **kwargs)
        key = spec.render()
        best[key] = g
        winner = next(r for r in g.report.results if r.condition.config == g.best_config)
        flat[key] = winner.flatness
        kurt[key] = winner.kurtosis
        _logger.info("%s: best nDCG@10 %.4f with %s", key, g.best_ndcg, g.best_config.label())
    keys = list(best)
    ndcg = [best[k].best_ndcg for k in keys]
    corr = {}
    for name, source in (("flatness", flat), ("kurtosis", kurt)):
        try:
            corr[name] = pearson_correlation([source[k] for k in keys], ndcg)
        except DistributionError:
            corr[name] = None
    return InputComparison(best, flat, kurt, corr["flatness"], corr["kurtosis"])
