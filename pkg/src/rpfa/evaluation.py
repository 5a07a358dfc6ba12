"""Losses, student-stratified cross-validation, ranking, and R-binned comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Dataset
from .errors import ConfigurationError, ParameterError
from .estimator import FitOptions, fit_model
from .features import FeatureTable, featurize
from .models import FittedModel, ModelSpec, predict_table

ZERO_ONE = "zero_one"
PREDICTION_ERROR = "prediction_error"
LOSSES = (ZERO_ONE, PREDICTION_ERROR)

R_BINS = ((0.0, 0.3), (0.3, 0.5), (0.5, 0.7), (0.7, 1.0))
R_BIN_LABELS = ("[0,0.3]", "(0.3,0.5]", "(0.5,0.7]", "(0.7,1]")


def zero_one_loss(p_hat, y):
    """0 when |p_hat - y| < 0.5, else 1. A prediction of exactly 0.5 always loses."""
    if np.ndim(p_hat):
        diff = np.abs(np.asarray(p_hat, dtype=float) - np.asarray(y, dtype=float))
        return (diff >= 0.5).astype(np.int64)
    return int(abs(p_hat - y) >= 0.5)


def pe_loss(p_hat, y):
    """Absolute prediction error |p_hat - y|."""
    if np.ndim(p_hat):
        return np.abs(np.asarray(p_hat, dtype=float) - np.asarray(y, dtype=float))
    return abs(float(p_hat) - float(y))


_LOSS_FN = {ZERO_ONE: zero_one_loss, PREDICTION_ERROR: pe_loss}


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    seed: int
    folds: Mapping[str, int]

    def students_in(self, fold: int) -> list[str]:
        return sorted(s for s, f in self.folds.items() if f == fold)

    def fold_sizes(self) -> list[int]:
        sizes = [0] * self.k
        for f in self.folds.values():
            sizes[f] += 1
        return sizes


def make_folds(dataset: Dataset, k: int, seed: int) -> FoldAssignment:
    """Seeded shuffle of students, cut into k groups whose sizes differ by at most one."""
    if k < 2:
        raise ParameterError("cross-validation needs k >= 2")
    students = list(dataset.student_index)
    if k > len(students):
        raise ParameterError(f"k={k} exceeds the number of students ({len(students)})")
    order = np.random.default_rng(seed).permutation(len(students))
    folds = {}
    for fold, chunk in enumerate(np.array_split(order, k)):
        for idx in chunk:
            folds[students[idx]] = fold
    return FoldAssignment(k, seed, folds)


@dataclass
class CVResult:
    model: str
    loss: str
    fold_losses: list[float]
    fold_sizes: list[int]
    mean: float
    n_scored: int
    n_fallback: int
    n_params: int = 0
    failed_folds: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "loss": self.loss,
            "mean": self.mean,
            "fold_losses": self.fold_losses,
            "fold_sizes": self.fold_sizes,
            "n_scored": self.n_scored,
            "n_fallback": self.n_fallback,
            "n_params": self.n_params,
            "failed_folds": self.failed_folds,
        }

    def csv_rows(self) -> list[dict]:
        return [
            {"model": self.model, "loss": self.loss, "fold": f, "n": n, "mean_loss": v}
            for f, (v, n) in enumerate(zip(self.fold_losses, self.fold_sizes))
        ]


def cross_validate(
    dataset: Dataset,
    spec: ModelSpec,
    folds: FoldAssignment,
    losses: Iterable[str] = LOSSES,
    *,
    features: FeatureTable | None = None,
    options: FitOptions | None = None,
) -> list[CVResult]:
    """Fit on k-1 folds, score the held-out students, once per fold.

    Features depend only on a student's own history, so they are computed
    once on the full dataset and split by student.
    """
    losses = tuple(losses)
    for name in losses:
        if name not in _LOSS_FN:
            raise ParameterError(f"unknown loss {name!r}")
    if spec.include_student_intercept:
        raise ConfigurationError("held-out students are unseen; disable student intercepts for CV")
    table = features if features is not None else featurize(dataset, spec.feature_config)
    fold_of_student = np.array([folds.folds[s] for s in table.student_ids])
    row_fold = fold_of_student[table.student]

    sums = {name: [] for name in losses}
    sizes, n_fallback, n_params = [], 0, []
    for fold in range(folds.k):
        test = row_fold == fold
        model, _ = fit_model(table.subset(~test), spec, options)
        n_params.append(model.n_params)
        held_out = table.subset(test)
        p, fb = predict_table(model, held_out)
        n_fallback += fb
        sizes.append(len(held_out))
        for name in losses:
            sums[name].append(math.fsum(_LOSS_FN[name](p, held_out.outcome)))

    n_total = sum(sizes)
    results = []
    for name in losses:
        per_fold = [s / n if n else float("nan") for s, n in zip(sums[name], sizes)]
        results.append(CVResult(
            model=spec.display_name, loss=name, fold_losses=per_fold, fold_sizes=sizes,
            mean=math.fsum(sums[name]) / n_total, n_scored=n_total, n_fallback=n_fallback,
            n_params=int(round(np.mean(n_params))),
        ))
    return results


@dataclass(frozen=True)
class RankEntry:
    model: str
    score: float
    rank: int
    n_params: int = 0
    flagged: bool = False


def rank_models(scores: Sequence[tuple], lower_is_better: bool = True) -> list[RankEntry]:
    """Rank ``(model, score[, n_params])`` entries 1..m.

    Ties go to the model with fewer parameters, then to the smaller name.
    NaN scores are ranked last and flagged.
    """
    if not scores:
        raise ParameterError("nothing to rank")
    entries = []
    for item in scores:
        name, value = item[0], float(item[1])
        k = int(item[2]) if len(item) > 2 else 0
        entries.append((name, value, k))
    sign = 1.0 if lower_is_better else -1.0

    def key(e):
        name, value, k = e
        bad = math.isnan(value)
        return (bad, 0.0 if bad else sign * value, k, name)

    ordered = sorted(entries, key=key)
    return [RankEntry(n, v, i, k, math.isnan(v)) for i, (n, v, k) in enumerate(ordered, start=1)]


@dataclass
class RankingSummary:
    measure: str
    models: list[str]
    frequencies: dict[str, dict[int, float]]
    n_replications: int

    @classmethod
    def from_rankings(cls, measure: str, rankings: Sequence[Mapping[str, int]],
                      models: Sequence[str] | None = None) -> "RankingSummary":
        if not rankings:
            raise ParameterError("no rankings to summarize")
        models = list(models) if models is not None else sorted(rankings[0])
        m = len(models)
        counts = {name: [0] * m for name in models}
        for ranking in rankings:
            for name in models:
                counts[name][ranking[name] - 1] += 1
        n = len(rankings)
        freq = {name: {r + 1: c / n for r, c in enumerate(counts[name])} for name in models}
        return cls(measure, models, freq, n)

    def proportion(self, model: str, rank: int) -> float:
        return self.frequencies[model][rank]

    def to_dict(self) -> dict:
        return {
            "measure": self.measure,
            "n_replications": self.n_replications,
            "models": self.models,
            "frequencies": {m: {str(r): p for r, p in self.frequencies[m].items()} for m in self.models},
        }

    def csv_rows(self) -> list[dict]:
        return [
            {"measure": self.measure, "model": m, "rank": r, "proportion": p}
            for m in self.models for r, p in self.frequencies[m].items()
        ]


@dataclass
class RBinCell:
    bin: str
    actual: int
    n: int
    a_correct: int
    b_correct: int
    a_wins: int
    a_losses: int
    both_correct: int
    both_wrong: int
    early_share: float
    # confusion counts keyed "tp"/"fp"/"tn"/"fn" per model
    a_confusion: dict[str, int] = field(default_factory=dict)
    b_confusion: dict[str, int] = field(default_factory=dict)


@dataclass
class RBinReport:
    model_a: str
    model_b: str
    decay_r: float
    cells: list[RBinCell]
    n_fallback: int = 0

    @property
    def n_rows(self) -> int:
        return sum(c.n for c in self.cells)

    def cell(self, bin_label: str, actual: int) -> RBinCell:
        for c in self.cells:
            if c.bin == bin_label and c.actual == actual:
                return c
        raise KeyError((bin_label, actual))

    def to_dict(self) -> dict:
        return {
            "model_a": self.model_a,
            "model_b": self.model_b,
            "decay_r": self.decay_r,
            "n_fallback": self.n_fallback,
            "cells": [c.__dict__ for c in self.cells],
        }

    def csv_rows(self) -> list[dict]:
        rows = []
        for c in self.cells:
            row = {k: v for k, v in c.__dict__.items() if not k.endswith("confusion")}
            for side, conf in (("a", c.a_confusion), ("b", c.b_confusion)):
                for key in ("tp", "fp", "tn", "fn"):
                    row[f"{side}_{key}"] = conf.get(key, 0)
            rows.append(row)
        return rows


def r_bin_index(r: np.ndarray) -> np.ndarray:
    """0 for [0,0.3], 1 for (0.3,0.5], 2 for (0.5,0.7], 3 for (0.7,1]."""
    return np.searchsorted(np.array([0.3, 0.5, 0.7]), np.asarray(r, dtype=float), side="left")


def _confusion(correct: np.ndarray, actual: int) -> dict[str, int]:
    right, wrong = int(correct.sum()), int((~correct).sum())
    if actual == 1:
        return {"tp": right, "fn": wrong, "tn": 0, "fp": 0}
    return {"tn": right, "fp": wrong, "tp": 0, "fn": 0}


def prediction_comparison(model_a: FittedModel, model_b: FittedModel, rows_a: FeatureTable,
                          rows_b: FeatureTable | None = None) -> RBinReport:
    """Tally where model A beats model B at the 0.5 threshold, by R bin and outcome.

    ``rows_a`` supplies the binning R and model A's features; ``rows_b``
    (same attempts, model B's feature settings) defaults to ``rows_a``.
    """
    rows_b = rows_a if rows_b is None else rows_b
    if len(rows_a) != len(rows_b) or not np.array_equal(rows_a.t, rows_b.t):
        raise ConfigurationError("feature tables for the two models are not row-aligned")
    p_a, fb_a = predict_table(model_a, rows_a)
    p_b, fb_b = predict_table(model_b, rows_b)
    y = rows_a.outcome.astype(int)
    ok_a = zero_one_loss(p_a, y) == 0
    ok_b = zero_one_loss(p_b, y) == 0
    bins = r_bin_index(rows_a.R)
    early = rows_a.t <= 2

    cells = []
    for b, label in enumerate(R_BIN_LABELS):
        for actual in (0, 1):
            m = (bins == b) & (y == actual)
            n = int(m.sum())
            ca, cb = ok_a[m], ok_b[m]
            cells.append(RBinCell(
                bin=label, actual=actual, n=n,
                a_correct=int(ca.sum()), b_correct=int(cb.sum()),
                a_wins=int((ca & ~cb).sum()), a_losses=int((~ca & cb).sum()),
                both_correct=int((ca & cb).sum()), both_wrong=int((~ca & ~cb).sum()),
                early_share=float(early[m].mean()) if n else 0.0,
                a_confusion=_confusion(ca, actual), b_confusion=_confusion(cb, actual),
            ))
    return RBinReport(model_a.spec.display_name, model_b.spec.display_name,
                      rows_a.config.decay_r, cells, fb_a + fb_b)
