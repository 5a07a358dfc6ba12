"""Decay sweeps, the simulation-study replication, and report emission."""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import IO, Any, Mapping, Sequence

import numpy as np
from scipy import stats

from . import __version__
from .dataset import Dataset
from .errors import ParameterError
from .estimator import FitOptions, aic, fit_model
from .evaluation import (
    PREDICTION_ERROR,
    ZERO_ONE,
    CVResult,
    RankingSummary,
    RBinReport,
    cross_validate,
    make_folds,
    prediction_comparison,
    rank_models,
)
from .features import FeatureConfig, featurize
from .models import FAMILIES, ModelSpec
from .simulators import GENERATORS, PopulationConfig, run_generator

log = logging.getLogger(__name__)

AIC = "aic"
CV_ZERO_ONE = "cv_zero_one"
CV_PE = "cv_pe"
MEASURES = (AIC, CV_ZERO_ONE, CV_PE)
_MEASURE_ALIASES = {
    "aic": AIC, "AIC": AIC,
    "cv_zero_one": CV_ZERO_ONE, "CV-0-1": CV_ZERO_ONE, "cv-0-1": CV_ZERO_ONE, "cv01": CV_ZERO_ONE,
    "cv_pe": CV_PE, "CV-PE": CV_PE, "cv-pe": CV_PE,
}
DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))
STUDY_DECAYS = (0.2, 0.4, 0.6, 0.8, 1.0)


def measure_name(text: str) -> str:
    try:
        return _MEASURE_ALIASES[text]
    except KeyError:
        raise ParameterError(f"unknown measure {text!r}; expected one of {MEASURES}") from None


def derive_seed(master: int, *key: int) -> int:
    """Stable 32-bit seed for the sub-task ``key`` of run ``master``."""
    return int(np.random.SeedSequence(master, spawn_key=key).generate_state(1)[0])


def provenance(config: Any, seed: int | None, started: float) -> dict:
    return {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "seed": seed,
        "config": config,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }


# --------------------------------------------------------------------------
# decay sweeps


@dataclass(frozen=True)
class SweepGrid:
    family: str
    success_grid: tuple[float, ...] = DEFAULT_GRID
    failure_grid: tuple[float, ...] = (0.1,)
    equal_decays: bool = False
    ghost_count: int = 3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown model family {self.family!r}")
        for grid in (self.success_grid, self.failure_grid):
            if not grid:
                raise ParameterError("decay grids must be non-empty")
            for d in grid:
                if not 0.0 < d <= 1.0:
                    raise ParameterError(f"decay {d} outside (0, 1]")
        object.__setattr__(self, "success_grid", tuple(float(d) for d in self.success_grid))
        object.__setattr__(self, "failure_grid", tuple(float(d) for d in self.failure_grid))

    def cells(self) -> list[tuple[float | None, float | None]]:
        terms = FAMILIES[self.family]
        has_success = "S" in terms or "R" in terms
        has_failure = "F" in terms
        if not has_success and not has_failure:
            return [(None, None)]
        if not has_failure:
            return [(d, None) for d in self.success_grid]
        if self.equal_decays:
            return [(d, d) for d in self.success_grid]
        return [(s, f) for s in self.success_grid for f in self.failure_grid]

    def spec_for(self, success: float | None, failure: float | None) -> ModelSpec:
        terms = FAMILIES[self.family]
        kw: dict[str, Any] = {"ghost_count": self.ghost_count}
        if success is not None:
            kw["decay_s" if "S" in terms else "decay_r"] = success
        if failure is not None:
            kw["decay_f"] = failure
        return ModelSpec.family(self.family, **kw)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SweepGrid":
        return cls(
            family=d["family"],
            success_grid=tuple(d.get("success_grid", DEFAULT_GRID)),
            failure_grid=tuple(d.get("failure_grid", (0.1,))),
            equal_decays=bool(d.get("equal_decays", False)),
            ghost_count=int(d.get("ghost_count", 3)),
        )


@dataclass
class SweepCell:
    model: str
    success_decay: float | None
    failure_decay: float | None
    value: float
    n_params: int
    log_likelihood: float | None
    converged: bool
    error: str | None = None


@dataclass
class SweepReport:
    family: str
    metric: str
    cells: list[SweepCell]
    argmin: SweepCell | None
    provenance: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(c.error or not c.converged for c in self.cells)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "metric": self.metric,
            "argmin": asdict(self.argmin) if self.argmin else None,
            "cells": [asdict(c) for c in self.cells],
            "provenance": self.provenance,
        }

    def csv_rows(self) -> list[dict]:
        return [asdict(c) for c in self.cells]


def _metric_value(metric: str, dataset: Dataset, spec: ModelSpec, table, folds, options):
    if metric == AIC:
        model, _ = fit_model(table, spec, options)
        return aic(model), model.n_params, model.log_likelihood, model.converged
    loss = ZERO_ONE if metric == CV_ZERO_ONE else PREDICTION_ERROR
    (res,) = cross_validate(dataset, spec, folds, (loss,), features=table, options=options)
    return res.mean, res.n_params, None, True


def sweep_decay(dataset: Dataset, grid: SweepGrid, metric: str = AIC, *, k_folds: int = 5,
                seed: int = 0, options: FitOptions | None = None) -> SweepReport:
    """Featurize, fit and score every grid cell; report the table and its argmin."""
    started = time.perf_counter()
    metric = measure_name(metric)
    folds = make_folds(dataset, k_folds, seed) if metric != AIC else None
    cells = []
    for success, failure in grid.cells():
        spec = grid.spec_for(success, failure)
        try:
            table = featurize(dataset, spec.feature_config)
            value, k, ll, ok = _metric_value(metric, dataset, spec, table, folds, options)
            cells.append(SweepCell(spec.display_name, success, failure, value, k, ll, ok))
        except Exception as exc:  # one bad cell must not sink the sweep
            log.exception("sweep cell %s failed", spec.display_name)
            cells.append(SweepCell(spec.display_name, success, failure, float("nan"), 0, None, False, repr(exc)))
    valid = [c for c in cells if np.isfinite(c.value)]
    best = min(valid, key=lambda c: (c.value, c.n_params, c.model)) if valid else None
    cfg = {"grid": asdict(grid), "metric": metric, "k_folds": k_folds}
    return SweepReport(grid.family, metric, cells, best, provenance(cfg, seed, started))


# --------------------------------------------------------------------------
# simulation study


def study_roster(decays: Sequence[float] = STUDY_DECAYS, failure_decay: float = 0.1) -> list[ModelSpec]:
    """AFM, undecayed PFA, and R-PFA at each success decay with a fixed failure decay."""
    roster = [ModelSpec.family("AFM", label="AFM"), ModelSpec.family("PFA", label="PFA")]
    roster += [
        ModelSpec.family("R-PFA", decay_r=d, decay_f=failure_decay, label=f"R-PFA({d:.1f})")
        for d in decays
    ]
    return roster


@dataclass
class StudyConfig:
    generator: str = "bkt2"
    replications: int = 20
    population: PopulationConfig = field(default_factory=lambda: PopulationConfig(n_kcs=30, n_students=1000))
    roster: list[ModelSpec] = field(default_factory=study_roster)
    measures: tuple[str, ...] = MEASURES
    k_folds: int = 5
    seed: int = 0
    p_fs_student: float = 0.08
    p_correct_during_fs: float = 0.2
    workers: int = 1

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ParameterError(f"unknown generator {self.generator!r}")
        if self.replications < 1:
            raise ParameterError("replications must be positive")
        self.measures = tuple(measure_name(m) for m in self.measures)
        labels = [s.display_name for s in self.roster]
        if len(set(labels)) != len(labels):
            raise ParameterError(f"roster labels must be unique: {labels}")

    @classmethod
    def full_scale(cls, generator: str = "bkt2", **kw) -> "StudyConfig":
        return cls(generator=generator, replications=100,
                   population=PopulationConfig(n_kcs=50, n_students=3500), **kw)

    def to_dict(self) -> dict:
        return {
            "generator": self.generator,
            "replications": self.replications,
            "population": asdict(self.population),
            "roster": [s.to_dict() for s in self.roster],
            "measures": list(self.measures),
            "k_folds": self.k_folds,
            "seed": self.seed,
            "p_fs_student": self.p_fs_student,
            "p_correct_during_fs": self.p_correct_during_fs,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StudyConfig":
        kw: dict[str, Any] = {k: d[k] for k in ("generator", "replications", "k_folds", "seed",
                                                 "p_fs_student", "p_correct_during_fs", "workers") if k in d}
        if "population" in d:
            kw["population"] = PopulationConfig.from_dict(d["population"])
        if "measures" in d:
            kw["measures"] = tuple(d["measures"])
        if "roster" in d:
            kw["roster"] = [ModelSpec.from_dict(s) for s in d["roster"]]
        return cls(**kw)


@dataclass
class ReplicationResult:
    index: int
    seed: int
    n_attempts: int = 0
    scores: dict[str, dict[str, float]] = field(default_factory=dict)
    ranks: dict[str, dict[str, int]] = field(default_factory=dict)
    n_params: dict[str, int] = field(default_factory=dict)
    n_fallback: int = 0
    unconverged: list[str] = field(default_factory=list)
    error: str | None = None


def run_replication(config: StudyConfig, index: int) -> ReplicationResult:
    """Generate one dataset, fit the roster, score it under every measure."""
    seed = derive_seed(config.seed, index)
    out = ReplicationResult(index, seed)
    try:
        pop = PopulationConfig(config.population.n_kcs, config.population.n_students,
                               config.population.kc_mean, config.population.attempts_mean, seed)
        fs = ({"p_fs_student": config.p_fs_student, "p_correct_during_fs": config.p_correct_during_fs}
              if config.generator == "bkt_fs" else {})
        dataset = run_generator(config.generator, pop, **fs).dataset
        out.n_attempts = dataset.n_attempts
        cv_measures = [m for m in config.measures if m != AIC]
        folds = make_folds(dataset, config.k_folds, derive_seed(config.seed, index, 1)) if cv_measures else None
        tables: dict[FeatureConfig, Any] = {}
        scores: dict[str, dict[str, float]] = {m: {} for m in config.measures}
        for spec in config.roster:
            name = spec.display_name
            cfg = spec.feature_config
            if cfg not in tables:
                tables[cfg] = featurize(dataset, cfg)
            table = tables[cfg]
            if AIC in config.measures:
                model, _ = fit_model(table, spec)
                scores[AIC][name] = aic(model)
                out.n_params[name] = model.n_params
                if not model.converged:
                    out.unconverged.append(name)
            if cv_measures:
                losses = [ZERO_ONE if m == CV_ZERO_ONE else PREDICTION_ERROR for m in cv_measures]
                for m, res in zip(cv_measures, cross_validate(dataset, spec, folds, losses, features=table)):
                    scores[m][name] = res.mean
                    out.n_fallback = max(out.n_fallback, res.n_fallback)
                out.n_params.setdefault(name, res.n_params)
        out.scores = scores
        out.ranks = {
            m: {e.model: e.rank for e in rank_models([(n, v, out.n_params.get(n, 0)) for n, v in s.items()])}
            for m, s in scores.items()
        }
    except Exception as exc:  # isolate; the study carries on
        log.exception("replication %d failed", index)
        out.error = repr(exc)
    return out


def _run_indexed(args):
    return run_replication(*args)


@dataclass
class StudyReport:
    config: StudyConfig
    replications: list[ReplicationResult]
    summaries: dict[str, RankingSummary]
    provenance: dict = field(default_factory=dict)

    @property
    def models(self) -> list[str]:
        return [s.display_name for s in self.config.roster]

    @property
    def succeeded(self) -> list[ReplicationResult]:
        return [r for r in self.replications if r.error is None]

    @property
    def failed(self) -> bool:
        return any(r.error for r in self.replications)

    def ranks_of(self, measure: str, model: str) -> np.ndarray:
        return np.array([r.ranks[measure][model] for r in self.succeeded])

    def rank_share(self, measure: str, model: str, rank: int) -> float:
        return float(np.mean(self.ranks_of(measure, model) == rank))

    def top_model_share(self, measure: str, models: Sequence[str]) -> float:
        tops = [min(r.ranks[measure], key=r.ranks[measure].get) for r in self.succeeded]
        return float(np.mean([t in models for t in tops]))

    def rank_variance(self, measure: str, model: str) -> float:
        return float(np.var(self.ranks_of(measure, model)))

    def mean_spearman(self, measure_a: str, measure_b: str) -> float:
        rhos = []
        for r in self.succeeded:
            a = [r.ranks[measure_a][m] for m in self.models]
            b = [r.ranks[measure_b][m] for m in self.models]
            rhos.append(stats.spearmanr(a, b).statistic)
        return float(np.mean(rhos))

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "summaries": {m: s.to_dict() for m, s in self.summaries.items()},
            "replications": [asdict(r) for r in self.replications],
            "provenance": self.provenance,
        }

    def csv_rows(self) -> list[dict]:
        return [row for s in self.summaries.values() for row in s.csv_rows()]


def replicate_study(config: StudyConfig) -> StudyReport:
    started = time.perf_counter()
    jobs = [(config, r) for r in range(config.replications)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_indexed, jobs))
    else:
        results = [_run_indexed(j) for j in jobs]
    results.sort(key=lambda r: r.index)
    ok = [r for r in results if r.error is None]
    models = [s.display_name for s in config.roster]
    summaries = {
        m: RankingSummary.from_rankings(m, [r.ranks[m] for r in ok], models)
        for m in config.measures
    } if ok else {}
    return StudyReport(config, results, summaries, provenance(config.to_dict(), config.seed, started))


# --------------------------------------------------------------------------
# prediction comparison


def compare_predictions(dataset: Dataset, spec_a: ModelSpec, spec_b: ModelSpec,
                        options: FitOptions | None = None) -> RBinReport:
    """Fit both models on ``dataset`` and tabulate their in-sample disagreements."""
    rows_a = featurize(dataset, spec_a.feature_config)
    rows_b = rows_a if spec_b.feature_config == spec_a.feature_config else featurize(dataset, spec_b.feature_config)
    model_a, _ = fit_model(rows_a, spec_a, options)
    model_b, _ = fit_model(rows_b, spec_b, options)
    return prediction_comparison(model_a, model_b, rows_a, rows_b)


# --------------------------------------------------------------------------
# report emission


@dataclass
class CVReport:
    results: list[CVResult]
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"results": [r.to_dict() for r in self.results], "provenance": self.provenance}

    def csv_rows(self) -> list[dict]:
        return [row for r in self.results for row in r.csv_rows()]


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def render_report(report, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, default=_json_default) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        prov = getattr(report, "provenance", None) or {}
        for key, value in prov.items():
            buf.write(f"# {key}: {json.dumps(value, default=_json_default, separators=(',', ':'))}\n")
        rows = report.csv_rows()
        header = list(rows[0]) if rows else []
        writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()
    raise ParameterError(f"unknown report format {fmt!r}")


def emit_report(report, fmt: str, destination: str | IO[str]) -> None:
    """Write ``report`` as nested JSON or flat CSV (provenance as ``#`` comments)."""
    text = render_report(report, fmt)
    if isinstance(destination, str):
        with open(destination, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        destination.write(text)
