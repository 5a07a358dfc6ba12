"""Logistic performance-model families and their design matrices.

Every family is logit(p) = [theta_i] + beta_j + sum over slope terms of
coef_j * term, with one coefficient per KC for each slope term:

    AFM     gamma_j T
    PFA     alpha_j S + rho_j F
    S-only  alpha_j S
    R-only  delta_j R
    R-AFM   gamma_j T + delta_j R
    R-PFA   rho_j F + delta_j R
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, UnknownEntityError
from .features import FeatureConfig, FeatureRow, FeatureTable

TERM_ORDER = ("T", "S", "F", "R")
TERM_SYMBOL = {"T": "gamma", "S": "alpha", "F": "rho", "R": "delta"}
SYMBOL_TERM = {v: k for k, v in TERM_SYMBOL.items()}

FAMILIES: dict[str, tuple[str, ...]] = {
    "AFM": ("T",),
    "PFA": ("S", "F"),
    "S-only": ("S",),
    "R-only": ("R",),
    "R-AFM": ("T", "R"),
    "R-PFA": ("F", "R"),
}

# Predictions are kept strictly inside (0, 1) by this margin.
PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    name: str
    slope_terms: tuple[str, ...]
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)
    include_student_intercept: bool = False
    include_kc_intercept: bool = True
    global_slopes: bool = False
    label: str | None = None

    def __post_init__(self):
        terms = tuple(t for t in TERM_ORDER if t in self.slope_terms)
        if len(terms) != len(set(self.slope_terms)) or len(terms) != len(self.slope_terms):
            raise ConfigurationError(f"slope terms must be distinct members of {TERM_ORDER}: {self.slope_terms}")
        object.__setattr__(self, "slope_terms", terms)
        if self.name in FAMILIES and set(FAMILIES[self.name]) != set(terms):
            raise ConfigurationError(f"{self.name} requires slope terms {FAMILIES[self.name]}, got {terms}")
        if self.name not in FAMILIES and self.name != "custom":
            raise ConfigurationError(f"unknown model family {self.name!r}; use 'custom' for ad-hoc term sets")

    @classmethod
    def family(cls, name: str, *, decay_s: float = 1.0, decay_f: float = 1.0, decay_r: float = 1.0,
               ghost_count: int = 3, failure_sign: str = "nonneg_count", **kwargs) -> "ModelSpec":
        if name not in FAMILIES:
            raise ConfigurationError(f"unknown model family {name!r}")
        cfg = FeatureConfig(decay_s, decay_f, decay_r, ghost_count, failure_sign)
        return cls(name, FAMILIES[name], cfg, **kwargs)

    @property
    def display_name(self) -> str:
        if self.label:
            return self.label
        cfg = self.feature_config
        parts = []
        for term, d in (("S", cfg.decay_s), ("R", cfg.decay_r), ("F", cfg.decay_f)):
            if term in self.slope_terms:
                parts.append(f"{term}({d:g})")
        return f"{self.name} " + ",".join(parts) if parts else self.name

    def relevant_config(self) -> dict:
        """Feature settings that actually influence this model's columns."""
        cfg = self.feature_config
        rel: dict[str, Any] = {}
        if "S" in self.slope_terms:
            rel["decay_s"] = cfg.decay_s
        if "F" in self.slope_terms:
            rel["decay_f"] = cfg.decay_f
            rel["failure_sign"] = cfg.failure_sign
        if "R" in self.slope_terms:
            rel["decay_r"] = cfg.decay_r
            rel["ghost_count"] = cfg.ghost_count
        return rel

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "label": self.label,
            "display_name": self.display_name,
            "slope_terms": list(self.slope_terms),
            "feature_config": self.feature_config.to_dict(),
            "include_student_intercept": self.include_student_intercept,
            "include_kc_intercept": self.include_kc_intercept,
            "global_slopes": self.global_slopes,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelSpec":
        return cls(
            name=d["name"],
            slope_terms=tuple(d["slope_terms"]),
            feature_config=FeatureConfig(**d["feature_config"]),
            include_student_intercept=d.get("include_student_intercept", False),
            include_kc_intercept=d.get("include_kc_intercept", True),
            global_slopes=d.get("global_slopes", False),
            label=d.get("label"),
        )


def parse_model(text: str) -> ModelSpec:
    """Parse compact specs such as ``"R-PFA:r=0.7,f=0.1"`` or ``"PFA:s=0.6,f=0.6"``.

    Recognized keys: s, f, r (decays), ghost, sign, student (0/1), label.
    """
    name, _, rest = text.partition(":")
    kwargs: dict[str, Any] = {}
    keymap = {"s": "decay_s", "f": "decay_f", "r": "decay_r", "ghost": "ghost_count"}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, _, value = item.partition("=")
        key = key.strip().lower()
        if key in ("s", "f", "r"):
            kwargs[keymap[key]] = float(value)
        elif key == "ghost":
            kwargs["ghost_count"] = int(value)
        elif key == "sign":
            kwargs["failure_sign"] = value.strip()
        elif key == "student":
            kwargs["include_student_intercept"] = value.strip() in ("1", "true", "yes")
        elif key == "label":
            kwargs["label"] = value.strip()
        else:
            raise ConfigurationError(f"unrecognized model option {key!r} in {text!r}")
    return ModelSpec.family(name.strip(), **kwargs)


def _label(symbol: str, ident: str | None) -> str:
    return symbol if ident is None else f"{symbol}[{ident}]"


def parse_label(label: str) -> tuple[str, str | None]:
    """Inverse of the column-label format ``symbol[id]``."""
    if label.endswith("]") and "[" in label:
        symbol, _, rest = label.partition("[")
        return symbol, rest[:-1]
    return label, None


@dataclass(frozen=True)
class DesignMatrix:
    X: sp.csr_matrix
    y: np.ndarray
    column_labels: tuple[str, ...]
    spec: ModelSpec
    student_ids: tuple[str, ...]
    kc_ids: tuple[str, ...]

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_cols(self) -> int:
        return self.X.shape[1]


def _check_config(table: FeatureTable, spec: ModelSpec) -> None:
    have = {k: v for k, v in table.config.to_dict().items() if k in spec.relevant_config()}
    if have != spec.relevant_config():
        raise ConfigurationError(
            f"features computed with {have} but model {spec.display_name} expects {spec.relevant_config()}"
        )


def build_design(table: FeatureTable, spec: ModelSpec) -> DesignMatrix:
    """Sparse design with blocks [theta_i][beta_j][gamma_j][alpha_j][rho_j][delta_j].

    Only students and KCs present in ``table`` get columns, enumerated in
    sorted-id order.
    """
    _check_config(table, spec)
    n = len(table)
    present_students = np.unique(table.student)
    present_kcs = np.unique(table.kc)
    student_ids = tuple(table.student_ids[i] for i in present_students)
    kc_ids = tuple(table.kc_ids[i] for i in present_kcs)
    s_pos = np.searchsorted(present_students, table.student)
    k_pos = np.searchsorted(present_kcs, table.kc)
    n_k = len(kc_ids)

    rows_idx, cols_idx, vals, labels = [], [], [], []
    offset = 0
    rows = np.arange(n)
    if spec.include_student_intercept:
        rows_idx.append(rows); cols_idx.append(offset + s_pos); vals.append(np.ones(n))
        labels += [_label("theta", s) for s in student_ids]
        offset += len(student_ids)
    if spec.include_kc_intercept:
        rows_idx.append(rows); cols_idx.append(offset + k_pos); vals.append(np.ones(n))
        labels += [_label("beta", k) for k in kc_ids]
        offset += n_k
    for term in spec.slope_terms:
        symbol = TERM_SYMBOL[term]
        col = table.column(term).astype(np.float64)
        if spec.global_slopes:
            rows_idx.append(rows); cols_idx.append(np.full(n, offset)); vals.append(col)
            labels.append(_label(symbol, None))
            offset += 1
        else:
            rows_idx.append(rows); cols_idx.append(offset + k_pos); vals.append(col)
            labels += [_label(symbol, k) for k in kc_ids]
            offset += n_k

    if rows_idx:
        X = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows_idx), np.concatenate(cols_idx))),
            shape=(n, offset),
        )
        X.eliminate_zeros()
    else:
        X = sp.csr_matrix((n, 0))
    return DesignMatrix(X, table.outcome.astype(np.float64), tuple(labels), spec, student_ids, kc_ids)


def logistic(z):
    """Overflow-safe inverse logit, clamped to [PROB_CLAMP, 1 - PROB_CLAMP]."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, PROB_CLAMP, 1.0 - PROB_CLAMP)


@dataclass
class FittedModel:
    spec: ModelSpec
    coefficients: dict[str, float]
    log_likelihood: float
    n_params: int
    converged: bool
    iterations: int
    n_obs: int = 0
    diagnostics: dict[str, Any] = field(default_factory=dict)
    fallback_count: int = 0

    def coef(self, symbol: str, ident: str | None) -> float | None:
        return self.coefficients.get(_label(symbol, ident))

    def knows_kc(self, kc_id: str) -> bool:
        return _label("beta", kc_id) in self.coefficients or (
            not self.spec.include_kc_intercept
            and any(_label(TERM_SYMBOL[t], kc_id) in self.coefficients for t in self.spec.slope_terms)
        )

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "coefficients": dict(self.coefficients),
            "log_likelihood": self.log_likelihood,
            "n_params": self.n_params,
            "n_obs": self.n_obs,
            "converged": self.converged,
            "iterations": self.iterations,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FittedModel":
        return cls(
            spec=ModelSpec.from_dict(d["spec"]),
            coefficients={k: float(v) for k, v in d["coefficients"].items()},
            log_likelihood=float(d["log_likelihood"]),
            n_params=int(d["n_params"]),
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
            n_obs=int(d.get("n_obs", 0)),
            diagnostics=dict(d.get("diagnostics", {})),
        )


def linear_predictor(model: FittedModel, row: FeatureRow, *, fallback: bool = True) -> float:
    spec = model.spec
    z = 0.0
    if spec.include_student_intercept:
        theta = model.coef("theta", row.student_id)
        if theta is None and not fallback:
            raise UnknownEntityError(f"unknown student {row.student_id!r}")
        z += theta or 0.0
    if not model.knows_kc(row.kc_id):
        if not fallback:
            raise UnknownEntityError(f"unknown KC {row.kc_id!r}")
        model.fallback_count += 1
        return z
    if spec.include_kc_intercept:
        z += model.coef("beta", row.kc_id) or 0.0
    values = {"T": row.T, "S": row.S, "F": row.F, "R": row.R}
    for term in spec.slope_terms:
        ident = None if spec.global_slopes else row.kc_id
        z += (model.coef(TERM_SYMBOL[term], ident) or 0.0) * values[term]
    return z


def predict(model: FittedModel, row: FeatureRow, *, fallback: bool = True) -> float:
    """Probability of a correct response for one attempt.

    An unseen KC contributes nothing to the linear predictor and bumps
    ``model.fallback_count``; with ``fallback=False`` it raises instead.
    """
    return float(logistic(linear_predictor(model, row, fallback=fallback)))


def predict_table(model: FittedModel, table: FeatureTable, *, fallback: bool = True) -> tuple[np.ndarray, int]:
    """Vectorized :func:`predict` over a feature table.

    Returns the probabilities and the number of rows that used the
    unknown-KC fallback.
    """
    spec = model.spec
    n_k = len(table.kc_ids)
    known = np.array([model.knows_kc(k) for k in table.kc_ids], dtype=bool)
    row_known = known[table.kc] if n_k else np.zeros(len(table), dtype=bool)
    n_fallback = int((~row_known).sum())
    if n_fallback and not fallback:
        missing = sorted({table.kc_ids[k] for k in table.kc[~row_known]})
        raise UnknownEntityError(f"unknown KCs {missing}")

    z = np.zeros(len(table))
    if spec.include_student_intercept:
        theta = np.array([model.coef("theta", s) for s in table.student_ids], dtype=float)
        unseen = np.isnan(theta)[table.student]
        if unseen.any() and not fallback:
            raise UnknownEntityError(f"unknown student {table.student_ids[table.student[unseen][0]]!r}")
        z += np.nan_to_num(theta)[table.student]
    if spec.include_kc_intercept:
        beta = np.array([model.coef("beta", k) or 0.0 for k in table.kc_ids])
        z += np.where(row_known, beta[table.kc], 0.0)
    for term in spec.slope_terms:
        symbol = TERM_SYMBOL[term]
        if spec.global_slopes:
            slope = np.full(n_k, model.coef(symbol, None) or 0.0)
        else:
            slope = np.array([model.coef(symbol, k) or 0.0 for k in table.kc_ids])
        z += np.where(row_known, slope[table.kc] * table.column(term), 0.0)
    model.fallback_count += n_fallback
    return logistic(z), n_fallback

