"""Maximum-likelihood logistic regression by IRLS (Newton's method).

Maximizes  sum_i [y_i z_i - log(1 + e^{z_i})] - (lambda/2) ||beta||^2
with z = X beta. Each Newton step is halved (up to MAX_HALVINGS times)
until the penalized log-likelihood does not decrease.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.special import expit

from .errors import ConvergenceError, ParameterError, ShapeError
from .features import FeatureTable
from .models import PROB_CLAMP, DesignMatrix, FittedModel, ModelSpec, build_design

log = logging.getLogger(__name__)

MAX_HALVINGS = 30
GRADIENT_TOL = 1e-6
MIN_COLUMN_SUPPORT = 2
# R's glm flags fitted probabilities within 10 * machine epsilon of 0 or 1.
SEPARATION_EPS = 10 * np.finfo(float).eps


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 100
    tolerance: float = 1e-8
    ridge_lambda: float = 0.0
    singular_jitter: float = 1e-8

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ParameterError("tolerance must be positive")
        if self.ridge_lambda < 0 or self.singular_jitter < 0:
            raise ParameterError("ridge_lambda and singular_jitter must be non-negative")


@dataclass
class FitDiagnostics:
    gradient_max_abs: float
    iterations: int
    converged: bool
    step_halvings: int
    separable_warning: bool
    jitter_applied: bool = False
    dropped_columns: tuple[str, ...] = ()
    loglik_trace: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dropped_columns"] = list(self.dropped_columns)
        return d


def penalized_loglik(X, y: np.ndarray, beta: np.ndarray, ridge_lambda: float = 0.0) -> float:
    z = X @ beta
    return float(np.sum(y * z - np.logaddexp(0.0, z)) - 0.5 * ridge_lambda * beta @ beta)


def score(X, y: np.ndarray, beta: np.ndarray, ridge_lambda: float = 0.0) -> np.ndarray:
    """Gradient of :func:`penalized_loglik` with respect to ``beta``."""
    p = expit(X @ beta)
    return np.asarray(X.T @ (y - p)).ravel() - ridge_lambda * beta


def _newton_direction(X, p, g, ridge_lambda, jitter):
    w = p * (1.0 - p)
    H = X.T @ sp.diags(w) @ X if sp.issparse(X) else X.T @ (X * w[:, None])
    H = H.toarray() if sp.issparse(H) else np.asarray(H)
    if ridge_lambda:
        H[np.diag_indices_from(H)] += ridge_lambda
    try:
        return la.cho_solve(la.cho_factor(H), g), False
    except (la.LinAlgError, ValueError):
        pass
    bump = jitter if jitter > 0 else 1e-8
    for _ in range(12):
        Hj = H.copy()
        Hj[np.diag_indices_from(Hj)] += bump
        try:
            return la.cho_solve(la.cho_factor(Hj), g), True
        except (la.LinAlgError, ValueError):
            bump *= 10.0
    return np.linalg.lstsq(H, g, rcond=None)[0], True


def _clamped_loglik(y: np.ndarray, z: np.ndarray) -> float:
    p = np.clip(expit(z), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def fit_logistic(design: DesignMatrix, options: FitOptions | None = None, *,
                 strict: bool = False) -> tuple[FittedModel, FitDiagnostics]:
    """Fit ``design`` by IRLS.

    Columns with fewer than two nonzero entries are dropped (and omitted
    from the coefficient map and the parameter count). Non-convergence is
    reported through the diagnostics unless ``strict`` is set.
    """
    options = options or FitOptions()
    if design.n_rows < 1:
        raise ShapeError("design has no rows")
    X = design.X.tocsc()
    y = design.y
    support = np.diff(X.indptr)
    keep = np.flatnonzero(support >= MIN_COLUMN_SUPPORT)
    dropped = tuple(design.column_labels[j] for j in np.flatnonzero(support < MIN_COLUMN_SUPPORT))
    if dropped:
        log.warning("dropping %d sparsely observed column(s): %s", len(dropped), ", ".join(dropped[:5]))
    X = X[:, keep].tocsr()
    labels = [design.column_labels[j] for j in keep]
    lam = options.ridge_lambda

    beta = np.zeros(X.shape[1])
    pll = penalized_loglik(X, y, beta, lam)
    trace = [pll]
    converged = False
    total_halvings = 0
    jitter_used = False
    iterations = 0
    g = score(X, y, beta, lam)
    for iterations in range(1, options.max_iterations + 1):
        p = expit(X @ beta)
        direction, jittered = _newton_direction(X, p, g, lam, options.singular_jitter)
        jitter_used |= jittered
        step = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            candidate = beta + step * direction
            cand_pll = penalized_loglik(X, y, candidate, lam)
            if np.isfinite(cand_pll) and cand_pll >= pll:
                accepted = True
                break
            step *= 0.5
            total_halvings += 1
        if not accepted:
            converged = bool(np.max(np.abs(g), initial=0.0) < GRADIENT_TOL)
            break
        change = abs(cand_pll - pll) / max(abs(pll), 1e-300)
        beta, pll = candidate, cand_pll
        trace.append(pll)
        g = score(X, y, beta, lam)
        if change < options.tolerance and np.max(np.abs(g), initial=0.0) < GRADIENT_TOL:
            converged = True
            break

    z = X @ beta
    p_raw = expit(z)
    separable = bool(np.any((p_raw < SEPARATION_EPS) | (p_raw > 1.0 - SEPARATION_EPS)))
    grad_max = float(np.max(np.abs(g), initial=0.0))
    diag = FitDiagnostics(
        gradient_max_abs=grad_max,
        iterations=iterations,
        converged=converged,
        step_halvings=total_halvings,
        separable_warning=separable,
        jitter_applied=jitter_used,
        dropped_columns=dropped,
        loglik_trace=trace,
    )
    if separable:
        log.warning("fitted probabilities numerically 0 or 1 for %s", design.spec.display_name)
    if strict and not converged:
        raise ConvergenceError(
            f"{design.spec.display_name}: no convergence after {iterations} iterations "
            f"(max |gradient| = {grad_max:.3g})"
        )
    model = FittedModel(
        spec=design.spec,
        coefficients={lab: float(b) for lab, b in zip(labels, beta)},
        log_likelihood=_clamped_loglik(y, z),
        n_params=len(labels),
        converged=converged,
        iterations=iterations,
        n_obs=design.n_rows,
        diagnostics=diag.to_dict(),
    )
    return model, diag


def fit_model(table: FeatureTable, spec: ModelSpec, options: FitOptions | None = None, *,
              strict: bool = False) -> tuple[FittedModel, FitDiagnostics]:
    return fit_logistic(build_design(table, spec), options, strict=strict)


def coefficient_vector(model: FittedModel, design: DesignMatrix) -> np.ndarray:
    """Model coefficients aligned to ``design``'s columns.

    Columns the fit dropped count as zero; any other unknown column is a
    shape error.
    """
    dropped = set(model.diagnostics.get("dropped_columns", ()))
    out = np.zeros(design.n_cols)
    for j, lab in enumerate(design.column_labels):
        if lab in model.coefficients:
            out[j] = model.coefficients[lab]
        elif lab not in dropped:
            raise ShapeError(f"design column {lab!r} has no coefficient in the model")
    return out


def log_likelihood(model: FittedModel, design: DesignMatrix) -> float:
    """sum_i y log p + (1 - y) log(1 - p), with p clamped to [1e-12, 1 - 1e-12]."""
    if design.y.shape[0] != design.n_rows:
        raise ShapeError("outcome vector and design rows disagree")
    beta = coefficient_vector(model, design)
    return _clamped_loglik(design.y, design.X @ beta)


def aic(model: FittedModel) -> float:
    return 2.0 * model.n_params - 2.0 * model.log_likelihood


def bic(model: FittedModel, n: float | None = None) -> float:
    n = model.n_obs if n is None else n
    if n < 1:
        raise ParameterError(f"BIC needs n >= 1, got {n}")
    return model.n_params * math.log(n) - 2.0 * model.log_likelihood
