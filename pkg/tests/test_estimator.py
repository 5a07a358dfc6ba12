import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from rpfa.dataset import from_sequences
from rpfa.errors import ConvergenceError, ParameterError, ShapeError
from rpfa.estimator import (
    FitOptions,
    aic,
    bic,
    coefficient_vector,
    fit_logistic,
    fit_model,
    log_likelihood,
    penalized_loglik,
    score,
)
from rpfa.features import FeatureConfig, FeatureState, featurize, update_state
from rpfa.models import DesignMatrix, FittedModel, ModelSpec, build_design, logistic


def _design(X, y, labels=None):
    X = sp.csr_matrix(np.asarray(X, dtype=float))
    labels = labels or tuple(f"x{j}" for j in range(X.shape[1]))
    return DesignMatrix(X, np.asarray(y, dtype=float), tuple(labels), ModelSpec("custom", ()), (), ())


def _model(coefs, ll=-100.0, k=3, n=10):
    return FittedModel(ModelSpec("custom", ()), coefs, ll, k, True, 1, n)


def _random_problem(seed, n=200, p=4):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    y = (rng.random(n) < logistic(X @ rng.normal(scale=0.7, size=p))).astype(float)
    return X, y


def _simulate_rpfa(truth, n_students, n_attempts, cfg, seed):
    """Sequences drawn from an R-PFA model with known coefficients."""
    rng = np.random.default_rng(seed)
    seqs = {}
    for i in range(n_students):
        for kc in ("a", "b"):
            state, xs = FeatureState.initial(cfg), []
            for _ in range(n_attempts):
                _, row = update_state(state, 0, cfg)
                z = truth[f"beta[{kc}]"] + truth[f"rho[{kc}]"] * row.F + truth[f"delta[{kc}]"] * row.R
                x = int(rng.random() < logistic(z))
                state, _ = update_state(state, x, cfg)
                xs.append(x)
            seqs[f"s{i:04d}", kc] = xs
    return from_sequences(seqs)


class TestFitLogistic:
    def test_intercept_only_is_logit_of_proportion(self):
        model, diag = fit_logistic(_design([[1], [1], [1], [1]], [1, 1, 1, 0]))
        assert model.coefficients["x0"] == pytest.approx(math.log(3), abs=1e-6)
        assert diag.converged

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(0, 1), min_size=3, max_size=50).filter(lambda y: 0 < sum(y) < len(y)))
    def test_intercept_only_property(self, y):
        model, _ = fit_logistic(_design(np.ones((len(y), 1)), y))
        p = sum(y) / len(y)
        assert model.coefficients["x0"] == pytest.approx(math.log(p / (1 - p)), abs=1e-6)

    def test_separable_data_flagged_and_finite(self):
        model, diag = fit_logistic(_design([[1, 0], [1, 1], [1, 2], [1, 3]], [0, 0, 1, 1]))
        assert diag.separable_warning
        assert all(math.isfinite(v) for v in model.coefficients.values())

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_small_at_optimum(self, seed):
        X, y = _random_problem(seed)
        model, diag = fit_logistic(_design(X, y))
        assert diag.converged
        beta = np.array([model.coefficients[f"x{j}"] for j in range(X.shape[1])])
        assert np.max(np.abs(score(sp.csr_matrix(X), y, beta))) < 1e-6
        assert diag.gradient_max_abs < 1e-6

    @pytest.mark.parametrize("lam", [0.0, 0.5])
    def test_gradient_matches_finite_differences(self, lam):
        X, y = _random_problem(11, n=60)
        beta = np.random.default_rng(1).normal(size=X.shape[1])
        g = score(X, y, beta, lam)
        h = 1e-5
        for j in range(len(beta)):
            e = np.zeros_like(beta)
            e[j] = h
            fd = (penalized_loglik(X, y, beta + e, lam) - penalized_loglik(X, y, beta - e, lam)) / (2 * h)
            assert fd == pytest.approx(g[j], rel=1e-5, abs=1e-7)

    def test_trace_non_decreasing(self):
        X, y = _random_problem(3)
        _, diag = fit_logistic(_design(X, y))
        assert all(b >= a for a, b in zip(diag.loglik_trace, diag.loglik_trace[1:]))

    def test_duplicated_rows_same_coefficients(self):
        X, y = _random_problem(4)
        a, _ = fit_logistic(_design(X, y))
        b, _ = fit_logistic(_design(np.vstack([X, X]), np.concatenate([y, y])))
        for key in a.coefficients:
            assert b.coefficients[key] == pytest.approx(a.coefficients[key], abs=1e-8)

    def test_ridge_shrinks(self):
        X, y = _random_problem(5)
        norms = []
        for lam in (0.0, 0.1, 1.0, 10.0):
            model, diag = fit_logistic(_design(X, y), FitOptions(ridge_lambda=lam))
            assert diag.converged
            norms.append(np.linalg.norm(list(model.coefficients.values())))
        assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))

    def test_sparse_column_dropped(self):
        design = _design([[1, 0], [1, 1], [1, 0], [1, 0]], [1, 0, 1, 0], ("a", "b"))
        model, diag = fit_logistic(design)
        assert diag.dropped_columns == ("b",)
        assert set(model.coefficients) == {"a"} and model.n_params == 1
        assert coefficient_vector(model, design)[1] == 0.0

    def test_non_convergence_reported_or_raised(self):
        X, y = _random_problem(6)
        model, diag = fit_logistic(_design(X, y), FitOptions(max_iterations=1))
        assert not diag.converged and not model.converged
        with pytest.raises(ConvergenceError):
            fit_logistic(_design(X, y), FitOptions(max_iterations=1), strict=True)

    def test_deterministic(self):
        X, y = _random_problem(7)
        a, _ = fit_logistic(_design(X, y))
        b, _ = fit_logistic(_design(X, y))
        assert a.coefficients == b.coefficients

    def test_options_validated(self):
        with pytest.raises(ParameterError):
            FitOptions(tolerance=0)
        with pytest.raises(ParameterError):
            FitOptions(max_iterations=0)

    def test_rpfa_recovery_within_three_se(self):
        truth = {"beta[a]": -0.8, "beta[b]": 0.2, "rho[a]": -0.4, "rho[b]": -0.2,
                 "delta[a]": 2.5, "delta[b]": 1.5}
        cfg = FeatureConfig(decay_f=0.5, decay_r=0.7)
        ds = _simulate_rpfa(truth, n_students=1000, n_attempts=10, cfg=cfg, seed=2024)
        assert ds.n_attempts == 20_000
        spec = ModelSpec.family("R-PFA", decay_f=0.5, decay_r=0.7)
        design = build_design(featurize(ds, cfg), spec)
        model, diag = fit_logistic(design)
        assert diag.converged
        beta = coefficient_vector(model, design)
        p = logistic(design.X @ beta)
        info = (design.X.T @ sp.diags(p * (1 - p)) @ design.X).toarray()
        se = np.sqrt(np.diag(np.linalg.inv(info)))
        true = np.array([truth[lab] for lab in design.column_labels])
        assert np.all(np.abs(beta - true) < 3 * se), dict(zip(design.column_labels, (beta - true) / se))


class TestLogLikelihood:
    def test_half_everywhere(self):
        design = _design(np.ones((7, 1)), [1, 0, 1, 1, 0, 0, 1])
        assert log_likelihood(_model({"x0": 0.0}), design) == pytest.approx(-7 * math.log(2))

    def test_perfect_fit_bound(self):
        design = _design([[1], [-1], [1]], [1, 0, 1])
        ll = log_likelihood(_model({"x0": 200.0}), design)
        assert -3 * 1.1e-11 < ll <= 0

    def test_matches_row_sum(self):
        X, y = _random_problem(8, n=50)
        beta = np.random.default_rng(2).normal(size=X.shape[1])
        m = _model({f"x{j}": b for j, b in enumerate(beta)})
        p = np.clip(1 / (1 + np.exp(-(X @ beta))), 1e-12, 1 - 1e-12)
        expected = math.fsum(yi * math.log(pi) + (1 - yi) * math.log(1 - pi) for yi, pi in zip(y, p))
        assert log_likelihood(m, _design(X, y)) == pytest.approx(expected, abs=1e-10)

    def test_unknown_column(self):
        with pytest.raises(ShapeError):
            log_likelihood(_model({"x0": 0.0}), _design([[1, 2]], [1]))

    def test_fitted_value_matches(self):
        X, y = _random_problem(9)
        design = _design(X, y)
        model, _ = fit_logistic(design)
        assert log_likelihood(model, design) == pytest.approx(model.log_likelihood, abs=1e-9)
        assert model.log_likelihood <= 0


class TestInformationCriteria:
    def test_aic(self):
        assert aic(_model({}, ll=-100.0, k=3)) == 206.0

    def test_bic_at_e_squared(self):
        assert bic(_model({}, ll=-100.0, k=3), n=math.exp(2)) == pytest.approx(206.0)

    def test_bic_defaults_to_n_obs(self):
        assert bic(_model({}, ll=-10.0, k=2, n=100)) == pytest.approx(2 * math.log(100) + 20)

    def test_bic_bad_n(self):
        with pytest.raises(ParameterError):
            bic(_model({}), n=0)

    def test_nested_models(self):
        rng = np.random.default_rng(10)
        ds = from_sequences({(f"s{i}", f"k{i % 3}"): rng.integers(0, 2, 12).tolist() for i in range(60)})
        small, _ = fit_model(featurize(ds, FeatureConfig()), ModelSpec.family("AFM"))
        big_spec = ModelSpec.family("R-AFM", decay_r=0.6)
        big, _ = fit_model(featurize(ds, big_spec.feature_config), big_spec)
        assert big.log_likelihood >= small.log_likelihood - 1e-9
        assert big.n_params > small.n_params
