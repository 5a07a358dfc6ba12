"""Command-line entry point: ``rpfa <subcommand> [options]``.

Every subcommand accepts ``--seed``, ``--config`` (a JSON file whose keys
mirror the long option names, with dashes as underscores) and ``--out``.
Options given on the command line win over the config file.

Exit status: 0 on success, 1 if any sweep cell, replication or fold failed
(unless ``--allow-partial``), 2 on invalid input or configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from typing import Sequence

from .dataset import ColumnSchema, export_csv, ingest_csv, summarize
from .errors import ConfigurationError, RPFAError
from .estimator import FitOptions, aic, bic, fit_model
from .evaluation import LOSSES, cross_validate, make_folds
from .features import FeatureConfig, export_features, featurize
from .harness import (
    DEFAULT_GRID,
    CVReport,
    StudyConfig,
    SweepGrid,
    compare_predictions,
    emit_report,
    provenance,
    replicate_study,
    sweep_decay,
)
from .models import ModelSpec, parse_model
from .simulators import GENERATORS, PopulationConfig, params_to_dict, run_generator

log = logging.getLogger("rpfa")

EXIT_OK, EXIT_PARTIAL, EXIT_INVALID = 0, 1, 2


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--config", default=None, help="JSON file with option defaults")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.add_argument("--format", choices=("json", "csv"), default=None, help="report format")
    p.add_argument("--allow-partial", action="store_true", default=None,
                   help="exit 0 even if some cells or replications failed")
    p.add_argument("--strict", action="store_true", default=None,
                   help="treat non-convergence as a failure")
    p.add_argument("-v", "--verbose", action="store_true", default=False)


def _population(p: argparse.ArgumentParser) -> None:
    p.add_argument("--generator", choices=GENERATORS, default=None)
    p.add_argument("--n-students", type=int, default=None)
    p.add_argument("--n-kcs", type=int, default=None)
    p.add_argument("--kc-mean", type=float, default=None)
    p.add_argument("--attempts-mean", type=float, default=None)
    p.add_argument("--p-fs-student", type=float, default=None)
    p.add_argument("--p-correct-during-fs", type=float, default=None)


def _data(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", required=False, default=None,
                   help="attempt CSV (student,kc,outcome[,opportunity])" + ("" if required else
                        "; simulated from the population options when omitted"))
    p.add_argument("--order-key", default=None, help="column ordering attempts when opportunity is absent")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rpfa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic practice log")
    _common(p)
    _population(p)
    p.add_argument("--emit-latent", default=None, metavar="PATH",
                   help="also write the latent state trace (student,kc,t,Z)")
    p.add_argument("--params-out", default=None, metavar="PATH", help="write the sampled KC parameters as JSON")

    p = sub.add_parser("featurize", help="compute T, S, F, R for every attempt")
    _common(p)
    _data(p)
    p.add_argument("--model", default=None, help='take decays from a model spec, e.g. "R-PFA:r=0.7,f=0.1"')
    p.add_argument("--decay-s", type=float, default=None)
    p.add_argument("--decay-f", type=float, default=None)
    p.add_argument("--decay-r", type=float, default=None)
    p.add_argument("--ghost-count", type=int, default=None)
    p.add_argument("--failure-sign", default=None)

    p = sub.add_parser("fit", help="fit one model and write it as JSON")
    _common(p)
    _data(p)
    p.add_argument("--model", default=None, help='model spec, e.g. "PFA" or "R-PFA:r=0.7,f=0.1"')
    p.add_argument("--ridge", type=float, default=None, help="ridge penalty lambda")
    p.add_argument("--max-iterations", type=int, default=None)

    p = sub.add_parser("cv", help="student-stratified k-fold cross-validation")
    _common(p)
    _data(p)
    p.add_argument("--model", action="append", default=None, help="repeatable model spec")
    p.add_argument("--k-folds", type=int, default=None)

    p = sub.add_parser("sweep", help="score a grid of decay values")
    _common(p)
    _data(p, required=False)
    _population(p)
    p.add_argument("--family", default=None)
    p.add_argument("--success-grid", type=_floats, default=None, help="comma-separated decays")
    p.add_argument("--failure-grid", type=_floats, default=None, help="comma-separated decays")
    p.add_argument("--equal-decays", action="store_true", default=None)
    p.add_argument("--metric", default=None, help="aic, cv_pe or cv_zero_one")
    p.add_argument("--k-folds", type=int, default=None)

    p = sub.add_parser("study", help="replicated simulation study ranking the model roster")
    _common(p)
    _population(p)
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--k-folds", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--full-scale", action="store_true", default=None,
                   help="100 replications of 3500 students over 50 KCs")

    p = sub.add_parser("compare", help="tabulate where two models disagree, by R bin")
    _common(p)
    _data(p)
    p.add_argument("--model-a", default=None)
    p.add_argument("--model-b", default=None)
    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    """Fill unset options from ``--config``; return the raw config dict."""
    if not args.config:
        return {}
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigurationError("config file must hold a JSON object")
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if getattr(args, attr, None) is None and hasattr(args, attr):
            setattr(args, attr, value)
    return cfg


def _seed(args) -> int:
    return 0 if args.seed is None else int(args.seed)


def _population_config(args) -> PopulationConfig:
    base = PopulationConfig()
    return PopulationConfig(
        n_kcs=args.n_kcs if args.n_kcs is not None else base.n_kcs,
        n_students=args.n_students if args.n_students is not None else base.n_students,
        kc_mean=args.kc_mean if args.kc_mean is not None else base.kc_mean,
        attempts_mean=args.attempts_mean if args.attempts_mean is not None else base.attempts_mean,
        seed=_seed(args),
    )


def _fs_overrides(args) -> dict:
    out = {}
    if args.p_fs_student is not None:
        out["p_fs_student"] = args.p_fs_student
    if args.p_correct_during_fs is not None:
        out["p_correct_during_fs"] = args.p_correct_during_fs
    return out


def _load_data(args):
    if not args.data:
        raise ConfigurationError("--data is required")
    schema = ColumnSchema(order_key=args.order_key) if args.order_key else ColumnSchema()
    return ingest_csv(args.data, schema)


def _spec(text) -> ModelSpec:
    if isinstance(text, dict):
        return ModelSpec.from_dict(text)
    return parse_model(text)


def _write_text(args, text: str) -> None:
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit(args, report) -> None:
    emit_report(report, args.format or "json", args.out if args.out else sys.stdout)


def cmd_simulate(args) -> int:
    generator = args.generator or "bkt2"
    fs = _fs_overrides(args) if generator == "bkt_fs" else {}
    result = run_generator(generator, _population_config(args), emit_latent=bool(args.emit_latent), **fs)
    export_csv(result.dataset, args.out if args.out else sys.stdout)
    if args.emit_latent:
        with open(args.emit_latent, "w", encoding="utf-8", newline="") as fh:
            fh.write("student,kc,t,Z\n")
            for row in result.latent:
                fh.write(f"{row.student_id},{row.kc_id},{row.t},{row.state}\n")
    if args.params_out:
        with open(args.params_out, "w", encoding="utf-8") as fh:
            json.dump(params_to_dict(result.params), fh, indent=2)
    s = summarize(result.dataset)
    log.info("%s: %d students, %d KCs, %d attempts (%d students with no KCs)",
             generator, s.n_students, s.n_kcs, s.n_attempts, len(result.empty_students))
    return EXIT_OK


def cmd_featurize(args) -> int:
    dataset = _load_data(args)
    if args.model:
        config = _spec(args.model).feature_config
    else:
        base = FeatureConfig()
        config = FeatureConfig(
            decay_s=args.decay_s if args.decay_s is not None else base.decay_s,
            decay_f=args.decay_f if args.decay_f is not None else base.decay_f,
            decay_r=args.decay_r if args.decay_r is not None else base.decay_r,
            ghost_count=args.ghost_count if args.ghost_count is not None else base.ghost_count,
            failure_sign=args.failure_sign or base.failure_sign,
        )
    export_features(featurize(dataset, config), args.out if args.out else sys.stdout)
    return EXIT_OK


def cmd_fit(args) -> int:
    dataset = _load_data(args)
    spec = _spec(args.model or "R-PFA:r=0.7,f=0.1")
    options = FitOptions(
        max_iterations=args.max_iterations or FitOptions.max_iterations,
        ridge_lambda=args.ridge or 0.0,
    )
    model, diag = fit_model(featurize(dataset, spec.feature_config), spec, options, strict=bool(args.strict))
    payload = model.to_dict()
    payload["aic"] = aic(model)
    payload["bic"] = bic(model)
    _write_text(args, json.dumps(payload, indent=2) + "\n")
    log.info("%s: loglik %.4f, AIC %.2f, %d iterations", spec.display_name,
             model.log_likelihood, payload["aic"], diag.iterations)
    return EXIT_OK if diag.converged or not args.strict else EXIT_PARTIAL


def cmd_cv(args) -> int:
    started = time.perf_counter()
    dataset = _load_data(args)
    specs = [_spec(m) for m in (args.model or ["AFM", "PFA", "R-PFA:r=0.7,f=0.1"])]
    k = args.k_folds or 5
    folds = make_folds(dataset, k, _seed(args))
    results = []
    for spec in specs:
        results.extend(cross_validate(dataset, spec, folds, LOSSES))
    cfg = {"models": [s.to_dict() for s in specs], "k_folds": k}
    _emit(args, CVReport(results, provenance(cfg, _seed(args), started)))
    return EXIT_OK


def cmd_sweep(args) -> int:
    seed = _seed(args)
    if args.data:
        dataset = _load_data(args)
    else:
        generator = args.generator or "bkt2"
        fs = _fs_overrides(args) if generator == "bkt_fs" else {}
        dataset = run_generator(generator, _population_config(args), **fs).dataset
    grid = SweepGrid(
        family=args.family or "R-PFA",
        success_grid=tuple(args.success_grid or DEFAULT_GRID),
        failure_grid=tuple(args.failure_grid or (0.1,)),
        equal_decays=bool(args.equal_decays),
    )
    report = sweep_decay(dataset, grid, args.metric or "aic", k_folds=args.k_folds or 5, seed=seed)
    _emit(args, report)
    bad = [c for c in report.cells if c.error or (args.strict and not c.converged)]
    if bad:
        log.warning("%d of %d sweep cells failed or did not converge", len(bad), len(report.cells))
        return EXIT_OK if args.allow_partial else EXIT_PARTIAL
    return EXIT_OK


def cmd_study(args, raw: dict) -> int:
    if args.full_scale:
        d = StudyConfig.full_scale().to_dict()
    else:
        d = (StudyConfig.from_dict(raw) if raw else StudyConfig()).to_dict()
    # args already carries the config-file values for flat keys; CLI wins
    for name in ("generator", "replications", "k_folds", "workers", "p_fs_student", "p_correct_during_fs"):
        if getattr(args, name) is not None:
            d[name] = getattr(args, name)
    if args.seed is not None:
        d["seed"] = args.seed
    for name in ("n_students", "n_kcs", "kc_mean", "attempts_mean"):
        if getattr(args, name) is not None:
            d["population"][name] = getattr(args, name)
    report = replicate_study(StudyConfig.from_dict(d))
    _emit(args, report)
    bad = [r for r in report.replications if r.error or (args.strict and r.unconverged)]
    if bad:
        log.warning("%d of %d replications failed", len(bad), len(report.replications))
        return EXIT_OK if args.allow_partial else EXIT_PARTIAL
    return EXIT_OK


def cmd_compare(args) -> int:
    dataset = _load_data(args)
    spec_a = _spec(args.model_a or "R-PFA:r=0.7,f=0.1")
    spec_b = _spec(args.model_b or "PFA:s=0.6,f=0.6")
    _emit(args, compare_predictions(dataset, spec_a, spec_b))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = _merge_config(args)
        if args.command == "study":
            return cmd_study(args, raw)
        handler = {
            "simulate": cmd_simulate, "featurize": cmd_featurize, "fit": cmd_fit,
            "cv": cmd_cv, "sweep": cmd_sweep, "compare": cmd_compare,
        }[args.command]
        return handler(args)
    except (RPFAError, ValueError, KeyError) as exc:
        print(f"rpfa {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"rpfa {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
