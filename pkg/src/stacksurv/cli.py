"""Command-line interface: fit, simulate, validate.

Configuration is a JSON document; see README for the schema.  All reported
doses are on the original input scale.  Exit codes: 0 success, 1 usage or
config error, 2 data error, 3 convergence failure (report still written).
"""

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, curves, families
from .data import CsvFormatError, load_csv
from .pipeline import fit_models, stacked_population_eds
from .sampler import SamplerConfig
from .simulate import IG_SKEWT, WEIBULL_IG, StudyDesignSpec, run_mse_study

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CONVERGENCE = 3

RHAT_FAIL = 1.05


class ConfigError(ValueError):
    pass


def _load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError("config file not found: %s" % path)
    except json.JSONDecodeError as exc:
        raise ConfigError("config is not valid JSON: %s" % exc)


def _sampler_config(cfg, seed):
    s = cfg.get("sampler", {})
    try:
        return SamplerConfig(
            chains=int(s.get("chains", 4)),
            warmup=int(s.get("warmup", 1000)),
            samples=int(s.get("samples", 1000)),
            target_accept=float(s.get("target_accept", 0.8)),
            max_tree_depth=int(s.get("max_tree_depth", 10)),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError("invalid sampler settings: %s" % exc)


def _run_settings(cfg, args):
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    models = (
        args.models.split(",")
        if args.models
        else list(cfg.get("models", families.FAMILY_NAMES))
    )
    if not models:
        raise ConfigError("model list must be nonempty")
    for m in models:
        if m not in families.FAMILY_NAMES:
            raise ConfigError("unknown model %r" % m)
    ed_targets = [float(y) for y in cfg.get("ed_targets", (0.01, 0.05, 0.10))]
    if any(not 0.0 < y < 1.0 for y in ed_targets):
        raise ConfigError("ed_targets must lie in (0, 1)")
    level = float(cfg.get("credible_level", 0.90))
    if not 0.5 < level < 1.0:
        raise ConfigError("credible_level must lie in (0.5, 1)")
    out = Path(args.out if args.out else cfg.get("output_dir", "stacksurv_out"))
    return seed, models, ed_targets, level, out


def _config_hash(cfg):
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def _provenance(cfg, seed):
    return {
        "config_sha256": _config_hash(cfg),
        "seed": seed,
        "versions": {
            "stacksurv": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def _model_diagnostics(draws):
    d = draws.diagnostics
    rhat = d.get("rhat")
    ess = d.get("ess")
    return {
        "family": draws.family,
        "rhat_max": None if rhat is None else float(np.nanmax(rhat)),
        "ess_min": None if ess is None else float(np.nanmin(ess)),
        "divergences": [int(x) for x in d.get("divergences", [])],
        "divergence_warning": bool(d.get("divergence_warning", False)),
        "passed": bool(d.get("passed", False)),
    }


def _ed_row(ed):
    return {
        "y": ed.y,
        "dose": ed.dose_mean,
        "ci_low": ed.dose_ci[0],
        "ci_high": ed.dose_ci[1],
        "level": ed.level,
        "unbracketed_draws": ed.n_unbracketed,
    }


def cmd_fit(args):
    cfg = _load_config(args.config)
    seed, models, ed_targets, level, out = _run_settings(cfg, args)
    data_path = cfg.get("data")
    if not data_path:
        raise ConfigError("config must name a 'data' CSV path")
    try:
        raw = load_csv(data_path)
    except (CsvFormatError, OSError) as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return EXIT_DATA

    out.mkdir(parents=True, exist_ok=True)
    sampler_cfg = _sampler_config(cfg, seed)
    fit = fit_models(raw, models, sampler_cfg)

    warnings = []
    for lr in fit.loos:
        warnings.extend(lr.warnings)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xED]))
    n_grid = int(cfg.get("grid", {}).get("n_points", 200))
    pop_curve, pop_eds = stacked_population_eds(
        fit, ed_targets, rng, level=level, n_grid=n_grid
    )
    pop_curve.export_csv(out / "curve_population.csv")

    study_tables = {}
    for study in fit.dataset.studies:
        curve = curves.study_survival(
            fit.draws, fit.weights, study, pop_curve.grid, fit.dataset,
            level=level, rng=np.random.default_rng(np.random.SeedSequence([seed, 0x57])),
        )
        curve.export_csv(out / ("curve_study_%s.csv" % study))
        rows = []
        for y in ed_targets:
            try:
                rows.append(_ed_row(curves.ed_quantile(curve, y)))
            except ValueError as exc:
                rows.append({"y": y, "error": str(exc)})
                warnings.append("study %s ED%02d: %s" % (study, round(100 * y), exc))
        study_tables[study] = rows

    convergence_failed = any(
        d.diagnostics.get("divergence_warning")
        or (d.diagnostics.get("rhat") is not None
            and not np.all(np.isfinite(d.diagnostics["rhat"])))
        or (d.diagnostics.get("rhat") is not None
            and float(np.nanmax(d.diagnostics["rhat"])) > RHAT_FAIL)
        for d in fit.draws
    )
    if convergence_failed:
        warnings.append("convergence failure: see per-model diagnostics")

    report = {
        "models": [_model_diagnostics(d) for d in fit.draws],
        "k_hat": {
            d.family: {
                "max": float(np.nanmax(l.k_hat)),
                "n_above_0.7": int(np.sum(np.nan_to_num(l.k_hat, nan=0.0) > 0.7)),
            }
            for d, l in zip(fit.draws, fit.loos)
        },
        "stacking": {
            "weights": {f: float(w) for f, w in zip(fit.families, fit.weights.w)},
            "objective": fit.weights.objective,
            "per_model_elpd": {
                f: float(e) for f, e in zip(fit.families, fit.weights.per_model_elpd)
            },
        },
        "population_ed": [_ed_row(pop_eds[y]) for y in ed_targets],
        "study_ed": study_tables,
        "scale_factor": fit.dataset.scale_factor,
        "warnings": warnings,
        "convergence_failed": convergence_failed,
        "provenance": _provenance(cfg, seed),
    }
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_text_summary(report, fit, out / "report.txt")
    print("report written to %s" % (out / "report.json"))
    return EXIT_CONVERGENCE if convergence_failed else EXIT_OK


def _write_text_summary(report, fit, path):
    lines = ["stacked survival analysis", "=" * 40, ""]
    lines.append("stacking weights:")
    for f, w in report["stacking"]["weights"].items():
        lines.append("  %-14s %.4f" % (f, w))
    lines.append("")
    lines.append("population eliciting doses (level %.0f%%):"
                 % (100 * report["population_ed"][0]["level"]))
    for row in report["population_ed"]:
        lines.append(
            "  ED%02d  %.6g  [%.6g, %.6g]"
            % (round(100 * row["y"]), row["dose"], row["ci_low"], row["ci_high"])
        )
    lines.append("")
    for m in report["models"]:
        lines.append(
            "model %-14s rhat_max=%s ess_min=%s divergences=%s"
            % (m["family"],
               "n/a" if m["rhat_max"] is None else "%.3f" % m["rhat_max"],
               "n/a" if m["ess_min"] is None else "%.0f" % m["ess_min"],
               sum(m["divergences"]))
        )
    if report["warnings"]:
        lines.append("")
        lines.append("warnings:")
        lines.extend("  " + w for w in report["warnings"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_simulate(args):
    cfg = _load_config(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = Path(args.out if args.out else cfg.get("output_dir", "stacksurv_sim"))
    out.mkdir(parents=True, exist_ok=True)
    sim = cfg.get("simulation", {})
    truth_name = sim.get("truth", "ig_skewt")
    truth = {"ig_skewt": IG_SKEWT, "weibull_ig": WEIBULL_IG}.get(truth_name)
    if truth is None:
        raise ConfigError("unknown truth %r" % truth_name)
    if args.full_scale:
        design = StudyDesignSpec(
            n_centers=int(sim.get("n_centers", 5)),
            replications=int(sim.get("replications", 200)),
        )
        sampler_cfg = _sampler_config(cfg, seed)
    else:
        design = StudyDesignSpec(
            n_centers=int(sim.get("n_centers", 5)),
            replications=int(sim.get("replications", 50)),
        )
        s = cfg.get("sampler", {})
        sampler_cfg = SamplerConfig(
            chains=int(s.get("chains", 2)),
            warmup=int(s.get("warmup", 500)),
            samples=int(s.get("samples", 500)),
            seed=seed,
        )
    try:
        result = run_mse_study(design, truth, sampler_cfg, seed=seed)
    except RuntimeError as exc:
        print("convergence failure: %s" % exc, file=sys.stderr)
        return EXIT_CONVERGENCE
    with open(out / "mse_ratios.csv", "w", encoding="utf-8") as fh:
        fh.write("failure_probability,mse_ratio,ci_low,ci_high,stacked_mse,weibull_mse\n")
        for row in result.to_rows():
            fh.write(
                "%g,%.10g,%.10g,%.10g,%.10g,%.10g\n"
                % (row["failure_probability"], row["mse_ratio"], row["ci_low"],
                   row["ci_high"], row["stacked_mse"], row["weibull_mse"])
            )
    manifest = {
        "truth": result.truth,
        "design": {
            "n_centers": design.n_centers,
            "replications": design.replications,
        },
        "sampler": {
            "chains": sampler_cfg.chains,
            "warmup": sampler_cfg.warmup,
            "samples": sampler_cfg.samples,
        },
        "seed": seed,
        "true_eds": result.true_eds,
        "completed": result.n_completed,
        "excluded": result.n_excluded,
        "exclusions": result.exclusions,
        "provenance": _provenance(cfg, seed),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for y in result.ed_targets:
        print("ED%02d ratio %.3f  [%.3f, %.3f]"
              % (round(100 * y), result.ratios[y], *result.ratio_ci[y]))
    return EXIT_OK


def cmd_validate(args):
    cfg = _load_config(args.config) if args.config else {}
    data_path = args.data or cfg.get("data")
    if not data_path:
        raise ConfigError("validate needs --data or a config with 'data'")
    try:
        raw = load_csv(data_path)
    except (CsvFormatError, OSError) as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return EXIT_DATA
    ds = raw.normalize()
    t1, t2 = ds.endpoints()
    finite = t2[np.isfinite(t2)]
    checks = [
        ("observations", ds.n > 0),
        ("every interval ordered", bool(np.all(t1 < t2))),
        ("normalized endpoints in [0,1]", bool(np.all(t1 <= 1.0))
         and bool(np.all(finite <= 1.0 + 1e-12))),
        ("positive scale factor", ds.scale_factor > 0),
    ]
    n_left = int(np.sum(t1 == 0))
    n_right = int(np.sum(~np.isfinite(t2)))
    print("studies: %d  observations: %d" % (ds.n_studies, ds.n))
    print("left-censored: %d  right-censored: %d" % (n_left, n_right))
    print("scale factor: %g" % ds.scale_factor)
    ok = True
    for name, passed in checks:
        print("%-34s %s" % (name, "ok" if passed else "FAIL"))
        ok = ok and passed
    return EXIT_OK if ok else EXIT_DATA


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stacksurv",
        description="Bayesian stacked survival regression for interval-censored doses",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit models, stack, and report EDs")
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--seed", type=int)
    p_fit.add_argument("--models", help="comma-separated family subset")
    p_fit.add_argument("--out")
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="run the MSE-ratio simulation study")
    p_sim.add_argument("--config")
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--out")
    p_sim.add_argument("--full-scale", action="store_true",
                       help="200 replications and full sampler budget")
    p_sim.set_defaults(func=cmd_simulate)

    p_val = sub.add_parser("validate", help="check a dataset without fitting")
    p_val.add_argument("--config")
    p_val.add_argument("--data")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
