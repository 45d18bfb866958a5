"""Command-line interface: ``unitreg {fit,compare,bayes-fit,simulate,diagnose}``.

Exit codes: 0 success, 1 runtime or convergence failure, 2 configuration error.
"""
import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, bayes, diagnostics, mle, simulate
from ._accel import backend
from .data_io import DataError, MissingColumnError, detect_separation, load_csv
from .likelihoods import MODEL_KINDS, ModelSpec, check_theorem3

log = logging.getLogger("unitreg")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


def _list(text):
    if text is None:
        return ()
    text = text.strip()
    if text.lower() in ("", "none"):
        return ()
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _floats(text):
    try:
        return tuple(float(t) for t in _list(text))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got '{text}'") from None


def resolve_seed(args):
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("UNITREG_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"UNITREG_SEED must be an integer, got '{env}'") from None
    return int(np.random.SeedSequence().entropy % (2 ** 63))


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (tuple, set)):
        return list(v)
    return str(v)


def _echo(args, out, **extra):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(extra)
    cfg["version"] = __version__
    cfg["backend"] = backend()
    cfg["argv"] = sys.argv[1:]
    _dump(out / "config-echo.json", cfg)


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args, ids=None):
    return load_csv(args.data, args.y, _list(args.x) + _extra_columns(args), ids or (),
                    endpoint_epsilon=args.endpoint_epsilon)


def _extra_columns(args):
    cols = []
    for name in ("precision_x", "tilt_x", "theta_covariates"):
        for c in _list(getattr(args, name, None)):
            if c not in cols and c not in _list(args.x):
                cols.append(c)
    return tuple(cols)


def _spec(args, kind=None):
    theta = getattr(args, "theta_covariates", None)
    return ModelSpec(kind or args.model, _list(args.x),
                     precision=_list(getattr(args, "precision_x", None)),
                     tilt=None if getattr(args, "tilt_x", None) is None else _list(args.tilt_x),
                     theta=None if theta is None else _list(theta),
                     zeta=getattr(args, "zeta", False),
                     mask_mean=getattr(args, "mask_mean", False),
                     bound_kind=getattr(args, "bound_kind", "phi_minus_1"),
                     endpoint_density=getattr(args, "endpoint_density", "phi_star"))


# -- subcommands -----------------------------------------------------------


def cmd_fit(args):
    out = _out_dir(args)
    _echo(args, out)
    ids = [args.id] if args.id else []
    data = _load(args, ids)
    spec = _spec(args)
    opts = mle.FitOptions(gradient=args.gradient, max_iter=args.max_iter)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = mle.fit(spec, data, opts)
    doc = result.as_dict()
    doc["warnings"] = [str(w.message) for w in caught]
    doc["data"] = data.summary()
    _dump(out / "fit.json", doc)
    diagnostics.standardized_residuals(result).write_csv(out / "residuals.csv")
    diagnostics.export_pred_vs_obs(result, path=out / "pred_vs_obs.csv")
    if "a" in result.model.X and result.model.X["a"].shape[1] > 1:
        diagnostics.export_mu_theta_scatter(result, path=out / "mu_theta.csv")
    _print_table(result)
    if not result.converged:
        print(f"error: {result.message}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _print_table(result):
    print(f"{'parameter':<28}{'estimate':>14}{'se':>12}{'z':>10}")
    for i, lab in enumerate(result.labels):
        print(f"{lab:<28}{result.estimates[i]:>14.6g}{result.se[i]:>12.4g}{result.z[i]:>10.3f}")
    print(f"loglik {result.loglik:.6f}   AIC {result.aic:.4f}   converged {result.converged}")


def cmd_compare(args):
    out = _out_dir(args)
    _echo(args, out)
    fits = []
    for path in args.fits:
        try:
            fits.append(mle.FitResult.from_dict(json.loads(Path(path).read_text())))
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read fit file {path}: {exc}") from None
    rows = []
    base_aic = fits[0].aic
    for path, f in zip(args.fits, fits):
        rows.append({"fit": str(path), "model": f.spec.kind, "k": f.k, "loglik": f.loglik,
                     "aic": f.aic, "delta_aic": f.aic - base_aic})
    doc = {"fits": rows}
    small, big = sorted(fits[:2], key=lambda f: f.k)
    try:
        lr = mle.lr_test(small, big)
        doc["lr"] = lr.as_dict()
    except ValueError as exc:
        doc["lr"] = {"refused": str(exc)}
    if args.wald:
        doc["wald"] = []
        for path, f in zip(args.fits, fits):
            try:
                R, r = mle.parse_restrictions(args.wald, list(f.names))
            except ValueError as exc:
                if "unknown parameter" in str(exc):
                    doc["wald"].append({"fit": str(path), "skipped": str(exc)})
                    continue
                raise ConfigError(str(exc)) from None
            doc["wald"].append({"fit": str(path), **mle.wald_test(f, R, r).as_dict()})
        if all("skipped" in w for w in doc["wald"]):
            raise ConfigError("restriction names parameters absent from every fit")
    _dump(out / "compare.json", doc)
    print(f"{'fit':<40}{'model':>10}{'k':>4}{'loglik':>14}{'AIC':>14}{'dAIC':>10}")
    for r in rows:
        print(f"{r['fit']:<40}{r['model']:>10}{r['k']:>4}{r['loglik']:>14.4f}"
              f"{r['aic']:>14.4f}{r['delta_aic']:>10.4f}")
    lr = doc["lr"]
    if "refused" in lr:
        print(f"LR test refused: {lr['refused']}")
    else:
        print(f"LR chi2({lr['df']}) = {lr['chi2']:.4f}, p = {lr['p']:.4f}")
    for w in doc.get("wald", []):
        if "skipped" not in w:
            print(f"Wald [{w['fit']}] chi2({w['df']}) = {w['chi2']:.4f}, p = {w['p']:.4f}")
    return EXIT_OK


def cmd_bayes_fit(args):
    out = _out_dir(args)
    seed = resolve_seed(args)
    _echo(args, out, seed=seed)
    if not args.id:
        raise ConfigError("bayes-fit needs --id naming the unit identifier column")
    data = _load(args, [args.id])
    spec = _spec(args)
    priors = bayes.PriorConfig(args.prior_scale, args.prior_kind, args.phi_lower,
                               args.phi_upper, args.sigma_rate)
    centering = bayes.CenteringVariant(args.centering, args.c)
    enabled = args.bounds == "on" or (args.bounds == "auto" and spec.kind == "model4")
    bounds = bayes.BoundConfig(enabled, args.bound_kind, args.bound_form)
    res = bayes.run_chains(spec, data, priors, centering, bounds, seed=seed, chains=args.chains,
                           n_warmup=args.warmup, n_iter=args.iter, thin=args.thin)
    res.write_draws(out / "draws.csv")
    summary = res.summary()
    summary["theorem3"] = res.model.flags.as_dict()
    _dump(out / "summary.json", summary)
    for name, row in summary["parameters"].items():
        if not name.startswith("m["):
            print(f"{name:<14}{row['mean']:>12.5g}{row['sd']:>10.4g}"
                  f"  [{row['q025']:.4g}, {row['q975']:.4g}]  ess {row['ess']:.0f}")
    if "b0_reconstruction" in summary:
        r = summary["b0_reconstruction"]
        print(f"b0 = c + b0_shift = {r['c']} + {r['b0_shift_mean']:.4f} = {r['b0_mean']:.4f}")
    print(f"DIC {res.dic:.3f} (p_d {res.p_d:.2f})  WAIC {res.waic:.3f} (p_w {res.p_w:.2f})  "
          f"MSE {res.mse:.5g}")
    return EXIT_OK


def cmd_simulate(args):
    out = _out_dir(args)
    seed = resolve_seed(args)
    _echo(args, out, seed=seed)
    mech = simulate.EndpointMechanism(args.endpoints, args.resolution, args.p0, args.p1, args.zeta)
    kw = dict(kind=args.model, N=args.n, b=_floats(args.b), d=_floats(args.d),
              nu=args.nu, predictors=args.predictors, endpoints=mech, seed=seed)
    if args.a:
        kw["a"] = _floats(args.a)
    if args.c:
        kw["c"] = _floats(args.c)
    cfg = simulate.GenConfig(**kw)
    if args.units:
        sim = simulate.gen_panel(cfg, args.units, args.obs_per_unit, args.sigma_m,
                                 forced_units=args.forced_units)
    else:
        sim = simulate.gen_cross_section(cfg)
    path, side = simulate.write_simulated(sim, out / args.name)
    print(f"wrote {path} and {side}: {sim.data.partition.as_dict()}")
    return EXIT_OK


def cmd_diagnose(args):
    out = _out_dir(args)
    _echo(args, out)
    ids = [args.id] if args.id else []
    data = _load(args, ids)
    cov = _list(args.theta_covariates) if args.theta_covariates is not None else _list(args.x)
    X = data.design(cov)
    doc = {"data": data.summary(), "separation": {}}
    for key, value in (("z0", 0.0), ("z1", 1.0)):
        z = (data.y == value).astype(int)
        doc["separation"][key] = detect_separation(z, X).as_dict()
    doc["theorem3"] = check_theorem3(data, data.unit_id).as_dict()
    _dump(out / "diagnose.json", doc)
    for key, rep in doc["separation"].items():
        line = f"{key}: {rep['detail']}"
        if rep["witness"] is not None:
            line += f"; witness {np.round(rep['witness'], 6).tolist()} over {['(Intercept)', *cov]}"
        print(line)
    flagged = doc["theorem3"]["flagged"]
    print(f"estimability flags: global q={doc['theorem3']['global']['q']}, "
          f"flagged groups {flagged if flagged else 'none'}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def _data_args(p, need_x=True):
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--y", required=True, help="outcome column")
    p.add_argument("--x", default="", help="comma-separated mean predictors")
    p.add_argument("--id", default=None, help="unit identifier column")
    p.add_argument("--endpoint-epsilon", type=float, default=None,
                   help="snap values within epsilon of 0 or 1 (default: exact)")
    p.add_argument("--out", default=".", help="output directory")


def _model_args(p, kinds):
    p.add_argument("--model", choices=kinds, required=True)
    p.add_argument("--precision-x", default="", help="predictors of log(phi)")
    p.add_argument("--theta-covariates", default=None,
                   help="predictors of the mixing weight / endpoint logits; 'none' = intercept only")
    p.add_argument("--bound-kind", choices=("phi_minus_1", "phi"), default="phi_minus_1")


def build_parser():
    ap = argparse.ArgumentParser(prog="unitreg", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="maximum-likelihood fit")
    _data_args(p)
    _model_args(p, MODEL_KINDS)
    p.add_argument("--tilt-x", default=None, help="Model 1 tilting-mean predictors")
    p.add_argument("--zeta", action="store_true", help="Model 2 endpoint split parameter")
    p.add_argument("--mask-mean", action="store_true",
                   help="zero the mean design on endpoint rows")
    p.add_argument("--endpoint-density", choices=("phi_star", "tilting"), default="phi_star")
    p.add_argument("--gradient", choices=("analytic", "numeric"), default="analytic")
    p.add_argument("--max-iter", type=int, default=500)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="AIC, LR and Wald comparison of saved fits")
    p.add_argument("fits", nargs=2, help="two fit.json files")
    p.add_argument("--wald", default=None, help='restrictions, e.g. "b1=-a1,b2=0"')
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bayes-fit", help="random-intercept panel model by MCMC")
    _data_args(p)
    _model_args(p, ("model2", "model3", "model4"))
    p.add_argument("--centering", choices=("none", "hc1", "hc2"), default="none")
    p.add_argument("--c", type=float, default=None, help="HC2 constant")
    p.add_argument("--bounds", choices=("auto", "on", "off"), default="auto")
    p.add_argument("--bound-form", choices=("min", "clip"), default="min")
    p.add_argument("--prior-scale", type=float, default=0.04)
    p.add_argument("--prior-kind", choices=("precision", "variance", "sd"), default="precision")
    p.add_argument("--phi-lower", type=float, default=3.0)
    p.add_argument("--phi-upper", type=float, default=150.0)
    p.add_argument("--sigma-rate", type=float, default=1.0)
    p.add_argument("--warmup", type=int, default=5000)
    p.add_argument("--iter", type=int, default=20000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_bayes_fit)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--model", choices=("classic", "model1", "model2", "model3", "model4", "tilting"),
                   default="model3")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--b", default="0.5,0.5,-0.5", help="mean coefficients incl. intercept")
    p.add_argument("--d", default="2.5", help="log-precision coefficients")
    p.add_argument("--a", default=None, help="mixing-weight coefficients")
    p.add_argument("--c", default=None, help="Model 1 tilting-mean coefficients")
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--predictors", choices=("normal", "uniform"), default="normal")
    p.add_argument("--endpoints", choices=("none", "rounding", "explicit", "theta"),
                   default="explicit")
    p.add_argument("--resolution", type=float, default=0.0)
    p.add_argument("--p0", type=float, default=0.025)
    p.add_argument("--p1", type=float, default=0.025)
    p.add_argument("--zeta", type=float, default=None)
    p.add_argument("--units", type=int, default=0, help="panel units (0 = cross-section)")
    p.add_argument("--obs-per-unit", type=int, default=8)
    p.add_argument("--sigma-m", type=float, default=0.7)
    p.add_argument("--forced-units", type=int, default=0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--name", default="data.csv")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", help="separation and estimability checks on raw data")
    _data_args(p)
    p.add_argument("--theta-covariates", default=None,
                   help="predictors for the endpoint indicators (default: --x)")
    p.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MissingColumnError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # bad option values surface as ValueError from config dataclasses
        if isinstance(exc, DataError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
