"""Command-line interface.

Subcommands: ``fit``, ``scan``, ``confcurve``, ``fic``, ``gof``, ``simulate``
and ``el``. Each reads an optional YAML config (see :mod:`hybridlik.config`)
whose keys can be overridden by flags or by ``--set key=value``.

Exit codes: 0 success, 2 configuration or I/O problem, 3 numerical failure
(a diagnostic ``error.json`` is written to the output directory).
"""

import argparse
import csv
import json
import os
import sys

import numpy as np
import yaml

from . import __version__
from .alt import maximize_alt
from .asymptotics import estimate_blocks, kappa_a, kappa_curve, select_a_efficiency
from .config import (ConfigError, build_controls, build_model, build_problem, build_wide,
                     load_data, parse_control_token, parse_focus_token, parse_grid, parse_range,
                     read_config, resolve_policy, set_dotted, validate)
from .el import solve_el
from .errors import HybridLikError, NumericalFailure
from .focused import fic_curve, gof_test
from .hl import confidence_curve, maximize_hl
from .simulate import COLUMNS, default_threads, pool_map, run_simulation, summarize

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2)
        fh.write("\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _out(cfg, name):
    d = cfg.output_dir
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, name)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _choose_a(cfg, prob, wm=None):
    """Resolve the balance parameter; returns ``(a, extra_info)``."""
    pol = resolve_policy(cfg.get("a"))
    if pol.kind == "fixed":
        return pol.value, {"policy": "fixed"}
    if pol.kind == "efficiency_cap":
        a = select_a_efficiency(prob, pol.eps, pol.grid)
        return a, {"policy": "efficiency_cap", "eps": pol.eps, "grid": pol.grid}
    if pol.kind == "fic":
        curves = fic_curve(prob, wm or build_wide(cfg), pol.grid)
        return curves.a_star, {"policy": "fic", "grid": pol.grid}
    raise ConfigError("the grid policy belongs to the scan command")


def fit_record(prob, fit, method, policy):
    rec = {"schema_version": SCHEMA_VERSION, "method": method, "model": prob.model.name,
           "param_names": list(prob.model.param_names), "n": prob.n, "a": prob.a,
           "a_policy": policy, "controls": prob.controls.spec, "focus": prob.focus.name}
    if method == "alt":
        blocks = estimate_blocks(prob, fit.theta_tilde)
        rec.update(theta_hat=fit.theta_tilde, psi_hat=fit.psi_tilde, objective_max=fit.N_max,
                   kappa=fit.kappa, se_psi=fit.se_psi, V_n=fit.V_n,
                   divergence_estimate=fit.divergence_estimate, caveat=fit.caveat,
                   theta_ml=fit.theta_ml)
    else:
        blocks = fit.blocks
        rec.update(theta_hat=fit.theta_hat, psi_hat=fit.psi_hat, objective_max=fit.h_max,
                   kappa=fit.kappa, se_psi=fit.se_psi, theta_ml=fit.theta_ml,
                   optimizer=fit.optimizer_trace)
    rec["se_theta"] = np.sqrt(np.diag(blocks.sandwich) / prob.n)
    rec["blocks"] = blocks.to_dict()
    return rec


def cmd_fit(cfg, args):
    prob = build_problem(cfg)
    a, policy = _choose_a(cfg, prob)
    prob = prob.with_a(a)
    method = cfg.get("method", "hl")
    if method not in ("hl", "alt"):
        raise ConfigError(f"unknown method {method!r}")
    fit = maximize_alt(prob) if method == "alt" else maximize_hl(prob)
    write_json(_out(cfg, "fit.json"), fit_record(prob, fit, method, policy))
    if policy["policy"] == "efficiency_cap":
        theta_ml = fit.theta_ml
        base = estimate_blocks(prob, theta_ml, method="model")
        c = prob.focus.gradient(theta_ml)
        grid = policy["grid"]
        ks = kappa_curve(base, c, grid)
        k0 = kappa_a(base.at(0.0), c)
        write_csv(_out(cfg, "curve_kappa.csv"), ["a", "kappa", "kappa_ratio"],
                  [(float(g), float(k), float(k / k0)) for g, k in zip(grid, ks)])
    print(f"a={a:g} psi_hat={prob.focus(fit.theta_tilde if method == 'alt' else fit.theta_hat):.6g} "
          f"se={fit.se_psi:.4g}")
    return EXIT_OK


def _scan_one(args):
    raw, a, data = args
    cfg = validate(raw)
    try:
        prob = build_problem(cfg, a=a, data=data)
        fit = maximize_hl(prob)
        return (a, fit.psi_hat, fit.kappa, fit.se_psi, "ok")
    except NumericalFailure as exc:
        return (a, float("nan"), float("nan"), float("nan"), type(exc).__name__)


def cmd_scan(cfg, args):
    pol = resolve_policy(cfg.get("a"))
    grid = parse_grid(cfg.get("grid")) if cfg.get("grid") is not None else (
        pol.grid if pol.grid is not None else parse_grid("0:0.95:0.05"))
    data = load_data(cfg)
    rows = pool_map(_scan_one, [(cfg.raw, float(a), data) for a in grid], cfg.get("threads"))
    write_csv(_out(cfg, "curve_phat.csv"), ["a", "psi_hat", "kappa", "se_psi", "status"], rows)
    print(f"{len(rows)} grid points, {sum(r[4] == 'ok' for r in rows)} ok")
    return EXIT_OK


def cmd_confcurve(cfg, args):
    prob = build_problem(cfg)
    a, _ = _choose_a(cfg, prob)
    prob = prob.with_a(a)
    fit = maximize_hl(prob)
    if cfg.get("psi_range") is not None:
        grid = parse_range(cfg.get("psi_range"))
    else:
        grid = fit.psi_hat + fit.se_psi * np.linspace(-3.5, 3.5, 29)
    grid = np.unique(np.append(grid, fit.psi_hat))
    cc = confidence_curve(prob, fit, grid)
    write_csv(_out(cfg, "confcurve.csv"), ["psi", "deviance", "cc"],
              zip(cc.psi, cc.deviance, cc.cc))
    print(f"psi_hat={fit.psi_hat:.6g} k={cc.k:.4g}")
    return EXIT_OK


def cmd_fic(cfg, args):
    prob = build_problem(cfg)
    wm = build_wide(cfg)
    pol = resolve_policy(cfg.get("a"))
    grid = parse_grid(cfg.get("grid")) if cfg.get("grid") is not None else pol.grid
    curves = fic_curve(prob, wm, grid)
    rows = curves.rows()
    write_csv(_out(cfg, "fic.csv"), ["a", "fic", "bias2", "tau2"],
              [(r["a"], r["fic"], r["bias2"], r["tau2"]) for r in rows])
    write_json(_out(cfg, "fic.json"), {"schema_version": SCHEMA_VERSION, "a_star": curves.a_star,
                                       "wide_model": wm.name, "curve": rows,
                                       "root_fic": np.sqrt(curves.fic),
                                       "omega_hl": curves.omega_hl})
    print(f"a_star={curves.a_star:g}")
    return EXIT_OK


def cmd_gof(cfg, args):
    prob = build_problem(cfg)
    verdict = gof_test(prob, build_wide(cfg))
    write_json(_out(cfg, "gof.json"), {"schema_version": SCHEMA_VERSION, **verdict.to_dict()})
    print(f"reject={verdict.reject} statistic={verdict.statistic:.4g}")
    return EXIT_OK


def cmd_simulate(cfg, args):
    threads = cfg.get("threads")
    rows = run_simulation(cfg.raw, threads)
    write_csv(_out(cfg, "replications.csv"), COLUMNS, rows)
    for (method, a), s in sorted(summarize(rows).items()):
        print(f"{method:4s} a={a:<5g} root_mse={s['root_mse']:.4g} sd={s['sd']:.4g} n={s['count']}")
    return EXIT_OK


def cmd_el(cfg, args):
    model = build_model(cfg)
    cs = build_controls(cfg, model)
    y = load_data(cfg)
    mu = cfg.get("mu")
    if mu is None:
        raise ConfigError("el needs --mu")
    mu = np.atleast_1d(np.asarray(parse_grid(mu) if isinstance(mu, str) else mu, dtype=float))
    if mu.size != cs.q:
        raise ConfigError(f"mu must have {cs.q} entries")
    sol = solve_el(cs.m(y, mu))
    w = sol.weights
    out = {"status": sol.status, "lambda": sol.lam, "log_ratio": sol.log_ratio,
           "iterations": sol.iterations,
           "weights": {"min": np.min(w), "max": np.max(w), "sum": np.sum(w)}}
    print(json.dumps(_jsonable(out), indent=2))
    return EXIT_OK


HELP = {
    "fit": "fit at one balance parameter; writes fit.json (and curve_kappa.csv)",
    "scan": "refit over a grid of a; writes curve_phat.csv",
    "confcurve": "deviance-based confidence curve for the focus; writes confcurve.csv",
    "fic": "focused risk estimate fic(a) against a wide model; writes fic.csv and fic.json",
    "gof": "goodness-of-fit test implied by the fic slope at a = 0; writes gof.json",
    "simulate": "seeded Monte Carlo of ML, hybrid and alternative estimators",
    "el": "empirical likelihood ratio at given control values; prints JSON",
}

COMMANDS = {"fit": cmd_fit, "scan": cmd_scan, "confcurve": cmd_confcurve, "fic": cmd_fic,
            "gof": cmd_gof, "simulate": cmd_simulate, "el": cmd_el}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="hybridlik",
                                     description="Hybrid parametric/empirical likelihood fits")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", nargs="?", help="YAML run configuration")
    common.add_argument("--data", help="CSV file, one observation per row")
    common.add_argument("--column", help="column index or header name (default 0)")
    common.add_argument("--model", help="normal, gamma, beta or beta_one")
    common.add_argument("--controls", action="append", metavar="SPEC",
                        help="control block such as moment:2 or cell:9.5,20.5 (repeatable)")
    common.add_argument("--focus", metavar="SPEC", help="control:J, theta:J, moment:K or cell:LO,HI")
    common.add_argument("--a", help="balance parameter in [0, 1)")
    common.add_argument("--seed", type=int)
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--threads", type=int, help="worker count (env HYBRIDLIK_THREADS)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; dotted keys reach nested entries")
    specs = {
        "fit": [("--method", {"choices": ["hl", "alt"]})],
        "scan": [("--grid", {"help": "start:stop:step or comma-separated values"})],
        "confcurve": [("--psi-range", {"dest": "psi_range", "help": "lo:hi:num"})],
        "fic": [("--grid", {"help": "start:stop:step or comma-separated values"})],
        "gof": [],
        "simulate": [],
        "el": [("--mu", {"help": "comma-separated control values"})],
    }
    for name, extra in specs.items():
        p = sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
        for flag, kw in extra:
            p.add_argument(flag, **kw)
    return parser


def merge_config(args):
    raw = read_config(args.config)
    for key in ("data", "column", "model", "seed", "output_dir", "threads", "method", "grid",
                "psi_range", "mu"):
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    if args.a is not None:
        raw["a"] = args.a
    if args.controls:
        raw["controls"] = [parse_control_token(t) for t in args.controls]
    if args.focus:
        raw["focus"] = parse_focus_token(args.focus)
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        set_dotted(raw, key.strip(), yaml.safe_load(val))
    if raw.get("threads") is None:
        raw["threads"] = default_threads()
    return validate(raw)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = None
    try:
        cfg = merge_config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        diag = {"error": type(exc).__name__, "message": str(exc),
                "index": getattr(exc, "index", None), "command": args.command}
        print(json.dumps(diag), file=sys.stderr)
        if cfg is not None:
            try:
                write_json(_out(cfg, "error.json"), diag)
            except OSError:
                pass
        return EXIT_NUMERICAL
    except HybridLikError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
