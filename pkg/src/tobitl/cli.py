"""Command line interface: ``tobitl fit | simulate | bootstrap``.

Exit codes: 0 success, 2 data errors, 3 numerical failures, 4 configuration
errors (including bad flags).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import SCHEMES, bootstrap_brmse
from .cqr import CqrOptions, QuantileGrid
from .errors import ConfigError, TobitLError
from .inference import (default_score_config, influence_h, jacobian_hat,
                        l_confidence_interval, omega_hat)
from .lweights import grid_for_weights, parse_weight
from .model import load_csv, load_schema
from .pipeline import fit_two_stage
from .simulate import (COORDS, SimConfig, run_monte_carlo, write_emse_curves_csv,
                       write_metrics_csv)

log = logging.getLogger("tobitl")

DEFAULT_WEIGHTS = ("trimmed:0.01",)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be a comma-separated list of numbers") from None


def _grid(spec: str | None, weights) -> QuantileGrid:
    if spec is None:
        return grid_for_weights(weights)
    vals = _floats(spec, "--grid")
    if len(vals) != 2 or vals[1] != int(vals[1]):
        raise ConfigError("--grid takes tau0,m, e.g. --grid 0.05,99")
    return grid_for_weights(weights, vals[0], int(vals[1]))


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("TOBITL_THREADS", "1")
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"TOBITL_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("--threads must be at least 1")
    return n


def _versions() -> dict:
    import matplotlib
    import scipy
    return {"tobitl": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__}


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, allow_nan=True)
        fh.write("\n")


def _options(args) -> CqrOptions:
    if args.n_starts < 1:
        raise ConfigError("--n-starts must be at least 1")
    return CqrOptions(n_starts=args.n_starts, seed=args.seed or 0)


def _load(args):
    if not args.data or not args.schema:
        raise ConfigError("--data and --schema are required")
    schema = load_schema(args.schema)
    return load_csv(args.data, schema)


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args.out)
    d = _load(args)
    weights = [parse_weight(s) for s in (args.weight or DEFAULT_WEIGHTS)]
    grid = _grid(args.grid, weights)
    opts = _options(args)
    fit = fit_two_stage(d, weights, grid, opts)
    sc = default_score_config(d, fit.process, fit.first_stage, args.bandwidth,
                              args.lag_trunc, kernel=args.kernel)
    J = jacobian_hat(d, fit.process, fit.first_stage, sc)
    names = d.param_names
    results, rows = {}, []
    for mu in weights:
        est = fit.estimates[mu.label]
        H = influence_h(d, fit.process, fit.first_stage, J, mu, beta_at=fit.beta_at)
        Om = omega_hat(H, sc, grid.fingerprint())
        ci = l_confidence_interval(est, Om, d.n, args.level)
        results[mu.label] = {
            "weight": mu.describe(),
            "estimate": dict(zip(names, map(float, est.value))),
            "se": dict(zip(names, map(float, ci.se))),
            "ci_lower": dict(zip(names, map(float, ci.lower))),
            "ci_upper": dict(zip(names, map(float, ci.upper))),
            "zero_width": [names[j] for j in np.flatnonzero(ci.degenerate)],
            "omega": Om.matrix.tolist(),
            "scheme": est.scheme,
        }
        for j, name in enumerate(names):
            rows.append([mu.label, name, repr(float(est.value[j])), repr(float(ci.se[j])),
                         repr(float(ci.lower[j])), repr(float(ci.upper[j]))])
    with open(out / "estimates.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["weight", "parameter", "estimate", "se", "ci_lower", "ci_upper"])
        w.writerows(rows)
    with open(out / "process.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", *names, "objective", "active", "converged", "degenerate"])
        for tau, beta, f in zip(grid.points, fit.process.coefficients, fit.process.fits):
            w.writerow([repr(float(tau)), *(repr(float(b)) for b in beta),
                        repr(f.objective), f.active_count, int(f.converged),
                        int(f.degenerate)])
    fs = fit.first_stage
    report = {
        "command": "fit",
        "data": {"path": str(args.data), "n": d.n, "n_censored": d.n_censored,
                 "censoring_proportion": d.n_censored / d.n,
                 "fingerprint": d.fingerprint()},
        "first_stage": {
            "coefficients": dict(zip((d.names["instrument"],) + d.names["exogenous"],
                                     map(float, fs.delta_hat))),
            "gram_condition": fs.gram_condition,
        },
        "process": {"degenerate_levels": int(fit.process.degenerate.sum()),
                    "unconverged_levels": int(sum(not f.converged for f in fit.process.fits)),
                    "singular_jacobian_levels": int(J.singular.sum())},
        "estimates": results,
        "config": {
            "schema": d.schema().to_dict(),
            "weights": [s for s in (args.weight or DEFAULT_WEIGHTS)],
            "grid": {"tau0": grid.tau0, "m": grid.m, "fingerprint": grid.fingerprint()},
            "cqr_options": vars(opts).copy(),
            "score": {"bandwidth": sc.h_n, "lag_truncation": sc.b_n, "kernel": sc.kernel,
                      "first_stage_sign": sc.first_stage_sign},
            "level": args.level,
            "seed": args.seed,
        },
        "versions": _versions(),
        "runtime_s": time.perf_counter() - t0,
    }
    _write_json(out / "report.json", report)
    if not args.no_plots:
        from .plotting import plot_process
        plot_process(grid.points, fit.process.coefficients, names,
                     {k: fit.estimates[k].value for k in fit.estimates},
                     out / "process.png", fit.process.degenerate)
    print(f"wrote {out / 'report.json'}")
    return 0


def cmd_simulate(args) -> int:
    if args.data:
        raise ConfigError("simulate generates its own data; drop --data")
    if args.seed is None:
        raise ConfigError("simulate requires --seed")
    out = _out_dir(args.out)
    weights = [parse_weight(s) for s in (args.weight or DEFAULT_WEIGHTS)]
    grid = _grid(args.grid, weights)
    ns = [int(v) for v in _floats(args.n, "--n")]
    beta = tuple(_floats(args.beta, "--beta"))
    threads = _threads(args)
    metrics, configs = [], []
    for n in ns:
        cfg = SimConfig(n=n, r=args.r, beta_true=beta, rho_star=args.rho_star,
                        sigma=args.sigma, delta_tilde=args.delta_tilde, seed=args.seed,
                        weights=tuple(weights), grid=grid, mc_draws=args.mc_draws,
                        fixed_z=args.fixed_z, options=_options(args),
                        coverage_level=args.coverage)
        m = run_monte_carlo(cfg, threads=threads)
        log.info("n=%d: %d replicates in %.1fs, %d failures", n, cfg.r, m.runtime,
                 m.failures)
        metrics.append(m)
        configs.append(cfg.to_dict())
    write_metrics_csv(out / "metrics.csv", metrics)
    write_emse_curves_csv(out / "emse_curves.csv", metrics)
    report = {
        "command": "simulate",
        "runs": [{"n": m.n, "failures": m.failures, "runtime_s": m.runtime,
                  "censoring_proportion": m.cp_summary,
                  "L0": dict(zip(m.labels, m.l0.tolist()))} for m in metrics],
        "config": {"runs": configs, "threads": threads},
        "versions": _versions(),
    }
    _write_json(out / "report.json", report)
    if not args.no_plots and metrics:
        from .plotting import plot_emse_curves
        plot_emse_curves(metrics, out / "emse_curves.png", list(COORDS))
    print(f"wrote {out / 'metrics.csv'}")
    return 0


def cmd_bootstrap(args) -> int:
    if args.seed is None:
        raise ConfigError("bootstrap requires --seed")
    if args.scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme '{args.scheme}'; choose from {', '.join(SCHEMES)}")
    out = _out_dir(args.out)
    d = _load(args)
    weights = [parse_weight(s) for s in (args.weight or DEFAULT_WEIGHTS)]
    grid = _grid(args.grid, weights)
    threads = _threads(args)
    resampler = (lambda n, k: np.arange(n)) if args.identity_resample else None
    reports = []
    for mu in weights:
        rep = bootstrap_brmse(d, mu, args.b, args.scheme, args.seed, _options(args),
                              grid=grid, block_len=args.block_len, threads=threads,
                              resampler=resampler)
        reports.append(rep)
    with open(out / "replicates.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["weight", "replicate", *d.param_names])
        for rep in reports:
            for k, row in enumerate(rep.replicate_estimates):
                w.writerow([rep.point.label, k, *(repr(float(v)) for v in row)])
    _write_json(out / "brmse.json", {
        "command": "bootstrap",
        "results": [rep.to_dict() for rep in reports],
        "config": {"data": str(args.data), "weights": list(args.weight or DEFAULT_WEIGHTS),
                   "b": args.b, "scheme": args.scheme, "block_len": args.block_len,
                   "seed": args.seed, "grid": {"tau0": grid.tau0, "m": grid.m},
                   "cqr_options": vars(_options(args)).copy(), "threads": threads},
        "versions": _versions(),
    })
    if not args.no_plots:
        from .plotting import plot_bootstrap
        for i, rep in enumerate(reports):
            plot_bootstrap(rep.replicate_estimates, rep.point.value, d.param_names,
                           out / f"bootstrap_{i}.png")
    print(f"wrote {out / 'brmse.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tobitl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"tobitl {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        if data:
            sp.add_argument("--data", help="CSV file with a header row")
            sp.add_argument("--schema", help="JSON file naming the column roles")
        else:
            sp.add_argument("--data", help=argparse.SUPPRESS)
        sp.add_argument("--weight", action="append",
                        help="kind[:param], repeatable (default trimmed:0.01)")
        sp.add_argument("--grid", help="tau0,m of the midpoint grid (default 0.05,99, "
                        "widened to cover the weights)")
        sp.add_argument("--n-starts", type=int, default=5,
                        help="starting points per censored QR fit")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker processes (default $TOBITL_THREADS or 1)")
        sp.add_argument("--out", default="tobitl_out", help="output directory")
        sp.add_argument("--no-plots", action="store_true", help="skip the figures")
        sp.add_argument("-v", "--verbose", action="count", default=0)

    f = sub.add_parser("fit", help="estimate L-estimates with standard errors")
    common(f)
    f.add_argument("--seed", type=int, default=None, help="seed of the random starts")
    f.add_argument("--bandwidth", type=float, default=None, help="Jacobian bandwidth h_n")
    f.add_argument("--lag-trunc", type=int, default=None, help="HAC lag truncation b_n")
    f.add_argument("--kernel", default="bartlett", help="HAC kernel")
    f.add_argument("--level", type=float, default=0.95, help="confidence level")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="Monte Carlo Ebias and EMSE")
    common(s, data=False)
    s.add_argument("--seed", type=int, default=None, help="master seed (required)")
    s.add_argument("--n", default="50,100,500,1000", help="comma-separated sample sizes")
    s.add_argument("--r", type=int, default=200, help="replications per sample size")
    s.add_argument("--beta", default="1,2,3,0.5", help="b0,b1,b2,rho1")
    s.add_argument("--rho-star", type=float, default=0.5)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--delta-tilde", type=float, default=1.0)
    s.add_argument("--fixed-z", action="store_true",
                   help="draw the instrument once and reuse it in every replicate")
    s.add_argument("--mc-draws", type=int, default=None,
                   help="integrate by Monte Carlo with this many uniform draws")
    s.add_argument("--coverage", type=float, default=None,
                   help="also record coverage of confidence intervals at this level")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bootstrap", help="bootstrap root mean squared error")
    common(b)
    b.add_argument("--seed", type=int, default=None, help="resampling seed (required)")
    b.add_argument("--b", type=int, default=200, help="bootstrap replicates")
    b.add_argument("--scheme", default="iid_pairs", help="iid_pairs or moving_block")
    b.add_argument("--block-len", type=int, default=None)
    b.add_argument("--identity-resample", action="store_true", help=argparse.SUPPRESS)
    b.set_defaults(func=cmd_bootstrap)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TobitLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
