"""Command-line interface: fit, simulate, predict, select, npe, mc-study.

Every subcommand is a pure function of its declared inputs: identical
inputs and seeds give identical outputs. JSON outputs embed the package
version. Exit codes: 0 success, 2 validation error, 3 convergence
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .data import DataError, diagnostics, parse_dataset, serialize_dataset
from .estimator import (
    ConvergenceError,
    FitResult,
    SolverOptions,
    _fit_with_context,
    ghosh_lin_fit,
)
from .likelihood import LikelihoodError
from .links import format_link, parse_link
from .marginal import (
    aalen_johansen_marginal_mean,
    nelson_aalen_pseudo,
    predict_marginal_mean,
)
from .mc import mc_summary_to_csv, run_mc_study
from .simulation import SimulationError, load_config, simulate_dataset
from .variance import VarianceError, VarianceResult, functional_variance, sandwich

GHOSH_LIN_TOL = 1e-4  # cross-solver agreement bound for --ghosh-lin-check


def _parse_times(spec: str) -> np.ndarray:
    try:
        times = np.array([float(v) for v in spec.split(",") if v.strip()])
    except ValueError:
        raise DataError(f"cannot parse time list {spec!r}") from None
    if not len(times):
        raise DataError("empty time list")
    return times


def _parse_grid(spec: str) -> list:
    """Link grid: comma list of link specs; 'family:lo:hi:step' expands."""
    links = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        parts = token.split(":")
        if len(parts) == 4:
            fam = parts[0]
            try:
                lo, hi, step = (float(p) for p in parts[1:])
            except ValueError:
                raise DataError(f"cannot parse grid range {token!r}") from None
            if step <= 0 or hi < lo:
                raise DataError(f"bad grid range {token!r}")
            count = int(round((hi - lo) / step))
            for j in range(count + 1):
                links.append(parse_link(f"{fam}:{lo + j * step:.12g}"))
        else:
            links.append(parse_link(token))
    if not links:
        raise DataError("empty link grid")
    return links


@contextlib.contextmanager
def _open_out(path):
    """Writable text handle; '-' or None means stdout."""
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _solver_options(args) -> SolverOptions:
    opts = SolverOptions()
    if getattr(args, "tol", None) is not None:
        opts.tol = args.tol
    if getattr(args, "max_iter", None) is not None:
        opts.max_iter = args.max_iter
    return opts


def _fit_payload(fit, vr, args) -> dict:
    payload = fit.to_dict()
    payload["version"] = __version__
    if vr is not None:
        payload["se_fisher"] = [float(v) for v in vr.fisher_only_se]
        payload["se_sandwich"] = [float(v) for v in vr.beta_se]
        if not args.no_covariance:
            payload["covariance"] = vr.covariance.tolist()
        if args.var_times:
            rows = []
            for t in _parse_times(args.var_times):
                h2 = (fit.jump_times <= t).astype(float)
                rows.append(
                    {
                        "time": float(t),
                        "estimate": float(fit.cumulative(t)),
                        "se_fisher": float(
                            np.sqrt(max(0.0, functional_variance(vr, None, h2, "fisher")))
                        ),
                        "se_sandwich": float(
                            np.sqrt(max(0.0, functional_variance(vr, None, h2)))
                        ),
                    }
                )
            payload["baseline_variance"] = rows
    return payload


def cmd_fit(args) -> int:
    link = parse_link(args.link)
    ds = parse_dataset(args.data, tau=args.tau)
    if args.diagnostics:
        print(diagnostics(ds), file=sys.stderr)
    fit, wc, gc, eng = _fit_with_context(ds, link, _solver_options(args))
    if not fit.converged:
        print(
            f"error: fit did not converge (max |gradient| = {fit.gradient_norm:.3e})",
            file=sys.stderr,
        )
        return 3
    if args.ghosh_lin_check:
        if not (link.family == "boxcox" and link.param == 1.0):
            raise DataError("--ghosh-lin-check applies to --link boxcox:1 only")
        beta_gl = ghosh_lin_fit(ds, wc)
        gap = float(np.max(np.abs(fit.beta_hat - beta_gl)))
        if gap >= GHOSH_LIN_TOL:
            print(
                f"error: Ghosh-Lin cross-check failed (max |delta beta| = {gap:.3e})",
                file=sys.stderr,
            )
            return 3
        print(f"ghosh-lin check passed (max |delta beta| = {gap:.3e})", file=sys.stderr)
    vr = None if args.no_variance else sandwich(fit, ds, wc, gc, link)
    with _open_out(args.out) as fh:
        json.dump(_fit_payload(fit, vr, args), fh, indent=2)
        fh.write("\n")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n is not None:
        overrides["n"] = args.n
    if overrides:
        cfg = replace(cfg, **overrides)
    ds = simulate_dataset(cfg)
    if args.diagnostics:
        print(diagnostics(ds), file=sys.stderr)
    with _open_out(args.out) as fh:
        fh.write(serialize_dataset(ds))
    return 0


def _load_fit(path):
    """Rebuild (FitResult, VarianceResult | None) from a fit JSON file."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise OSError(f"{path}: not valid JSON ({exc})") from None
    try:
        fit = FitResult(
            beta_hat=np.asarray(raw["beta"], dtype=float),
            jump_times=np.asarray(raw["jump_times"], dtype=float),
            jump_sizes=np.asarray(raw["jump_sizes"], dtype=float),
            loglik=raw["loglik"],
            iterations=raw.get("iterations", 0),
            converged=raw["converged"],
            gradient_norm=raw.get("gradient_norm", float("nan")),
            link=parse_link(raw["link"]),
            n=raw.get("n", 0),
            tau=raw.get("tau"),
        )
    except KeyError as exc:
        raise DataError(f"fit file is missing field {exc}") from None
    vr = None
    if "covariance" in raw:
        cov = np.asarray(raw["covariance"], dtype=float)
        d = len(fit.beta_hat)
        if cov.shape != (d + fit.k, d + fit.k):
            raise DataError("covariance block has the wrong shape")
        vr = VarianceResult(
            fisher=None,
            middle=None,
            covariance=cov,
            beta_se=np.sqrt(np.diag(cov)[:d]),
            fisher_only_se=np.asarray(raw.get("se_fisher", [np.nan] * d)),
            d=d,
        )
    return fit, vr


def _load_profile(spec, d):
    """Covariate profile: inline comma floats or a CSV path (time,z1..zd)."""
    if spec is None:
        return None
    try:
        return np.array([float(v) for v in spec.split(",")])
    except ValueError:
        pass
    rows = []
    with open(spec) as fh:
        header = fh.readline().strip().split(",")
        expected = ["time"] + [f"z{j + 1}" for j in range(d)]
        if [h.strip() for h in header] != expected:
            raise DataError(f"profile header must be {','.join(expected)}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            vals = line.split(",")
            if len(vals) != d + 1:
                raise DataError(f"profile row {lineno}: expected {d + 1} columns")
            rows.append((float(vals[0]), [float(v) for v in vals[1:]]))
    if not rows:
        raise DataError("empty profile file")
    return rows


def cmd_predict(args) -> int:
    fit, vr = _load_fit(args.fit)
    if not fit.converged:
        raise DataError("fit file records a non-converged fit")
    if vr is None:
        raise DataError(
            "fit file carries no covariance block; refit without --no-covariance"
        )
    profile = _load_profile(args.profile, len(fit.beta_hat))
    curve = predict_marginal_mean(
        fit, vr, profile, _parse_times(args.times), log_band=args.log_band
    )
    with _open_out(args.out) as fh:
        fh.write("time,mean,se,lo,hi\n")
        for j in range(len(curve.times)):
            row = (curve.times[j], curve.mean[j], curve.se[j],
                   curve.ci_low[j], curve.ci_high[j])
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return 0


def _select_one(task):
    """One grid fit; returns (link, fit, vr, aic, error_message)."""
    ds, link, opts = task
    try:
        fit, wc, gc, eng = _fit_with_context(ds, link, opts)
        if not fit.converged:
            raise ConvergenceError(
                f"did not converge (max |gradient| = {fit.gradient_norm:.3e})"
            )
        vr = sandwich(fit, ds, wc, gc, link)
        aic = -2.0 * fit.loglik + 2.0 * (ds.d + fit.k)
        return (link, fit, vr, aic, None)
    except (DataError, LikelihoodError, ConvergenceError, VarianceError) as exc:
        return (link, None, None, None, str(exc))


def cmd_select(args) -> int:
    ds = parse_dataset(args.data, tau=args.tau)
    d = ds.d
    grid = _parse_grid(args.grid)
    opts = _solver_options(args)
    tasks = [(ds, link, opts) for link in grid]
    workers = getattr(args, "workers", None)
    if workers is not None and workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_select_one, tasks))
    else:
        results = [_select_one(t) for t in tasks]
    ok = [r for r in results if r[4] is None]
    if not ok:
        print("error: every fit on the grid failed", file=sys.stderr)
        return 3
    best_aic = min(r[3] for r in ok)
    with _open_out(args.out) as fh:
        cols = ["link", "param", "loglik", "aic", "best"]
        cols += [f"beta{j + 1}" for j in range(d)]
        cols += [f"se{j + 1}" for j in range(d)]
        fh.write(",".join(cols + ["error"]) + "\n")
        for link, fit, vr, aic, err in results:
            lead = [format_link(link), repr(link.param)]
            if err is None:
                lead += [repr(fit.loglik), repr(aic), str(int(aic == best_aic))]
                lead += [repr(float(b)) for b in fit.beta_hat]
                lead += [repr(float(s)) for s in vr.beta_se]
                lead += [""]
            else:
                lead += [""] * (3 + 2 * d) + ['"' + err.replace('"', "'") + '"']
            fh.write(",".join(lead) + "\n")
    return 0


def cmd_npe(args) -> int:
    ds = parse_dataset(args.data, tau=args.tau)
    na = nelson_aalen_pseudo(ds)
    aj = aalen_johansen_marginal_mean(ds)
    grid = np.union1d(na.times, aj.times)
    with _open_out(args.out) as fh:
        fh.write("time,lambda_pseudo,lambda_aj\n")
        for t in grid:
            fh.write(f"{float(t)!r},{float(na(t))!r},{float(aj(t))!r}\n")
    return 0


def cmd_mc_study(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    fit_link = parse_link(args.fit_link)
    n = args.n if args.n is not None else cfg.n
    summary = run_mc_study(cfg, fit_link, reps=args.reps, n=n,
                           workers=args.workers)
    with _open_out(args.out) as fh:
        mc_summary_to_csv(summary, fh)
    if summary.failures:
        print(
            f"warning: {summary.failures} of {summary.reps} replicates failed",
            file=sys.stderr,
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="recmean",
        description="Marginal mean of recurrent events with a terminal event: "
        "weighted NPMLE under semiparametric transformation models.",
    )
    p.add_argument("--version", action="version", version=f"recmean {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit the transformation model to a dataset")
    f.add_argument("--data", required=True, help="counting-process CSV")
    f.add_argument("--tau", type=float, required=True, help="end of study window")
    f.add_argument("--link", required=True, help="link spec, e.g. boxcox:1 or log:0.5")
    f.add_argument("--out", default=None, help="output JSON path (default stdout)")
    f.add_argument("--tol", type=float, default=None, help="gradient tolerance")
    f.add_argument("--max-iter", type=int, default=None, help="solver iteration cap")
    f.add_argument("--var-times", default=None,
                   help="comma list of times for baseline variance rows")
    f.add_argument("--no-variance", action="store_true",
                   help="skip variance estimation entirely")
    f.add_argument("--no-covariance", action="store_true",
                   help="omit the full covariance block from the JSON")
    f.add_argument("--ghosh-lin-check", action="store_true",
                   help="cross-check beta against the partial-likelihood solver "
                        "(boxcox:1 only); non-agreement fails the run")
    f.add_argument("--diagnostics", action="store_true",
                   help="print a dataset diagnostics report to stderr")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="draw a dataset from a scenario config")
    s.add_argument("--config", required=True,
                   help="TOML config path or preset name (see README)")
    s.add_argument("--out", default=None, help="output CSV path (default stdout)")
    s.add_argument("--seed", type=int, default=None, help="override the config seed")
    s.add_argument("--n", type=int, default=None, help="override the config sample size")
    s.add_argument("--diagnostics", action="store_true",
                   help="print a dataset diagnostics report to stderr")
    s.set_defaults(func=cmd_simulate)

    pr = sub.add_parser("predict", help="marginal mean curve from a fit JSON")
    pr.add_argument("--fit", required=True, help="fit JSON produced by `recmean fit`")
    pr.add_argument("--times", required=True, help="comma list of prediction times")
    pr.add_argument("--profile", default=None,
                    help="covariate profile: comma floats or CSV path (time,z1..zd); "
                         "omitted means all-zero covariates")
    pr.add_argument("--log-band", action="store_true",
                    help="log-scale Wald bands (positive lower limit)")
    pr.add_argument("--out", default=None, help="output CSV path (default stdout)")
    pr.set_defaults(func=cmd_predict)

    se = sub.add_parser("select", help="fit a grid of links and rank by AIC")
    se.add_argument("--data", required=True, help="counting-process CSV")
    se.add_argument("--tau", type=float, required=True, help="end of study window")
    se.add_argument("--grid", required=True,
                    help="comma list of link specs; family:lo:hi:step expands")
    se.add_argument("--out", default=None, help="output CSV path (default stdout)")
    se.add_argument("--tol", type=float, default=None, help="gradient tolerance")
    se.add_argument("--max-iter", type=int, default=None, help="solver iteration cap")
    se.add_argument("--workers", type=int, default=None,
                    help="fit the grid on this many worker processes")
    se.set_defaults(func=cmd_select)

    np_ = sub.add_parser("npe", help="nonparametric estimates: pseudo-risk "
                                     "Nelson-Aalen and Aalen-Johansen mean")
    np_.add_argument("--data", required=True, help="counting-process CSV")
    np_.add_argument("--tau", type=float, required=True, help="end of study window")
    np_.add_argument("--out", default=None, help="output CSV path (default stdout)")
    np_.set_defaults(func=cmd_npe)

    mc = sub.add_parser("mc-study", help="Monte Carlo bias/SE/coverage study")
    mc.add_argument("--config", required=True,
                    help="TOML config path or preset name")
    mc.add_argument("--fit-link", required=True, help="link used for fitting")
    mc.add_argument("--reps", type=int, required=True, help="replicate count")
    mc.add_argument("--n", type=int, default=None,
                    help="per-replicate sample size (default: config n)")
    mc.add_argument("--seed", type=int, default=None, help="override the config seed")
    mc.add_argument("--workers", type=int, default=None,
                    help="run replicates on this many worker processes")
    mc.add_argument("--out", default=None, help="output CSV path (default stdout)")
    mc.set_defaults(func=cmd_mc_study)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataError, SimulationError, LikelihoodError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, VarianceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
