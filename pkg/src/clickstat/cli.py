"""``clickstat`` command line interface.

Subcommands: model, simulate, fit, calibrate-crosstalk, qscan, invert.

Every flag may also be given in a ``--config`` file of ``key = value`` lines;
flags on the command line win. Reports go to ``PREFIX.*`` files when ``-o``
is given and to standard output otherwise. Exit codes: 0 success, 2 invalid
input, 3 numerical or fit failure, 4 I/O failure.
"""
import argparse
import math
import os
import sys
import warnings

import numpy as np

from . import _io
from .click_model import click_distribution
from .crosstalk import click_distribution_with_crosstalk
from .estimators import (
    calibrate_crosstalk,
    extract_chi,
    fitted_q_report,
    naive_photon_inversion,
    q_binomial,
    q_mandel,
)
from .exceptions import (
    DomainError,
    IngestionError,
    InitializationError,
    NumericalError,
    UndefinedQError,
)
from .mc_sim import SimConfig, simulate
from .pulsefit import SHAPE_PARAMS, AuPHistogram, clicks_from_fit, fit_mixture, initialize_fit
from .types import AuPParams, ClickDistribution, ClickSample, DetectorConfig, PhotonSource

EXIT_OK, EXIT_DOMAIN, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
SEED_ENV = "CLICKSTAT_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise DomainError(message)


def _default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None or not raw.strip():
        return 0
    try:
        return int(raw)
    except ValueError:
        raise DomainError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _add_detector(p):
    g = p.add_argument_group("detector")
    g.add_argument("--pixels", type=int, default=100, help="number of pixels N")
    g.add_argument("--eta", type=float, default=1.0, help="detection efficiency")
    g.add_argument("--nu", type=float, default=0.0, help="mean dark counts per window")
    g.add_argument("--chi", type=float, default=0.0, help="crosstalk probability")
    g.add_argument("--preclick", type=float, default=0.0,
                   help="probability that a pixel is dead before the pulse (simulation only)")


def _add_source(p, required=True):
    g = p.add_argument_group("source")
    g.add_argument("--state", choices=("coherent", "thermal", "fock"), required=required)
    g.add_argument("--mean-photons", type=float, help="mean photon number (coherent, thermal)")
    g.add_argument("--n", type=int, help="photon number (fock)")


def _add_seed(p):
    p.add_argument("--seed", type=int, default=None, help=f"RNG seed (default ${SEED_ENV} or 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads")


def _add_output(p):
    p.add_argument("-o", "--output", metavar="PREFIX", help="write PREFIX.* files instead of stdout")


def build_parser():
    parser = _Parser(prog="clickstat", description="Click-counting statistics of pixelated photon detectors.")
    parser.add_argument("--config", help="file of 'key = value' lines supplying flag defaults")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("model", help="analytic click distribution")
    _add_source(p)
    _add_detector(p)
    _add_output(p)

    p = sub.add_parser("simulate", help="Monte Carlo detector simulation")
    _add_source(p)
    _add_detector(p)
    p.add_argument("--trials", type=int, default=100000)
    _add_seed(p)
    g = p.add_argument_group("pulse areas")
    g.add_argument("--aup-delta-x", type=float, help="peak spacing; enables area output")
    g.add_argument("--aup-x0", type=float, default=0.0)
    g.add_argument("--aup-sigma0", type=float, help="default 0.18 * delta_x")
    g.add_argument("--aup-sigma1", type=float, help="default 0.0037 * delta_x")
    _add_output(p)

    p = sub.add_parser("fit", help="decompose a pulse-area sample into click statistics")
    p.add_argument("areas", help="CSV with one pulse area per line")
    p.add_argument("--pixels", type=int, default=100)
    p.add_argument("--bins", type=int, help="number of bins (default Freedman-Diaconis)")
    p.add_argument("--delta-x", type=float, help="known peak spacing")
    p.add_argument("--x0", type=float, default=0.0, help="zero-click area")
    p.add_argument("--fix", default="", help=f"comma separated subset of {','.join(SHAPE_PARAMS)}")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--weighting", choices=("pearson", "neyman", "uniform"), default="pearson")
    p.add_argument("--n-resamples", type=int, default=2000)
    _add_seed(p)
    _add_output(p)

    p = sub.add_parser("calibrate-crosstalk", help="crosstalk from low-intensity clicks")
    p.add_argument("clicks", nargs="?", help="CSV of click numbers, 'k' or 'k,count' rows")
    p.add_argument("--q", type=float, help="zero-intensity Q_B instead of a sample")
    p.add_argument("--pixels", type=int, default=100)
    p.add_argument("--n-resamples", type=int, default=2000)
    _add_seed(p)
    _add_output(p)

    p = sub.add_parser("qscan", help="analytic Q_B and Q_M against intensity")
    _add_detector(p)
    p.add_argument("--mu-min", type=float, default=1e-3, help="smallest mean photons per pixel")
    p.add_argument("--mu-max", type=float, default=1.5, help="largest mean photons per pixel")
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--linear", action="store_true", help="linear instead of log spacing")
    p.add_argument("--scale", type=float, default=1.0,
                   help="intensity scaling factor applied to every grid point")
    _add_output(p)

    p = sub.add_parser("invert", help="naive least-squares click to photon inversion")
    p.add_argument("--clicks", help="click sample CSV; otherwise the source flags are modelled")
    _add_source(p, required=False)
    _add_detector(p)
    p.add_argument("--n-max", type=int, help="photon number truncation (default 2N)")
    p.add_argument("--rtol", type=float, default=1e-8, help="largest acceptable relative residual")
    _add_output(p)
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    command = next((a for a in rest if a in COMMANDS), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    values = _io.read_config(known.config)
    sub = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in sub._actions if a.dest != "help"}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise DomainError(f"{known.config}: unknown keys {', '.join(unknown)} for {command}")
    defaults = {}
    for key, raw in values.items():
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise DomainError(f"{known.config}: {key} expects true or false")
            defaults[key] = raw.lower() in ("true", "1", "yes")
        else:
            defaults[key] = raw
        action.required = False
    sub.set_defaults(**defaults)
    # flags given on the command line override the file
    return parser.parse_args(argv)


def _detector(args, **override):
    return DetectorConfig(
        n_pixels=args.pixels,
        efficiency=args.eta,
        dark_rate=args.nu,
        crosstalk=args.chi,
        preclick_prob=args.preclick,
        **override,
    )


def _source(args):
    if args.state is None:
        raise DomainError("--state is required")
    if args.state == "fock":
        if args.n is None:
            raise DomainError("fock states need --n")
        return PhotonSource.fock(args.n)
    if args.mean_photons is None:
        raise DomainError(f"{args.state} states need --mean-photons")
    return PhotonSource(args.state, args.mean_photons)


def _seed(args):
    return _default_seed() if args.seed is None else args.seed


def _safe(fn, *a):
    try:
        return fn(*a)
    except UndefinedQError:
        return None


def _nan_if_none(x):
    return np.nan if x is None else x


def _versioned(kind, body):
    return {"schema_version": _io.SCHEMA_VERSION, "kind": kind, **body}


def _emit(args, doc, tables=()):
    """Write the JSON report and its tables (``(suffix, text)`` pairs)."""
    if args.output:
        _io.write_text(f"{args.output}.json", _io.dumps(doc))
        for suffix, text in tables:
            _io.write_text(f"{args.output}{suffix}", text)
    else:
        sys.stdout.write(_io.dumps(doc))


def _model_distribution(source, det):
    if det.crosstalk > 0.0:
        return click_distribution_with_crosstalk(source, det)
    return click_distribution(source, det)


def cmd_model(args):
    source, det = _source(args), _detector(args)
    dist = _model_distribution(source, det)
    doc = _versioned("model_report", {
        "source": source.to_dict(),
        "detector": det.to_dict(),
        "probs": dist.probs,
        "mean": dist.mean(),
        "variance": dist.variance(),
        "q_binomial": _safe(q_binomial, dist),
        "q_mandel": _safe(q_mandel, dist),
    })
    table = _io.format_table(("k", "c_k"), (dist.clicks, dist.probs))
    _emit(args, doc, [(".csv", table)])


def cmd_simulate(args):
    source, det = _source(args), _detector(args)
    aup = None
    if args.aup_delta_x is not None:
        dx = args.aup_delta_x
        aup = AuPParams(
            delta_x=dx,
            sigma0=0.18 * dx if args.aup_sigma0 is None else args.aup_sigma0,
            sigma1=0.0037 * dx if args.aup_sigma1 is None else args.aup_sigma1,
            x0=args.aup_x0,
        )
    cfg = SimConfig(det=det, source=source, n_trials=args.trials, seed=_seed(args), aup=aup)
    res = simulate(cfg, n_workers=args.threads)
    sample = ClickSample(res.click_histogram)
    body = res.to_dict()
    body.update(
        source=source.to_dict(),
        detector=det.to_dict(),
        seed=cfg.seed,
        aup=aup.to_dict() if aup else None,
        mean=sample.mean(),
        variance=sample.variance(),
        q_binomial=_safe(q_binomial, sample),
        q_mandel=_safe(q_mandel, sample),
    )
    tables = [("_hist.csv", _io.format_table(("k", "count"), (sample.clicks, res.click_histogram)))]
    if res.areas is not None:
        tables.append(("_areas.csv", _io.format_table(("area",), (res.areas,))))
    _emit(args, _versioned("sim_summary", body), tables)


def cmd_fit(args):
    areas = _io.read_values(args.areas)
    hist = AuPHistogram.from_samples(areas, args.bins)
    fix = [f.strip() for f in args.fix.split(",") if f.strip()]
    init = initialize_fit(hist, args.pixels, args.delta_x, args.x0)
    fit = fit_mixture(hist, init, max_iter=args.max_iter, tol=args.tol, fix=fix,
                      weighting=args.weighting)
    dist = clicks_from_fit(fit)
    try:
        qbody = fitted_q_report(dist, hist.n_samples, args.n_resamples, _seed(args), args.threads).to_dict()
    except UndefinedQError as exc:
        # the fit itself is still worth reporting
        warnings.warn(str(exc), RuntimeWarning)
        qbody = {
            "q_binomial": None, "q_mandel": None, "mean": dist.mean(), "variance": dist.variance(),
            "q_binomial_stderr": None, "q_mandel_stderr": None, "method": "bootstrap",
        }
    qdoc = _versioned("q_report", {**qbody, "n_trials": hist.n_samples})
    doc = _versioned("fit", {
        **fit.to_dict(),
        "n_pixels": fit.n_pixels,
        "n_samples": hist.n_samples,
        "n_bins": int(hist.counts.size),
        "probs": dist.probs,
    })
    table = _io.format_table(("k", "c_k"), (dist.clicks, dist.probs))
    if args.output:
        _io.write_text(f"{args.output}_fit.json", _io.dumps(doc))
        _io.write_text(f"{args.output}_clicks.csv", table)
        _io.write_text(f"{args.output}_q.json", _io.dumps(qdoc))
    else:
        sys.stdout.write(_io.dumps({**doc, "q_report": qdoc}))


def cmd_calibrate_crosstalk(args):
    if (args.clicks is None) == (args.q is None):
        raise DomainError("give either a click sample file or --q")
    n = args.pixels
    if args.q is not None:
        if not math.isfinite(args.q):
            raise DomainError("--q must be finite")
        negative = args.q < 0.0
        if negative:
            warnings.warn("negative Q_B (nonclassical light or a statistical fluctuation); "
                          "reporting chi = 0", RuntimeWarning)
        body = {
            "chi": 0.0 if negative else extract_chi(args.q, n),
            "chi_stderr": None,
            "q_binomial": args.q,
            "q_binomial_stderr": None,
            "n_pixels": n,
            "negative_q": negative,
            "input": "q",
        }
    else:
        sample = ClickSample(_io.read_click_counts(args.clicks, n))
        est = calibrate_crosstalk(sample, n, args.n_resamples, _seed(args), args.threads)
        body = {**est.to_dict(), "n_trials": sample.n_trials, "input": "sample"}
    _emit(args, _versioned("chi_report", body))


def cmd_qscan(args):
    det = _detector(args)
    if not 0.0 < args.mu_min <= args.mu_max:
        raise DomainError("need 0 < --mu-min <= --mu-max")
    if args.points < 1:
        raise DomainError("--points must be positive")
    if not args.scale > 0.0:
        raise DomainError("--scale must be positive")
    space = np.linspace if args.linear else np.geomspace
    grid = space(args.mu_min, args.mu_max, args.points)
    qb = np.full(grid.size, np.nan)
    qm = np.full(grid.size, np.nan)
    for i, x in enumerate(grid):
        dist = _model_distribution(PhotonSource.coherent(args.scale * x * det.n_pixels), det)
        qb[i] = _nan_if_none(_safe(q_binomial, dist))
        qm[i] = _nan_if_none(_safe(q_mandel, dist))
    ref = np.expm1(-args.scale * grid)
    table = _io.format_table(("mu_per_pixel", "q_binomial", "q_mandel", "q_mandel_coherent"),
                             (grid, qb, qm, ref))
    if args.output:
        _io.write_text(f"{args.output}.csv", table)
    else:
        sys.stdout.write(table)


def cmd_invert(args):
    det = _detector(args)
    if args.clicks is not None:
        clicks = ClickSample(_io.read_click_counts(args.clicks, det.n_pixels))
    else:
        clicks = _model_distribution(_source(args), det)
    res = naive_photon_inversion(clicks, det, n_max=args.n_max, rtol=args.rtol)
    doc = _versioned("inversion", {**res.to_dict(), "detector": det.to_dict()})
    table = _io.format_table(("n", "p_n"), (np.arange(res.probs.size), res.probs))
    _emit(args, doc, [(".csv", table)])


COMMANDS = {
    "model": cmd_model,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "calibrate-crosstalk": cmd_calibrate_crosstalk,
    "qscan": cmd_qscan,
    "invert": cmd_invert,
}


def _fail(code, exc):
    msg = " ".join(str(exc).split())
    sys.stderr.write(f"clickstat: error: {msg}\n")
    return code


def main(argv=None):
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            args = _apply_config(parser, sys.argv[1:] if argv is None else argv)
            COMMANDS[args.command](args)
        for w in caught:
            if issubclass(w.category, RuntimeWarning):
                sys.stderr.write(f"clickstat: warning: {w.message}\n")
    except DomainError as exc:
        return _fail(EXIT_DOMAIN, exc)
    except NumericalError as exc:
        hint = ""
        if isinstance(exc, InitializationError):
            hint = " (pass --delta-x to set the peak spacing manually)"
        return _fail(EXIT_NUMERICAL, f"{exc}{hint}")
    except (IngestionError, OSError) as exc:
        return _fail(EXIT_IO, exc)
    except ValueError as exc:
        # sklearn and numpy validators raise plain ValueError
        return _fail(EXIT_DOMAIN, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
