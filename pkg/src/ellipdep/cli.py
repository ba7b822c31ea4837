"""Command-line interface: one subcommand per pipeline stage.

Outputs are written atomically; a failed run leaves no partial file behind.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import tempfile

import numpy as np
import pandas as pd

from . import estimators as est
from . import models
from . import panel as P
from . import samplers
from .errors import DegenerateInputError, DomainError, NumericalError, ParseError
from .models import Family, ModelSpec

__all__ = ["main", "build_parser", "parse_model_label", "parse_grid"]

FLOAT_FORMAT = "%.12g"
OBSERVABLES = ("zeta1", "zeta2", "cstar", "rho_sign", "tauUU_exact", "tauUU_expansion", "tauUU_asymptote",
               "beta", "delta_diag", "delta_anti")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ parsing helpers

def parse_grid(text):
    """``start:stop:step`` (inclusive of ``stop`` up to rounding) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid {text!r} must be start:stop:step")
        a, b, h = (float(v) for v in parts)
        if h <= 0 or b < a:
            raise UsageError(f"grid {text!r} needs step > 0 and stop >= start")
        n = int(math.floor((b - a) / h + 1e-9)) + 1
        return np.round(a + h * np.arange(n), 12)
    return np.array([float(v) for v in text.split(",") if v.strip()])


_LABEL_RE = re.compile(r"^(student)_nu([0-9.eE+-]+|inf)$|^(frank|gumbel)_theta([0-9.eE+-]+)$|"
                       r"^(lognormal)_s([0-9.eE+-]+)$|^(gaussian)$")


def parse_model_label(label):
    """Inverse of ``ModelSpec.label`` for the overlay families, e.g. ``student_nu5``."""
    m = _LABEL_RE.match(label.strip())
    if not m:
        raise UsageError(f"unrecognized model label {label!r}")
    if m.group(1):
        return ModelSpec.student(float(m.group(2)))
    if m.group(3):
        return ModelSpec(Family(m.group(3)), theta=float(m.group(4)))
    if m.group(5):
        return ModelSpec.lognormal(float(m.group(6)))
    return ModelSpec.gaussian()


def _model_from_args(args):
    fam = args.model
    try:
        if fam == "gaussian":
            return ModelSpec.gaussian()
        if fam == "student":
            return ModelSpec.student(_need(args, "nu"))
        if fam == "lognormal":
            return ModelSpec.lognormal(_need(args, "s"))
        if fam == "pseudo":
            return ModelSpec.pseudo(_need(args, "s"), _need(args, "c"))
        if fam in ("frank", "gumbel"):
            return ModelSpec(Family(fam), theta=_need(args, "theta"))
        if fam == "toy":
            return ModelSpec.toy(_need(args, "kappa1"), _need(args, "kappa2"))
    except DomainError as exc:
        raise UsageError(str(exc)) from None
    raise UsageError(f"unknown model {fam!r}")


def _need(args, name):
    v = getattr(args, name)
    if v is None:
        raise UsageError(f"--model {args.model} requires --{name.replace('_', '-')}")
    return v


# ------------------------------------------------------------------ output

def _atomic_write(path, writer):
    if path in (None, "-"):
        writer(sys.stdout)
        sys.stdout.flush()
        return
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _round12(v):
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(v):
            return None
        return float(FLOAT_FORMAT % v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def _emit_frame(df: pd.DataFrame, path, fmt):
    if fmt == "json":
        records = [{k: _round12(v) for k, v in row.items()} for row in df.to_dict(orient="records")]
        _atomic_write(path, lambda fh: fh.write(json.dumps(records, indent=1) + "\n"))
    else:
        _atomic_write(path, lambda fh: df.to_csv(fh, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))


def _emit_json(obj, path):
    _atomic_write(path, lambda fh: fh.write(json.dumps(obj, indent=1, default=_round12) + "\n"))


# ------------------------------------------------------------------ commands

def _tail_capable(model):
    return model.family in (Family.GAUSSIAN, Family.STUDENT, Family.FRANK, Family.GUMBEL)


def _predict_value(model, obs, rho, p):
    fam = model.family
    if obs in ("zeta1", "zeta2", "cstar", "rho_sign"):
        if fam is Family.PSEUDO:
            pr = models.pseudo_elliptical_predictions(rho, model.c, model.s)
            if obs == "rho_sign":
                return 2.0 / math.pi * math.asin(rho)
            return getattr(pr, obs)
        if fam is Family.TOY:
            if obs != "cstar":
                raise UsageError(f"observable {obs} is not available for the toy model")
            return models.toy_cstar(model.kappa1, model.kappa2)
        if not model.is_elliptical:
            raise UsageError(f"observable {obs} needs an elliptical or pseudo-elliptical model")
        val = getattr(models.elliptical_predictions(model, rho), obs)
        if val is None:
            raise UsageError(f"{obs} is undefined for {model.label} (fourth moment diverges)")
        return val
    if obs in ("tauUU_expansion", "tauUU_asymptote", "beta"):
        if fam is not Family.STUDENT:
            raise UsageError(f"observable {obs} is defined for the Student model only")
        if obs == "beta":
            return models.student_tail_beta(model.nu, rho)
        if obs == "tauUU_asymptote":
            return models.student_tail_asymptote(model.nu, rho)
        return models.student_tail_expansion(model.nu, rho, p)
    if obs == "tauUU_exact":
        if not _tail_capable(model):
            raise UsageError(f"exact tail is not available for {model.family.value}")
        return models.model_tail_exact(model, rho, p, "UU")
    if obs in ("delta_diag", "delta_anti"):
        if not _tail_capable(model):
            raise UsageError(f"copula profile is not available for {model.family.value}")
        dd, da = models.model_delta_profile(model, rho, [p])
        return float(dd[0] if obs == "delta_diag" else da[0])
    raise UsageError(f"unknown observable {obs!r}")


def cmd_predict(args):
    model = _model_from_args(args)
    obs = []
    for item in args.observable:
        obs += [o.strip() for o in item.split(",") if o.strip()]
    for o in obs:
        if o not in OBSERVABLES:
            raise UsageError(f"unknown observable {o!r}; choose from {', '.join(OBSERVABLES)}")
    if args.rho_grid is not None:
        rhos = parse_grid(args.rho_grid)
    elif args.rho is not None:
        rhos = np.array([args.rho])
    else:
        raise UsageError("predict needs --rho or --rho-grid")
    ps = parse_grid(args.p_grid) if args.p_grid is not None else np.array([args.p_star])
    if np.any(np.abs(rhos) > 1):
        raise UsageError("correlations must lie in [-1, 1]")
    if np.any((ps <= 0) | (ps >= 1)):
        raise UsageError("tail levels must lie in (0, 1)")
    rows = []
    for r in rhos:
        for p in ps:
            rows.append({"rho": float(r), "p": float(p),
                         **{o: _predict_value(model, o, float(r), float(p)) for o in obs}})
    _emit_frame(pd.DataFrame(rows, columns=["rho", "p"] + obs), args.out, args.format)


def _corr_from_args(args, n):
    if args.corr is not None:
        c = np.loadtxt(args.corr, delimiter=",", ndmin=2)
        if c.shape != (n, n):
            raise UsageError(f"--corr matrix is {c.shape}, expected ({n}, {n})")
        return samplers.CorrelationMatrix(c)
    if args.loadings is not None:
        b = np.array([float(v) for v in args.loadings.split(",")])
        if b.size != n:
            raise UsageError(f"--loadings has {b.size} entries, expected {n}")
        return samplers.CorrelationMatrix.one_factor(b)
    return samplers.CorrelationMatrix.equicorrelation(n, args.rho)


def cmd_simulate(args):
    model = _model_from_args(args)
    seed = samplers.SeedSpec(args.seed, args.stream)
    if model.family is Family.TOY:
        if args.n % 2:
            raise UsageError("the toy model needs an even --n (assets come in +/- pairs)")
        pn = samplers.sample_toy_panel(args.n // 2, model.kappa1, model.kappa2, args.t, seed,
                                       P.resolve_threads(args.threads))
    elif model.family in (Family.FRANK, Family.GUMBEL):
        raise UsageError("Archimedean models produce uniform pairs, not panels")
    else:
        pn = samplers.sample_panel(_corr_from_args(args, args.n), model, args.t, seed,
                                   P.resolve_threads(args.threads))
    _atomic_write(args.out, lambda fh: P.write_panel(pn, fh))


def _load(args):
    return P.load_panel(args.input, min_overlap=args.min_overlap)


def cmd_pairscan(args):
    df = P.pairscan(_load(args), args.p_star, args.min_overlap, args.threads)
    _emit_frame(df, args.out, args.format)


def _read_table(path):
    df = pd.read_csv(path if path != "-" else sys.stdin)
    missing = [c for c in ("rho",) if c not in df.columns]
    if missing:
        raise ParseError(f"pairscan table is missing column {missing[0]!r}")
    return df


def cmd_bins(args):
    df = _read_table(args.input)
    obs = None
    if args.observables:
        obs = [o.strip() for o in args.observables.split(",") if o.strip()]
        for o in obs:
            if o not in df.columns:
                raise ParseError(f"pairscan table is missing column {o!r}")
    curve = P.bin_by_rho(df, args.n_bins, obs)
    _emit_frame(curve.to_frame(obs), args.out, args.format)


def cmd_profile(args):
    grid = parse_grid(args.grid) if args.grid else est.DEFAULT_GRID
    profiles = P.profile_by_bin(_load(args), args.n_bins, grid, args.min_overlap, args.rho_ref, args.threads)
    rows = []
    for bp in profiles:
        for k, p in enumerate(bp.p_grid):
            rows.append((bp.bin_index, bp.rho_mean, p, bp.delta_diag_mean[k], bp.delta_diag_sd[k],
                         bp.delta_anti_mean[k], bp.delta_anti_sd[k], bp.count))
    cols = ["bin_index", "rho_mean", "p", "delta_diag_mean", "delta_diag_sd", "delta_anti_mean",
            "delta_anti_sd", "count"]
    _emit_frame(pd.DataFrame(rows, columns=cols), args.out, args.format)


def cmd_rolling(args):
    overlays = [parse_model_label(s) for s in args.overlay.split(",") if s.strip()] if args.overlay else []
    series = P.rolling_tail(_load(args), args.window, args.step, args.p_star, overlays,
                            args.window_overlap, args.threads)
    _emit_frame(series.to_frame(), args.out, args.format)


def cmd_ewma(args):
    q = [float(v) for v in args.quantiles.split(",")]
    series = P.ewma_corr_quantiles(_load(args), args.timescale, q)
    _emit_frame(series.to_frame(), args.out, args.format)


def cmd_elliptest(args):
    model = _model_from_args(args)
    rep = P.elliptest(_load(args), model, args.n_bins, samplers.SeedSpec(args.seed, args.stream),
                      args.p_star, args.min_overlap, args.threads)
    if args.format == "json":
        ratio = rep.comparison["dispersion_ratio"].to_numpy()
        _emit_json({
            "null_model": model.label,
            "n_pairs": int(len(rep.empirical_table)),
            "repair": {"min_eigenvalue": rep.repair.min_eigenvalue, "n_clipped": rep.repair.n_clipped,
                       "max_change": rep.repair.max_change},
            "fraction_bins_null_consistent": rep.fraction_null_consistent("empirical"),
            "fraction_bins_null_consistent_simulated": rep.fraction_null_consistent("simulated"),
            "dispersion_ratio_min": float(np.nanmin(ratio)),
            "dispersion_ratio_max": float(np.nanmax(ratio)),
            "bins": [{k: _round12(v) for k, v in r.items()} for r in rep.comparison.to_dict(orient="records")],
        }, args.out)
    else:
        _emit_frame(rep.comparison, args.out, "csv")


# ------------------------------------------------------------------ parser

def _common(sp, seed=True):
    sp.add_argument("--seed", type=int, default=0, help="root seed (unsigned 64-bit)")
    sp.add_argument("--stream", type=int, default=0, help="stream id under the root seed")
    sp.add_argument("--threads", type=int, default=1, help="worker threads (0 = auto)")
    sp.add_argument("--min-overlap", type=int, default=P.DEFAULT_MIN_OVERLAP,
                    help="minimum jointly observed dates per pair and per asset")
    sp.add_argument("--p-star", type=float, default=est.DEFAULT_P_STAR, help="tail level p")
    sp.add_argument("--format", choices=("csv", "json"), default="csv", help="output format")
    sp.add_argument("--out", default="-", help="output path ('-' = stdout)")


def _model_flags(sp, default=None):
    sp.add_argument("--model", choices=("gaussian", "student", "lognormal", "pseudo", "frank", "gumbel", "toy"),
                    default=default, required=default is None, help="model family")
    sp.add_argument("--nu", type=float, help="Student degrees of freedom")
    sp.add_argument("--s", type=float, help="log-volatility standard deviation")
    sp.add_argument("--c", type=float, help="log-volatility correlation (pseudo-elliptical)")
    sp.add_argument("--theta", type=float, help="Archimedean parameter (Gumbel tail 2-2^theta)")
    sp.add_argument("--kappa1", type=float, help="toy common-factor excess kurtosis")
    sp.add_argument("--kappa2", type=float, help="toy spread-factor excess kurtosis")


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    ap = argparse.ArgumentParser(prog="ellipdep", description="Dependence diagnostics for return panels.",
                                 formatter_class=fmt)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("predict", help="analytic curves for a model", formatter_class=fmt)
    _model_flags(sp)
    sp.add_argument("--observable", action="append", required=True,
                    help=f"observable(s), comma separated: {', '.join(OBSERVABLES)}")
    sp.add_argument("--rho", type=float, help="single correlation")
    sp.add_argument("--rho-grid", help="start:stop:step or comma list of correlations")
    sp.add_argument("--p-grid", help="start:stop:step or comma list of tail levels (default: --p-star)")
    _common(sp)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("simulate", help="simulate a return panel", formatter_class=fmt)
    _model_flags(sp)
    sp.add_argument("--n", type=int, required=True, help="number of assets")
    sp.add_argument("--t", type=int, required=True, help="number of dates")
    sp.add_argument("--rho", type=float, default=0.0, help="equicorrelation of the residuals")
    sp.add_argument("--loadings", help="comma-separated one-factor loadings (overrides --rho)")
    sp.add_argument("--corr", help="CSV correlation matrix (overrides --rho and --loadings)")
    _common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("pairscan", help="pairwise observables of a panel", formatter_class=fmt)
    sp.add_argument("--in", dest="input", required=True, help="panel CSV")
    _common(sp)
    sp.set_defaults(func=cmd_pairscan)

    sp = sub.add_parser("bins", help="equal-count correlation bins of a pairscan table", formatter_class=fmt)
    sp.add_argument("--in", dest="input", required=True, help="pairscan CSV")
    sp.add_argument("--n-bins", type=int, default=P.DEFAULT_N_BINS, help="number of bins")
    sp.add_argument("--observables", help="comma-separated columns to summarize (default: all)")
    _common(sp)
    sp.set_defaults(func=cmd_bins)

    sp = sub.add_parser("profile", help="bin-averaged copula profiles", formatter_class=fmt)
    sp.add_argument("--in", dest="input", required=True, help="panel CSV")
    sp.add_argument("--n-bins", type=int, default=P.DEFAULT_N_BINS, help="number of bins")
    sp.add_argument("--grid", help="tail-level grid (default 0.01:0.99:0.01)")
    sp.add_argument("--rho-ref", choices=("pearson", "kendall"), default="pearson",
                    help="correlation used in the Gaussian reference copula")
    _common(sp)
    sp.set_defaults(func=cmd_profile)

    sp = sub.add_parser("rolling", help="sliding-window tail dependence", formatter_class=fmt)
    sp.add_argument("--in", dest="input", required=True, help="panel CSV")
    sp.add_argument("--window", type=int, default=250, help="window length in rows")
    sp.add_argument("--step", type=int, default=25, help="window step in rows")
    sp.add_argument("--window-overlap", type=int, default=None,
                    help="joint observations a pair needs inside a window (default 80%% of the window)")
    sp.add_argument("--overlay", default="", help="comma-separated model labels, e.g. student_nu5,gaussian")
    _common(sp)
    sp.set_defaults(func=cmd_rolling)

    sp = sub.add_parser("ewma", help="quantiles of EWMA pairwise correlations", formatter_class=fmt)
    sp.add_argument("--in", dest="input", required=True, help="panel CSV")
    sp.add_argument("--timescale", type=float, default=125, help="EWMA e-folding time in days")
    sp.add_argument("--quantiles", default=",".join(f"{q:g}" for q in P.DEFAULT_QUANTILES),
                    help="cross-sectional quantiles")
    _common(sp)
    sp.set_defaults(func=cmd_ewma)

    sp = sub.add_parser("elliptest", help="ellipticity test against a simulated null", formatter_class=fmt)
    sp.add_argument("--in", dest="input", required=True, help="panel CSV")
    _model_flags(sp, default="student")
    sp.add_argument("--n-bins", type=int, default=P.DEFAULT_N_BINS, help="number of bins")
    _common(sp)
    sp.set_defaults(func=cmd_elliptest, nu=5.0)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not 0 <= args.seed < 2 ** 64:
        parser.error("--seed must be an unsigned 64-bit integer")
    try:
        args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except BrokenPipeError:
        # reader closed early (e.g. `| head`); silence the flush at interpreter exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (DomainError, DegenerateInputError, NumericalError, ParseError, OSError) as exc:
        print(f"ellipdep {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
