"""Empirical pipeline over a panel of returns.

Panel ingestion, pair alignment, the parallel pairwise scan, equal-count
binning in correlation, time-resolved analyses and the ellipticity test
against a simulated elliptical panel with the same correlation matrix.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import pandas as pd

from . import estimators as est
from . import models
from . import samplers
from .containers import PairSample, ReturnPanel
from .errors import DegenerateInputError, DomainError, NumericalError, ParseError
from .models import ModelSpec

logger = logging.getLogger(__name__)

__all__ = [
    "ReturnPanel",
    "BinnedCurve",
    "BinProfile",
    "RollingSeries",
    "EllipTestReport",
    "PAIRSCAN_COLUMNS",
    "DEFAULT_MIN_OVERLAP",
    "DEFAULT_QUANTILES",
    "load_panel",
    "write_panel",
    "align_pair",
    "pairscan",
    "bin_by_rho",
    "profile_by_bin",
    "ewma_corr_quantiles",
    "rolling_tail",
    "empirical_correlation_matrix",
    "repair_correlation",
    "elliptest",
    "resolve_threads",
]

DEFAULT_MIN_OVERLAP = 250
DEFAULT_N_BINS = 10
DEFAULT_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
PAIRSCAN_COLUMNS = (
    "asset_i", "asset_j", "t_overlap", "rho", "rho_sign", "zeta1", "zeta2", "kendall",
    "tau_uu", "tau_ll", "tau_ul", "tau_lu", "cstar", "residual", "z",
)
OBSERVABLES = PAIRSCAN_COLUMNS[3:]
_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


def resolve_threads(threads):
    """``0`` means one worker per available CPU."""
    if threads is None or threads == 0:
        return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
    if threads < 0:
        raise DomainError("threads must be >= 0")
    return int(threads)


# ------------------------------------------------------------------ I/O

def _parse_date(text, line):
    if not _DATE_RE.match(text):
        raise ParseError(f"bad date {text!r} (expected YYYY-MM-DD)", line)
    try:
        return np.datetime64(text, "D")
    except ValueError:
        raise ParseError(f"bad date {text!r}", line) from None


def load_panel(source, min_overlap=DEFAULT_MIN_OVERLAP) -> ReturnPanel:
    """Read the panel CSV (``date,ASSET1,...``; empty cell = missing).

    ``source`` is a path or a text stream. Assets with fewer than
    ``min_overlap`` observations are dropped and listed in ``panel.dropped``.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return load_panel(fh, min_overlap)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty panel file", 1) from None
    if not header or header[0].strip() != "date":
        raise ParseError("header must start with 'date'", 1)
    assets = [h.strip() for h in header[1:]]
    if not assets or any(a == "" for a in assets):
        raise ParseError("header must name at least one asset and no empty names", 1)
    if len(set(assets)) != len(assets):
        raise ParseError("duplicate asset names in header", 1)
    dates, rows = [], []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line)
        d = _parse_date(row[0].strip(), line)
        if dates and d <= dates[-1]:
            kind = "duplicate" if d == dates[-1] else "unsorted"
            raise ParseError(f"{kind} date {row[0]}", line)
        vals = []
        for cell in row[1:]:
            cell = cell.strip()
            if cell == "":
                vals.append(math.nan)
                continue
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric cell {cell!r}", line) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite cell {cell!r}", line)
            vals.append(v)
        dates.append(d)
        rows.append(vals)
    values = np.array(rows, dtype=float).reshape(len(rows), len(assets))
    counts = np.sum(~np.isnan(values), axis=0)
    keep = counts >= min_overlap
    dropped = tuple(a for a, k in zip(assets, keep) if not k)
    if dropped:
        logger.info("dropped %d assets below %d observations: %s", len(dropped), min_overlap, ", ".join(dropped))
    return ReturnPanel(np.array(dates, dtype="datetime64[D]"), tuple(a for a, k in zip(assets, keep) if k),
                       values[:, keep], dropped=dropped)


def write_panel(panel: ReturnPanel, dest):
    """Write the panel CSV with shortest round-trip float formatting."""
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            write_panel(panel, fh)
        return
    dest.write(",".join(("date",) + panel.assets) + "\n")
    for d, row in zip(panel.dates.astype(str), panel.returns):
        dest.write(d + "," + ",".join("" if math.isnan(v) else repr(float(v)) for v in row) + "\n")


def align_pair(panel: ReturnPanel, i, j, min_overlap=DEFAULT_MIN_OVERLAP):
    """Jointly observed rows of assets ``i`` and ``j``; ``None`` signals a skipped pair."""
    x = panel.column(i)
    y = panel.column(j)
    ok = ~(np.isnan(x) | np.isnan(y))
    n = int(np.count_nonzero(ok))
    if n < max(min_overlap, 2):
        return None
    return PairSample(x[ok], y[ok])


# ------------------------------------------------------------------ pairscan

def _sorted_pairs(panel):
    names = sorted(panel.assets)
    return list(combinations(names, 2))


def _run_ordered(fn, items, threads):
    """Map ``fn`` over ``items`` and return results in input order."""
    threads = resolve_threads(threads)
    if threads == 1 or len(items) < 2:
        return [fn(it) for it in items]
    n_chunks = min(len(items), 4 * threads)
    chunks = np.array_split(np.arange(len(items)), n_chunks)
    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(lambda idx: [fn(items[k]) for k in idx], chunks))
    return [r for part in parts for r in part]


class _RankCache:
    """Ranks of fully observed columns, reused across every pair they enter."""

    def __init__(self, panel):
        self.panel = panel
        self.full = ~np.any(np.isnan(panel.returns), axis=0)
        self._ranks = {}

    def ranks(self, asset):
        k = self.panel.index(asset)
        if not self.full[k]:
            return None
        if k not in self._ranks:
            self._ranks[k] = est.rank_transform(self.panel.returns[:, k])
        return self._ranks[k]


def pairscan(panel: ReturnPanel, p_star=est.DEFAULT_P_STAR, min_overlap=DEFAULT_MIN_OVERLAP, threads=1):
    """One row of observables per unordered pair, lexicographic in asset ids.

    Pairs with too little overlap or degenerate data are skipped and listed in
    ``df.attrs["skipped"]``. The result does not depend on ``threads``.
    """
    if panel.N < 2:
        raise DomainError("pairscan needs at least two assets")
    pairs = _sorted_pairs(panel)
    cache = _RankCache(panel)
    for a in panel.assets:
        try:
            cache.ranks(a)
        except DegenerateInputError:
            pass

    def one(pair_ids):
        a, b = pair_ids
        pair = align_pair(panel, a, b, min_overlap)
        if pair is None:
            return pair_ids, None, "insufficient overlap"
        ra = cache._ranks.get(panel.index(a))
        rb = cache._ranks.get(panel.index(b))
        try:
            up = est.UniformPair(ra, rb) if ra is not None and rb is not None else est.to_uniform(pair)
            obs = est.pair_observables(pair, p_star, up)
        except DegenerateInputError as exc:
            return pair_ids, None, str(exc)
        return pair_ids, obs, None

    results = _run_ordered(one, pairs, threads)
    records, skipped = [], []
    for (a, b), obs, why in results:
        if obs is None:
            skipped.append((a, b, why))
            continue
        records.append((a, b, obs.T_overlap, obs.rho, obs.rho_sign, obs.zeta1, obs.zeta2, obs.kendall,
                        obs.tau_uu, obs.tau_ll, obs.tau_ul, obs.tau_lu, obs.cstar, obs.residual, obs.z))
    df = pd.DataFrame.from_records(records, columns=list(PAIRSCAN_COLUMNS))
    df = df.astype({"t_overlap": "int64", **{c: "float64" for c in OBSERVABLES}})
    df.attrs["skipped"] = skipped
    return df


# ------------------------------------------------------------------ binning

@dataclass(frozen=True)
class BinnedCurve:
    """Per-bin summaries keyed by observable name; ``sd`` is the member dispersion."""

    bin_edges: np.ndarray
    rho_lo: np.ndarray
    rho_hi: np.ndarray
    rho_mean: np.ndarray
    count: np.ndarray
    mean: dict
    sd: dict
    n: dict
    members: tuple = field(default=(), repr=False)

    @property
    def n_bins(self):
        return self.count.size

    def se(self, observable):
        """Dispersion-based standard error ``sd / sqrt(n)`` of each bin mean."""
        return self.sd[observable] / np.sqrt(self.n[observable])

    def to_frame(self, observables=None):
        observables = list(self.mean) if observables is None else list(observables)
        cols = {"bin_index": np.arange(self.n_bins), "rho_lo": self.rho_lo, "rho_hi": self.rho_hi,
                "rho_mean": self.rho_mean, "count": self.count}
        for o in observables:
            cols[f"{o}_mean"] = self.mean[o]
            cols[f"{o}_sd"] = self.sd[o]
        return pd.DataFrame(cols)


def _order_keys(table):
    keys = [table[c].to_numpy() for c in ("asset_j", "asset_i") if c in table]
    rho = table["rho"].to_numpy(dtype=float)
    return np.lexsort(tuple(keys) + (rho,)) if keys else np.argsort(rho, kind="stable")


def _split_members(table, n_bins, edges):
    rho = table["rho"].to_numpy(dtype=float)
    if edges is None:
        order = _order_keys(table)
        return np.array_split(order, n_bins)
    edges = np.asarray(edges, dtype=float)
    idx = np.clip(np.searchsorted(edges[1:-1], rho, side="right"), 0, edges.size - 2)
    return [np.flatnonzero(idx == k) for k in range(edges.size - 1)]


def bin_by_rho(table, n_bins=DEFAULT_N_BINS, observables=None, edges=None) -> BinnedCurve:
    """Equal-count bins over ``rho`` with mean, 1 s.d. dispersion and count.

    With ``edges`` the rows are instead assigned to the given intervals, so a
    second table can be summarized on the bins of a first.
    """
    if len(table) == 0:
        raise DomainError("cannot bin an empty table")
    if edges is None and n_bins > len(table):
        raise DomainError(f"n_bins={n_bins} exceeds the {len(table)} available pairs")
    if n_bins < 1:
        raise DomainError("n_bins must be positive")
    if observables is None:
        observables = [c for c in OBSERVABLES if c in table and c != "rho"]
    rho = table["rho"].to_numpy(dtype=float)
    members = _split_members(table, n_bins, edges)
    nb = len(members)
    lo = np.full(nb, math.nan)
    hi = np.full(nb, math.nan)
    rmean = np.full(nb, math.nan)
    count = np.array([m.size for m in members], dtype=np.int64)
    mean = {o: np.full(nb, math.nan) for o in observables}
    sd = {o: np.full(nb, math.nan) for o in observables}
    n = {o: np.zeros(nb, dtype=np.int64) for o in observables}
    for k, m in enumerate(members):
        if m.size == 0:
            continue
        r = rho[m]
        lo[k], hi[k], rmean[k] = r.min(), r.max(), r.mean()
        for o in observables:
            vals = table[o].to_numpy(dtype=float)[m]
            vals = vals[~np.isnan(vals)]
            n[o][k] = vals.size
            if vals.size:
                mean[o][k] = vals.mean()
            if vals.size > 1:
                sd[o][k] = vals.std(ddof=1)
    if edges is None:
        edges = np.array([rho[m].min() for m in members] + [rho.max()])
    return BinnedCurve(np.asarray(edges, dtype=float), lo, hi, rmean, count, mean, sd, n, tuple(members))


# ------------------------------------------------------------------ copula profiles

@dataclass(frozen=True)
class BinProfile:
    bin_index: int
    rho_mean: float
    count: int
    p_grid: np.ndarray
    delta_diag_mean: np.ndarray
    delta_diag_sd: np.ndarray
    delta_anti_mean: np.ndarray
    delta_anti_sd: np.ndarray


def profile_by_bin(panel: ReturnPanel, n_bins=DEFAULT_N_BINS, grid=None, min_overlap=DEFAULT_MIN_OVERLAP,
                   rho_ref_policy="pearson", threads=1):
    """Bin-averaged diagonal and anti-diagonal copula gaps with member dispersion."""
    grid = est.DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    pairs = _sorted_pairs(panel)
    cache = _RankCache(panel)

    def one(pair_ids):
        a, b = pair_ids
        pair = align_pair(panel, a, b, min_overlap)
        if pair is None:
            return None
        try:
            ra, rb = cache.ranks(a), cache.ranks(b)
            up = est.UniformPair(ra, rb) if ra is not None and rb is not None else est.to_uniform(pair)
            rho = est.corr_coeffs(pair).rho
            prof = est.copula_profile(up, grid, rho_ref_policy, rho)
        except DegenerateInputError:
            return None
        return a, b, rho, prof.delta_diag, prof.delta_anti

    results = [r for r in _run_ordered(one, pairs, threads) if r is not None]
    if not results:
        raise DomainError("no pair has sufficient overlap for a profile")
    table = pd.DataFrame({"asset_i": [r[0] for r in results], "asset_j": [r[1] for r in results],
                          "rho": [r[2] for r in results]})
    if n_bins > len(table):
        raise DomainError(f"n_bins={n_bins} exceeds the {len(table)} available pairs")
    dd = np.array([r[3] for r in results])
    da = np.array([r[4] for r in results])
    out = []
    for k, m in enumerate(np.array_split(_order_keys(table), n_bins)):
        ddof = 1 if m.size > 1 else 0
        out.append(BinProfile(k, float(table["rho"].to_numpy()[m].mean()), int(m.size), grid.copy(),
                              dd[m].mean(axis=0), dd[m].std(axis=0, ddof=ddof),
                              da[m].mean(axis=0), da[m].std(axis=0, ddof=ddof)))
    return out


# ------------------------------------------------------------------ time-resolved

@dataclass(frozen=True)
class RollingSeries:
    """Per-window statistics; ``values`` has one column per entry of ``stats``."""

    stamps: np.ndarray
    stats: tuple
    values: np.ndarray
    overlays: dict = field(default_factory=dict)

    def to_frame(self):
        """Long format ``window_end_date,stat,value`` plus overlay columns."""
        n_w, n_s = self.values.shape
        cols = {
            "window_end_date": np.repeat(self.stamps.astype(str), n_s),
            "stat": np.tile(np.array(self.stats, dtype=object), n_w),
            "value": self.values.reshape(-1),
        }
        for name, arr in self.overlays.items():
            cols[name] = np.asarray(arr, dtype=float).reshape(-1)
        return pd.DataFrame(cols)


def ewma_corr_quantiles(panel: ReturnPanel, timescale_days=125, quantile_set=DEFAULT_QUANTILES) -> RollingSeries:
    """Cross-sectional quantiles of exponentially weighted pairwise correlations.

    Weights decay as ``exp(-1/timescale)`` per date. Moments are accumulated
    over jointly observed dates only, and a pair counts once its weight reaches
    half of what a fully observed pair would have. The first ``timescale``
    dates are burn-in and are not emitted.
    """
    if timescale_days < 2:
        raise DomainError("timescale must be at least 2 days")
    q = np.asarray(quantile_set, dtype=float)
    if np.any((q < 0) | (q > 1)):
        raise DomainError("quantiles must lie in [0, 1]")
    lam = math.exp(-1.0 / timescale_days)
    n = panel.N
    iu = np.triu_indices(n, 1)
    W = np.zeros((n, n))
    Sx = np.zeros((n, n))
    Sxx = np.zeros((n, n))
    Sxy = np.zeros((n, n))
    full = 0.0
    burn_in = int(math.ceil(timescale_days))
    stamps, rows = [], []
    for t in range(panel.T):
        r = panel.returns[t]
        m = ~np.isnan(r)
        x = np.where(m, r, 0.0)
        A = np.outer(m, m).astype(float)
        W = lam * W + A
        Sx = lam * Sx + A * x[:, None]
        Sxx = lam * Sxx + A * (x * x)[:, None]
        Sxy = lam * Sxy + A * np.outer(x, x)
        full = lam * full + 1.0
        if t < burn_in:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            mx = Sx / W
            my = mx.T
            cov = Sxy / W - mx * my
            vx = Sxx / W - mx * mx
            vy = vx.T
            c = cov / np.sqrt(vx * vy)
        ok = (W[iu] >= 0.5 * full) & np.isfinite(c[iu]) & (vx[iu] > 0) & (vy[iu] > 0)
        vals = np.clip(c[iu][ok], -1.0, 1.0)
        stamps.append(panel.dates[t])
        rows.append(np.quantile(vals, q) if vals.size else np.full(q.size, math.nan))
    labels = tuple(f"q{v:g}" for v in q)
    values = np.array(rows).reshape(len(rows), q.size)
    return RollingSeries(np.array(stamps, dtype="datetime64[D]"), labels, values)


class _TailCurve:
    """``rho -> tau_UU(p)`` for one model, interpolated from a cached grid."""

    GRID = np.linspace(-0.99, 0.99, 199)

    def __init__(self, model, p):
        self.model, self.p = model, p
        self.values = np.array([models.model_tail_exact(model, r, p, "UU") for r in self.GRID])

    def exact(self, rho):
        return models.model_tail_exact(self.model, float(np.clip(rho, -1.0, 1.0)), self.p, "UU")

    def __call__(self, rho):
        return np.interp(rho, self.GRID, self.values)


def rolling_tail(panel: ReturnPanel, window=250, step=25, p=est.DEFAULT_P_STAR, overlay_models=(),
                 min_overlap=None, threads=1) -> RollingSeries:
    """Flat-window cross-pair averages of ``tau_UU(p)``, ``tau_LL(p)`` and ``rho``.

    Each overlay model contributes ``pred_<label>_meanrho`` (model tail at the
    window's mean correlation) and ``pred_<label>_rhodist`` (model tail averaged
    over the window's pair correlations). Within a window a pair needs
    ``min_overlap`` joint observations (default 80% of the window).
    """
    if window < 50:
        raise DomainError("window must be at least 50 rows")
    if step < 1:
        raise DomainError("step must be at least 1")
    if window > panel.T:
        raise DomainError(f"window {window} exceeds the panel length {panel.T}")
    need = int(math.ceil(0.8 * window)) if min_overlap is None else int(min_overlap)
    ends = list(range(window, panel.T + 1, step))
    curves = [_TailCurve(m, p) for m in overlay_models]
    stats_names = ("tau_uu", "tau_ll", "rho_mean", "n_pairs")

    def one(end):
        sub = panel.rows(end - window, end)
        table = pairscan(sub, p, need, threads=1)
        if len(table) == 0:
            return [math.nan, math.nan, math.nan, 0], [math.nan] * (2 * len(curves))
        rho = table["rho"].to_numpy()
        vals = [table["tau_uu"].mean(), table["tau_ll"].mean(), rho.mean(), len(table)]
        preds = []
        for cv in curves:
            preds += [cv.exact(rho.mean()), float(np.mean(cv(rho)))]
        return vals, preds

    results = _run_ordered(one, ends, threads)
    values = np.array([r[0] for r in results], dtype=float).reshape(len(ends), len(stats_names))
    stamps = np.array([panel.dates[e - 1] for e in ends], dtype="datetime64[D]")
    overlays = {}
    n_s = len(stats_names)
    for k, m in enumerate(overlay_models):
        mr = np.array([r[1][2 * k] for r in results])
        rd = np.array([r[1][2 * k + 1] for r in results])
        # broadcast per window so the long-format frame repeats them on every stat row
        overlays[f"pred_{m.label}_meanrho"] = np.repeat(mr[:, None], n_s, axis=1)
        overlays[f"pred_{m.label}_rhodist"] = np.repeat(rd[:, None], n_s, axis=1)
    return RollingSeries(stamps, stats_names, values, overlays)


# ------------------------------------------------------------------ ellipticity test

def empirical_correlation_matrix(panel: ReturnPanel, table=None):
    """Pairwise Pearson correlations over joint observations (0 where undefined)."""
    n = panel.N
    c = np.eye(n)
    lookup = {}
    if table is not None and len(table):
        lookup = {(a, b): r for a, b, r in zip(table["asset_i"], table["asset_j"], table["rho"])}
    for i in range(n):
        for j in range(i + 1, n):
            a, b = panel.assets[i], panel.assets[j]
            key = (a, b) if a < b else (b, a)
            r = lookup.get(key)
            if r is None:
                x, y = panel.returns[:, i], panel.returns[:, j]
                ok = ~(np.isnan(x) | np.isnan(y))
                r = 0.0
                if np.count_nonzero(ok) > 2:
                    xs, ys = x[ok] - x[ok].mean(), y[ok] - y[ok].mean()
                    d = math.sqrt(float(xs @ xs) * float(ys @ ys))
                    r = float(xs @ ys) / d if d > 0 else 0.0
            c[i, j] = c[j, i] = r
    return c


@dataclass(frozen=True)
class CorrelationRepair:
    matrix: np.ndarray
    min_eigenvalue: float
    n_clipped: int
    max_change: float


def repair_correlation(c, tol=0.05) -> CorrelationRepair:
    """Clip negative eigenvalues to 0 and renormalize to a unit diagonal.

    Raises when any entry moves by more than ``tol``.
    """
    c = 0.5 * (np.asarray(c, dtype=float) + np.asarray(c, dtype=float).T)
    w, v = np.linalg.eigh(c)
    n_neg = int(np.sum(w < 0))
    if n_neg == 0:
        return CorrelationRepair(c, float(w[0]), 0, 0.0)
    fixed = (v * np.clip(w, 0.0, None)) @ v.T
    d = np.sqrt(np.diag(fixed))
    if np.any(d == 0):
        raise NumericalError(f"correlation repair collapsed a variance; eigenvalues {np.round(w, 6).tolist()}")
    fixed = fixed / np.outer(d, d)
    np.fill_diagonal(fixed, 1.0)
    change = float(np.max(np.abs(fixed - c)))
    if change > tol:
        raise NumericalError(
            f"correlation repair moved entries by {change:.3g} > {tol}; "
            f"{n_neg} negative eigenvalues, smallest {w[0]:.3g}", achieved=change,
        )
    return CorrelationRepair(fixed, float(w[0]), n_neg, change)


@dataclass(frozen=True)
class EllipTestReport:
    empirical: BinnedCurve
    simulated: BinnedCurve
    comparison: pd.DataFrame
    empirical_table: pd.DataFrame
    simulated_table: pd.DataFrame
    repair: CorrelationRepair
    null_model: ModelSpec

    def fraction_null_consistent(self, which="empirical", k=3.0):
        """Share of bins whose mean residual lies within ``k`` dispersion-s.e. of zero."""
        curve = self.empirical if which == "empirical" else self.simulated
        m, se = curve.mean["residual"], curve.se("residual")
        ok = np.isfinite(m) & np.isfinite(se)
        return float(np.mean(np.abs(m[ok]) <= k * se[ok])) if np.any(ok) else math.nan


def elliptest(panel: ReturnPanel, null_model: ModelSpec, n_bins=DEFAULT_N_BINS, seed=None,
              p_star=est.DEFAULT_P_STAR, min_overlap=DEFAULT_MIN_OVERLAP, threads=1, repair_tol=0.05):
    """Binned ellipticity residuals of ``panel`` against a simulated null panel.

    The null panel is drawn from ``null_model`` with the panel's empirical
    correlation matrix, the same length and the same missing-data pattern.
    Simulated pairs are summarized on the empirical bins.
    """
    seed = samplers.SeedSpec(0) if seed is None else seed
    emp_table = pairscan(panel, p_star, min_overlap, threads)
    if len(emp_table) < n_bins:
        raise DomainError(f"only {len(emp_table)} pairs available for {n_bins} bins")
    rep = repair_correlation(empirical_correlation_matrix(panel, emp_table), repair_tol)
    sim = samplers.sample_panel(samplers.CorrelationMatrix(rep.matrix), null_model, panel.T, seed, threads)
    mask = np.isnan(panel.returns)
    sim = ReturnPanel(panel.dates, panel.assets, np.where(mask, np.nan, sim.returns))
    sim_table = pairscan(sim, p_star, min_overlap, threads)
    obs = ["residual", "z", "cstar", "zeta1", "zeta2", "tau_uu", "tau_ll"]
    emp = bin_by_rho(emp_table, n_bins, obs)
    simc = bin_by_rho(sim_table, n_bins, obs, edges=emp.bin_edges)
    comp = pd.DataFrame({
        "bin_index": np.arange(emp.n_bins),
        "rho_mean": emp.rho_mean,
        "count": emp.count,
        "residual_mean": emp.mean["residual"],
        "residual_sd": emp.sd["residual"],
        "residual_se": emp.se("residual"),
        "z_mean": emp.mean["z"],
        "z_sd": emp.sd["z"],
        "z_se": emp.se("z"),
        "sim_rho_mean": simc.rho_mean,
        "sim_count": simc.count,
        "sim_residual_mean": simc.mean["residual"],
        "sim_residual_sd": simc.sd["residual"],
        "sim_z_mean": simc.mean["z"],
        "sim_z_sd": simc.sd["z"],
    })
    comp["residual_zscore"] = comp["residual_mean"] / comp["residual_se"]
    comp["dispersion_ratio"] = comp["residual_sd"] / comp["sim_residual_sd"]
    comp["z_dispersion_ratio"] = comp["z_sd"] / comp["sim_z_sd"]
    return EllipTestReport(emp, simc, comp, emp_table, sim_table, rep, null_model)
