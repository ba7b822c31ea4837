"""Nonparametric dependence estimators for one aligned pair of return series."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np
from scipy import stats

from . import models
from . import numkernels as nk
from .containers import PairSample, UniformPair
from .errors import DegenerateInputError, DomainError

__all__ = [
    "PairSample",
    "UniformPair",
    "CorrCoeffs",
    "PairObservables",
    "CopulaProfile",
    "TailLevelWarning",
    "DEFAULT_GRID",
    "DEFAULT_P_STAR",
    "rank_transform",
    "to_uniform",
    "corr_coeffs",
    "empirical_copula",
    "empirical_copula_grid",
    "tail_dependence",
    "tail_coefficients",
    "cstar",
    "kendall_tau",
    "copula_profile",
    "pair_observables",
]

DEFAULT_P_STAR = 0.95
DEFAULT_GRID = np.arange(1, 100) / 100.0


class TailLevelWarning(UserWarning):
    """Fewer than five points are expected beyond the requested tail level."""


def rank_transform(x, allow_degenerate=False):
    """Uniform scores ``(rank - 0.5)/T`` with average ranks for ties."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise DomainError("rank transform needs a 1-D series with at least 2 points")
    if not allow_degenerate and np.all(x == x[0]):
        raise DegenerateInputError("constant series has no informative ranks")
    return (stats.rankdata(x) - 0.5) / x.size


def to_uniform(pair: PairSample) -> UniformPair:
    return UniformPair(rank_transform(pair.x), rank_transform(pair.y))


# ------------------------------------------------------------------ moment correlations

@dataclass(frozen=True)
class CorrCoeffs:
    rho: float
    rho_sign: float
    zeta1: float
    zeta2: float
    rho_d: dict


def _pearson(a, b, what):
    a = a - a.mean()
    b = b - b.mean()
    saa = float(a @ a)
    sbb = float(b @ b)
    if saa == 0.0 or sbb == 0.0:
        raise DegenerateInputError(f"zero variance in {what}")
    r = float(a @ b) / math.sqrt(saa * sbb)
    return min(1.0, max(-1.0, r))


def corr_coeffs(pair: PairSample) -> CorrCoeffs:
    """Correlations of signed powers ``S|X|^d`` and of absolute powers ``|X|^d``.

    ``d = 0`` is the sign correlation; rows where either return is exactly zero
    are dropped first.
    """
    x, y = pair.x, pair.y
    ax, ay = np.abs(x), np.abs(y)
    nz = (x != 0) & (y != 0)
    if np.count_nonzero(nz) < 2:
        raise DegenerateInputError("fewer than two jointly non-zero returns (d=0)")
    rho0 = _pearson(np.sign(x[nz]), np.sign(y[nz]), "signs (d=0)")
    rho1 = _pearson(x, y, "returns (d=1)")
    rho2 = _pearson(x * ax, y * ay, "signed squares (d=2)")
    zeta1 = _pearson(ax, ay, "absolute returns (d=1)")
    zeta2 = _pearson(ax * ax, ay * ay, "squared returns (d=2)")
    return CorrCoeffs(rho1, rho0, zeta1, zeta2, {0: rho0, 1: rho1, 2: rho2})


# ------------------------------------------------------------------ copula estimators

def empirical_copula(up: UniformPair, p, q):
    """Fraction of rows with ``u <= p`` and ``v <= q``."""
    if not (0 <= p <= 1 and 0 <= q <= 1):
        raise DomainError("copula arguments must lie in [0, 1]")
    return np.count_nonzero((up.u <= p) & (up.v <= q)) / up.T


def _grid_counts(up: UniformPair, ps, qs):
    """Counts ``#{u <= ps[i], v <= qs[j]}`` for all grid pairs in one pass."""
    ps = np.asarray(ps, dtype=float)
    qs = np.asarray(qs, dtype=float)
    po = np.argsort(ps, kind="stable")
    qo = np.argsort(qs, kind="stable")
    iu = np.searchsorted(ps[po], up.u, side="left")
    iv = np.searchsorted(qs[qo], up.v, side="left")
    h = np.zeros((ps.size + 1, qs.size + 1), dtype=np.int64)
    np.add.at(h, (iu, iv), 1)
    cum = h.cumsum(axis=0).cumsum(axis=1)[:-1, :-1]
    out = np.empty_like(cum)
    out[np.ix_(po, qo)] = cum
    return out


def empirical_copula_grid(up: UniformPair, ps, qs=None):
    """Empirical copula on the product grid ``ps x qs`` (``qs`` defaults to ``ps``)."""
    qs = ps if qs is None else qs
    return _grid_counts(up, ps, qs) / up.T


def _corner_count(counts, corner):
    # counts[i, j] = #{u <= a_i, v <= b_j} on the grid (p, 1-p, 1); integers keep
    # the inclusion-exclusion exact
    ip, ie, i1 = 0, 1, 2
    if corner == "UU":
        return counts[i1, i1] - counts[ip, i1] - counts[i1, ip] + counts[ip, ip]
    if corner == "LL":
        return counts[ie, ie]
    if corner == "UL":
        return counts[i1, ie] - counts[ip, ie]
    return counts[ie, i1] - counts[ie, ip]


def _check_tail_level(T, p):
    if not 0 < p < 1:
        raise DomainError("p must lie in (0, 1)")
    if T * (1.0 - p) < 5:
        warnings.warn(f"tail level p={p} leaves {T * (1 - p):.2g} expected points beyond it",
                      TailLevelWarning, stacklevel=3)


def _tail_values(up, p):
    e = 1.0 - p
    grid = [p, e, 1.0]
    counts = _grid_counts(up, grid, grid)
    return {k: float(min(1.0, int(_corner_count(counts, k)) / (up.T * e))) for k in models.CORNERS}


def tail_dependence(up: UniformPair, p, corner="UU"):
    """Empirical ``tau_corner(p)``: joint exceedance frequency over ``1 - p``, capped at 1."""
    if corner not in models.CORNERS:
        raise DomainError(f"corner must be one of {models.CORNERS}")
    _check_tail_level(up.T, p)
    return _tail_values(up, p)[corner]


def tail_coefficients(up: UniformPair, p):
    """All four tail coefficients at level ``p`` from a single grid pass."""
    _check_tail_level(up.T, p)
    return _tail_values(up, p)


def cstar(up: UniformPair):
    """Probability that both ranks lie strictly below the median."""
    return np.count_nonzero((up.u < 0.5) & (up.v < 0.5)) / up.T


# ------------------------------------------------------------------ Kendall tau

@numba.njit(cache=True)
def _tie_pairs(a):
    # number of tied pairs in a sorted array
    total = 0
    run = 1
    for i in range(1, a.size):
        if a[i] == a[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    return total + run * (run - 1) // 2


@numba.njit(cache=True)
def _merge_swaps(y):
    """Sort ``y`` in place by bottom-up merge sort and return the inversion count."""
    n = y.size
    buf = np.empty_like(y)
    swaps = 0
    width = 1
    while width < n:
        lo = 0
        while lo < n:
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if y[j] < y[i]:
                    buf[k] = y[j]
                    swaps += mid - i
                    j += 1
                else:
                    buf[k] = y[i]
                    i += 1
                k += 1
            while i < mid:
                buf[k] = y[i]
                i += 1
                k += 1
            while j < hi:
                buf[k] = y[j]
                j += 1
                k += 1
            lo += 2 * width
        y[:] = buf
        width *= 2
    return swaps


@numba.njit(cache=True)
def _kendall_counts(x, y):
    """``(S, n0, n_x, n_y)`` with ``S`` = concordant minus discordant pairs (x, y pre-sorted by (x, y))."""
    n = x.size
    n0 = n * (n - 1) // 2
    nx = _tie_pairs(x)
    nxy = 0
    run = 1
    for i in range(1, n):
        if x[i] == x[i - 1] and y[i] == y[i - 1]:
            run += 1
        else:
            nxy += run * (run - 1) // 2
            run = 1
    nxy += run * (run - 1) // 2
    ys = y.copy()
    swaps = _merge_swaps(ys)
    ny = _tie_pairs(ys)
    s = n0 - nx - ny + nxy - 2 * swaps
    return s, n0, nx, ny


def kendall_counts(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    order = np.lexsort((y, x))
    return tuple(int(v) for v in _kendall_counts(x[order], y[order]))


def kendall_tau_from_counts(s, n0, nx, ny):
    denom = math.sqrt(float(n0 - nx) * float(n0 - ny))
    return s / denom


def kendall_tau(up: UniformPair):
    """Kendall's tau-b in O(T log T) by merge-sort inversion counting."""
    if up.T < 2:
        raise DomainError("Kendall tau needs at least 2 points")
    s, n0, nx, ny = kendall_counts(up.u, up.v)
    if n0 == nx or n0 == ny:
        raise DegenerateInputError("all observations tied in one margin")
    return kendall_tau_from_counts(s, n0, nx, ny)


# ------------------------------------------------------------------ profile

@dataclass(frozen=True)
class CopulaProfile:
    p_grid: np.ndarray
    delta_diag: np.ndarray
    delta_anti: np.ndarray
    rho_ref: float


def _reference_rho(up, policy, rho):
    if policy == "pearson":
        if rho is None:
            raise DomainError("the pearson policy needs the raw-return correlation rho")
        return float(rho)
    if policy == "kendall":
        return math.sin(0.5 * math.pi * kendall_tau(up))
    raise DomainError("rho_ref_policy must be 'pearson' or 'kendall'")


def copula_profile(up: UniformPair, grid=None, rho_ref_policy="pearson", rho=None) -> CopulaProfile:
    """Normalized gaps ``(C_hat - C_G)/(p(1-p))`` along the diagonal and anti-diagonal.

    ``rho_ref_policy="pearson"`` uses the supplied raw-return ``rho`` for the
    Gaussian reference; ``"kendall"`` uses ``sin(pi tau/2)``.
    """
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any((grid <= 0) | (grid >= 1)):
        raise DomainError("profile grid must lie inside (0, 1)")
    r = _reference_rho(up, rho_ref_policy, rho)
    comp = 1.0 - grid
    c = _grid_counts(up, grid, np.concatenate([grid, comp])) / up.T
    n = grid.size
    idx = np.arange(n)
    c_diag = c[idx, idx]
    c_anti = c[idx, n + idx]
    w = grid * comp
    dd = (c_diag - nk.gaussian_copula_array(grid, grid, r)) / w
    da = (c_anti - nk.gaussian_copula_array(grid, comp, r)) / w
    return CopulaProfile(grid.copy(), dd, da, r)


# ------------------------------------------------------------------ all observables

@dataclass(frozen=True)
class PairObservables:
    rho: float
    rho_sign: float
    zeta1: float
    zeta2: float
    kendall: float
    tau_uu: float
    tau_ll: float
    tau_ul: float
    tau_lu: float
    cstar: float
    residual: float
    z: float
    T_overlap: int


def pair_observables(pair: PairSample, p_star=DEFAULT_P_STAR, up: UniformPair | None = None) -> PairObservables:
    """Every pairwise observable; ``up`` may carry precomputed ranks of ``pair``."""
    cc = corr_coeffs(pair)
    if up is None:
        up = to_uniform(pair)
    tails = tail_coefficients(up, p_star)
    cs = cstar(up)
    er = models.ellipticity_residuals(cc.rho, cs)
    return PairObservables(
        rho=cc.rho, rho_sign=cc.rho_sign, zeta1=cc.zeta1, zeta2=cc.zeta2,
        kendall=kendall_tau(up),
        tau_uu=tails["UU"], tau_ll=tails["LL"], tau_ul=tails["UL"], tau_lu=tails["LU"],
        cstar=cs, residual=float(er.residual), z=float(er.z), T_overlap=pair.T,
    )
