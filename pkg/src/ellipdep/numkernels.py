"""Scalar special functions and bivariate copula quadrature kernels.

Gaussian and Student marginals, the absolute-correlation function ``D(r)``, and
the Gaussian and Student bivariate copulas. Copulas are evaluated by
one-dimensional quadrature of the exact conditional cdf of the first variable
given the second, which keeps every evaluation to a single ``quad`` call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

from .errors import DomainError, NumericalError

__all__ = [
    "QuadratureSpec",
    "DEFAULT_QUADRATURE",
    "gaussian_cdf",
    "gaussian_sf",
    "gaussian_quantile",
    "student_pdf",
    "student_cdf",
    "student_sf",
    "student_quantile",
    "d_func",
    "gaussian_copula",
    "gaussian_copula_array",
    "bivariate_normal_cdf",
    "student_joint_cdf",
    "student_copula",
]


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances handed to adaptive quadrature.

    ``abs_tol`` is interpreted relative to the largest value the integral can
    take (e.g. ``min(u, v)`` for a copula), so small tail probabilities keep
    their relative accuracy.
    """

    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_subdivisions: int = 200

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise DomainError("quadrature tolerances must be positive")
        if self.max_subdivisions < 16:
            raise DomainError("max_subdivisions must be >= 16")


DEFAULT_QUADRATURE = QuadratureSpec()


def _quad(f, a, b, q: QuadratureSpec, scale=1.0, points=None):
    epsabs = q.abs_tol * max(scale, 1e-300)
    kw = dict(epsabs=epsabs, epsrel=q.rel_tol, limit=q.max_subdivisions, full_output=1)
    if points is not None and np.isfinite(a) and np.isfinite(b):
        kw["points"] = points
    out = integrate.quad(f, a, b, **kw)
    if len(out) == 4:
        val, err = out[0], out[1]
        # quad also warns on roundoff once the target is already met
        if err > max(epsabs, q.rel_tol * abs(val)) * 10:
            raise NumericalError(
                f"quadrature did not converge: {out[3].splitlines()[0]} (error estimate {err:.3g})",
                achieved=err,
            )
    return out[0]


def _check_prob_open(p, name="p"):
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0)) or np.any(~(arr < 1)):
        raise DomainError(f"{name} must lie strictly inside (0, 1)")
    return arr


def _check_nu(nu):
    if not nu > 0:
        raise DomainError(f"degrees of freedom must be positive, got {nu}")


def _check_rho(rho):
    if not (-1.0 <= rho <= 1.0):
        raise DomainError(f"correlation must lie in [-1, 1], got {rho}")


def _scalar_or_array(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


# ---------------------------------------------------------------- Gaussian

def gaussian_cdf(x):
    """Standard normal cdf."""
    return _scalar_or_array(special.ndtr(np.asarray(x, dtype=float)))


def gaussian_sf(x):
    return _scalar_or_array(special.ndtr(-np.asarray(x, dtype=float)))


def gaussian_quantile(p):
    """Inverse standard normal cdf; ``p`` must lie in (0, 1)."""
    arr = _check_prob_open(p)
    return _scalar_or_array(special.ndtri(arr))


# ---------------------------------------------------------------- Student

def student_pdf(x, nu):
    """Univariate Student density with ``nu`` degrees of freedom (``nu=inf`` is Gaussian)."""
    _check_nu(nu)
    x = np.asarray(x, dtype=float)
    if math.isinf(nu):
        return _scalar_or_array(np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi))
    logc = special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)
    return _scalar_or_array(np.exp(logc - 0.5 * (nu + 1) * np.log1p(x * x / nu)))


def _student_lower_tail(x, nu):
    """P[T <= -|x|], evaluated on whichever incomplete-beta branch is accurate."""
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        x2 = x * x
        t_far = 0.5 * special.betainc(nu / 2, 0.5, nu / (nu + x2))
        t_near = 0.5 - 0.5 * special.betainc(0.5, nu / 2, x2 / (nu + x2))
    # the subtraction in the near branch only loses digits when the tail is small
    return np.where(t_far < 0.125, t_far, t_near)


def student_cdf(x, nu):
    """Student cdf via the regularized incomplete beta function."""
    _check_nu(nu)
    x = np.asarray(x, dtype=float)
    if math.isinf(nu):
        return gaussian_cdf(x)
    tail = _student_lower_tail(x, nu)
    return _scalar_or_array(np.where(x < 0, tail, 1.0 - tail))


def student_sf(x, nu):
    """Upper tail ``1 - T_nu(x)`` without cancellation."""
    _check_nu(nu)
    x = np.asarray(x, dtype=float)
    if math.isinf(nu):
        return gaussian_sf(x)
    tail = _student_lower_tail(x, nu)
    return _scalar_or_array(np.where(x > 0, tail, 1.0 - tail))


def _student_quantile_array(p, nu):
    # invert I_z(nu/2, 1/2) = 2q with q = min(p, 1 - p); the complementary
    # parametrization keeps precision when z is near 1 (the centre)
    q = np.minimum(p, 1.0 - p)
    z = special.betaincinv(0.5 * nu, 0.5, 2.0 * q)
    w = special.betaincinv(0.5, 0.5 * nu, 1.0 - 2.0 * q)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        x = np.where(z < 0.5, np.sqrt(nu * (1.0 / z - 1.0)), np.sqrt(nu * w / (1.0 - w)))
        # Newton steps on the matching tail remove residual inversion error
        for _ in range(2):
            step = (_student_lower_tail(-x, nu) - q) / student_pdf(x, nu)
            x = np.where(np.isfinite(step), x + step, x)
    x = np.where(q == 0.5, 0.0, x)
    # bracketed root-finding for anything the closed-form inversion left imprecise
    with np.errstate(invalid="ignore"):
        bad = ~np.isfinite(x) | (np.abs(_student_lower_tail(-x, nu) - q) > 1e-12 * np.maximum(q, 1e-300) + 1e-300)
    bad &= q != 0.5
    for idx in zip(*np.nonzero(bad)):
        x[idx] = _upper_root(float(q[idx]), nu)
    return np.where(p < 0.5, -x, x)


def _upper_root(tail, nu):
    # solve P[T > x] = tail for x > 0 inside an expanding bracket
    f = lambda x: float(_student_lower_tail(np.float64(x), nu)) - tail
    lo, hi = 0.0, 1.0
    while f(hi) > 0:
        lo, hi = hi, hi * 4.0
        if hi > 1e300:
            raise NumericalError("student quantile bracket diverged")
    return optimize.brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def student_quantile(p, nu):
    """Inverse Student cdf through the inverse regularized incomplete beta function."""
    _check_nu(nu)
    arr = _check_prob_open(p)
    if math.isinf(nu):
        return gaussian_quantile(arr)
    flat = np.atleast_1d(arr.astype(float))
    return _scalar_or_array(_student_quantile_array(flat, float(nu)).reshape(np.shape(arr)))


def d_func(r):
    """``D(r) = sqrt(1 - r^2) + r arcsin(r)``, the Gaussian E|X1 X2| kernel."""
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) > 1):
        raise DomainError("r must lie in [-1, 1]")
    return _scalar_or_array(np.sqrt(1.0 - r * r) + r * np.arcsin(r))


# ---------------------------------------------------------------- copulas

def _copula_edges(u, v, rho):
    """Closed-form values on the boundary of the unit square and at |rho| = 1."""
    if u <= 0.0 or v <= 0.0:
        return 0.0
    if u >= 1.0:
        return v
    if v >= 1.0:
        return u
    if rho == 1.0:
        return min(u, v)
    if rho == -1.0:
        return max(0.0, u + v - 1.0)
    return None


def _check_uv(u, v):
    if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
        raise DomainError("copula arguments must lie in [0, 1]")


def gaussian_copula(u, v, rho, q: QuadratureSpec = DEFAULT_QUADRATURE):
    """Gaussian copula ``C_G(u, v; rho)`` by quadrature of the conditional normal cdf."""
    _check_uv(u, v)
    _check_rho(rho)
    edge = _copula_edges(u, v, rho)
    if edge is not None:
        return edge
    if rho == 0.0:
        return u * v
    a = float(gaussian_quantile(u))
    b = float(gaussian_quantile(v))
    s = math.sqrt(1.0 - rho * rho)
    inv_sqrt2pi = 1.0 / math.sqrt(2 * math.pi)

    def f(y):
        return inv_sqrt2pi * math.exp(-0.5 * y * y) * special.ndtr((a - rho * y) / s)

    bound = min(u, v)
    if b <= 0:
        val = _quad(f, -np.inf, b, q, scale=bound)
    else:
        # C(u, v) = u - P[Z1 <= a, Z2 > b]
        val = u - _quad(f, b, np.inf, q, scale=bound)
    return min(max(val, max(0.0, u + v - 1.0)), bound)


def bivariate_normal_cdf(h, k, rho):
    """Vectorized ``P[Z1 <= h, Z2 <= k]`` for standard normals with correlation ``rho``.

    Uses Owen's T function; an independent route to :func:`gaussian_copula`.
    """
    h, k, rho = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (h, k, rho)))
    if np.any(np.abs(rho) > 1):
        raise DomainError("correlation must lie in [-1, 1]")
    out = np.empty(h.shape)
    comono = rho >= 1.0
    counter = rho <= -1.0
    out[comono] = special.ndtr(np.minimum(h[comono], k[comono]))
    out[counter] = np.maximum(0.0, special.ndtr(h[counter]) + special.ndtr(k[counter]) - 1.0)
    m = ~(comono | counter)
    if np.any(m):
        out[m] = _bvn_owen(h[m], k[m], rho[m])
    return _scalar_or_array(out)


def _bvn_owen(h, k, rho):
    s = np.sqrt(1.0 - rho * rho)
    both0 = (h == 0) & (k == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ah = (k - rho * h) / (h * s)
        ak = (h - rho * k) / (k * s)
    diag = np.sqrt((1.0 - rho) / (1.0 + rho))
    ah = np.where(both0, diag, ah)
    ak = np.where(both0, diag, ak)
    th = np.where((h == 0) & ~both0, 0.25 * np.sign(k - rho * h), special.owens_t(h, ah))
    tk = np.where((k == 0) & ~both0, 0.25 * np.sign(h - rho * k), special.owens_t(k, ak))
    beta = np.where((h * k > 0) | ((h * k == 0) & (h + k >= 0)), 0.0, 0.5)
    val = 0.5 * (special.ndtr(h) + special.ndtr(k)) - th - tk - beta
    return np.clip(val, 0.0, 1.0)


def gaussian_copula_array(u, v, rho):
    """Vectorized Gaussian copula via :func:`bivariate_normal_cdf`."""
    u, v, rho = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (u, v, rho)))
    with np.errstate(divide="ignore"):
        h = special.ndtri(u)
        k = special.ndtri(v)
    out = np.asarray(bivariate_normal_cdf(h, k, rho), dtype=float).copy()
    out = np.where((u <= 0) | (v <= 0), 0.0, out)
    out = np.where(u >= 1, v, out)
    out = np.where(v >= 1, u, out)
    lo = np.maximum(0.0, u + v - 1.0)
    return _scalar_or_array(np.clip(out, lo, np.minimum(u, v)))


def student_joint_cdf(a, b, rho, nu, q: QuadratureSpec = DEFAULT_QUADRATURE):
    """``P[X1 <= a, X2 <= b]`` for the standard bivariate Student pair.

    Integrates ``t_nu(y) T_{nu+1}(k(a, y))`` over ``y <= b`` where ``T_{nu+1}``
    is the exact conditional cdf of ``X1`` given ``X2 = y``.
    """
    _check_nu(nu)
    _check_rho(rho)
    if math.isinf(nu):
        return float(bivariate_normal_cdf(a, b, rho))
    if rho == 1.0:
        return float(student_cdf(min(a, b), nu))
    if rho == -1.0:
        return max(0.0, float(student_cdf(a, nu)) + float(student_cdf(b, nu)) - 1.0)
    c = math.sqrt((nu + 1) / (1.0 - rho * rho))
    logc = special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)
    nu1 = nu + 1.0

    def dens(y):
        return math.exp(logc - 0.5 * (nu + 1) * math.log1p(y * y / nu))

    def cond_below(y):
        kk = c * (a - rho * y) / math.sqrt(nu + y * y)
        return float(_student_lower_tail(np.float64(kk), nu1)) if kk < 0 else 1.0 - float(
            _student_lower_tail(np.float64(kk), nu1))

    # exchangeable: integrate over the smaller limit
    if b > a:
        a, b = b, a
    fa = float(student_cdf(a, nu))
    fb = float(student_cdf(b, nu))
    bound = fb
    f = lambda y: dens(y) * cond_below(y)
    if abs(b) > 1.0:
        # y = b / t keeps the heavy tail beyond |b| on the scale of the integrand
        g = lambda t: f(b / t) * abs(b) / (t * t) if t > 0 else 0.0
        tail = _quad(g, 0.0, 1.0, q, scale=bound)
    else:
        tail = _quad(f, -np.inf, b, q, scale=bound) if b <= 0 else _quad(f, b, np.inf, q, scale=bound)
    # for b > 0 the integral covers X2 > b: F(a, b) = T(a) - P[X1 <= a, X2 > b]
    val = tail if b <= 0 else fa - tail
    return min(max(val, max(0.0, fa + fb - 1.0)), bound)


def student_copula(u, v, rho, nu, q: QuadratureSpec = DEFAULT_QUADRATURE):
    """Student copula ``C_t(u, v; rho, nu)``."""
    _check_uv(u, v)
    _check_rho(rho)
    _check_nu(nu)
    edge = _copula_edges(u, v, rho)
    if edge is not None:
        return edge
    a = 0.0 if u == 0.5 else float(student_quantile(u, nu))
    b = 0.0 if v == 0.5 else float(student_quantile(v, nu))
    return student_joint_cdf(a, b, rho, nu, q)
