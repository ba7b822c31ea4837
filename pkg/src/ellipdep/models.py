"""Closed-form and quadrature predictions of dependence measures per model family.

Covers the common-volatility (elliptical) family through its moment ratios
``f_d = E[sigma^(2d)] / E[sigma^d]^2``, the pseudo-elliptical log-normal
extension with imperfectly correlated log-volatilities, the Student tail
dependence and its pre-asymptotic expansion, the Frank and Gumbel Archimedean
baselines, and the two-factor toy model.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special

from . import numkernels as nk
from .errors import DomainError, NumericalError

__all__ = [
    "Family",
    "ModelSpec",
    "MomentRatios",
    "EllipticalPrediction",
    "PseudoEllipticalPrediction",
    "EllipticityResiduals",
    "NuEffective",
    "moment_ratios",
    "elliptical_predictions",
    "student_tail_asymptote",
    "student_tail_beta",
    "student_tail_expansion",
    "model_copula",
    "model_tail_exact",
    "model_delta_profile",
    "lognormal_student_dictionary",
    "pseudo_elliptical_predictions",
    "ellipticity_residuals",
    "archimedean_generator",
    "archimedean_generator_inverse",
    "archimedean_copula",
    "archimedean_kendall_tau",
    "frank_kendall_tau_debye",
    "frank_calibrate_theta",
    "frank_student_correlation",
    "toy_cstar",
    "toy_cstar_exact",
    "student_nu_for_kurtosis",
]

CORNERS = ("UU", "LL", "UL", "LU")


class Family(str, enum.Enum):
    GAUSSIAN = "gaussian"
    STUDENT = "student"
    LOGNORMAL = "lognormal"
    PSEUDO = "pseudo"
    FRANK = "frank"
    GUMBEL = "gumbel"
    TOY = "toy"


ELLIPTICAL = (Family.GAUSSIAN, Family.STUDENT, Family.LOGNORMAL)


@dataclass(frozen=True)
class ModelSpec:
    """Tagged description of a generative dependence model.

    Location is fixed at 0 and the volatility scale at 1. For ``GUMBEL`` the
    parameter ``theta`` lies in (0, 1] and the copula uses the exponent
    ``1/theta`` internally so that its upper tail coefficient is ``2 - 2**theta``.
    """

    family: Family
    nu: float | None = None
    s: float | None = None
    c: float | None = None
    r: float | None = None
    theta: float | None = None
    kappa1: float | None = None
    kappa2: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        fam = self.family
        if fam is Family.STUDENT:
            if self.nu is None or not self.nu > 0:
                raise DomainError("Student model needs nu > 0")
        elif fam is Family.LOGNORMAL:
            if self.s is None or not self.s >= 0:
                raise DomainError("log-normal model needs s >= 0")
        elif fam is Family.PSEUDO:
            if self.s is None or not self.s >= 0:
                raise DomainError("pseudo-elliptical model needs s >= 0")
            if self.c is None or not -1 <= self.c <= 1:
                raise DomainError("pseudo-elliptical model needs c in [-1, 1]")
            if self.r is not None and not -1 <= self.r <= 1:
                raise DomainError("pseudo-elliptical r must lie in [-1, 1]")
        elif fam is Family.FRANK:
            if self.theta is None or self.theta == 0 or not math.isfinite(self.theta):
                raise DomainError("Frank model needs a finite theta != 0")
        elif fam is Family.GUMBEL:
            if self.theta is None or not 0 < self.theta <= 1:
                raise DomainError("Gumbel model needs theta in (0, 1]")
        elif fam is Family.TOY:
            for k in (self.kappa1, self.kappa2):
                if k is None or not (math.isfinite(k) and k >= 0):
                    raise DomainError("toy model needs finite excess kurtoses kappa1, kappa2 >= 0")

    @classmethod
    def gaussian(cls):
        return cls(Family.GAUSSIAN)

    @classmethod
    def student(cls, nu):
        return cls(Family.STUDENT, nu=nu)

    @classmethod
    def lognormal(cls, s):
        return cls(Family.LOGNORMAL, s=s)

    @classmethod
    def pseudo(cls, s, c, r=None):
        return cls(Family.PSEUDO, s=s, c=c, r=r)

    @classmethod
    def frank(cls, theta):
        return cls(Family.FRANK, theta=theta)

    @classmethod
    def gumbel(cls, theta):
        return cls(Family.GUMBEL, theta=theta)

    @classmethod
    def toy(cls, kappa1, kappa2):
        return cls(Family.TOY, kappa1=kappa1, kappa2=kappa2)

    @property
    def is_elliptical(self):
        return self.family in ELLIPTICAL

    @property
    def label(self):
        """Short identifier used in column names, e.g. ``student_nu5``."""
        fam = self.family
        if fam is Family.STUDENT:
            return f"student_nu{self.nu:g}"
        if fam is Family.LOGNORMAL:
            return f"lognormal_s{self.s:g}"
        if fam is Family.PSEUDO:
            return f"pseudo_s{self.s:g}_c{self.c:g}"
        if fam in (Family.FRANK, Family.GUMBEL):
            return f"{fam.value}_theta{self.theta:g}"
        if fam is Family.TOY:
            return f"toy_k{self.kappa1:g}_{self.kappa2:g}"
        return fam.value


# ------------------------------------------------------------------ elliptical

@dataclass(frozen=True)
class MomentRatios:
    """Volatility moment ratios; ``f2`` is ``None`` when the fourth moment diverges."""

    f1: float
    f2: float | None

    @property
    def kurtosis(self):
        """Excess kurtosis ``3 (f2 - 1)`` of the returns."""
        return None if self.f2 is None else 3.0 * (self.f2 - 1.0)


def moment_ratios(model: ModelSpec, c_override=None) -> MomentRatios:
    fam = model.family
    if fam is Family.GAUSSIAN:
        return MomentRatios(1.0, 1.0)
    if fam is Family.STUDENT:
        nu = model.nu
        if math.isinf(nu):
            return MomentRatios(1.0, 1.0)
        if nu <= 2:
            raise DomainError(f"f1 undefined for Student nu={nu} <= 2")
        f1 = 2.0 / (nu - 2.0) * math.exp(2.0 * (special.gammaln(nu / 2) - special.gammaln((nu - 1) / 2)))
        f2 = (nu - 2.0) / (nu - 4.0) if nu > 4 else None
        return MomentRatios(f1, f2)
    if fam is Family.LOGNORMAL:
        s2 = model.s ** 2
        return MomentRatios(math.exp(s2), math.exp(4.0 * s2))
    if fam is Family.PSEUDO:
        c = model.c if c_override is None else c_override
        if not -1 <= c <= 1:
            raise DomainError("log-vol correlation must lie in [-1, 1]")
        s2 = model.s ** 2
        return MomentRatios(math.exp(s2 * c), math.exp(4.0 * s2 * c))
    raise DomainError(f"moment ratios are not defined for family {fam.value}")


@dataclass(frozen=True)
class EllipticalPrediction:
    zeta1: float
    zeta2: float | None
    cstar: float
    rho_sign: float


def _cstar_arcsin(rho):
    return 0.25 + np.arcsin(rho) / (2 * math.pi)


def elliptical_predictions(model: ModelSpec, rho) -> EllipticalPrediction:
    """Non-linear coefficients of an elliptical model as functions of ``rho``.

    Accepts a scalar or an array of correlations.
    """
    if not model.is_elliptical:
        raise DomainError(f"{model.family.value} is not an elliptical family")
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(np.abs(rho_arr) > 1):
        raise DomainError("rho must lie in [-1, 1]")
    f = moment_ratios(model)
    zeta1 = (f.f1 * np.asarray(nk.d_func(rho_arr)) - 1.0) / (0.5 * math.pi * f.f1 - 1.0)
    zeta2 = None
    if f.f2 is not None:
        zeta2 = (f.f2 * (1.0 + 2.0 * rho_arr ** 2) - 1.0) / (3.0 * f.f2 - 1.0)
    cstar = _cstar_arcsin(rho_arr)
    rho_sign = 2.0 / math.pi * np.arcsin(rho_arr)
    conv = nk._scalar_or_array
    return EllipticalPrediction(
        conv(zeta1), None if zeta2 is None else conv(zeta2), conv(cstar), conv(rho_sign)
    )


# ------------------------------------------------------------------ Student tails

def _k1(nu, rho):
    return math.sqrt(nu + 1.0) * math.sqrt(1.0 - rho) / math.sqrt(1.0 + rho)


def student_tail_asymptote(nu, rho):
    """Asymptotic upper tail dependence ``2 - 2 T_{nu+1}(k(1))`` of the Student copula."""
    nk._check_nu(nu)
    nk._check_rho(rho)
    if rho == -1.0:
        return 0.0
    if math.isinf(nu):
        return 1.0 if rho == 1.0 else 0.0
    return 2.0 * float(nk.student_sf(_k1(nu, rho), nu + 1.0))


def student_tail_beta(nu, rho):
    """Coefficient of the leading ``(1-p)^(2/nu)`` correction to the Student tail dependence."""
    nk._check_nu(nu)
    nk._check_rho(rho)
    if abs(rho) == 1.0:
        raise DomainError("tail expansion is degenerate at |rho| = 1")
    k1 = _k1(nu, rho)
    pref = math.exp((2.0 / nu) * (special.gammaln(nu / 2) + 0.5 * math.log(math.pi)
                                  - special.gammaln((nu + 1) / 2)))
    return pref * nu ** (2.0 / nu) / (2.0 / nu + 1.0) * k1 * float(nk.student_pdf(k1, nu + 1.0))


def student_tail_expansion(nu, rho, p):
    """First-order expansion ``tau* + beta (1-p)^(2/nu)`` of ``tau_UU(p)``."""
    if not 0 < p < 1:
        raise DomainError("p must lie in (0, 1)")
    beta = student_tail_beta(nu, rho)
    return student_tail_asymptote(nu, rho) + beta * (1.0 - p) ** (2.0 / nu)


# ------------------------------------------------------------------ Archimedean

def _frank_ratio(theta, t):
    # (e^{theta t} - 1) / (e^theta - 1), positive for either sign of theta
    return np.expm1(theta * t) / math.expm1(theta)


def _frank_positive(alpha, u, v):
    """Frank copula at parameter ``-alpha`` (positive dependence), ``alpha > 0``.

    Factoring ``e^{-alpha min(u, v)}`` out of the log argument leaves a sum of
    two non-negative terms, so nothing cancels or overflows for large ``alpha``.
    """
    m = np.minimum(u, v)
    big = np.maximum(u, v)
    with np.errstate(divide="ignore"):
        inner = -np.expm1(-alpha * (1.0 - m)) + np.exp(-alpha * (big - m)) * -np.expm1(-alpha * m)
        return m - (np.log(inner) - math.log(-math.expm1(-alpha))) / alpha


def _frank_copula(theta, u, v):
    if abs(theta) <= 1.0:
        return np.log1p(np.expm1(theta * u) * np.expm1(theta * v) / math.expm1(theta)) / theta
    if theta < 0:
        return _frank_positive(-theta, u, v)
    # reflection: C_theta(u, v) = u - C_{-theta}(u, 1 - v)
    return u - _frank_positive(theta, u, 1.0 - v)


def archimedean_generator(family, theta, t):
    """Generator ``phi(t)``; Frank ``-ln[(e^{theta t}-1)/(e^theta-1)]``, Gumbel ``(-ln t)^(1/theta)``."""
    family = Family(family)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        if family is Family.FRANK:
            return nk._scalar_or_array(-np.log(_frank_ratio(theta, t)))
        if family is Family.GUMBEL:
            return nk._scalar_or_array((-np.log(t)) ** (1.0 / theta))
    raise DomainError(f"{family.value} is not an Archimedean family")


def archimedean_generator_inverse(family, theta, s):
    family = Family(family)
    s = np.asarray(s, dtype=float)
    if family is Family.FRANK:
        return nk._scalar_or_array(np.log1p(math.expm1(theta) * np.exp(-s)) / theta)
    if family is Family.GUMBEL:
        return nk._scalar_or_array(np.exp(-(s ** theta)))
    raise DomainError(f"{family.value} is not an Archimedean family")


def _check_archimedean(family, theta):
    family = Family(family)
    if family is Family.FRANK:
        if theta == 0 or not math.isfinite(theta):
            raise DomainError("Frank theta must be finite and non-zero")
    elif family is Family.GUMBEL:
        if not 0 < theta <= 1:
            raise DomainError("Gumbel theta must lie in (0, 1]")
    else:
        raise DomainError(f"{family.value} is not an Archimedean family")
    return family


def archimedean_copula(family, theta, u, v):
    """Frank or Gumbel copula in closed form (vectorized over ``u``, ``v``)."""
    family = _check_archimedean(family, theta)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any((u < 0) | (u > 1) | (v < 0) | (v > 1)):
        raise DomainError("copula arguments must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        if family is Family.FRANK:
            val = _frank_copula(theta, u, v)
        else:
            delta = 1.0 / theta
            a = ((-np.log(u)) ** delta + (-np.log(v)) ** delta) ** theta
            val = np.exp(-a)
    val = np.where((u == 0) | (v == 0), 0.0, val)
    val = np.where(u == 1, v, val)
    val = np.where(v == 1, u, val)
    return nk._scalar_or_array(np.clip(val, np.maximum(0.0, u + v - 1.0), np.minimum(u, v)))


def _archimedean_corner(family, theta, p, corner):
    """Eq. (8)-style tail ratio with the joint exceedance computed without cancellation."""
    e = 1.0 - p
    if family is Family.GUMBEL:
        lu = -math.log(p)
        lq = -math.log1p(-p) if p < 0.5 else -math.log(e)
        delta = 1.0 / theta
        if corner == "UU":
            # 1 - 2p + C(p, p) = 2e - (1 - C(p, p))
            one_minus_c = -math.expm1(-(2.0 ** theta) * lu)
            return (2.0 * e - one_minus_c) / e
        if corner == "LL":
            return math.exp(-(2.0 ** theta) * lq) / e
        a = (lu ** delta + lq ** delta) ** theta
        c_mixed = math.exp(-a)   # C(p, 1-p) = C(1-p, p) by exchangeability
        return (e - c_mixed) / e
    cfun = lambda x, y: float(archimedean_copula(family, theta, x, y))
    if corner == "UU":
        return (1.0 - 2.0 * p + cfun(p, p)) / e
    if corner == "LL":
        return cfun(e, e) / e
    if corner == "UL":
        return (e - cfun(p, e)) / e
    return (e - cfun(e, p)) / e


def archimedean_kendall_tau(family, theta, q: nk.QuadratureSpec = nk.DEFAULT_QUADRATURE):
    """Kendall tau ``4 E[C(U, V)] - 1`` by two-dimensional quadrature of ``C dC``."""
    family = _check_archimedean(family, theta)
    if family is not Family.FRANK:
        raise DomainError("closed-form copula density is implemented for Frank only")
    # density of C_theta, written with alpha = -theta
    alpha = -theta
    em = -math.expm1(-alpha)

    def dens(v, u):
        a = math.expm1(-alpha * u)
        b = math.expm1(-alpha * v)
        return alpha * em * math.exp(-alpha * (u + v)) / (em - a * b) ** 2

    def integrand(v, u):
        return float(archimedean_copula(family, theta, u, v)) * dens(v, u)

    val, err = integrate.dblquad(integrand, 0.0, 1.0, 0.0, 1.0,
                                 epsabs=max(q.abs_tol, 1e-12), epsrel=max(q.rel_tol, 1e-12))
    return 4.0 * val - 1.0


def frank_kendall_tau_debye(theta):
    """Closed form ``1 - 4/a + 4 D1(a)/a`` with ``a = -theta`` and the first Debye function ``D1``.

    In this parameterization ``theta > 0`` gives negative dependence.
    """
    if theta == 0:
        return 0.0
    a = -theta
    d1 = integrate.quad(lambda t: t / math.expm1(t) if t != 0 else 1.0, 0.0, a,
                        epsabs=1e-14, epsrel=1e-13)[0] / a
    return 1.0 - 4.0 / a + 4.0 * d1 / a


# Frank correlation under Student marginals: Hoeffding's covariance identity on a
# sinh-mapped trapezoid grid, which converges geometrically for these integrands.
_SINH_HALF_WIDTH = 9.0
_SINH_STEP = 0.02


@lru_cache(maxsize=16)
def _sinh_grid(nu):
    t = np.arange(-_SINH_HALF_WIDTH, _SINH_HALF_WIDTH + _SINH_STEP / 2, _SINH_STEP)
    x = np.sinh(t)
    w = np.cosh(t) * _SINH_STEP
    u = np.asarray(nk.student_cdf(x, nu))
    return u, w


def frank_student_correlation(theta, nu):
    """Pearson correlation of ``(T_nu^-1(U), T_nu^-1(V))`` when ``(U, V)`` is Frank(theta)."""
    if not nu > 2:
        raise DomainError("Student marginals need nu > 2 for a finite variance")
    if theta == 0:
        return 0.0
    u, w = _sinh_grid(float(nu))
    uu = u[:, None]
    vv = u[None, :]
    c = np.clip(_frank_copula(theta, uu, vv), np.maximum(0.0, uu + vv - 1.0), np.minimum(uu, vv))
    cov = float(w @ (c - uu * vv) @ w)
    return cov / (nu / (nu - 2.0))


def frank_calibrate_theta(rho_target, marginal_nu):
    """Frank parameter whose Student-marginal linear correlation equals ``rho_target``.

    Returns 0.0 (the independence limit) for ``rho_target == 0``. The correlation
    decreases with ``theta``, so positive targets give negative ``theta``.
    """
    if not marginal_nu > 2:
        raise DomainError("Student marginals need nu > 2 for a finite variance")
    if not -1 < rho_target < 1:
        raise DomainError("rho_target must lie in (-1, 1)")
    if rho_target == 0:
        return 0.0
    target = abs(rho_target)
    f = lambda a: frank_student_correlation(-a, marginal_nu) - target
    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > 512:
            raise NumericalError(f"cannot reach correlation {rho_target} with a Frank copula")
    alpha = optimize.brentq(f, hi / 2.0 if hi > 1 else 1e-9, hi, xtol=1e-12, rtol=1e-13)
    return -math.copysign(alpha, rho_target)


# ------------------------------------------------------------------ dispatch

def model_copula(model: ModelSpec, rho, u, v, q: nk.QuadratureSpec = nk.DEFAULT_QUADRATURE):
    """Bivariate copula of ``model`` at correlation ``rho`` (ignored for Archimedean families)."""
    fam = model.family
    if fam is Family.GAUSSIAN or (fam is Family.STUDENT and math.isinf(model.nu)):
        return nk.gaussian_copula(u, v, rho, q)
    if fam is Family.STUDENT:
        return nk.student_copula(u, v, rho, model.nu, q)
    if fam in (Family.FRANK, Family.GUMBEL):
        return float(archimedean_copula(fam, model.theta, u, v))
    raise DomainError(f"no bivariate copula evaluator for family {fam.value}")


@lru_cache(maxsize=65536)
def _tail_exact_cached(model, rho, p, corner, q):
    fam = model.family
    e = 1.0 - p
    if fam in (Family.FRANK, Family.GUMBEL):
        return _archimedean_corner(fam, model.theta, p, corner)
    # elliptical: radial symmetry maps every corner onto a lower orthant
    r = rho if corner in ("UU", "LL") else -rho
    if fam is Family.GAUSSIAN or math.isinf(model.nu):
        x = float(nk.gaussian_quantile(e))
        joint = float(nk.bivariate_normal_cdf(x, x, r))
    else:
        x = -float(nk.student_quantile(p, model.nu)) if p >= 0.5 else float(nk.student_quantile(e, model.nu))
        joint = nk.student_joint_cdf(x, x, r, model.nu, q)
    return joint / e


def model_tail_exact(model: ModelSpec, rho, p, corner="UU", q: nk.QuadratureSpec = nk.DEFAULT_QUADRATURE):
    """Exact ``tau_corner(p)`` predicted by the model copula.

    Elliptical families satisfy ``tau_UU(p; rho) = tau_LL(p; rho) = tau_UL(p; -rho)``.
    """
    if corner not in CORNERS:
        raise DomainError(f"corner must be one of {CORNERS}")
    if not 0 < p < 1:
        raise DomainError("p must lie in (0, 1)")
    if model.family not in (Family.GAUSSIAN, Family.STUDENT, Family.FRANK, Family.GUMBEL):
        raise DomainError(f"exact tail not available for family {model.family.value}")
    nk._check_rho(rho)
    val = _tail_exact_cached(model, float(rho), float(p), corner, q)
    return min(max(val, 0.0), 1.0)


def model_delta_profile(model: ModelSpec, rho, grid, q: nk.QuadratureSpec = nk.DEFAULT_QUADRATURE):
    """Predicted ``(Delta_d(p), Delta_a(p))`` against the Gaussian copula with the same ``rho``.

    For a Frank model ``theta`` is taken from ``model``; see :func:`frank_calibrate_theta`
    to match a target linear correlation.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any((grid <= 0) | (grid >= 1)):
        raise DomainError("profile grid must lie inside (0, 1)")
    dd = np.empty(grid.shape)
    da = np.empty(grid.shape)
    for i, p in enumerate(grid):
        w = p * (1.0 - p)
        cg_d = float(nk.gaussian_copula_array(p, p, rho))
        cg_a = float(nk.gaussian_copula_array(p, 1.0 - p, rho))
        dd[i] = (model_copula(model, rho, p, p, q) - cg_d) / w
        da[i] = (model_copula(model, rho, p, 1.0 - p, q) - cg_a) / w
    return dd, da


# ------------------------------------------------------------------ log-normal & pseudo

@dataclass(frozen=True)
class NuEffective:
    exact: float
    approx: float


def lognormal_student_dictionary(s, match="f2") -> NuEffective:
    """Student exponent equivalent to a log-normal volatility with log-std ``s``.

    ``match="f2"`` solves ``e^{4 s^2} = (nu-2)/(nu-4)`` in closed form; ``match="f1"``
    matches ``e^{s^2}`` to the Student ``f1`` by root-finding. ``approx`` is the
    rule of thumb ``2 + 0.5/s^2``.
    """
    if not s > 0:
        raise DomainError("s must be positive")
    s2 = s * s
    approx = 2.0 + 0.5 / s2
    if match == "f2":
        g = math.expm1(4.0 * s2)
        exact = 4.0 + 2.0 / g
    elif match == "f1":
        target = math.exp(s2)
        f = lambda nu: moment_ratios(ModelSpec.student(nu)).f1 - target
        hi = 3.0
        while f(hi) > 0:
            hi *= 2.0
            if hi > 1e12:
                raise NumericalError("f1-matching exponent diverged")
        exact = optimize.brentq(f, 2.0 + 1e-12, hi, xtol=1e-12, rtol=1e-14)
    else:
        raise DomainError("match must be 'f1' or 'f2'")
    return NuEffective(exact, approx)


@dataclass(frozen=True)
class PseudoEllipticalPrediction:
    rho: float
    zeta1: float
    zeta2: float
    cstar: float


def pseudo_elliptical_predictions(r, c, s) -> PseudoEllipticalPrediction:
    """Coefficients of the log-normal pseudo-elliptical pair (residual corr ``r``, log-vol corr ``c``)."""
    if not -1 <= r <= 1:
        raise DomainError("r must lie in [-1, 1]")
    if not -1 <= c <= 1:
        raise DomainError("c must lie in [-1, 1]")
    if not s >= 0:
        raise DomainError("s must be >= 0")
    model = ModelSpec.pseudo(s, c, r)
    fc = moment_ratios(model)
    f1 = moment_ratios(model, c_override=1.0)
    rho = fc.f1 / f1.f1 * r
    if s == 0:
        # Gaussian limit of the 0/0 forms
        zeta2 = r * r
        zeta1 = (float(nk.d_func(r)) - 1.0) / (0.5 * math.pi - 1.0)
    else:
        zeta2 = (fc.f2 * (1.0 + 2.0 * r * r) - 1.0) / (3.0 * f1.f2 - 1.0)
        zeta1 = (fc.f1 * float(nk.d_func(r)) - 1.0) / (0.5 * math.pi * f1.f1 - 1.0)
    return PseudoEllipticalPrediction(rho, zeta1, zeta2, float(_cstar_arcsin(r)))


@dataclass(frozen=True)
class EllipticityResiduals:
    """``residual = -cos(2 pi C*) - rho``; ``z`` and ``c_implied`` are NaN where undefined."""

    residual: float
    z: float
    c_implied: float


def ellipticity_residuals(rho, cstar, s=None) -> EllipticityResiduals:
    """Ellipticity diagnostics of a measured ``(rho, C*)``; vectorized."""
    rho = np.asarray(rho, dtype=float)
    cstar = np.asarray(cstar, dtype=float)
    if np.any(np.abs(rho) > 1):
        raise DomainError("rho must lie in [-1, 1]")
    cosv = np.cos(2.0 * math.pi * cstar)
    residual = -cosv - rho
    ok = (rho > 0) & (cstar != 0.25) & (np.abs(cosv) > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(ok, np.log(rho / np.abs(cosv)), np.nan)
    if s is None or s == 0:
        c_implied = np.full(np.shape(z), np.nan)
    else:
        c_implied = 1.0 + z / (s * s)
    conv = nk._scalar_or_array
    return EllipticityResiduals(conv(residual), conv(z), conv(c_implied))


# ------------------------------------------------------------------ toy model

def toy_cstar(kappa1, kappa2):
    """Kurtosis-order central point ``1/4 + (kappa2 - kappa1)/(24 pi)`` of ``X = psi1 +- psi2``.

    Only accurate to first order in the excess kurtoses.
    """
    if not (math.isfinite(kappa1) and math.isfinite(kappa2)):
        raise DomainError("kurtoses must be finite")
    return 0.25 + (kappa2 - kappa1) / (24.0 * math.pi)


def student_nu_for_kurtosis(kappa):
    """Student exponent with excess kurtosis ``kappa`` (``inf`` for ``kappa = 0``)."""
    if kappa < 0:
        raise DomainError("excess kurtosis must be >= 0 for a Student factor")
    return math.inf if kappa == 0 else 4.0 + 6.0 / kappa


def _unit_student(nu):
    """(cdf, pdf) of a unit-variance Student factor."""
    if math.isinf(nu):
        return nk.gaussian_cdf, lambda y: float(nk.student_pdf(y, math.inf))
    sc = math.sqrt((nu - 2.0) / nu)
    return (lambda y: float(nk.student_cdf(y / sc, nu)),
            lambda y: float(nk.student_pdf(y / sc, nu)) / sc)


def toy_cstar_exact(kappa1, kappa2):
    """Exact ``C* = P[psi1 < -|psi2|]`` for unit-variance Student factors tuned to the kurtoses."""
    cdf1, _ = _unit_student(student_nu_for_kurtosis(kappa1))
    _, pdf2 = _unit_student(student_nu_for_kurtosis(kappa2))
    val = integrate.quad(lambda y: cdf1(-y) * pdf2(y), 0.0, np.inf, epsabs=1e-13, epsrel=1e-12)[0]
    return 2.0 * val
