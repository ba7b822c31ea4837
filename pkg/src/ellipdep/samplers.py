"""Seedable Monte Carlo generators for every model family.

Randomness comes from counter-based Philox streams keyed by
``(root_seed, stream_id, block)``. Panels are produced in fixed blocks of rows
so that the output never depends on how the work is scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import models
from .containers import PairSample, ReturnPanel
from .errors import DomainError, NumericalError
from .models import Family, ModelSpec

__all__ = [
    "SeedSpec",
    "CorrelationMatrix",
    "FactorSpec",
    "toy_factors",
    "sample_elliptical_pair",
    "sample_pseudo_elliptical_pair",
    "sample_archimedean_pair",
    "sample_toy_pair",
    "sample_panel",
    "sample_pseudo_panel",
    "sample_toy_panel",
    "BLOCK_ROWS",
]

BLOCK_ROWS = 1 << 16
PANEL_START = np.datetime64("2000-01-03")
_UINT64_MAX = (1 << 64) - 1


@dataclass(frozen=True)
class SeedSpec:
    root_seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= int(self.root_seed) <= _UINT64_MAX:
            raise DomainError("root_seed must be an unsigned 64-bit integer")
        if int(self.stream_id) < 0:
            raise DomainError("stream_id must be non-negative")

    def generator(self, *key):
        """Independent Philox generator for a sub-stream such as a row block."""
        ss = np.random.SeedSequence(int(self.root_seed), spawn_key=(int(self.stream_id),) + tuple(int(k) for k in key))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, stream_id):
        return SeedSpec(self.root_seed, stream_id)


class CorrelationMatrix:
    """Validated symmetric unit-diagonal PSD matrix with a cached factor ``L L^T``."""

    def __init__(self, entries, tol=1e-10):
        a = np.array(entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise DomainError("correlation matrix must be square and non-empty")
        if not np.all(np.isfinite(a)):
            raise DomainError("correlation matrix has non-finite entries")
        if np.max(np.abs(a - a.T)) > tol:
            raise DomainError("correlation matrix is not symmetric")
        if np.max(np.abs(np.diag(a) - 1.0)) > tol:
            raise DomainError("correlation matrix must have a unit diagonal")
        if np.max(np.abs(a)) > 1 + tol:
            raise DomainError("correlation entries must lie in [-1, 1]")
        a = 0.5 * (a + a.T)
        np.fill_diagonal(a, 1.0)
        a.setflags(write=False)
        self.entries = a
        self.factor = self._factorize(a, tol)
        self.factor.setflags(write=False)

    @property
    def N(self):
        return self.entries.shape[0]

    @staticmethod
    def _factorize(a, tol):
        try:
            return np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            pass
        w, v = np.linalg.eigh(a)
        if w[0] < -tol * a.shape[0]:
            for k in range(1, a.shape[0] + 1):
                det = np.linalg.det(a[:k, :k])
                if det < -tol:
                    raise DomainError(
                        f"correlation matrix is not positive semi-definite: leading minor {k} "
                        f"has determinant {det:.3g} (smallest eigenvalue {w[0]:.3g})"
                    )
            raise DomainError(f"correlation matrix is not positive semi-definite (smallest eigenvalue {w[0]:.3g})")
        # singular PSD matrix: symmetric square-root factor
        return v * np.sqrt(np.clip(w, 0.0, None))

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))

    @classmethod
    def equicorrelation(cls, n, rho):
        a = np.full((n, n), float(rho))
        np.fill_diagonal(a, 1.0)
        return cls(a)

    @classmethod
    def one_factor(cls, loadings):
        """``rho_ij = beta_i beta_j`` off the diagonal."""
        b = np.asarray(loadings, dtype=float)
        if np.any(np.abs(b) > 1):
            raise DomainError("factor loadings must lie in [-1, 1]")
        a = np.outer(b, b)
        np.fill_diagonal(a, 1.0)
        return cls(a)

    @classmethod
    def pair(cls, rho):
        if not -1 <= rho <= 1:
            raise DomainError("rho must lie in [-1, 1]")
        return cls([[1.0, rho], [rho, 1.0]])


# ------------------------------------------------------------------ volatility laws

def _common_vol(model: ModelSpec, g, n):
    fam = model.family
    if fam is Family.GAUSSIAN or (fam is Family.STUDENT and math.isinf(model.nu)):
        return np.ones(n)
    if fam is Family.STUDENT:
        return np.sqrt(model.nu / g.chisquare(model.nu, size=n))
    if fam is Family.LOGNORMAL:
        return np.exp(model.s * g.standard_normal(n))
    raise DomainError(f"{fam.value} is not a common-volatility family")


def _check_T(T):
    if int(T) != T or T < 1:
        raise DomainError("T must be a positive integer")
    return int(T)


def _blocks(T):
    return [(b, b * BLOCK_ROWS, min(T, (b + 1) * BLOCK_ROWS)) for b in range((T + BLOCK_ROWS - 1) // BLOCK_ROWS)]


def _fill_blocks(T, N, seed, draw, threads=1):
    out = np.empty((T, N))

    def work(block):
        b, lo, hi = block
        out[lo:hi] = draw(seed.generator(b), hi - lo)

    blocks = _blocks(T)
    if threads == 1 or len(blocks) == 1:
        for blk in blocks:
            work(blk)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(work, blocks))
    return out


def _elliptical_matrix(corr: CorrelationMatrix, model: ModelSpec, T, seed: SeedSpec, threads=1):
    if not model.is_elliptical:
        raise DomainError(f"{model.family.value} is not an elliptical family")
    L = corr.factor

    def draw(g, n):
        eps = g.standard_normal((n, corr.N)) @ L.T
        return _common_vol(model, g, n)[:, None] * eps

    return _fill_blocks(T, corr.N, seed, draw, threads)


def _pseudo_matrix(corr_eps: CorrelationMatrix, corr_xi: CorrelationMatrix, s, T, seed, threads=1):
    if corr_eps.N != corr_xi.N:
        raise DomainError("residual and log-volatility matrices differ in dimension")
    if not s >= 0:
        raise DomainError("s must be >= 0")
    Le, Lx = corr_eps.factor, corr_xi.factor
    n_assets = corr_eps.N

    def draw(g, n):
        eps = g.standard_normal((n, n_assets)) @ Le.T
        xi = s * (g.standard_normal((n, n_assets)) @ Lx.T)
        return np.exp(xi) * eps

    return _fill_blocks(T, n_assets, seed, draw, threads)


def sample_elliptical_pair(model: ModelSpec, rho, T, seed: SeedSpec) -> PairSample:
    """``X_i = sigma eps_i`` with a common per-row volatility ``sigma``.

    Bit-identical to the first two columns of :func:`sample_panel` on the
    matching 2 x 2 correlation matrix with the same seed.
    """
    if not -1 <= rho <= 1:
        raise DomainError("rho must lie in [-1, 1]")
    T = _check_T(T)
    xy = _elliptical_matrix(CorrelationMatrix.pair(rho), model, T, seed)
    return PairSample(xy[:, 0], xy[:, 1])


def sample_pseudo_elliptical_pair(r, c, s, T, seed: SeedSpec) -> PairSample:
    """``X_i = exp(xi_i) eps_i``; ``xi`` has std ``s`` and correlation ``c``, ``eps`` correlation ``r``."""
    if not -1 <= r <= 1 or not -1 <= c <= 1:
        raise DomainError("r and c must lie in [-1, 1]")
    T = _check_T(T)
    xy = _pseudo_matrix(CorrelationMatrix.pair(r), CorrelationMatrix.pair(c), s, T, seed)
    return PairSample(xy[:, 0], xy[:, 1])


# ------------------------------------------------------------------ Archimedean

def _kendall_function(family, theta, t):
    """``K(t) = t - phi(t)/phi'(t)``, the distribution function of ``C(U, V)``."""
    if family is Family.GUMBEL:
        return t - t * np.log(t) * theta
    ratio = np.expm1(theta * t) / math.expm1(theta)
    return t - np.log(ratio) * (-np.expm1(-theta * t)) / theta


def _kendall_inverse(family, theta, w, tol=1e-12):
    lo = np.zeros_like(w)
    hi = np.ones_like(w)
    n_iter = int(math.ceil(math.log2(1.0 / tol))) + 1
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(n_iter):
            mid = 0.5 * (lo + hi)
            k = _kendall_function(family, theta, mid)
            if not np.all(np.isfinite(k)):
                raise NumericalError("Kendall function evaluation failed during inversion")
            below = k < w
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
    width = float(np.max(hi - lo)) if w.size else 0.0
    if width > tol:
        raise NumericalError("Kendall function inversion did not converge", achieved=width)
    return 0.5 * (lo + hi)


def sample_archimedean_pair(family, theta, T, seed: SeedSpec) -> PairSample:
    """Uniform-margin draws via ``w' = K^-1(w)`` and a uniform split ``s`` of ``phi(w')``."""
    family = models._check_archimedean(family, theta)
    T = _check_T(T)

    def draw(g, n):
        s = g.random(n)
        w = g.random(n)
        wp = _kendall_inverse(family, theta, w)
        phi = np.asarray(models.archimedean_generator(family, theta, wp))
        u = np.asarray(models.archimedean_generator_inverse(family, theta, s * phi))
        v = np.asarray(models.archimedean_generator_inverse(family, theta, (1.0 - s) * phi))
        return np.column_stack([u, v])

    uv = _fill_blocks(T, 2, seed, draw)
    return PairSample(uv[:, 0], uv[:, 1])


# ------------------------------------------------------------------ toy model

@dataclass(frozen=True)
class FactorSpec:
    """Symmetric factor ``scale * t_nu`` (``nu = inf`` is Gaussian)."""

    nu: float = math.inf
    scale: float = 1.0

    def __post_init__(self):
        if not self.nu > 2:
            raise DomainError("factor needs nu > 2 for a finite variance")
        if not self.scale > 0:
            raise DomainError("factor scale must be positive")

    @classmethod
    def unit_variance(cls, nu=math.inf):
        return cls(nu, 1.0 if math.isinf(nu) else math.sqrt((nu - 2.0) / nu))

    @property
    def variance(self):
        return self.scale ** 2 * (1.0 if math.isinf(self.nu) else self.nu / (self.nu - 2.0))

    @property
    def kurtosis(self):
        return 0.0 if math.isinf(self.nu) else (6.0 / (self.nu - 4.0) if self.nu > 4 else math.inf)

    def draw(self, g, shape):
        if math.isinf(self.nu):
            return self.scale * g.standard_normal(shape)
        return self.scale * g.standard_t(self.nu, size=shape)


def toy_factors(kappa1, kappa2):
    """Unit-variance factors with excess kurtoses ``kappa1`` and ``kappa2``."""
    return (FactorSpec.unit_variance(models.student_nu_for_kurtosis(kappa1)),
            FactorSpec.unit_variance(models.student_nu_for_kurtosis(kappa2)))


def _check_equal_variance(f1, f2):
    if not math.isclose(f1.variance, f2.variance, rel_tol=1e-12):
        raise DomainError(f"toy factors must share a variance ({f1.variance:g} vs {f2.variance:g})")


def sample_toy_pair(factor1: FactorSpec, factor2: FactorSpec, T, seed: SeedSpec) -> PairSample:
    """``X1 = psi1 + psi2``, ``X2 = psi1 - psi2``: uncorrelated but not independent."""
    _check_equal_variance(factor1, factor2)
    T = _check_T(T)

    def draw(g, n):
        p1 = factor1.draw(g, n)
        p2 = factor2.draw(g, n)
        return np.column_stack([p1 + p2, p1 - p2])

    xy = _fill_blocks(T, 2, seed, draw)
    return PairSample(xy[:, 0], xy[:, 1])


# ------------------------------------------------------------------ panels

def _panel(values, prefix="A"):
    T, N = values.shape
    dates = np.busday_offset(PANEL_START, np.arange(T), roll="forward")
    width = len(str(N))
    assets = tuple(f"{prefix}{k + 1:0{width}d}" for k in range(N))
    return ReturnPanel(dates, assets, values)


def sample_panel(corr: CorrelationMatrix, model: ModelSpec, T, seed: SeedSpec, threads=1) -> ReturnPanel:
    """Panel of ``T`` business days for the assets of ``corr``.

    Elliptical families share one volatility per row. A pseudo-elliptical model
    uses equicorrelated log-volatilities with correlation ``c``.
    """
    T = _check_T(T)
    if not isinstance(corr, CorrelationMatrix):
        corr = CorrelationMatrix(corr)
    if model.family is Family.PSEUDO:
        values = _pseudo_matrix(corr, CorrelationMatrix.equicorrelation(corr.N, model.c), model.s, T, seed, threads)
    elif model.family is Family.TOY:
        raise DomainError("use sample_toy_panel for the two-factor toy model")
    else:
        values = _elliptical_matrix(corr, model, T, seed, threads)
    return _panel(values)


def sample_pseudo_panel(corr_eps: CorrelationMatrix, corr_xi: CorrelationMatrix, s, T, seed: SeedSpec,
                        threads=1) -> ReturnPanel:
    """Pseudo-elliptical panel with a general log-volatility correlation matrix."""
    return _panel(_pseudo_matrix(corr_eps, corr_xi, s, _check_T(T), seed, threads))


def sample_toy_panel(n_pairs, kappa1, kappa2, T, seed: SeedSpec, threads=1) -> ReturnPanel:
    """Panel of ``2 n_pairs`` assets ``psi1 + psi2^(m)``, ``psi1 - psi2^(m)``.

    All assets share one common factor ``psi1``; each consecutive pair owns an
    independent spread factor. Within-pair correlation is 0 and cross-pair
    correlation 1/2.
    """
    if int(n_pairs) != n_pairs or n_pairs < 1:
        raise DomainError("n_pairs must be a positive integer")
    n_pairs = int(n_pairs)
    f1, f2 = toy_factors(kappa1, kappa2)
    T = _check_T(T)

    def draw(g, n):
        p1 = f1.draw(g, n)[:, None]
        p2 = f2.draw(g, (n, n_pairs))
        out = np.empty((n, 2 * n_pairs))
        out[:, 0::2] = p1 + p2
        out[:, 1::2] = p1 - p2
        return out

    return _panel(_fill_blocks(T, 2 * n_pairs, seed, draw, threads))
