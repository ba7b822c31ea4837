"""Immutable data containers shared by the samplers, estimators and panel pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DomainError

__all__ = ["PairSample", "UniformPair", "ReturnPanel"]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PairSample:
    """Two aligned return series without missing values."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = _frozen(self.x)
        y = _frozen(self.y)
        if x.ndim != 1 or y.ndim != 1:
            raise DomainError("pair series must be one-dimensional")
        if x.shape != y.shape:
            raise DomainError(f"pair series lengths differ: {x.size} vs {y.size}")
        if x.size < 1:
            raise DomainError("pair sample is empty")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DegenerateInputError("pair sample contains missing or non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def T(self):
        return self.x.size

    def __len__(self):
        return self.x.size


@dataclass(frozen=True)
class UniformPair:
    """Rank-transformed pair; both margins take values in (0, 1)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = _frozen(self.u)
        v = _frozen(self.v)
        if u.shape != v.shape or u.ndim != 1:
            raise DomainError("uniform margins must be 1-D and of equal length")
        if u.size and (np.any((u <= 0) | (u >= 1)) or np.any((v <= 0) | (v >= 1))):
            raise DomainError("uniform margins must lie strictly inside (0, 1)")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def T(self):
        return self.u.size


@dataclass(frozen=True)
class ReturnPanel:
    """Dated T x N return matrix; NaN marks a missing observation.

    ``dropped`` lists assets removed at load time for insufficient data.
    """

    dates: np.ndarray
    assets: tuple
    returns: np.ndarray
    dropped: tuple = ()

    def __post_init__(self):
        dates = np.array(self.dates, dtype="datetime64[D]")
        assets = tuple(str(a) for a in self.assets)
        ret = np.array(self.returns, dtype=float)
        if ret.ndim != 2 or ret.shape != (dates.size, len(assets)):
            raise DomainError(
                f"returns shape {ret.shape} does not match {dates.size} dates x {len(assets)} assets"
            )
        if dates.size > 1 and not np.all(dates[1:] > dates[:-1]):
            bad = int(np.argmax(~(dates[1:] > dates[:-1]))) + 1
            raise DomainError(f"dates must be strictly increasing (violated at row {bad}: {dates[bad]})")
        if len(set(assets)) != len(assets):
            raise DomainError("asset identifiers must be unique")
        if np.any(np.isinf(ret)):
            raise DomainError("returns must be finite or missing")
        dates.setflags(write=False)
        ret.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "assets", assets)
        object.__setattr__(self, "returns", ret)
        object.__setattr__(self, "dropped", tuple(str(a) for a in self.dropped))

    @property
    def T(self):
        return self.dates.size

    @property
    def N(self):
        return len(self.assets)

    def column(self, asset):
        return self.returns[:, self.index(asset)]

    def index(self, asset):
        try:
            return self.assets.index(str(asset))
        except ValueError:
            raise DomainError(f"unknown asset {asset!r}") from None

    def available_counts(self):
        return np.sum(~np.isnan(self.returns), axis=0)

    def select(self, assets):
        idx = [self.index(a) for a in assets]
        return ReturnPanel(self.dates, tuple(self.assets[i] for i in idx), self.returns[:, idx])

    def rows(self, start, stop):
        return ReturnPanel(self.dates[start:stop], self.assets, self.returns[start:stop])
