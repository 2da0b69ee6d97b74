"""Domain types for binary panels and configuration distributions, plus the
information-theoretic primitives shared by the rest of the package.

All logarithms are natural (nats).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


# --------------------------------------------------------------------------- #
# errors
# --------------------------------------------------------------------------- #

class MaxentError(Exception):
    """Base class for all package errors."""


class ValidationError(MaxentError, ValueError):
    """Input violates a precondition (CLI exit code 1)."""


class NumericalError(MaxentError, ArithmeticError):
    """A numerical procedure failed (CLI exit code 2)."""


class AbsoluteContinuityViolation(ValidationError):
    pass


class EmptySample(ValidationError):
    pass


class EmptySeries(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class SizeLimitExceeded(ValidationError):
    pass


class InsufficientSample(ValidationError):
    pass


class NonConvergence(NumericalError):
    def __init__(self, message: str, last=None):
        super().__init__(message)
        self.last = last


class DegenerateDenominator(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass


class SaturatedMean(NumericalError):
    pass


class NegativeDensityWarning(UserWarning):
    pass


class SmallSampleWarning(UserWarning):
    pass


# --------------------------------------------------------------------------- #
# helpers
# --------------------------------------------------------------------------- #

def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def all_configurations(n: int) -> np.ndarray:
    """All 2^n configurations in lexicographic order (-1 before +1), shape (2^n, n)."""
    if n < 0:
        raise ValidationError("n must be non-negative")
    codes = np.arange(2 ** n, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(n - 1, -1, -1)) & 1
    return (2 * bits - 1).astype(np.int8)


def binary_entropy(q) -> np.ndarray:
    """Entropy of a +-1 variable with mean q, elementwise, in nats."""
    q = np.clip(np.asarray(q, dtype=float), -1.0, 1.0)
    pp = (1.0 + q) / 2.0
    pm = (1.0 - q) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(pp > 0, -pp * np.log(pp), 0.0)
        b = np.where(pm > 0, -pm * np.log(pm), 0.0)
    return a + b


def _plogp(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)


# --------------------------------------------------------------------------- #
# types
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SignPanel:
    """Synchronized N x M panel of +-1 orientations.

    Rows are assets, columns are time periods.
    """
    assets: tuple
    times: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValidationError("panel values must be a 2-d array")
        n, m = v.shape
        if n < 1 or m < 1:
            raise ValidationError("panel must have N >= 1 and M >= 1")
        if not np.all((v == 1) | (v == -1)):
            raise ValidationError("panel entries must be exactly -1 or +1")
        assets = tuple(self.assets)
        times = tuple(self.times)
        if len(assets) != n:
            raise DimensionMismatch(f"{len(assets)} asset labels for {n} rows")
        if len(times) != m:
            raise DimensionMismatch(f"{len(times)} time labels for {m} columns")
        if len(set(assets)) != n:
            raise ValidationError("asset labels must be distinct")
        object.__setattr__(self, "assets", assets)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", _frozen(v.astype(np.int8)))

    @classmethod
    def from_array(cls, values, assets: Sequence | None = None,
                   times: Sequence | None = None) -> "SignPanel":
        values = np.asarray(values)
        if values.ndim == 1:
            values = values[None, :]
        n, m = values.shape
        if assets is None:
            assets = [f"a{i}" for i in range(n)]
        if times is None:
            times = list(range(m))
        return cls(tuple(assets), tuple(times), values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def subset(self, rows: Iterable[int]) -> "SignPanel":
        rows = list(rows)
        return SignPanel(tuple(self.assets[i] for i in rows), self.times,
                         self.values[rows])

    def window(self, start: int, stop: int) -> "SignPanel":
        return SignPanel(self.assets, self.times[start:stop],
                         self.values[:, start:stop])


@dataclass(frozen=True)
class ConfigDistribution:
    """Sparse probability mass over binary configurations.

    ``support`` has shape (K, N) with distinct rows; ``probs`` has length K.
    Inputs whose total mass is within 1e-9 of one are renormalized.
    """
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support)
        p = np.asarray(self.probs, dtype=float)
        if s.ndim != 2:
            raise ValidationError("support must be a 2-d array")
        if p.shape != (s.shape[0],):
            raise DimensionMismatch("probs length must match support rows")
        if s.shape[0] == 0:
            raise ValidationError("empty support")
        if not np.all((s == 1) | (s == -1)):
            raise ValidationError("support entries must be -1 or +1")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValidationError("probabilities must be finite and non-negative")
        total = p.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"probabilities sum to {total!r}, not 1")
        p = p / total
        if np.unique(s, axis=0).shape[0] != s.shape[0]:
            raise ValidationError("support entries must be distinct")
        object.__setattr__(self, "support", _frozen(s.astype(np.int8)))
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def n(self) -> int:
        return self.support.shape[1]

    def __len__(self) -> int:
        return self.support.shape[0]

    def as_dict(self) -> dict:
        return {tuple(int(x) for x in row): float(pr)
                for row, pr in zip(self.support, self.probs)}

    def moments(self) -> "MomentSet":
        s = self.support.astype(float)
        q = self.probs @ s
        qq = (s * self.probs[:, None]).T @ s
        return MomentSet.from_raw(q, qq)

    def sorted_lex(self) -> "ConfigDistribution":
        order = np.lexsort(self.support.T[::-1])
        return ConfigDistribution(self.support[order], self.probs[order])


@dataclass(frozen=True)
class MomentSet:
    """First and second moments of +-1 variables."""
    means: np.ndarray
    pair_corrs: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.means, dtype=float)
        qq = np.asarray(self.pair_corrs, dtype=float)
        c = np.asarray(self.covariances, dtype=float)
        n = q.shape[0]
        if q.ndim != 1 or qq.shape != (n, n) or c.shape != (n, n):
            raise DimensionMismatch("inconsistent moment shapes")
        tol = 1e-9
        if np.any(np.abs(q) > 1 + tol) or np.any(np.abs(qq) > 1 + tol):
            raise ValidationError("moments must lie in [-1, 1]")
        if not np.allclose(np.diag(qq), 1.0, atol=tol):
            raise ValidationError("pair correlations need a unit diagonal")
        if not np.allclose(qq, qq.T, atol=tol) or not np.allclose(c, c.T, atol=tol):
            raise ValidationError("moment matrices must be symmetric")
        object.__setattr__(self, "means", _frozen(q))
        object.__setattr__(self, "pair_corrs", _frozen((qq + qq.T) / 2))
        object.__setattr__(self, "covariances", _frozen((c + c.T) / 2))

    @classmethod
    def from_raw(cls, means, pair_corrs) -> "MomentSet":
        q = np.asarray(means, dtype=float)
        qq = np.array(pair_corrs, dtype=float)
        np.fill_diagonal(qq, 1.0)
        return cls(q, qq, qq - np.outer(q, q))

    @property
    def n(self) -> int:
        return self.means.shape[0]

    def correlation_coefficients(self) -> np.ndarray:
        sd = np.sqrt(np.clip(np.diag(self.covariances), 0, None))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.covariances / np.outer(sd, sd)
        r[~np.isfinite(r)] = 0.0
        np.fill_diagonal(r, 1.0)
        return r


@dataclass(frozen=True)
class CouplingModel:
    """Pairwise model: symmetric influences J (zero diagonal), fields h,
    optional lagged influence matrices K^tau (tau = 1..len(lags)) and an
    inverse stochasticity beta.
    """
    influences: np.ndarray
    fields: np.ndarray
    lags: tuple = ()
    beta: float = 1.0

    def __post_init__(self):
        J = np.asarray(self.influences, dtype=float)
        h = np.asarray(self.fields, dtype=float)
        n = h.shape[0] if h.ndim == 1 else -1
        if J.shape != (n, n):
            raise DimensionMismatch("influences must be N x N with N = len(fields)")
        if not np.allclose(J, J.T, atol=1e-10, rtol=0):
            raise ValidationError("influences must be symmetric")
        if np.any(np.diag(J) != 0):
            raise ValidationError("influences must have a zero diagonal")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ValidationError("beta must be positive")
        lags = tuple(_frozen(np.asarray(k, dtype=float)) for k in self.lags)
        for k in lags:
            if k.shape != (n, n):
                raise DimensionMismatch("lag matrices must be N x N")
        object.__setattr__(self, "influences", _frozen((J + J.T) / 2))
        object.__setattr__(self, "fields", _frozen(h))
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "beta", float(self.beta))

    @classmethod
    def zeros(cls, n: int) -> "CouplingModel":
        return cls(np.zeros((n, n)), np.zeros(n))

    @property
    def n(self) -> int:
        return self.fields.shape[0]

    @property
    def lag_count(self) -> int:
        return len(self.lags)

    def utility(self, states) -> np.ndarray:
        """U(s) = 1/2 sum J s s + sum h s for a batch of rows (beta not applied)."""
        s = np.atleast_2d(np.asarray(states, dtype=float))
        return 0.5 * np.einsum("ki,ij,kj->k", s, self.influences, s) + s @ self.fields

    def with_beta(self, beta: float) -> "CouplingModel":
        return CouplingModel(self.influences, self.fields, self.lags, beta)


# --------------------------------------------------------------------------- #
# operations
# --------------------------------------------------------------------------- #

def empirical_distribution(panel: SignPanel) -> ConfigDistribution:
    """Relative frequency of each distinct column of the panel."""
    cols, counts = np.unique(panel.values.T, axis=0, return_counts=True)
    return ConfigDistribution(cols, counts / counts.sum())


def configuration_counts(panel: SignPanel) -> tuple[np.ndarray, np.ndarray]:
    """Distinct columns (lexicographic order) and their occurrence counts."""
    cols, counts = np.unique(panel.values.T, axis=0, return_counts=True)
    return cols, counts


def sample_moments(panel: SignPanel) -> MomentSet:
    s = panel.values.astype(float)
    m = s.shape[1]
    q = s.mean(axis=1)
    qq = s @ s.T / m
    return MomentSet.from_raw(q, qq)


def entropy(dist: ConfigDistribution) -> float:
    """Shannon entropy in nats, with 0 ln 0 = 0."""
    return float(-_plogp(dist.probs).sum())


def kl_divergence(p: ConfigDistribution, q: ConfigDistribution) -> float:
    """D(p || q) in nats.

    Raises AbsoluteContinuityViolation if p puts mass where q has none.
    """
    if p.n != q.n:
        raise DimensionMismatch("distributions over different system sizes")
    qmap = {row.tobytes(): pr for row, pr in zip(q.support, q.probs)}
    total = 0.0
    for row, pr in zip(p.support, p.probs):
        if pr <= 0:
            continue
        qp = qmap.get(row.tobytes(), 0.0)
        if qp <= 0:
            raise AbsoluteContinuityViolation(
                f"p has mass {pr:g} on a configuration where q is zero")
        total += pr * np.log(pr / qp)
    return float(max(total, 0.0))


def _discrete_entropy(labels: np.ndarray) -> float:
    _, counts = np.unique(labels, return_counts=True, axis=0)
    p = counts / counts.sum()
    return float(-_plogp(p).sum())


def mutual_information_pair(x, y, bins: int | None = None) -> tuple[float, float]:
    """Mutual information and redundancy R = I / (S(X) + S(Y)).

    Values are treated as discrete labels unless ``bins`` is given, in which
    case each sample is cut into ``bins`` equal-width bins first.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.size == 0 or y.size == 0:
        raise EmptySample("mutual information needs non-empty samples")
    if x.shape != y.shape:
        raise DimensionMismatch("x and y must have equal lengths")
    if bins is not None:
        x = _equal_width_bins(x, bins)
        y = _equal_width_bins(y, bins)
    sx = _discrete_entropy(x)
    sy = _discrete_entropy(y)
    sxy = _discrete_entropy(np.stack([x, y], axis=1))
    mi = max(sx + sy - sxy, 0.0)
    denom = sx + sy
    red = mi / denom if denom > 0 else 0.0
    return float(mi), float(red)


def _equal_width_bins(v: np.ndarray, bins: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    edges = np.linspace(v.min(), v.max(), bins + 1)
    return np.clip(np.searchsorted(edges, v, side="right") - 1, 0, bins - 1)


__all__ = [
    "MaxentError", "ValidationError", "NumericalError",
    "AbsoluteContinuityViolation", "EmptySample", "EmptySeries",
    "DimensionMismatch", "SizeLimitExceeded", "InsufficientSample",
    "NonConvergence", "DegenerateDenominator", "SingularCovariance",
    "SaturatedMean", "NegativeDensityWarning", "SmallSampleWarning",
    "SignPanel", "ConfigDistribution", "MomentSet", "CouplingModel",
    "all_configurations", "binary_entropy", "empirical_distribution",
    "configuration_counts", "sample_moments", "entropy", "kl_divergence",
    "mutual_information_pair",
]
