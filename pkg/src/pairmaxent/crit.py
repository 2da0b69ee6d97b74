"""Criticality diagnostics: temperature rescaling of a distribution and its
response function, subset scans, sampling significance, bounded discrete
power-law (Zipf) testing and the entropy-utility relation.
"""
from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from .core import (ConfigDistribution, SignPanel, ValidationError,
                   configuration_counts, empirical_distribution)


class DegenerateDistribution(ValidationError):
    pass


class InsufficientSupport(ValidationError):
    pass


class InsufficientLevels(ValidationError):
    pass


def default_t_grid(points: int = 200, lo: float = 0.2, hi: float = 3.0) -> np.ndarray:
    return np.geomspace(lo, hi, points)


# --------------------------------------------------------------------------- #
# rescaling and response
# --------------------------------------------------------------------------- #

def _rescaled_probs(logp: np.ndarray, t: float) -> np.ndarray:
    w = logp / t
    w = w - w.max()
    p = np.exp(w)
    return p / p.sum()


def rescale_distribution(dist: ConfigDistribution, T: float) -> ConfigDistribution:
    """P_T(s) = P(s)^(1/T) / sum P^(1/T) on the same support."""
    if not T > 0:
        raise ValidationError("T must be positive")
    return ConfigDistribution(dist.support, _rescaled_probs(np.log(dist.probs), T))


def _entropy_parts(logp: np.ndarray, t: float) -> tuple[float, float]:
    # S = ln k + [log1p(r / k) - sum_{non-top} p w], with k the number of
    # most probable states, w = (ln P - max ln P)/T and r = sum_{non-top} e^w.
    # The bracket keeps full relative precision when P_T is nearly degenerate.
    w = logp / t
    w = w - w.max()
    at_top = w == 0.0
    k = int(at_top.sum())
    e = np.exp(w[~at_top])
    r = float(e.sum())
    lse = np.log1p(r / k)
    excess = float(lse - (e @ w[~at_top]) / (k * (1.0 + r / k)))
    return math.log(k), excess


def _log_rescaled(logp: np.ndarray, t: float) -> np.ndarray:
    w = logp / t
    w = w - w.max()
    at_top = w == 0.0
    k = int(at_top.sum())
    rest = float(np.exp(w[~at_top]).sum())
    return w - (np.log(k) + np.log1p(rest / k))


def rescaled_entropy(logp: np.ndarray, t: float) -> float:
    base, excess = _entropy_parts(logp, t)
    return base + excess


def _rescaled_variance(logp: np.ndarray, t: float) -> float:
    p = np.exp(_log_rescaled(logp, t))
    d = logp - logp.max()
    mean = float(p @ d)
    return float(p @ (d - mean) ** 2)


# central five-point stencil in ln T; a fixed small step keeps the
# truncation error negligible even where S(T) varies by orders of magnitude
# between neighbouring grid points
_LOG_STEP = 1e-4
_OFFSETS = np.array([-2.0, -1.0, 1.0, 2.0])
_WEIGHTS = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0


def response_derivative(logp: np.ndarray, t: float, step: float = _LOG_STEP) -> float:
    """T dS/dT = dS/d ln T by a five-point central difference in ln T."""
    vals = np.array([_entropy_parts(logp, t * math.exp(o * step))[1] for o in _OFFSETS])
    return float(_WEIGHTS @ vals / step)


def _quadratic_peak(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    k = int(np.argmax(y))
    if k == 0 or k == len(y) - 1:
        return float(x[k]), float(y[k])
    xs, ys = x[k - 1:k + 2], y[k - 1:k + 2]
    a, b, c = np.polyfit(xs, ys, 2)
    if a >= 0:
        return float(x[k]), float(y[k])
    xv = -b / (2 * a)
    xv = float(np.clip(xv, xs[0], xs[2]))
    return xv, float(np.polyval([a, b, c], xv))


@dataclass(frozen=True)
class ScanResult:
    t_grid: np.ndarray
    entropy_curve: np.ndarray
    response_curve: np.ndarray
    t_max: float
    r_max: float
    subset_id: tuple = ()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["T", "S", "R_U"])
            for t, s, r in zip(self.t_grid, self.entropy_curve, self.response_curve):
                w.writerow([f"{t:.12g}", f"{s:.12g}", f"{r:.12g}"])

    def summary(self) -> dict:
        return {"t_max": self.t_max, "r_max": self.r_max,
                "subset_id": list(self.subset_id), "points": int(len(self.t_grid))}


def response_function_scan(dist: ConfigDistribution, t_grid=None,
                           subset_id: tuple = ()) -> ScanResult:
    """Entropy S(T) of the rescaled distribution and R_U = T dS/dT.

    R_U is the derivative of S with respect to ln T, taken by a central
    five-point difference around each grid point; the peak location is
    refined by a parabola through the discrete maximum and its two neighbours.
    """
    t = default_t_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.shape[0] < 5:
        raise ValidationError("T grid needs at least 5 points")
    if np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValidationError("T grid must be positive and strictly increasing")
    if len(dist) < 2:
        raise DegenerateDistribution("single-atom distribution: R_U is identically 0")
    logp = np.log(dist.probs)
    s = np.array([rescaled_entropy(logp, x) for x in t])
    r = np.array([response_derivative(logp, x) for x in t])
    if np.ptp(logp) < 1e-12:
        return ScanResult(t, s, np.zeros_like(r), float("nan"), 0.0, tuple(subset_id))
    t_max, r_max = _quadratic_peak(t, r)
    return ScanResult(t, s, r, t_max, r_max, tuple(subset_id))


def response_by_variance(dist: ConfigDistribution, t_grid) -> np.ndarray:
    """Closed form R_U(T) = Var_T[ln P] / T^2 (used to cross-check the scan)."""
    logp = np.log(dist.probs)
    t = np.asarray(t_grid, dtype=float)
    return np.array([_rescaled_variance(logp, x) / x ** 2 for x in t])


def _power_law(n, t_inf, a, b):
    return t_inf + a * np.power(n, -b)


def _exponential(n, t_inf, a, b):
    return t_inf + a * np.exp(-b * n)


def _fit_curve(fn, n, y, p0):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            p, _ = curve_fit(fn, n, y, p0=p0, maxfev=20_000)
        return {"t_inf": float(p[0]), "a": float(p[1]), "b": float(p[2])}
    except (RuntimeError, ValueError):
        return {"t_inf": float("nan"), "a": float("nan"), "b": float("nan")}


@dataclass(frozen=True)
class SubsetScanSummary:
    scans: list
    sizes: list
    mean_t_max: dict
    sd_t_max: dict
    power_fit: dict = field(default_factory=dict)
    exponential_fit: dict = field(default_factory=dict)


def subset_scan(panel: SignPanel, sizes, sets_per_size: int = 100, seed: int = 0,
                t_grid=None) -> SubsetScanSummary:
    """Scan random asset subsets of each size and summarize T_max(N).

    All subsets are used when there are at most ``sets_per_size`` of them.
    T_max(N) is extrapolated with T_inf + a N^-b and T_inf + a exp(-b N).
    """
    rng = np.random.default_rng(seed)
    scans, means, sds = [], {}, {}
    for size in sizes:
        size = int(size)
        if not 1 <= size <= panel.n:
            raise ValidationError(f"subset size {size} outside 1..{panel.n}")
        if size * math.log(2) > math.log(panel.m):
            warnings.warn(f"N={size}: 2^N exceeds M={panel.m}; configurations undersampled",
                          RuntimeWarning, stacklevel=2)
        total = math.comb(panel.n, size)
        if total <= sets_per_size:
            subsets = list(itertools.combinations(range(panel.n), size))
        else:
            seen = set()
            while len(seen) < sets_per_size:
                seen.add(tuple(sorted(rng.choice(panel.n, size, replace=False).tolist())))
            subsets = sorted(seen)
        vals = []
        for sub in subsets:
            dist = empirical_distribution(panel.subset(sub))
            try:
                res = response_function_scan(dist, t_grid, subset_id=sub)
            except DegenerateDistribution:
                continue
            scans.append(res)
            if np.isfinite(res.t_max):
                vals.append(res.t_max)
        means[size] = float(np.mean(vals)) if vals else float("nan")
        sds[size] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    ns = np.array([k for k in means if np.isfinite(means[k])], dtype=float)
    ys = np.array([means[int(k)] for k in ns])
    pw, ex = {}, {}
    if ns.shape[0] >= 3:
        pw = _fit_curve(_power_law, ns, ys, (ys[-1], ys[0] - ys[-1], 1.0))
        ex = _fit_curve(_exponential, ns, ys, (ys[-1], ys[0] - ys[-1], 0.5))
    return SubsetScanSummary(scans, [int(s) for s in sizes], means, sds, pw, ex)


# --------------------------------------------------------------------------- #
# sampling significance
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SignificanceDiagnostic:
    h_s: float
    h_k: float
    m_counts: dict
    sample_size: int
    system_size: int

    @property
    def upper_bound(self) -> float:
        return min(self.system_size * math.log(2), math.log(self.sample_size))


def occupancy_classes(counts) -> dict:
    """m_k: number of distinct configurations observed exactly k times."""
    ks, mk = np.unique(np.asarray(counts, dtype=np.int64), return_counts=True)
    return {int(k): int(m) for k, m in zip(ks, mk)}


def sampling_significance(panel: SignPanel) -> SignificanceDiagnostic:
    """H[s] = -sum k m_k/M ln(k/M) and H[K] = H[s] - sum k m_k/M ln m_k."""
    if panel.m == 0:
        raise ValidationError("empty panel")
    _, counts = configuration_counts(panel)
    M = panel.m
    mk = occupancy_classes(counts)
    hs = -sum(k * m / M * math.log(k / M) for k, m in mk.items())
    hk = hs - sum(k * m / M * math.log(m) for k, m in mk.items())
    return SignificanceDiagnostic(hs, hk, mk, M, panel.n)


# --------------------------------------------------------------------------- #
# bounded discrete power law
# --------------------------------------------------------------------------- #

def _zeta_terms(alpha: float, x_max: int):
    x = np.arange(1, x_max + 1, dtype=float)
    lx = np.log(x)
    w = np.exp(-alpha * lx)
    return w.sum(), -(w * lx).sum(), (w * lx * lx).sum()


def power_law_cdf(alpha: float, x_max: int) -> np.ndarray:
    w = np.arange(1, x_max + 1, dtype=float) ** -alpha
    c = np.cumsum(w)
    return c / c[-1]


def synth_power_law(alpha: float, x_max: int, length: int, seed=0) -> np.ndarray:
    """Smallest x with sum_{y<=x} y^-alpha >= u sum_{y<=x_max} y^-alpha, u ~ U[0,1]."""
    if alpha < 0:
        raise ValidationError("alpha must be non-negative")
    if x_max < 1:
        raise ValidationError("x_max must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    c = np.cumsum(np.arange(1, x_max + 1, dtype=float) ** -alpha)
    u = rng.random(length)
    x = np.searchsorted(c, u * c[-1], side="left") + 1
    return np.minimum(x, x_max).astype(np.int64)


def power_law_mle(mean_log: float, x_max: int, lo: float = 0.0, hi: float = 20.0,
                  tol: float = 1e-12) -> float:
    """Solve mean(ln x) = sum x^-a ln x / sum x^-a for a by bisection.

    The right side decreases in a, so the root is bracketed by [lo, hi]
    whenever the sample mean lies between the endpoint values.
    """
    def g(a):
        z, dz, _ = _zeta_terms(a, x_max)
        return -dz / z - mean_log
    glo, ghi = g(lo), g(hi)
    if glo <= 0:
        return lo
    if ghi >= 0:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def power_law_sigma(alpha: float, x_max: int, n: int) -> float:
    """Gaussian-approximation standard error: 1/sqrt(n [z''/z - (z'/z)^2])."""
    z, dz, d2z = _zeta_terms(alpha, x_max)
    return float(1.0 / math.sqrt(n * (d2z / z - (dz / z) ** 2)))


def _ks(counts: np.ndarray, alpha: float, x_max: int) -> float:
    emp = np.cumsum(counts) / counts.sum()
    return float(np.max(np.abs(emp - power_law_cdf(alpha, x_max))))


@dataclass(frozen=True)
class ZipfFit:
    alpha_mle: float
    sigma_alpha: float
    x_max: int
    ks_statistic: float
    p_value: float
    bootstrap_count: int

    @property
    def rejected(self) -> bool:
        return self.p_value < 0.05


def _fit_counts(counts: np.ndarray, x_max: int) -> float:
    n = counts.sum()
    mean_log = float(counts @ np.log(np.arange(1, x_max + 1))) / n
    return power_law_mle(mean_log, x_max)


def zipf_test_sample(sample, x_max: int | None = None, bootstrap_count: int = 1000,
                     seed=0) -> ZipfFit:
    """Power-law test of an integer sample in 1..x_max with a parametric bootstrap."""
    x = np.asarray(sample, dtype=np.int64)
    if x.size == 0:
        raise ValidationError("empty sample")
    x_max = int(x.max()) if x_max is None else int(x_max)
    if x.min() < 1 or x.max() > x_max:
        raise ValidationError("sample values must lie in 1..x_max")
    if x_max < 10:
        raise InsufficientSupport(f"support size {x_max} < 10")
    if bootstrap_count < 1:
        raise ValidationError("bootstrap_count must be >= 1")
    counts = np.bincount(x, minlength=x_max + 1)[1:].astype(float)
    return _zipf_from_counts(counts, bootstrap_count, seed)


def _zipf_from_counts(counts: np.ndarray, bootstrap_count: int, seed) -> ZipfFit:
    x_max = counts.shape[0]
    n = int(counts.sum())
    alpha = _fit_counts(counts, x_max)
    d = _ks(counts, alpha, x_max)
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(bootstrap_count):
        syn = synth_power_law(alpha, x_max, n, rng)
        c = np.bincount(syn, minlength=x_max + 1)[1:].astype(float)
        a = _fit_counts(c, x_max)
        if _ks(c, a, x_max) > d:
            exceed += 1
    return ZipfFit(alpha, power_law_sigma(alpha, x_max, n), x_max, d,
                   exceed / bootstrap_count, bootstrap_count)


def _infer_counts(dist: ConfigDistribution, sample_size: int | None) -> np.ndarray:
    p = dist.probs
    if sample_size is not None:
        c = p * sample_size
        if np.max(np.abs(c - np.round(c))) > 1e-6:
            raise ValidationError("probabilities are not multiples of 1/sample_size")
        return np.round(c)
    base = 1.0 / p.min()
    for k in range(1, 10_001):
        m = round(k * base)
        c = p * m
        if np.max(np.abs(c - np.round(c))) < 1e-6 * max(1.0, m / 1e6):
            return np.round(c)
    raise ValidationError("cannot recover integer counts; pass sample_size")


def rank_counts(dist: ConfigDistribution, sample_size: int | None = None) -> np.ndarray:
    """Counts ordered by descending probability; ties by lexicographic configuration."""
    d = dist.sorted_lex()
    counts = _infer_counts(d, sample_size)
    order = np.argsort(-counts, kind="stable")
    return counts[order]


def zipf_test(dist, bootstrap_count: int = 1000, seed=0,
              sample_size: int | None = None) -> ZipfFit:
    """Rank-frequency power-law test of an empirical configuration distribution.

    Each observation is replaced by the rank of its configuration (rank 1 is
    the most frequent); x_max is the support size. Accepts a SignPanel or a
    ConfigDistribution (counts recovered from probabilities, or from
    ``sample_size``).
    """
    if isinstance(dist, SignPanel):
        _, counts = configuration_counts(dist)
        dist_counts = np.sort(counts)[::-1].astype(float)
    else:
        dist_counts = rank_counts(dist, sample_size)
    if dist_counts.shape[0] < 10:
        raise InsufficientSupport(f"support size {dist_counts.shape[0]} < 10")
    if bootstrap_count < 1:
        raise ValidationError("bootstrap_count must be >= 1")
    return _zipf_from_counts(dist_counts, bootstrap_count, seed)


# --------------------------------------------------------------------------- #
# entropy versus utility
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class EntropyUtility:
    points: np.ndarray
    slope: float
    intercept: float
    relative_nonlinearity: float
    weights: np.ndarray


def entropy_utility_relation(dist, sample_size: int | None = None) -> EntropyUtility:
    """Density-of-states estimate of S(U) from occupancy classes.

    For each occupancy k: x = -ln(k/M) and y = ln m_k, fitted by weighted
    least squares with weights k m_k / M. The relative nonlinearity is the
    RMS residual divided by the range of y.
    """
    if isinstance(dist, SignPanel):
        _, counts = configuration_counts(dist)
    else:
        counts = _infer_counts(dist, sample_size)
    M = counts.sum()
    mk = occupancy_classes(counts.astype(np.int64))
    if len(mk) < 3:
        raise InsufficientLevels(f"{len(mk)} occupancy levels; need at least 3")
    ks = np.array(sorted(mk), dtype=float)
    ms = np.array([mk[int(k)] for k in ks], dtype=float)
    x = -np.log(ks / M)
    y = np.log(ms)
    w = ks * ms / M
    A = np.vstack([x, np.ones_like(x)]).T
    sw = np.sqrt(w)
    (slope, icpt), *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    resid = y - (slope * x + icpt)
    yr = np.ptp(y)
    nonlin = float(np.sqrt(np.mean(resid ** 2)) / yr) if yr > 0 else 0.0
    return EntropyUtility(np.column_stack([x, y]), float(slope), float(icpt), nonlin, w)

