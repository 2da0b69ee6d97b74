"""Trend-reversal prediction: conditional flip probabilities, threshold
sweeps and ROC curves, blocked cross-validation, and models of the number of
simultaneous reversals (pairwise on indicators, truncated Poisson,
dichotomized Gaussian).
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit, ndtr, ndtri

from .core import (CouplingModel, InsufficientSample, NonConvergence,
                   SignPanel, SizeLimitExceeded, ValidationError,
                   all_configurations)
from .infer import RpmlConfig, fit_rpml

DEFAULT_LAGS = 2
W_ENUMERATION_LIMIT = 12


class LagMismatch(ValidationError):
    pass


class NoPositives(ValidationError):
    pass


class NoNegatives(ValidationError):
    pass


class InfeasibleCovariance(UserWarning):
    """Target covariance outside the range reachable by the Gaussian threshold model."""


def default_thresholds() -> np.ndarray:
    return np.round(np.arange(0, 101) / 100.0, 2)


# --------------------------------------------------------------------------- #
# flip probabilities
# --------------------------------------------------------------------------- #

def flip_probability(model: CouplingModel, prev, current, unit: int,
                     history=None) -> float:
    """P(s_{i,t} = -s_{i,t-1} | s_{-i,t}, history).

    ``prev`` is s_{t-1} (only its ``unit`` entry enters the memoryless form),
    ``current`` is s_t (entry ``unit`` is ignored) and ``history`` lists
    s_{t-1}, ..., s_{t-L} for a model with L lag matrices.
    p = 1/2 [1 - s_{i,t-1} tanh(beta (sum_{j!=i} J_ij s_jt + h_i
                                      + sum_tau sum_j K^tau_ij s_{j,t-tau}))]
    """
    n = model.n
    if not 0 <= unit < n:
        raise ValidationError(f"unit {unit} out of range")
    hist = [] if history is None else list(history)
    if len(hist) != model.lag_count:
        raise LagMismatch(f"history has {len(hist)} lags, model has {model.lag_count}")
    cur = np.asarray(current, dtype=float).copy()
    prev = np.asarray(prev, dtype=float)
    if cur.shape != (n,) or prev.shape != (n,):
        raise ValidationError("configurations must have length N")
    cur[unit] = 0.0
    a = model.influences[unit] @ cur + model.fields[unit]
    for K, past in zip(model.lags, hist):
        a += K[unit] @ np.asarray(past, dtype=float)
    return float(0.5 * (1.0 - prev[unit] * math.tanh(model.beta * a)))


def flip_probabilities(model: CouplingModel, panel: SignPanel, start: int | None = None):
    """Flip probabilities for every unit and every t >= max(1, L).

    Returns (times index array, p of shape (N, T), actual flips of shape (N, T)).
    """
    if model.n != panel.n:
        raise ValidationError("model and panel sizes differ")
    L = model.lag_count
    t0 = max(1, L) if start is None else max(start, 1, L)
    s = panel.values.astype(float)
    t_idx = np.arange(t0, panel.m)
    cur = s[:, t_idx]
    prev = s[:, t_idx - 1]
    a = model.influences @ cur + model.fields[:, None]
    for tau, K in enumerate(model.lags, start=1):
        a += K @ s[:, t_idx - tau]
    p = 0.5 * (1.0 - prev * np.tanh(model.beta * a))
    actual = (cur != prev).astype(np.int8)
    return t_idx, p, actual


# --------------------------------------------------------------------------- #
# classifier evaluation
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ClassifierReport:
    thresholds: np.ndarray
    tp_rate: np.ndarray
    fp_rate: np.ndarray
    accuracy: np.ndarray
    auc: float
    grid_auc: float

    @property
    def best_accuracy(self) -> tuple[float, float]:
        k = int(np.argmax(self.accuracy))
        return float(self.accuracy[k]), float(self.thresholds[k])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "tp_rate", "fp_rate", "accuracy"])
            for row in zip(self.thresholds, self.tp_rate, self.fp_rate, self.accuracy):
                w.writerow([f"{x:.12g}" for x in row])

    def to_dict(self) -> dict:
        return {"thresholds": self.thresholds.tolist(), "tp_rate": self.tp_rate.tolist(),
                "fp_rate": self.fp_rate.tolist(), "accuracy": self.accuracy.tolist(),
                "auc": self.auc, "grid_auc": self.grid_auc}


def _trapezoid_auc(fp, tp) -> float:
    fp = np.concatenate([[0.0], np.asarray(fp, float), [1.0]])
    tp = np.concatenate([[0.0], np.asarray(tp, float), [1.0]])
    order = np.lexsort((tp, fp))
    return float(np.trapezoid(tp[order], fp[order]))


def roc_auc(scores, actual) -> float:
    """Area under the ROC curve traced by thresholding at every distinct score."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(actual).ravel().astype(bool)
    P, N = int(y.sum()), int((~y).sum())
    if P == 0:
        raise NoPositives("no positive outcomes: tp rate undefined")
    if N == 0:
        raise NoNegatives("no negative outcomes: fp rate undefined")
    levels = np.unique(s)[::-1]
    # predicted positive iff score >= level, from the strictest threshold down
    tp = np.array([np.sum(y & (s >= v)) for v in levels]) / P
    fp = np.array([np.sum(~y & (s >= v)) for v in levels]) / N
    return _trapezoid_auc(fp, tp)


def evaluate_classifier(probabilities, actual_flips, threshold_grid=None) -> ClassifierReport:
    """Confusion statistics per threshold; a flip is predicted iff p > alpha.

    ``auc`` is the exact ROC area (every distinct score as a threshold);
    ``grid_auc`` uses only the grid points. Both add the (0,0) and (1,1) anchors.
    """
    p = np.asarray(probabilities, dtype=float).ravel()
    y = np.asarray(actual_flips).ravel()
    if p.shape != y.shape:
        raise ValidationError("probabilities and outcomes differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("outcomes must be 0/1")
    grid = default_thresholds() if threshold_grid is None else np.asarray(threshold_grid, float)
    if np.any((grid < 0) | (grid > 1)):
        raise ValidationError("thresholds must lie in [0, 1]")
    y = y.astype(bool)
    P, N = int(y.sum()), int((~y).sum())
    if P == 0:
        raise NoPositives("no positive outcomes: tp rate undefined")
    if N == 0:
        raise NoNegatives("no negative outcomes: fp rate undefined")
    pred = p[None, :] > grid[:, None]
    tp = (pred & y).sum(axis=1)
    fp = (pred & ~y).sum(axis=1)
    tn = N - fp
    tpr, fpr = tp / P, fp / N
    acc = (tp + tn) / (P + N)
    return ClassifierReport(grid, tpr, fpr, acc, roc_auc(p, y), _trapezoid_auc(fpr, tpr))


# --------------------------------------------------------------------------- #
# cross-validation
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class CrossValidationReport:
    per_asset: tuple
    thresholds: np.ndarray
    mean_tp_rate: np.ndarray
    mean_fp_rate: np.ndarray
    mean_accuracy: np.ndarray
    mean_auc: float
    best_mean_accuracy: float
    best_threshold: float
    predictions: np.ndarray
    folds: tuple

    def predictions_csv(self, path, panel: SignPanel) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "asset", "p_flip", "actual"])
            for t, i, p, a in self.predictions:
                w.writerow([panel.times[int(t)], panel.assets[int(i)], f"{p:.12g}", int(a)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "tp_rate", "fp_rate", "accuracy"])
            for row in zip(self.thresholds, self.mean_tp_rate, self.mean_fp_rate,
                           self.mean_accuracy):
                w.writerow([f"{x:.12g}" for x in row])


def contiguous_folds(m: int, folds: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, m, folds + 1).round().astype(int)
    return [(int(edges[k]), int(edges[k + 1])) for k in range(folds)]


def _independent_model(panel: SignPanel, lag_count: int) -> CouplingModel:
    q = np.clip(panel.values.mean(axis=1), -1 + 1e-9, 1 - 1e-9)
    n = panel.n
    return CouplingModel(np.zeros((n, n)), np.arctanh(q),
                         tuple(np.zeros((n, n)) for _ in range(lag_count)))


def kfold_cross_validation(panel: SignPanel, config: RpmlConfig | None = None,
                           folds: int = 10, independent: bool = False,
                           threshold_grid=None) -> CrossValidationReport:
    """Blocked k-fold evaluation of flip prediction.

    Fold k holds out a contiguous time block; the model is fitted on the
    remaining blocks joined end to end and predicts flips inside the held-out
    block from the observed contemporaneous others (and history). With
    ``independent`` the couplings are forced to zero and only the fields are
    estimated. Predictions of all folds are pooled per asset.
    """
    config = config or RpmlConfig()
    m, n = panel.m, panel.n
    if folds < 2:
        raise ValidationError("folds must be >= 2")
    if m < 20 * folds:
        raise InsufficientSample(f"M={m} < 20 x folds={20 * folds}")
    blocks = contiguous_folds(m, folds)
    rows = []
    for a, b in blocks:
        keep = np.r_[0:a, b:m]
        train = SignPanel.from_array(panel.values[:, keep])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            model = (_independent_model(train, config.lag_count) if independent
                     else fit_rpml(train, config))
        t_idx, p, act = flip_probabilities(model, panel)
        sel = (t_idx >= a) & (t_idx < b)
        for i in range(n):
            for t, pv, av in zip(t_idx[sel], p[i, sel], act[i, sel]):
                rows.append((t, i, pv, av))
    pred = np.array(rows, dtype=float)
    grid = default_thresholds() if threshold_grid is None else np.asarray(threshold_grid, float)
    reports = []
    for i in range(n):
        r = pred[pred[:, 1] == i]
        reports.append(evaluate_classifier(r[:, 2], r[:, 3].astype(int), grid))
    tp = np.mean([r.tp_rate for r in reports], axis=0)
    fp = np.mean([r.fp_rate for r in reports], axis=0)
    acc = np.mean([r.accuracy for r in reports], axis=0)
    k = int(np.argmax(acc))
    order = np.lexsort((pred[:, 1], pred[:, 0]))
    return CrossValidationReport(tuple(reports), grid, tp, fp, acc,
                                 float(np.mean([r.auc for r in reports])),
                                 float(acc[k]), float(grid[k]), pred[order],
                                 tuple(blocks))


# --------------------------------------------------------------------------- #
# simultaneous reversals
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ReversalCountDistribution:
    counts: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if abs(p.sum() - 1) > 1e-9:
            raise ValidationError("count probabilities must sum to 1")
        object.__setattr__(self, "probabilities", p / p.sum())


def reversal_indicators(panel: SignPanel) -> np.ndarray:
    """x_{i,t} = 1 if s_{i,t+1} = -s_{i,t}; shape (M - 1, N)."""
    if panel.m < 2:
        raise InsufficientSample("need M >= 2")
    v = panel.values
    return (v[:, 1:] != v[:, :-1]).T.astype(np.int8)


def _count_distribution(k: np.ndarray, n: int) -> ReversalCountDistribution:
    c = np.bincount(k, minlength=n + 1)[: n + 1].astype(float)
    return ReversalCountDistribution(np.arange(n + 1), c / c.sum())


def reversal_count_distribution(panel: SignPanel) -> ReversalCountDistribution:
    """Empirical distribution of K_t = sum_i x_{i,t}."""
    return _count_distribution(reversal_indicators(panel).sum(axis=1), panel.n)


@dataclass(frozen=True)
class ReversalWModel:
    """p(x) ~ exp(sum_{i,j} W_ij x_i x_j) on x in {0,1}^N; W symmetric with
    a free diagonal acting as a bias."""
    W: np.ndarray

    @property
    def n(self) -> int:
        return self.W.shape[0]

    def count_distribution(self, limit: int = W_ENUMERATION_LIMIT) -> ReversalCountDistribution:
        n = self.n
        if n > limit:
            raise SizeLimitExceeded(f"N={n} exceeds the enumeration limit {limit}")
        x = (all_configurations(n) > 0).astype(float)
        lw = np.einsum("ki,ij,kj->k", x, self.W, x)
        w = np.exp(lw - lw.max())
        k = x.sum(axis=1).astype(int)
        c = np.bincount(k, weights=w, minlength=n + 1)
        return ReversalCountDistribution(np.arange(n + 1), c / c.sum())

    def conditional_logit(self, x: np.ndarray) -> np.ndarray:
        """log-odds of x_i = 1 given the others: W_ii + 2 sum_{j!=i} W_ij x_j."""
        off = self.W - np.diag(np.diag(self.W))
        return np.diag(self.W)[None, :] + 2.0 * x @ off.T


def _w_pl(theta, x, n, lam):
    A = theta[: n * n].reshape(n, n)
    A = A - np.diag(np.diag(A))
    b = theta[n * n:]
    z = x @ A.T + b
    # log p(x_i | rest) = x z - log(1 + e^z)
    val = float(np.sum(x * z + log_expit(-z))) / x.shape[0]
    r = (x - expit(z)) / x.shape[0]
    gA = r.T @ x
    np.fill_diagonal(gA, 0.0)
    gb = r.sum(axis=0)
    val -= lam * (np.sum(A * A) + np.sum(b * b))
    g = np.concatenate([(gA - 2 * lam * A).ravel(), gb - 2 * lam * b])
    return -val, -g


def fit_w_model(x: np.ndarray, lam: float | None = None, max_iter: int = 2000) -> ReversalWModel:
    """Regularized pseudo-likelihood on 0/1 indicators (logistic conditionals).

    Each unit's conditional is a logistic regression with bias W_ii and
    slopes 2 W_ij; slopes are symmetrized after fitting.
    """
    x = np.asarray(x, dtype=float)
    t, n = x.shape
    lam = 1.0 / t if lam is None else lam
    mu = np.clip(x.mean(axis=0), 1e-6, 1 - 1e-6)
    theta0 = np.concatenate([np.zeros(n * n), np.log(mu / (1 - mu))])
    res = minimize(_w_pl, theta0, args=(x, n, lam), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": 1e-8, "ftol": 1e-15})
    if not np.all(np.isfinite(res.x)):
        raise NonConvergence("W-model pseudo-likelihood diverged")
    A = res.x[: n * n].reshape(n, n)
    np.fill_diagonal(A, 0.0)
    W = (A + A.T) / 4.0
    W[np.diag_indices(n)] = res.x[n * n:]
    return ReversalWModel(W)


def truncated_poisson(rate: float, n: int) -> ReversalCountDistribution:
    """Poisson(rate) restricted to 0..n and renormalized."""
    k = np.arange(n + 1)
    if rate <= 0:
        p = (k == 0).astype(float)
    else:
        lp = k * math.log(rate) - rate - np.array([math.lgamma(j + 1) for j in k])
        p = np.exp(lp - lp.max())
    return ReversalCountDistribution(k, p / p.sum())


# bivariate normal CDF -------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def bivariate_normal_cdf(a: float, b: float, rho: float) -> float:
    """Phi_2(a, b; rho) = Phi(a) Phi(b) + int_0^rho phi_2(a, b; r) dr.

    With r = sin(theta) the integrand becomes smooth on [0, asin(rho)] and a
    64-point Gauss-Legendre rule gives about 1e-12 absolute accuracy.
    """
    rho = float(np.clip(rho, -1.0, 1.0))
    base = ndtr(a) * ndtr(b)
    if rho == 0.0:
        return float(base)
    top = math.asin(rho)
    th = 0.5 * top * (_GL_NODES + 1.0)
    s, c = np.sin(th), np.cos(th)
    with np.errstate(divide="ignore", over="ignore"):
        f = np.exp(-(a * a - 2.0 * a * b * s + b * b) / (2.0 * c * c)) / (2.0 * math.pi)
    return float(base + 0.5 * top * (_GL_WEIGHTS @ f))


def _psi(ga, gb, lam):
    return bivariate_normal_cdf(ga, gb, lam) - ndtr(ga) * ndtr(gb)


@dataclass(frozen=True)
class DgModel:
    gamma: np.ndarray
    lam: np.ndarray
    infeasible: np.ndarray | None = None

    def __post_init__(self):
        L = np.asarray(self.lam, dtype=float)
        if not np.allclose(L, L.T) or not np.allclose(np.diag(L), 1.0):
            raise ValidationError("Lambda must be symmetric with a unit diagonal")
        if np.any(np.abs(L) > 1 + 1e-12):
            raise ValidationError("Lambda entries must lie in [-1, 1]")

    @property
    def n(self) -> int:
        return self.gamma.shape[0]

    def sample(self, size: int, seed=0) -> np.ndarray:
        """0/1 samples x_i = 1[u_i > 0], u ~ N(gamma, Lambda).

        A Lambda that is not positive semi-definite is projected by clipping
        negative eigenvalues and rescaling to a unit diagonal.
        """
        rng = np.random.default_rng(seed)
        w, V = np.linalg.eigh(self.lam)
        w = np.clip(w, 0.0, None)
        L = V * np.sqrt(w)
        d = np.sqrt(np.maximum((L * L).sum(axis=1), 1e-300))
        L = L / d[:, None]
        u = rng.standard_normal((size, self.n)) @ L.T + self.gamma
        return (u > 0).astype(np.int8)

    def count_distribution(self, samples: int = 100_000, seed=0) -> ReversalCountDistribution:
        k = self.sample(samples, seed).sum(axis=1)
        return _count_distribution(k, self.n)


def fit_dg(x: np.ndarray, tol: float = 1e-10) -> DgModel:
    """gamma_i = Phi^-1(mu_i); Lambda_ij by bisection on
    Phi_2(gamma_i, gamma_j, lambda) - Phi(gamma_i) Phi(gamma_j) = Sigma_ij
    over lambda in (-1 + 1e-9, 1 - 1e-9). Unreachable targets are clipped to
    the nearest endpoint and flagged.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[1]
    mu = x.mean(axis=0)
    if np.any((mu <= 0) | (mu >= 1)):
        raise ValidationError("every indicator must take both values")
    gamma = ndtri(mu)
    cov = np.cov(x, rowvar=False, bias=True)
    lam = np.eye(n)
    bad = np.zeros((n, n), dtype=bool)
    lo0, hi0 = -1 + 1e-9, 1 - 1e-9
    for i in range(n):
        for j in range(i + 1, n):
            target = cov[i, j]
            f_lo = _psi(gamma[i], gamma[j], lo0) - target
            f_hi = _psi(gamma[i], gamma[j], hi0) - target
            if f_lo > 0 or f_hi < 0:
                bad[i, j] = bad[j, i] = True
                lam[i, j] = lam[j, i] = lo0 if f_lo > 0 else hi0
                continue
            lo, hi = lo0, hi0
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if _psi(gamma[i], gamma[j], mid) < target:
                    lo = mid
                else:
                    hi = mid
            lam[i, j] = lam[j, i] = 0.5 * (lo + hi)
    if bad.any():
        warnings.warn(f"{int(bad.sum()) // 2} reversal covariances are not reachable; "
                      "clipped", InfeasibleCovariance, stacklevel=2)
    return DgModel(gamma, lam, bad)


@dataclass(frozen=True)
class ReversalModels:
    wmodel: ReversalWModel
    poisson_rate: float
    dg: DgModel

    def poisson(self) -> ReversalCountDistribution:
        return truncated_poisson(self.poisson_rate, self.wmodel.n)


def fit_reversal_models(panel: SignPanel, lam: float | None = None) -> ReversalModels:
    x = reversal_indicators(panel)
    return ReversalModels(fit_w_model(x, lam), float(x.sum(axis=1).mean()), fit_dg(x))


def count_kld(p: ReversalCountDistribution, q: ReversalCountDistribution) -> float:
    """KL(p || q) over counts 0..N; infinite if q misses mass of p."""
    a, b = p.probabilities, q.probabilities
    nz = a > 0
    if np.any(b[nz] <= 0):
        return float("inf")
    return float(np.sum(a[nz] * np.log(a[nz] / b[nz])))


def _smoothed(dist: ReversalCountDistribution, samples: int) -> ReversalCountDistribution:
    # add-half pseudocounts keep simulated histograms absolutely continuous
    c = dist.probabilities * samples + 0.5
    return ReversalCountDistribution(dist.counts, c / c.sum())


def compare_reversal_models(panel: SignPanel, subset_size: int | None = None,
                            subsets: int = 20, seed: int = 0,
                            dg_samples: int = 100_000) -> dict:
    """Mean KL divergence from the empirical count distribution to the
    pairwise (exact enumeration), truncated Poisson and DG (simulated,
    add-half smoothed) count distributions, over random asset subsets."""
    n = panel.n
    size = n if subset_size is None else int(subset_size)
    if size > W_ENUMERATION_LIMIT:
        raise SizeLimitExceeded(f"subset size {size} exceeds {W_ENUMERATION_LIMIT}")
    if not 1 <= size <= n:
        raise ValidationError(f"subset size must lie in 1..{n}")
    rng = np.random.default_rng(seed)
    if size == n:
        groups = [tuple(range(n))]
    else:
        groups = [tuple(sorted(rng.choice(n, size, replace=False).tolist()))
                  for _ in range(subsets)]
    rows = []
    for k, g in enumerate(groups):
        sub = panel.subset(g)
        emp = reversal_count_distribution(sub)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", InfeasibleCovariance)
            fits = fit_reversal_models(sub)
        dg = _smoothed(fits.dg.count_distribution(dg_samples, seed + k), dg_samples)
        rows.append({"subset": list(g),
                     "pairwise": count_kld(emp, fits.wmodel.count_distribution()),
                     "poisson": count_kld(emp, fits.poisson()),
                     "dg": count_kld(emp, dg)})
    out = {key: float(np.mean([r[key] for r in rows])) for key in ("pairwise", "poisson", "dg")}
    out["subsets"] = rows
    return out
