"""Large-N estimation of pairwise models: regularized pseudo-maximum
likelihood (optionally with lagged terms), first-order mean-field inversion,
second-order TAP inversion, and the reconstruction error.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .core import (CouplingModel, DimensionMismatch, InsufficientSample,
                   MomentSet, NonConvergence, SaturatedMean, SignPanel,
                   SingularCovariance, SmallSampleWarning, ValidationError)

_BLOCK = 131_072


@dataclass(frozen=True)
class RpmlConfig:
    """Settings for pseudo-likelihood fitting.

    ``lam`` of None means 1/M (M = number of usable time points).
    """
    regularization: str = "l2"
    lam: float | None = None
    lag_count: int = 0
    max_iterations: int = 2_000
    gradient_tolerance: float = 1e-6

    def __post_init__(self):
        if self.regularization not in ("l1", "l2"):
            raise ValidationError("regularization must be 'l1' or 'l2'")
        if self.lam is not None and self.lam < 0:
            raise ValidationError("lambda must be non-negative")
        if self.lag_count < 0:
            raise ValidationError("lag_count must be >= 0")
        if not self.gradient_tolerance > 0:
            raise ValidationError("gradient_tolerance must be positive")


@dataclass
class RpmlTrace:
    """Objective values at accepted optimizer iterates (for diagnostics)."""
    objective: list = field(default_factory=list)
    iterations: int = 0
    gradient_norm: float = float("nan")
    converged: bool = False


# --------------------------------------------------------------------------- #
# pseudo-likelihood
# --------------------------------------------------------------------------- #

class _PLData:
    """Design blocks for the pseudo-likelihood of every unit at once.

    Row t of the current block is s_t; lagged blocks hold s_{t - tau}.
    """

    def __init__(self, values: np.ndarray, lag_count: int):
        n, m = values.shape
        if m <= lag_count:
            raise InsufficientSample(f"M={m} must exceed lag_count={lag_count}")
        self.n = n
        self.lag_count = lag_count
        self.x = np.ascontiguousarray(values.T.astype(np.int8))
        self.t0 = lag_count
        self.size = m - lag_count

    def blocks(self):
        L = self.lag_count
        for a in range(self.t0, self.t0 + self.size, _BLOCK):
            b = min(a + _BLOCK, self.t0 + self.size)
            cur = self.x[a:b].astype(np.float64)
            lagged = [self.x[a - tau:b - tau].astype(np.float64) for tau in range(1, L + 1)]
            yield cur, lagged


def _split(theta: np.ndarray, n: int, lag_count: int):
    J = theta[: n * n].reshape(n, n)
    h = theta[n * n: n * n + n]
    K = theta[n * n + n:].reshape(lag_count, n, n)
    return J, h, K


def _pl_value_grad(theta: np.ndarray, data: _PLData):
    """Mean pseudo-log-likelihood summed over units, and its gradient.

    theta packs row-wise J (diagonal ignored), h and K^tau; the model for unit i
    is p(s_i | rest) = exp(s_i a_i) / (2 cosh a_i) with
    a_i = sum_{j != i} J_ij s_j + h_i + sum_tau sum_j K^tau_ij s_{j, t - tau}.
    """
    n, L = data.n, data.lag_count
    J, h, K = _split(theta, n, L)
    J = J - np.diag(np.diag(J))
    val = 0.0
    gJ = np.zeros((n, n))
    gh = np.zeros(n)
    gK = np.zeros((L, n, n))
    for cur, lagged in data.blocks():
        a = cur @ J.T + h
        for tau in range(L):
            a += lagged[tau] @ K[tau].T
        # ln p = s a - ln(2 cosh a), with ln(2 cosh a) = |a| + ln(1 + e^{-2|a|})
        abs_a = np.abs(a)
        val += float(np.einsum("ij,ij->", cur, a) - abs_a.sum()
                     - np.log1p(np.exp(-2.0 * abs_a)).sum())
        r = cur - np.tanh(a)
        gJ += r.T @ cur
        gh += r.sum(axis=0)
        for tau in range(L):
            gK[tau] += r.T @ lagged[tau]
    T = data.size
    val = val / T
    np.fill_diagonal(gJ, 0.0)
    grad = np.concatenate([gJ.ravel(), gh, gK.ravel()]) / T
    return val, grad


def pseudo_log_likelihood(panel: SignPanel, influences, fields, lags=(),
                          lam: float = 0.0, regularization: str = "l2"):
    """Regularized pseudo-log-likelihood and its gradient.

    ``influences`` may be non-symmetric (one row per conditional); its
    diagonal is ignored. Returns (value, grad_J, grad_h, grad_lags).
    PL = (1/T) sum_t sum_i ln (1/2)[1 + s_it tanh(a_it)] - lam * ||theta||.
    """
    n = panel.n
    lags = [np.asarray(k, dtype=float) for k in lags]
    data = _PLData(panel.values, len(lags))
    J = np.array(influences, dtype=float)
    np.fill_diagonal(J, 0.0)
    theta = np.concatenate([J.ravel(), np.asarray(fields, dtype=float).ravel()]
                           + [k.ravel() for k in lags])
    val, grad = _pl_value_grad(theta, data)
    mask = _param_mask(n, len(lags))
    if regularization == "l2":
        val -= lam * float(np.sum((theta * mask) ** 2))
        grad = grad - 2.0 * lam * theta * mask
    elif regularization == "l1":
        val -= lam * float(np.sum(np.abs(theta * mask)))
        grad = grad - lam * np.sign(theta) * mask
    else:
        raise ValidationError("regularization must be 'l1' or 'l2'")
    gJ, gh, gK = _split(grad, n, len(lags))
    return val, gJ.copy(), gh.copy(), [g.copy() for g in gK]


def _param_mask(n: int, lag_count: int) -> np.ndarray:
    mJ = 1.0 - np.eye(n)
    return np.concatenate([mJ.ravel(), np.ones(n), np.ones(lag_count * n * n)])


def fit_rpml(panel: SignPanel, config: RpmlConfig | None = None,
             return_trace: bool = False):
    """Regularized pseudo-maximum-likelihood fit.

    Every conditional p(s_i | rest) is fitted (the objective is a sum of
    independent per-unit terms, optimized jointly with L-BFGS), then J is
    symmetrized as (J + J^T) / 2. Lagged matrices are returned unsymmetrized.
    """
    config = config or RpmlConfig()
    n, m = panel.n, panel.m
    L = config.lag_count
    if m <= L:
        raise InsufficientSample(f"M={m} must exceed lag_count={L}")
    if m < 10 * n:
        warnings.warn(f"M={m} < 10 N; pseudo-likelihood estimates will be noisy",
                      SmallSampleWarning, stacklevel=2)
    data = _PLData(panel.values, L)
    lam = 1.0 / data.size if config.lam is None else float(config.lam)
    mask = _param_mask(n, L)
    dim = mask.size
    q = np.clip(panel.values.mean(axis=1), -0.999, 0.999)
    theta0 = np.zeros(dim)
    theta0[n * n: n * n + n] = np.arctanh(q)
    trace = RpmlTrace()

    if config.regularization == "l2":
        def fun(theta):
            v, g = _pl_value_grad(theta, data)
            v -= lam * np.sum((theta * mask) ** 2)
            g = g - 2.0 * lam * theta * mask
            return -v, -g
        x0 = theta0
        bounds = None
        unpack = lambda x: x
    else:
        # split theta = u - w with u, w >= 0 so the l1 term becomes linear
        def fun(z):
            u, w = z[:dim], z[dim:]
            theta = u - w
            v, g = _pl_value_grad(theta, data)
            v -= lam * np.sum(mask * (u + w))
            gu = g - lam * mask
            gw = -g - lam * mask
            return -v, -np.concatenate([gu, gw])
        x0 = np.concatenate([np.clip(theta0, 0, None), np.clip(-theta0, 0, None)])
        bounds = [(0, None)] * (2 * dim)
        unpack = lambda z: z[:dim] - z[dim:]

    def callback(xk):
        trace.objective.append(-fun(xk)[0])

    trace.objective.append(-fun(x0)[0])
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   callback=callback,
                   options={"maxiter": config.max_iterations, "gtol": config.gradient_tolerance,
                            "ftol": 1e-15, "maxcor": 30, "maxls": 50})
    theta = unpack(res.x)
    _, g = fun(res.x)
    if bounds is not None:
        # projected gradient for the bound-constrained split
        g = np.where((res.x <= 0) & (g > 0), 0.0, g)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    trace.iterations = int(res.nit)
    trace.gradient_norm = gnorm
    trace.converged = gnorm < max(config.gradient_tolerance, 1e-5) or bool(res.success)
    J, h, K = _split(theta, n, L)
    J = J.copy()
    np.fill_diagonal(J, 0.0)
    if not np.all(np.isfinite(theta)):
        raise NonConvergence("pseudo-likelihood optimizer produced non-finite parameters")
    if not trace.converged and res.nit >= config.max_iterations:
        raise NonConvergence(
            f"pseudo-likelihood did not converge in {config.max_iterations} iterations "
            f"(gradient {gnorm:.3g})",
            last=CouplingModel((J + J.T) / 2, h.copy(), tuple(k.copy() for k in K)))
    model = CouplingModel((J + J.T) / 2, h.copy(), tuple(k.copy() for k in K))
    if return_trace:
        return model, trace
    return model


# --------------------------------------------------------------------------- #
# inversion of the self-consistent equations
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class TapInversion:
    """TAP inversion output: the model, the diagonal kept by the diagonal
    trick (before zeroing) and a mask of entries that fell back to first order.
    """
    model: CouplingModel
    raw_diagonal: np.ndarray
    complex_roots: np.ndarray

    @property
    def influences_with_diagonal(self) -> np.ndarray:
        return self.model.influences + np.diag(self.raw_diagonal)


def _check_moments(moments: MomentSet, cond_limit: float = 1e12):
    q = moments.means
    if np.any(np.abs(q) >= 1 - 1e-9):
        bad = np.flatnonzero(np.abs(q) >= 1 - 1e-9).tolist()
        raise SaturatedMean(f"units {bad} have |q| >= 1 - 1e-9")
    C = moments.covariances
    cond = np.linalg.cond(C)
    if not np.isfinite(cond) or cond >= cond_limit:
        raise SingularCovariance(f"covariance condition number {cond:.3g} >= {cond_limit:g}")
    return q, np.linalg.inv(C)


def invert_mean_field(moments: MomentSet, full: bool = False):
    """First-order inversion J = P^{-1} - C^{-1}, P = diag(1 - q^2), J_ii = 0,
    h_i = atanh(q_i) - sum_j J_ij q_j.

    With ``full`` the raw diagonal is returned as a TapInversion-like record.
    """
    q, Cinv = _check_moments(moments)
    Jfull = np.diag(1.0 / (1.0 - q ** 2)) - Cinv
    Jfull = (Jfull + Jfull.T) / 2
    raw = np.diag(Jfull).copy()
    J = Jfull - np.diag(raw)
    h = np.arctanh(q) - J @ q
    model = CouplingModel(J, h)
    if full:
        return TapInversion(model, raw, np.zeros(J.shape, dtype=bool))
    return model


def invert_tap(moments: MomentSet, full: bool = False):
    """Second-order (TAP) inversion.

    For i != j solve q_i q_j J^2 + J + (C^{-1})_ij = 0 with the root that
    tends to -(C^{-1})_ij as q_i q_j -> 0, written as
    J = -2c / (1 + sqrt(1 - 4 q_i q_j c)). A negative discriminant falls back
    to the first-order value and is flagged. Fields:
    h_i = atanh(q_i) - sum_j J_ij q_j + q_i sum_j J_ij^2 (1 - q_j^2).
    The diagonal of P^{-1} - C^{-1} is kept as the raw diagonal.
    """
    q, Cinv = _check_moments(moments)
    c = (Cinv + Cinv.T) / 2
    a = np.outer(q, q)
    disc = 1.0 - 4.0 * a * c
    bad = disc < 0
    np.fill_diagonal(bad, False)
    root = -2.0 * c / (1.0 + np.sqrt(np.maximum(disc, 0.0)))
    J = np.where(bad, -c, root)
    raw = 1.0 / (1.0 - q ** 2) - np.diag(c)
    np.fill_diagonal(J, 0.0)
    J = (J + J.T) / 2
    if bad.any():
        warnings.warn(f"{int(bad.sum()) // 2} TAP couplings had a complex root; "
                      "first-order values used", RuntimeWarning, stacklevel=2)
    h = np.arctanh(q) - J @ q + q * ((J ** 2) @ (1.0 - q ** 2))
    model = CouplingModel(J, h)
    if full:
        return TapInversion(model, raw, bad)
    return model


def reconstruction_error(estimated: CouplingModel, truth: CouplingModel) -> float:
    """sqrt(N) times the RMS deviation of the couplings over pairs i < j."""
    if estimated.n != truth.n:
        raise DimensionMismatch(f"N={estimated.n} vs N={truth.n}")
    n = truth.n
    if n < 2:
        return 0.0
    iu = np.triu_indices(n, 1)
    d = estimated.influences[iu] - truth.influences[iu]
    return float(np.sqrt(n) * np.sqrt(np.mean(d ** 2)))
