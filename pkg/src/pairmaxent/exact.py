"""Exact enumeration machinery for small systems: partition function, Gibbs
distribution, moment-matched fitting, order-k entropies and the
multi-information criterion.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import (ConfigDistribution, CouplingModel, DegenerateDenominator,
                   MomentSet, NonConvergence, SignPanel, SizeLimitExceeded,
                   ValidationError, all_configurations, binary_entropy,
                   empirical_distribution, entropy, sample_moments)

EXACT_LIMIT = 20
_BLOCK = 1 << 16


@dataclass(frozen=True)
class GibbsEnsemble:
    model: CouplingModel
    log_partition: float
    configurations: np.ndarray
    probs: np.ndarray

    def distribution(self) -> ConfigDistribution:
        return ConfigDistribution(self.configurations, self.probs)

    def moments(self) -> MomentSet:
        s = self.configurations.astype(float)
        return MomentSet.from_raw(self.probs @ s, (s * self.probs[:, None]).T @ s)


def _check_size(n: int, limit: int) -> None:
    if n > limit:
        raise SizeLimitExceeded(f"N={n} exceeds the exact-enumeration limit {limit}")


def _log_weights(model: CouplingModel, configs: np.ndarray) -> np.ndarray:
    out = np.empty(configs.shape[0])
    for a in range(0, configs.shape[0], _BLOCK):
        s = configs[a:a + _BLOCK].astype(float)
        out[a:a + _BLOCK] = model.beta * (
            0.5 * np.einsum("ki,ki->k", s @ model.influences, s) + s @ model.fields)
    return out


def gibbs_ensemble(model: CouplingModel, limit: int = EXACT_LIMIT) -> GibbsEnsemble:
    """Full enumeration of p(s) ~ exp(beta (1/2 sum J s s + sum h s))."""
    _check_size(model.n, limit)
    configs = all_configurations(model.n)
    lw = _log_weights(model, configs)
    lz = float(logsumexp(lw))
    return GibbsEnsemble(model, lz, configs, np.exp(lw - lz))


def gibbs_distribution(model: CouplingModel, limit: int = EXACT_LIMIT) -> ConfigDistribution:
    return gibbs_ensemble(model, limit).distribution()


def log_partition(model: CouplingModel, limit: int = EXACT_LIMIT) -> float:
    return gibbs_ensemble(model, limit).log_partition


# --------------------------------------------------------------------------- #
# fitting
# --------------------------------------------------------------------------- #

class _FeatureBank:
    """Sufficient statistics (s_i, s_i s_j for i < j) of all 2^N configurations,
    cached when small and regenerated blockwise otherwise."""

    def __init__(self, n: int, cache_bytes: int = 1 << 29):
        self.n = n
        self.iu = np.triu_indices(n, 1)
        self.configs = all_configurations(n)
        self.k = n + len(self.iu[0])
        self.cached = None
        if self.configs.shape[0] * self.k * 8 <= cache_bytes:
            self.cached = self._make(self.configs)

    def _make(self, c: np.ndarray) -> np.ndarray:
        s = c.astype(float)
        return np.hstack([s, s[:, self.iu[0]] * s[:, self.iu[1]]])

    def blocks(self):
        if self.cached is not None:
            yield 0, self.cached
            return
        for a in range(0, self.configs.shape[0], _BLOCK):
            yield a, self._make(self.configs[a:a + _BLOCK])

    def value_grad(self, theta, target):
        lw = np.empty(self.configs.shape[0])
        for a, f in self.blocks():
            lw[a:a + f.shape[0]] = f @ theta
        lz = logsumexp(lw)
        p = np.exp(lw - lz)
        mean = np.zeros(self.k)
        for a, f in self.blocks():
            mean += p[a:a + f.shape[0]] @ f
        return float(theta @ target - lz), target - mean, p, mean

    def covariance(self, p, mean):
        second = np.zeros((self.k, self.k))
        for a, f in self.blocks():
            second += (f * p[a:a + f.shape[0], None]).T @ f
        return second - np.outer(mean, mean)


def _unpack(theta: np.ndarray, n: int, iu) -> CouplingModel:
    J = np.zeros((n, n))
    J[iu] = theta[n:]
    return CouplingModel(J + J.T, theta[:n].copy())


def fit_exact_maxent(moments: MomentSet, limit: int = EXACT_LIMIT,
                     tolerance: float = 1e-6, max_iter: int = 10_000,
                     initial: CouplingModel | None = None) -> CouplingModel:
    """Pairwise maxent model whose Gibbs moments match ``moments``.

    Damped Newton ascent on the exact (concave) log-likelihood, stopping when
    the largest moment mismatch drops below ``tolerance``.

    Raises
    ------
    SizeLimitExceeded
        N above ``limit``.
    NonConvergence
        Iteration cap reached, typically for moments on the boundary of the
        realizable set (|q_i| = 1, perfectly correlated pairs).
    """
    n = moments.n
    _check_size(n, limit)
    bank = _FeatureBank(n)
    iu = bank.iu
    target = np.concatenate([moments.means, moments.pair_corrs[iu]])
    if initial is None:
        theta = np.concatenate([np.arctanh(np.clip(moments.means, -0.999, 0.999)),
                                np.zeros(len(iu[0]))])
    else:
        theta = np.concatenate([initial.fields, initial.influences[iu]])

    ll, grad, p, mean = bank.value_grad(theta, target)
    mu = 1e-9
    eye = np.eye(len(theta))
    for _ in range(max_iter):
        if (np.max(np.abs(grad)) if grad.size else 0.0) < tolerance:
            return _unpack(theta, n, iu)
        cov = bank.covariance(p, mean)
        # Levenberg-damped Newton direction, then backtracking on the likelihood
        try:
            step = np.linalg.solve(cov + mu * eye, grad)
        except np.linalg.LinAlgError:
            mu = max(mu * 100, 1e-8)
            continue
        t = 1.0
        improved = False
        for _ in range(40):
            cand = theta + t * step
            ll_c, grad_c, p_c, mean_c = bank.value_grad(cand, target)
            if ll_c >= ll - 1e-14 * max(1.0, abs(ll)):
                theta, ll, grad, p, mean = cand, ll_c, grad_c, p_c, mean_c
                improved = True
                break
            t *= 0.5
        mu = max(mu / 10, 1e-12) if improved else mu * 100
        if mu > 1e12 or np.max(np.abs(theta)) > 1e3:
            break
    raise NonConvergence(
        f"exact maxent fit did not reach mismatch {tolerance:g} "
        f"(last {np.max(np.abs(grad)):.3g}); moments may be on the boundary",
        last=_unpack(theta, n, iu))


def fit_exact_panel(panel: SignPanel, **kw) -> CouplingModel:
    return fit_exact_maxent(sample_moments(panel), **kw)


# --------------------------------------------------------------------------- #
# entropies and the multi-information criterion
# --------------------------------------------------------------------------- #

def model_entropy_order_k(panel: SignPanel, k, limit: int = EXACT_LIMIT,
                          tolerance: float = 1e-9) -> float:
    """Entropy of the order-k maximum entropy model of the panel.

    k = 1: independent model, sum of binary entropies.
    k = 2: exact pairwise fit.
    k = N (or the string "N"): plug-in entropy of the empirical distribution.
    """
    n = panel.n
    if k == "N" or k == n and k not in (1, 2):
        return entropy(empirical_distribution(panel))
    if k == 1:
        return float(binary_entropy(panel.values.mean(axis=1)).sum())
    if k == 2:
        if n == 1:
            return float(binary_entropy(panel.values.mean(axis=1)).sum())
        model = fit_exact_maxent(sample_moments(panel), limit=limit, tolerance=tolerance)
        return entropy(gibbs_distribution(model, limit))
    raise ValidationError("k must be 1, 2 or N")


def multi_information_criterion(panel: SignPanel, limit: int = EXACT_LIMIT,
                                return_parts: bool = False):
    """(S_1 - S_2) / (S_1 - S_N): share of the multi-information captured by
    pairwise correlations.
    """
    s1 = model_entropy_order_k(panel, 1)
    sn = model_entropy_order_k(panel, "N")
    if s1 - sn < 1e-9:
        raise DegenerateDenominator("S_1 - S_N < 1e-9: no measurable dependency")
    s2 = model_entropy_order_k(panel, 2, limit=limit)
    mic = (s1 - s2) / (s1 - sn)
    if return_parts:
        return mic, {"S1": s1, "S2": s2, "SN": sn}
    return mic
