"""Analytic approximations and references: zeroth-order entropy,
self-consistent mean-field / TAP / cumulant equilibria, the Plefka
functional, Edgeworth averages of tanh, the exact square-lattice
magnetization, and homogeneous social-interaction (Brock-Durlauf) dynamics.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import eval_hermitenorm

from .core import (CouplingModel, NegativeDensityWarning, NonConvergence,
                   ValidationError, binary_entropy)

ORDERS = ("mf1", "tap2", "cumulant_k2", "cumulant_k2k3")
CRITICAL_COUPLING = 0.5 * np.log(1.0 + np.sqrt(2.0))


def entropy_zeroth(means) -> float:
    """Entropy of independent units with the given means (nats)."""
    q = np.asarray(means, dtype=float)
    if np.any(np.abs(q) > 1 + 1e-12):
        raise ValidationError("means must lie in [-1, 1]")
    return float(binary_entropy(q).sum())


# --------------------------------------------------------------------------- #
# self-consistent equations
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SelfConsistentSolution:
    means: np.ndarray
    order: str
    iterations: int
    residual: float
    converged: bool = True


def _tanh_derivs(x):
    t = np.tanh(x)
    s2 = 1.0 - t * t
    d2 = -2.0 * t * s2
    d3 = s2 * (6.0 * t * t - 2.0)
    d4 = s2 * (16.0 * t - 24.0 * t ** 3)
    return t, d2, d3, d4


def self_consistent_map(model: CouplingModel, m: np.ndarray, order: str) -> np.ndarray:
    """Right-hand side of the chosen self-consistent equation at m.

    mf1:            tanh(mu)
    tap2:           tanh(mu - beta^2 m_i sum_j J_ij^2 (1 - m_j^2))
    cumulant_k2:    tanh(mu) + tanh''(mu) k2 / 2
    cumulant_k2k3:  cumulant_k2 + tanh'''(mu) k3 / 6
    with mu = beta (J m + h), k2 = beta^2 sum_j J_ij^2 (1 - m_j^2) and
    k3 = beta^3 sum_j J_ij^3 2 (m_j^3 - m_j) (single-unit cumulant closure).
    """
    b = model.beta
    J = model.influences
    mu = b * (J @ m + model.fields)
    if order == "mf1":
        return np.tanh(mu)
    J2 = J * J
    var = 1.0 - m * m
    if order == "tap2":
        return np.tanh(mu - b * b * m * (J2 @ var))
    k2 = b * b * (J2 @ var)
    t, d2, d3, _ = _tanh_derivs(mu)
    out = t + 0.5 * d2 * k2
    if order == "cumulant_k2":
        return out
    if order == "cumulant_k2k3":
        k3 = b ** 3 * ((J2 * J) @ (2.0 * (m ** 3 - m)))
        return out + d3 * k3 / 6.0
    raise ValidationError(f"unknown order {order!r}; expected one of {ORDERS}")


def solve_self_consistent(model: CouplingModel, order: str = "mf1", init=None,
                          tolerance: float = 1e-10, max_iter: int = 100_000,
                          damping: float = 0.5, raise_on_failure: bool = False
                          ) -> SelfConsistentSolution:
    """Damped fixed-point iteration m <- (1 - d) m + d F(m).

    Returns the last iterate flagged ``converged=False`` when the cap is hit,
    or raises NonConvergence if ``raise_on_failure``.
    """
    if order not in ORDERS:
        raise ValidationError(f"unknown order {order!r}; expected one of {ORDERS}")
    n = model.n
    m = np.zeros(n) if init is None else np.array(init, dtype=float).reshape(n)
    if np.any(np.abs(m) >= 1):
        raise ValidationError("initial means must lie in (-1, 1)")
    if not 0 < damping <= 1:
        raise ValidationError("damping must lie in (0, 1]")
    resid = np.inf
    for it in range(1, max_iter + 1):
        f = np.clip(self_consistent_map(model, m, order), -1.0, 1.0)
        resid = float(np.max(np.abs(f - m))) if n else 0.0
        if resid < tolerance:
            return SelfConsistentSolution(f, order, it, resid, True)
        m = (1.0 - damping) * m + damping * f
    sol = SelfConsistentSolution(m, order, max_iter, resid, False)
    if raise_on_failure:
        raise NonConvergence(f"{order} iteration did not converge (residual {resid:.3g})",
                             last=sol)
    return sol


# --------------------------------------------------------------------------- #
# Plefka functional
# --------------------------------------------------------------------------- #

def plefka_functional(means, model: CouplingModel, order: int = 2) -> float:
    """G(q) up to second or third order in the couplings.

    G = 1/2 sum[(1+q) ln((1+q)/2) + (1-q) ln((1-q)/2)] - 1/2 sum J q q
        - 1/4 sum J^2 (1-q_i^2)(1-q_j^2)
        [+ 1/6 (-2 sum J^3 q_i q_j (1-q_i^2)(1-q_j^2) - sum J_ij J_jk J_ki prod(1-q^2))]
    Couplings are scaled by beta. Minimizing G - h.q gives the TAP equations.
    """
    if order not in (2, 3):
        raise ValidationError("order must be 2 or 3")
    q = np.asarray(means, dtype=float)
    if np.any(np.abs(q) >= 1):
        raise ValidationError("means must lie in (-1, 1)")
    J = model.beta * model.influences
    v = 1.0 - q * q
    g0 = -float(binary_entropy(q).sum())
    g1 = -0.5 * float(q @ J @ q)
    g2 = -0.25 * float(v @ (J * J) @ v)
    g = g0 + g1 + g2
    if order == 3:
        a = -2.0 * float((q * v) @ (J ** 3) @ (q * v))
        Jv = J * v[None, :]
        b = -float(np.trace(Jv @ Jv @ Jv))
        g += (a + b) / 6.0
    return g


def plefka_gradient(means, model: CouplingModel, order: int = 2) -> np.ndarray:
    """Analytic dG/dq_i; equals the field h_i at a TAP stationary point."""
    q = np.asarray(means, dtype=float)
    J = model.beta * model.influences
    v = 1.0 - q * q
    g = np.arctanh(q) - J @ q + q * ((J * J) @ v)
    if order == 3:
        grad_a = -4.0 * (1.0 - 3.0 * q * q) * ((J ** 3) @ (q * v))
        # d tr((JV)^3) / dv_i = 3 (JVJVJ)_ii and dv_i/dq_i = -2 q_i
        JV = J * v[None, :]
        grad_b = 6.0 * q * np.einsum("ij,ji->i", JV @ JV, J)
        g = g + (grad_a + grad_b) / 6.0
    return g / model.beta


# --------------------------------------------------------------------------- #
# Edgeworth average of tanh
# --------------------------------------------------------------------------- #

def edgeworth_density(x, mean: float, cumulants) -> np.ndarray:
    """Edgeworth-corrected normal density with cumulants (k2, k3[, k4]).

    p(x) = phi(z)/sigma [1 + g3/6 He3(z) + g4/24 He4(z) + g3^2/72 He6(z)],
    z = (x - mean)/sigma, g3 = k3/sigma^3, g4 = k4/sigma^4.
    """
    k = list(cumulants) + [0.0, 0.0, 0.0]
    k2, k3, k4 = float(k[0]), float(k[1]), float(k[2])
    if not k2 > 0:
        raise ValidationError("k2 must be positive")
    sd = np.sqrt(k2)
    z = (np.asarray(x, dtype=float) - mean) / sd
    g3 = k3 / sd ** 3
    g4 = k4 / sd ** 4
    base = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi) / sd
    corr = (1.0 + g3 / 6.0 * eval_hermitenorm(3, z) + g4 / 24.0 * eval_hermitenorm(4, z)
            + g3 * g3 / 72.0 * eval_hermitenorm(6, z))
    return base * corr


def edgeworth_expectation_tanh(mean: float, cumulants, warn: bool = True) -> float:
    """Integral of tanh(x) against the Edgeworth density over mean +- 12 sd."""
    k = list(cumulants) + [0.0, 0.0]
    k2 = float(k[0])
    if not k2 > 0:
        raise ValidationError("k2 must be positive")
    sd = np.sqrt(k2)
    lo, hi = mean - 12 * sd, mean + 12 * sd
    if warn:
        grid = np.linspace(lo, hi, 4001)
        p = edgeworth_density(grid, mean, k)
        neg = -np.trapezoid(np.clip(p, None, 0.0), grid)
        if neg > 0.01:
            warnings.warn(f"Edgeworth density negative over {neg:.3f} of its mass",
                          NegativeDensityWarning, stacklevel=2)
    val, _ = integrate.quad(lambda x: np.tanh(x) * edgeworth_density(x, mean, k),
                            lo, hi, epsabs=1e-11, epsrel=1e-11, limit=400,
                            points=[mean] if lo < mean < hi else None)
    return float(val)


# --------------------------------------------------------------------------- #
# exact lattice reference
# --------------------------------------------------------------------------- #

def onsager_magnetization(coupling_over_t: float) -> float:
    """Spontaneous magnetization of the infinite square lattice at K = J/T.

    Zero for K <= K_c = ln(1 + sqrt 2)/2, else (1 - sinh(2K)^-4)^(1/8).
    """
    k = float(coupling_over_t)
    if k < 0:
        raise ValidationError("coupling ratio must be non-negative")
    if k <= CRITICAL_COUPLING:
        return 0.0
    return float((1.0 - np.sinh(2.0 * k) ** -4) ** 0.125)


def homogeneous_lattice_solution(coupling: float, order: str, neighbours: int = 4,
                                 init: float = 0.9, **kw) -> SelfConsistentSolution:
    """Self-consistent magnetization of a translation-invariant lattice.

    Every unit has ``neighbours`` neighbours with coupling K. The equations
    only involve sums of J, J^2 and J^3 over neighbours, so a complete graph
    on ``neighbours + 1`` units yields the same homogeneous solution.
    """
    n = neighbours + 1
    J = np.full((n, n), float(coupling))
    np.fill_diagonal(J, 0.0)
    model = CouplingModel(J, np.zeros(n))
    return solve_self_consistent(model, order, np.full(n, init), **kw)


# --------------------------------------------------------------------------- #
# Brock-Durlauf homogeneous model
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class BdModel:
    J: float
    h: float = 0.0
    beta: float = 1.0
    N: int = 100

    def __post_init__(self):
        if not self.beta > 0:
            raise ValidationError("beta must be positive")
        if self.N < 1:
            raise ValidationError("N must be >= 1")


def bd_consensus_dynamics(model: BdModel, m0: float, steps: int) -> np.ndarray:
    """Iterate m(t+1) = tanh(beta J m(t) + beta h); returns steps + 1 values."""
    if abs(m0) > 1:
        raise ValidationError("|m0| must be <= 1")
    out = np.empty(steps + 1)
    out[0] = m0
    bj, bh = model.beta * model.J, model.beta * model.h
    m = float(m0)
    for t in range(steps):
        m = np.tanh(bj * m + bh)
        out[t + 1] = m
    return out


def bd_phi(model: BdModel, m) -> np.ndarray:
    """phi(m) = m^2/2 - (beta J)^-1 ln(2 cosh(beta (J m + h)))."""
    m = np.asarray(m, dtype=float)
    x = model.beta * (model.J * m + model.h)
    ln2cosh = np.abs(x) + np.log1p(np.exp(-2 * np.abs(x)))
    return 0.5 * m * m - ln2cosh / (model.beta * model.J)


def consensus_density(model: BdModel, grid) -> np.ndarray:
    """p(m) ~ exp(-beta J N phi(m)), normalized on ``grid`` by the trapezoid rule."""
    grid = np.asarray(grid, dtype=float)
    if np.any(np.abs(grid) > 1 + 1e-12):
        raise ValidationError("grid must lie in [-1, 1]")
    if model.J == 0:
        raise ValidationError("J must be non-zero")
    logp = -model.beta * model.J * model.N * bd_phi(model, grid)
    logp -= logp.max()
    p = np.exp(logp)
    return p / np.trapezoid(p, grid)


def count_modes(density) -> int:
    """Number of strict interior local maxima (plateaus count once)."""
    d = np.asarray(density, dtype=float)
    diff = np.sign(np.diff(d))
    diff = diff[diff != 0]
    return int(np.sum((diff[:-1] > 0) & (diff[1:] < 0)))


def decay_exponent(trajectory, t_min: int = 100, t_max: int = 10_000) -> float:
    """Log-log slope of |m(t)| over t in [t_min, t_max]."""
    m = np.abs(np.asarray(trajectory, dtype=float))
    t = np.arange(m.shape[0])
    sel = (t >= t_min) & (t <= t_max) & (m > 0)
    slope, _ = np.polyfit(np.log(t[sel]), np.log(m[sel]), 1)
    return float(slope)
