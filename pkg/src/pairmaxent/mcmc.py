"""Glauber-dynamics Monte Carlo for pairwise models.

One Monte Carlo step (MCS) is N single-unit flip attempts, each on a unit
drawn uniformly at random. A flip of unit i is accepted when
W_i = (1 - s_i tanh(beta * (sum_j J_ij s_j + h_i))) / 2 exceeds a uniform draw.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .core import (CouplingModel, EmptySeries, SignPanel, ValidationError)

BATCHES = 30


@dataclass(frozen=True)
class ChainConfig:
    """Chain schedule. Counts are in Monte Carlo steps."""
    equilibration_sweeps: int = 10_000
    recorded_samples: int = 1_000
    sweeps_between_records: int = 1
    rng_seed: int = 0
    temperature: float = 1.0
    keep_configurations: bool = True

    def __post_init__(self):
        if min(self.equilibration_sweeps, self.recorded_samples,
               self.sweeps_between_records) < 0:
            raise ValidationError("chain counts must be non-negative")
        if not self.temperature > 0:
            raise ValidationError("temperature must be positive")


@dataclass(frozen=True)
class ObservableSeries:
    """Recorded observables. ``configurations`` is (samples, N) int8 or None."""
    m: np.ndarray
    abs_m: np.ndarray
    utility: np.ndarray
    configurations: Optional[np.ndarray] = None
    overlap: Optional[np.ndarray] = None
    temperature: float = 1.0
    sweeps: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.m.shape[0]

    def to_panel(self, assets=None) -> SignPanel:
        if self.configurations is None:
            raise ValidationError("series was recorded without configurations")
        return SignPanel.from_array(self.configurations.T, assets=assets)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["sweep", "m", "abs_m", "U"]
            if self.overlap is not None:
                head.append("q")
            w.writerow(head)
            sw = self.sweeps if self.sweeps is not None else np.arange(len(self))
            for k in range(len(self)):
                row = [int(sw[k]), f"{self.m[k]:.12g}", f"{self.abs_m[k]:.12g}",
                       f"{self.utility[k]:.12g}"]
                if self.overlap is not None:
                    row.append(f"{self.overlap[k]:.12g}")
                w.writerow(row)


@numba.njit(cache=True)
def _run_chain(J, h, beta, state, n_equil, n_rec, spacing, seed, keep):
    np.random.seed(seed)
    n = state.shape[0]
    s = state.copy()
    local = h.copy()
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += J[i, j] * s[j]
        local[i] += acc
    u = 0.0
    for i in range(n):
        u += 0.5 * s[i] * (local[i] - h[i]) + h[i] * s[i]
    mag = 0
    for i in range(n):
        mag += s[i]

    configs = np.empty((n_rec if keep else 0, n), dtype=np.int8)
    us = np.empty(n_rec)
    ms = np.empty(n_rec)

    total = n_equil + n_rec * spacing
    rec = 0
    for sweep in range(1, total + 1):
        for _ in range(n):
            i = np.random.randint(n)
            w = 0.5 * (1.0 - s[i] * np.tanh(beta * local[i]))
            if w > np.random.random():
                old = s[i]
                u -= 2.0 * old * local[i]
                s[i] = -old
                mag -= 2 * old
                for j in range(n):
                    local[j] -= 2.0 * old * J[j, i]
        if sweep > n_equil and (sweep - n_equil) % spacing == 0:
            if keep:
                for i in range(n):
                    configs[rec, i] = s[i]
            us[rec] = u
            ms[rec] = mag / n
            rec += 1
    return configs, us, ms, s


def _initial_state(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.choice(np.array([-1, 1], dtype=np.int64), size=n)


def glauber_flip_probability(model: CouplingModel, state, unit: int,
                             temperature: float = 1.0) -> float:
    """Probability that Glauber dynamics flips ``unit`` from ``state``."""
    s = np.asarray(state, dtype=float)
    if not 0 <= unit < model.n:
        raise ValidationError(f"unit {unit} out of range")
    beta = model.beta / temperature
    local = model.influences[unit] @ s + model.fields[unit]
    return float(0.5 * (1.0 - s[unit] * np.tanh(beta * local)))


def simulate_chain(model: CouplingModel, config: ChainConfig,
                   initial_state=None) -> ObservableSeries:
    """Run one chain and record m, |m|, U (and configurations) every
    ``sweeps_between_records`` MCS after equilibration. Deterministic in the seed.
    """
    if model.lag_count:
        raise ValidationError("Glauber simulation ignores lags; pass a memoryless model")
    n = model.n
    if initial_state is None:
        state = _initial_state(n, config.rng_seed)
    else:
        state = np.asarray(initial_state, dtype=np.int64).copy()
    beta = model.beta / config.temperature
    spacing = max(config.sweeps_between_records, 1)
    configs, us, ms, _ = _run_chain(
        np.ascontiguousarray(model.influences, dtype=np.float64),
        np.ascontiguousarray(model.fields, dtype=np.float64),
        float(beta), state, int(config.equilibration_sweeps),
        int(config.recorded_samples), spacing, int(config.rng_seed) % (2 ** 32),
        bool(config.keep_configurations))
    sweeps = config.equilibration_sweeps + spacing * np.arange(1, len(us) + 1)
    return ObservableSeries(
        m=ms, abs_m=np.abs(ms), utility=us,
        configurations=configs if config.keep_configurations else None,
        temperature=config.temperature, sweeps=sweeps)


def simulate_panel(model: CouplingModel, samples: int, seed: int = 0,
                   equilibration: int = 10_000, spacing: int = 1,
                   temperature: float = 1.0, assets=None) -> SignPanel:
    """Convenience wrapper returning the recorded configurations as a panel."""
    cfg = ChainConfig(equilibration, samples, spacing, seed, temperature)
    return simulate_chain(model, cfg).to_panel(assets)


def overlap_series(model: CouplingModel, config: ChainConfig,
                   replica_offset: int = 1_000_003) -> ObservableSeries:
    """Two replicas with the same parameters and independent streams.

    The second replica uses seed ``rng_seed + replica_offset``. The returned
    series carries the first replica's observables plus q(t).
    """
    cfg_b = ChainConfig(config.equilibration_sweeps, config.recorded_samples,
                        config.sweeps_between_records,
                        config.rng_seed + replica_offset, config.temperature, True)
    cfg_a = ChainConfig(config.equilibration_sweeps, config.recorded_samples,
                        config.sweeps_between_records, config.rng_seed,
                        config.temperature, True)
    a = simulate_chain(model, cfg_a)
    b = simulate_chain(model, cfg_b)
    q = (a.configurations.astype(np.int32) * b.configurations).mean(axis=1)
    return ObservableSeries(
        m=a.m, abs_m=a.abs_m, utility=a.utility,
        configurations=a.configurations if config.keep_configurations else None,
        overlap=q, temperature=config.temperature, sweeps=a.sweeps)


def batch_means_error(x, batches: int = BATCHES) -> float:
    """Standard error of the mean of a correlated series by batch means."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n == 0:
        raise EmptySeries("empty series")
    b = min(batches, n)
    if b < 2:
        return 0.0
    size = n // b
    means = x[: size * b].reshape(b, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(b))


def _batch_stat_error(x, stat, batches: int = BATCHES) -> float:
    x = np.asarray(x, dtype=float)
    b = min(batches, x.shape[0])
    if b < 2:
        return 0.0
    size = x.shape[0] // b
    vals = np.array([stat(x[k * size:(k + 1) * size]) for k in range(b)])
    return float(vals.std(ddof=1) / np.sqrt(b))


def estimate_observables(series: ObservableSeries,
                         temperature: Optional[float] = None,
                         n_units: Optional[int] = None) -> dict:
    """Means, variances and response functions with batch-means errors.

    R_U = Var[U] / T^2 and R_m = Var[N m] / T. When the series has an overlap,
    its mean and variance are included.
    """
    if len(series) == 0:
        raise EmptySeries("cannot summarize an empty series")
    t = series.temperature if temperature is None else temperature
    if n_units is None:
        n_units = series.configurations.shape[1] if series.configurations is not None else 1
    m, am, u = series.m, series.abs_m, series.utility
    out = {
        "mean_m": float(m.mean()), "err_m": batch_means_error(m),
        "mean_abs_m": float(am.mean()), "err_abs_m": batch_means_error(am),
        "var_m": float(m.var()),
        "mean_U": float(u.mean()), "err_U": batch_means_error(u),
        "var_U": float(u.var()),
        "R_U": float(u.var() / t ** 2),
        "err_R_U": _batch_stat_error(u, np.var) / t ** 2,
        "R_m": float((n_units * m).var() / t),
        "err_R_m": _batch_stat_error(n_units * m, np.var) / t,
        "temperature": float(t), "samples": len(series),
    }
    if series.overlap is not None:
        q = series.overlap
        out.update({"mean_q": float(q.mean()), "err_q": batch_means_error(q),
                    "mean_abs_q": float(np.abs(q).mean()),
                    "var_q": float(q.var()),
                    "err_var_q": _batch_stat_error(q, np.var)})
    return out


def temperature_scan(model: CouplingModel, temperatures, config: ChainConfig,
                     replicas: bool = False) -> list[dict]:
    """Observable summaries over a temperature grid (independent seeds per T)."""
    rows = []
    for k, t in enumerate(temperatures):
        cfg = ChainConfig(config.equilibration_sweeps, config.recorded_samples,
                          config.sweeps_between_records, config.rng_seed + 7919 * k,
                          float(t), False)
        series = overlap_series(model, cfg) if replicas else simulate_chain(model, cfg)
        rows.append(estimate_observables(series, float(t), model.n))
    return rows


def square_lattice(side: int, coupling: float = 1.0, periodic: bool = True) -> CouplingModel:
    """Nearest-neighbour square lattice of side x side units."""
    n = side * side
    J = np.zeros((n, n))
    for r in range(side):
        for c in range(side):
            i = r * side + c
            nbrs = []
            if periodic or c + 1 < side:
                nbrs.append(r * side + (c + 1) % side)
            if periodic or r + 1 < side:
                nbrs.append(((r + 1) % side) * side + c)
            for j in nbrs:
                if j != i:
                    J[i, j] = J[j, i] = coupling
    return CouplingModel(J, np.zeros(n))
