"""Simulate a planted coupling matrix and recover it with each inverse method.

Run with: python3 demos/inverse_round_trip.py
"""
import numpy as np

from pairmaxent.core import CouplingModel, sample_moments
from pairmaxent.exact import fit_exact_panel
from pairmaxent.infer import RpmlConfig, fit_rpml, invert_mean_field, invert_tap, \
    reconstruction_error
from pairmaxent.mcmc import simulate_panel

rng = np.random.default_rng(0)
n = 8
J = np.triu(rng.normal(0.0, 0.3, (n, n)), 1)
# Fields large enough that the TAP correction, which scales with q_i q_j, matters.
truth = CouplingModel(J + J.T, rng.normal(0.0, 0.8, n))
panel = simulate_panel(truth, 50_000, seed=1, equilibration=1000, spacing=2)
moments = sample_moments(panel)

fits = {
    "exact": fit_exact_panel(panel),
    "rpml": fit_rpml(panel, RpmlConfig()),
    "mean field": invert_mean_field(moments),
    "tap": invert_tap(moments),
}
for name, model in fits.items():
    print(f"{name:>10}: reconstruction error {reconstruction_error(model, truth):.4f}")
