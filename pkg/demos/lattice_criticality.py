"""Walk through the finite-size criticality signal on a small lattice.

Run with: python3 demos/lattice_criticality.py
"""
import math

import numpy as np

from pairmaxent.approx import (CRITICAL_COUPLING, homogeneous_lattice_solution,
                               onsager_magnetization)
from pairmaxent.crit import response_function_scan, sampling_significance
from pairmaxent.exact import gibbs_distribution, multi_information_criterion
from pairmaxent.mcmc import simulate_panel, square_lattice

# Exact Gibbs law of a 3x3 periodic ferromagnet, then rescale it in temperature.
lattice = square_lattice(3)
scan = response_function_scan(gibbs_distribution(lattice))
print(f"3x3 lattice: response peaks at T = {scan.t_max:.4f}, R_U = {scan.r_max:.4f}")
print(f"infinite-lattice critical temperature: {1 / CRITICAL_COUPLING:.4f}")

# Sample the lattice at the infinite-lattice critical temperature.
t_c = 2 / math.log(1 + math.sqrt(2))
panel = simulate_panel(square_lattice(3), 5000, seed=0, temperature=t_c)
print(f"multi-information captured by pairs: {multi_information_criterion(panel):.4f}")

sig = sampling_significance(panel)
print(f"sample entropy {sig.h_s:.3f} nats, bound {sig.upper_bound:.3f}, "
      f"{sig.sample_size} samples over {sig.system_size} units")

# Mean-field closures against the exact magnetization.
print("K      exact    tap2     cumulant_k2k3")
for K in np.round(np.arange(0.30, 0.61, 0.05), 2):
    row = [abs(homogeneous_lattice_solution(float(K), o).means[0])
           for o in ("tap2", "cumulant_k2k3")]
    print(f"{K:.2f}   {onsager_magnetization(K):.4f}   {row[0]:.4f}   {row[1]:.4f}")
