"""Tree, clusters, rolling statistics and flip prediction on a simulated market.

Run with: python3 demos/topology_and_prediction.py
"""
import numpy as np

from pairmaxent.core import CouplingModel
from pairmaxent.infer import RpmlConfig
from pairmaxent.mcmc import simulate_panel
from pairmaxent.predict import compare_reversal_models, kfold_cross_validation
from pairmaxent.topo import (correlation_matrix, hierarchical_clusters, minimum_spanning_tree,
                             ms_distance, sliding_window_series)

# Two sectors of four assets, strongly coupled inside and weakly across.
n = 8
sector = np.repeat([0, 1], 4)
J = np.where(sector[:, None] == sector[None, :], 0.3, 0.02)
np.fill_diagonal(J, 0.0)
labels = [f"{'AB'[s]}{k}" for k, s in enumerate(sector)]
panel = simulate_panel(CouplingModel(J, np.zeros(n)), 4000, seed=2, equilibration=1000,
                       spacing=5, assets=labels)

C, eig = correlation_matrix(panel)
print(f"largest correlation eigenvalue {eig[0]:.3f}, next {eig[1]:.3f}")
d = ms_distance(C, labels)
tree = minimum_spanning_tree(d)
print("tree edges:", [(labels[i], labels[j], round(w, 3)) for i, j, w in tree.edges])
print("two clusters:", hierarchical_clusters(d, cluster_count=2).labels.tolist())

series = sliding_window_series(panel, width=1000, shift=500, statistic="tree_length_ms")
print("rolling tree length:", np.round(series.values, 3).tolist())

cv = kfold_cross_validation(panel, RpmlConfig(), folds=10)
ind = kfold_cross_validation(panel, RpmlConfig(), folds=10, independent=True)
print(f"flip prediction AUC: pairwise {cv.mean_auc:.3f}, independent {ind.mean_auc:.3f}")

kld = compare_reversal_models(panel, subset_size=6, subsets=3, dg_samples=20_000)
print("reversal-count KL divergence:",
      {k: round(kld[k], 4) for k in ("pairwise", "poisson", "dg")})
