"""Network views of a panel: correlation spectra, distance matrices, minimum
spanning trees, sliding-window structural series and hierarchical clustering.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, leaves_list, linkage
from scipy.spatial.distance import pdist

from .approx import entropy_zeroth
from .core import (CouplingModel, SignPanel, ValidationError, sample_moments)
from .crit import power_law_mle, power_law_sigma
from .infer import RpmlConfig, fit_rpml, invert_mean_field, invert_tap

STATISTICS = ("tree_length_ms", "tree_length_J", "trace_J", "det_J",
              "entropy_S0", "aggregate_h")


class ZeroVariance(ValidationError):
    pass


class OutOfRangeCorrelation(ValidationError):
    pass


class DegenerateInfluence(ValidationError):
    pass


class WindowTooLarge(ValidationError):
    pass


@dataclass(frozen=True)
class DissimilarityMatrix:
    labels: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError("dissimilarity must be square")
        if len(self.labels) != v.shape[0]:
            raise ValidationError("one label per row required")
        if not np.allclose(v, v.T, atol=1e-12):
            raise ValidationError("dissimilarity must be symmetric")
        if np.any(v < -1e-12):
            raise ValidationError("dissimilarity must be non-negative")
        v = np.clip((v + v.T) / 2, 0.0, None)
        np.fill_diagonal(v, 0.0)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path, permutation=None) -> None:
        """Matrix map; the row/column order is written to a JSON sidecar."""
        perm = np.arange(self.n) if permutation is None else np.asarray(permutation)
        v = self.values[np.ix_(perm, perm)]
        labels = [self.labels[k] for k in perm]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([""] + labels)
            for lab, row in zip(labels, v):
                w.writerow([lab] + [f"{x:.12g}" for x in row])
        with open(str(path) + ".json", "w") as fh:
            json.dump({"permutation": [int(k) for k in perm], "labels": labels}, fh,
                      sort_keys=True)


def _default_labels(n: int) -> tuple:
    return tuple(f"a{i}" for i in range(n))


# --------------------------------------------------------------------------- #
# correlations and distances
# --------------------------------------------------------------------------- #

def correlation_matrix(data) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlations of the rows and eigenvalues in descending order.

    ``data`` is a SignPanel or an (N, M) array of series (e.g. returns).
    """
    x = data.values.astype(float) if isinstance(data, SignPanel) else np.asarray(data, float)
    if x.ndim != 2:
        raise ValidationError("expected an (N, M) array")
    if x.shape[1] < 2:
        raise ValidationError("need at least two observations")
    xc = x - x.mean(axis=1, keepdims=True)
    sd = np.sqrt((xc ** 2).mean(axis=1))
    if np.any(sd < 1e-15):
        raise ZeroVariance(f"rows {np.flatnonzero(sd < 1e-15).tolist()} have zero variance")
    z = xc / sd[:, None]
    C = z @ z.T / x.shape[1]
    C = np.clip((C + C.T) / 2, -1.0, 1.0)
    np.fill_diagonal(C, 1.0)
    eig = np.linalg.eigvalsh(C)[::-1]
    return C, eig


def ms_distance(correlations, labels=None) -> DissimilarityMatrix:
    """d_ij = sqrt(2 (1 - C_ij))."""
    C = np.asarray(correlations, dtype=float)
    if np.any(np.abs(C) > 1 + 1e-12):
        raise OutOfRangeCorrelation("correlations must lie in [-1, 1]")
    d = np.sqrt(np.clip(2.0 * (1.0 - C), 0.0, 4.0))
    return DissimilarityMatrix(labels or _default_labels(C.shape[0]), d)


def influence_dissimilarity(model: CouplingModel, labels=None) -> DissimilarityMatrix:
    """sqrt(2 (1 - J_ij / max|J|)) over off-diagonal couplings."""
    J = model.influences
    off = J[~np.eye(model.n, dtype=bool)]
    top = np.max(np.abs(off)) if off.size else 0.0
    if not top > 0:
        raise DegenerateInfluence("all off-diagonal couplings are zero")
    d = np.sqrt(np.clip(2.0 * (1.0 - J / top), 0.0, 4.0))
    return DissimilarityMatrix(labels or _default_labels(model.n), d)


# --------------------------------------------------------------------------- #
# spanning trees
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SpanningTree:
    edges: tuple
    total_length: float
    degree_sequence: np.ndarray
    labels: tuple = ()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "weight"])
            for i, j, wt in self.edges:
                w.writerow([i, j, f"{wt:.12g}"])


def minimum_spanning_tree(d: DissimilarityMatrix) -> SpanningTree:
    """Kruskal's algorithm; equal weights are taken in lexicographic (i, j) order."""
    n = d.n
    if n < 2:
        raise ValidationError("need at least two nodes")
    iu, ju = np.triu_indices(n, 1)
    w = d.values[iu, ju]
    order = np.lexsort((ju, iu, w))
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    edges = []
    for k in order:
        a, b = find(iu[k]), find(ju[k])
        if a != b:
            parent[b] = a
            edges.append((int(iu[k]), int(ju[k]), float(w[k])))
            if len(edges) == n - 1:
                break
    deg = np.zeros(n, dtype=int)
    for i, j, _ in edges:
        deg[i] += 1
        deg[j] += 1
    edges.sort()
    return SpanningTree(tuple(edges), float(sum(e[2] for e in edges)), deg, d.labels)


@dataclass(frozen=True)
class DegreeFit:
    frequencies: dict
    alpha_ls: float
    r_squared: float
    alpha_mle: float
    sigma_mle: float


def degree_distribution_fit(tree: SpanningTree) -> DegreeFit:
    """Log-log least-squares slope of degree frequencies, plus the bounded
    discrete power-law MLE on the degree sample."""
    deg = np.asarray(tree.degree_sequence)
    n = deg.shape[0]
    if n < 10:
        warnings.warn(f"N={n} < 10: degree fit is not meaningful", RuntimeWarning,
                      stacklevel=2)
    ks, counts = np.unique(deg, return_counts=True)
    freq = counts / n
    frequencies = {int(k): float(f) for k, f in zip(ks, freq)}
    if ks.shape[0] >= 2:
        x, y = np.log(ks), np.log(freq)
        slope, icpt = np.polyfit(x, y, 1)
        resid = y - (slope * x + icpt)
        ss = np.sum((y - y.mean()) ** 2)
        r2 = float(1 - np.sum(resid ** 2) / ss) if ss > 0 else 1.0
        alpha_ls = float(-slope)
    else:
        alpha_ls, r2 = float("nan"), float("nan")
    x_max = int(deg.max())
    if x_max >= 2:
        alpha_mle = power_law_mle(float(np.log(deg).mean()), x_max)
        sigma = power_law_sigma(alpha_mle, x_max, n)
    else:
        alpha_mle, sigma = float("nan"), float("nan")
    return DegreeFit(frequencies, alpha_ls, r2, float(alpha_mle), float(sigma))


# --------------------------------------------------------------------------- #
# sliding windows
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class WindowSeries:
    statistic: str
    starts: tuple
    values: np.ndarray
    centered: np.ndarray
    signs: np.ndarray | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["start", "value", "centered"] + (["sign"] if self.signs is not None else [])
            w.writerow(head)
            for k, t in enumerate(self.starts):
                row = [t, f"{self.values[k]:.12g}", f"{self.centered[k]:.12g}"]
                if self.signs is not None:
                    row.append(int(self.signs[k]))
                w.writerow(row)


def _window_inference(panel: SignPanel, method: str):
    moments = sample_moments(panel)
    if method == "tap":
        return invert_tap(moments, full=True)
    if method == "mf":
        return invert_mean_field(moments, full=True)
    if method == "rpml":
        return fit_rpml(panel, RpmlConfig())
    raise ValidationError(f"unknown inference method {method!r}")


def window_statistic(panel: SignPanel, statistic: str, method: str = "tap"):
    """One structural number for a window; det_J returns (log|det|, sign)."""
    if statistic == "tree_length_ms":
        C, _ = correlation_matrix(panel)
        return minimum_spanning_tree(ms_distance(C)).total_length
    if statistic == "entropy_S0":
        return entropy_zeroth(panel.values.mean(axis=1))
    fit = _window_inference(panel, method)
    model = fit if isinstance(fit, CouplingModel) else fit.model
    if statistic == "tree_length_J":
        return minimum_spanning_tree(influence_dissimilarity(model)).total_length
    if statistic == "aggregate_h":
        return float(model.fields.sum())
    Jd = model.influences if isinstance(fit, CouplingModel) else fit.influences_with_diagonal
    if statistic == "trace_J":
        return float(np.trace(Jd))
    if statistic == "det_J":
        sign, logdet = np.linalg.slogdet(Jd)
        return float(logdet), int(sign)
    raise ValidationError(f"unknown statistic {statistic!r}; expected one of {STATISTICS}")


def sliding_window_series(panel: SignPanel, width: int, shift: int, statistic: str,
                          method: str = "tap") -> WindowSeries:
    """Statistic on windows [k shift, k shift + width); start timestamps label
    the windows and ``centered`` subtracts the temporal mean.

    trace_J and det_J use the inferred couplings with the inversion diagonal
    kept (for rpml the diagonal is zero); det_J is reported as log|det| with
    the sign in ``signs``.
    """
    if statistic not in STATISTICS:
        raise ValidationError(f"unknown statistic {statistic!r}; expected one of {STATISTICS}")
    if width > panel.m:
        raise WindowTooLarge(f"width {width} exceeds M={panel.m}")
    if width < 2 or shift < 1:
        raise ValidationError("width must be >= 2 and shift >= 1")
    starts, vals, signs = [], [], []
    for a in range(0, panel.m - width + 1, shift):
        v = window_statistic(panel.window(a, a + width), statistic, method)
        if statistic == "det_J":
            v, sg = v
            signs.append(sg)
        starts.append(panel.times[a])
        vals.append(v)
    vals = np.asarray(vals, dtype=float)
    return WindowSeries(statistic, tuple(starts), vals, vals - vals.mean(),
                        np.asarray(signs, dtype=int) if statistic == "det_J" else None)


# --------------------------------------------------------------------------- #
# hierarchical clustering
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Clustering:
    merges: np.ndarray
    labels: np.ndarray
    permutation: np.ndarray

    def dendrogram_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_a", "node_b", "height"])
            for a, b, h, _ in self.merges:
                w.writerow([int(a), int(b), f"{h:.12g}"])


def hierarchical_clusters(d: DissimilarityMatrix, cluster_count: int | None = None,
                          threshold: float | None = None) -> Clustering:
    """Complete-linkage clustering of the z-scored columns of ``d``.

    Rows are the objects; each column is standardized to zero mean and unit
    variance (constant columns become zero) and objects are compared by
    Euclidean distance. Flat labels are numbered 1, 2, ... in the order the
    clusters appear along the leaf permutation, which lists clusters
    contiguously. Ties follow the input index order.
    """
    if (cluster_count is None) == (threshold is None):
        raise ValidationError("give exactly one of cluster_count or threshold")
    v = d.values
    n = d.n
    if n < 2:
        return Clustering(np.empty((0, 4)), np.ones(n, dtype=int), np.arange(n))
    sd = v.std(axis=0)
    z = np.where(sd > 0, (v - v.mean(axis=0)) / np.where(sd > 0, sd, 1.0), 0.0)
    merges = linkage(pdist(z), method="complete")
    perm = leaves_list(merges)
    if cluster_count is not None:
        if not 1 <= cluster_count <= n:
            raise ValidationError(f"cluster_count must lie in 1..{n}")
        raw = fcluster(merges, cluster_count, criterion="maxclust")
    else:
        raw = fcluster(merges, threshold, criterion="distance")
    relabel = {}
    for k in perm:
        relabel.setdefault(raw[k], len(relabel) + 1)
    labels = np.array([relabel[c] for c in raw])
    # stable sort of leaves by cluster keeps clusters contiguous
    perm = perm[np.argsort(labels[perm], kind="stable")]
    return Clustering(merges, labels, perm)
