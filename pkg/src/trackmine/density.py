"""Hierarchical density-based clustering with outlier scores.

Pipeline: core distances -> mutual reachability -> minimum spanning tree
-> single-linkage dendrogram -> condensed tree -> stability-based cluster
extraction. Everything is deterministic: equal-weight edges are broken
lexicographically by (weight, min endpoint, max endpoint).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .errors import TooFewPointsError

NOISE = -1


@dataclass(frozen=True)
class HdbscanConfig:
    min_size: int = 14
    min_samples: int | None = None  # None means: use min_size
    leaf_selection: bool = False

    def __post_init__(self):
        if self.min_size < 2:
            raise ValueError("min_size must be >= 2")
        if self.min_samples is not None and self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")

    @property
    def effective_min_samples(self) -> int:
        return self.min_samples if self.min_samples is not None else self.min_size


def core_distances(points: np.ndarray, k: int) -> np.ndarray:
    """Distance to the k-th nearest neighbor, self excluded."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n <= k:
        raise TooFewPointsError(f"need more than k={k} points, got {n}")
    dist = _pairwise(points)
    # column k after sorting each row; column 0 is the self-distance 0
    part = np.sort(dist, axis=1)
    return part[:, k]


def _pairwise(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def mutual_reachability(a: int, b: int, core: np.ndarray, points: np.ndarray) -> float:
    """max(core(a), core(b), D(a, b))."""
    d = float(np.linalg.norm(np.asarray(points[a]) - np.asarray(points[b])))
    return max(float(core[a]), float(core[b]), d)


def mutual_reachability_matrix(points: np.ndarray, core: np.ndarray) -> np.ndarray:
    dist = _pairwise(np.asarray(points, dtype=np.float64))
    np.maximum(dist, core[:, None], out=dist)
    np.maximum(dist, core[None, :], out=dist)
    np.fill_diagonal(dist, 0.0)
    return dist


def build_mst(weights: np.ndarray) -> np.ndarray:
    """Kruskal MST over a dense symmetric weight matrix.

    Returns (n-1, 3) rows (i, j, w) with i < j, sorted ascending by
    (w, i, j); edge ties resolve to the lexicographically smallest set.
    """
    n = len(weights)
    if n < 2:
        raise TooFewPointsError("MST needs at least 2 points")
    ii, jj = np.triu_indices(n, k=1)
    ww = weights[ii, jj]
    order = np.lexsort((jj, ii, ww))
    parent = np.arange(n)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    edges = np.empty((n - 1, 3))
    count = 0
    for e in order:
        a, b = find(ii[e]), find(jj[e])
        if a != b:
            parent[b] = a
            edges[count] = (ii[e], jj[e], ww[e])
            count += 1
            if count == n - 1:
                break
    return edges


def single_linkage_tree(mst_edges: np.ndarray, n: int) -> np.ndarray:
    """Dendrogram from MST edges: (n-1, 4) rows (left, right, height, size).

    Leaves are 0..n-1; the merge in row r creates cluster id n+r. Edges
    are processed in ascending (weight, min endpoint, max endpoint) order.
    """
    order = np.lexsort((mst_edges[:, 1], mst_edges[:, 0], mst_edges[:, 2]))
    parent = np.arange(n)
    label = np.arange(n)
    size = np.ones(n, dtype=np.int64)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    merges = np.empty((n - 1, 4))
    for r, e in enumerate(order):
        i, j, w = mst_edges[e]
        ra, rb = find(int(i)), find(int(j))
        la, lb = label[ra], label[rb]
        merges[r] = (min(la, lb), max(la, lb), w, size[ra] + size[rb])
        parent[rb] = ra
        size[ra] += size[rb]
        label[ra] = n + r
    return merges


@dataclass(frozen=True)
class CondensedTree:
    """Cluster hierarchy after absorbing sub-min_size splits.

    Rows relate a parent cluster (id >= n_points) to either a child
    cluster or a point (id < n_points) departing at density lambda.
    """

    n_points: int
    parents: np.ndarray
    children: np.ndarray
    lambdas: np.ndarray
    sizes: np.ndarray

    @property
    def root(self) -> int:
        return self.n_points

    def cluster_ids(self) -> np.ndarray:
        kids = self.children[self.children >= self.n_points]
        return np.unique(np.concatenate(([self.root], kids))).astype(np.int64)

    def child_clusters(self, cluster: int) -> list[int]:
        sel = (self.parents == cluster) & (self.children >= self.n_points)
        return [int(c) for c in self.children[sel]]

    def birth_lambdas(self) -> dict[int, float]:
        births = {int(self.root): 0.0}
        for p, c, lam in zip(self.parents, self.children, self.lambdas):
            if c >= self.n_points:
                births[int(c)] = float(lam)
        return births

    def stabilities(self) -> dict[int, float]:
        """stability(C) = sum over departures of (lambda - lambda_birth) * size."""
        births = self.birth_lambdas()
        stab = {int(c): 0.0 for c in self.cluster_ids()}
        for p, lam, sz in zip(self.parents, self.lambdas, self.sizes):
            stab[int(p)] += (float(lam) - births[int(p)]) * int(sz)
        return stab


def _subtree_points(merges: np.ndarray, n: int, node: int):
    stack = [node]
    while stack:
        cur = stack.pop()
        if cur < n:
            yield cur
        else:
            row = merges[cur - n]
            stack.append(int(row[0]))
            stack.append(int(row[1]))


def condense_tree(mst_edges: np.ndarray, n: int, min_size: int) -> CondensedTree:
    """Condense the single-linkage dendrogram built from the MST edges."""
    merges = single_linkage_tree(mst_edges, n)
    counts = merges[:, 3].astype(np.int64)

    def node_count(node: int) -> int:
        return 1 if node < n else counts[node - n]

    rows: list[tuple[int, int, float, int]] = []
    root = 2 * n - 2
    relabel = {root: n}
    next_label = n + 1
    stack = [root]
    while stack:
        node = stack.pop(0)
        left, right, height, _ = merges[node - n]
        left, right = int(left), int(right)
        lam = 1.0 / height if height > 0 else np.inf
        cluster = relabel[node]
        lc, rc = node_count(left), node_count(right)
        if lc >= min_size and rc >= min_size:
            for child in (left, right):
                relabel[child] = next_label
                rows.append((cluster, next_label, lam, node_count(child)))
                next_label += 1
                if child >= n:
                    stack.append(child)
                else:  # a single point can never reach min_size >= 2
                    raise AssertionError("leaf promoted to cluster")
        else:
            for child, count in ((left, lc), (right, rc)):
                if count >= min_size:
                    # cluster continues through the large side
                    if child >= n:
                        relabel[child] = cluster
                        stack.append(child)
                    else:
                        rows.append((cluster, child, lam, 1))
                else:
                    for p in _subtree_points(merges, n, child):
                        rows.append((cluster, p, lam, 1))
    rows_arr = np.array(rows, dtype=np.float64)
    return CondensedTree(
        n_points=n,
        parents=rows_arr[:, 0].astype(np.int64),
        children=rows_arr[:, 1].astype(np.int64),
        lambdas=rows_arr[:, 2],
        sizes=rows_arr[:, 3].astype(np.int64),
    )


@dataclass(frozen=True)
class ClusterAssignment:
    """Per-point cluster label (NOISE = -1), membership probability,
    and outlier score (higher = more outlying)."""

    labels: np.ndarray
    probabilities: np.ndarray
    outlier_scores: np.ndarray

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max() + 1) if len(self.labels) else 0


def _select_eom(tree: CondensedTree) -> set[int]:
    stab = tree.stabilities()
    selected: dict[int, bool] = {}
    value: dict[int, float] = {}
    for c in sorted(tree.cluster_ids(), reverse=True):
        kids = tree.child_clusters(c)
        child_sum = sum(value[k] for k in kids)
        if not kids or stab[c] > child_sum:
            selected[c] = True
            value[c] = stab[c]
        else:
            selected[c] = False
            value[c] = child_sum
    # a selected ancestor shadows any selected descendants
    chosen = set()
    stack = [tree.root]
    while stack:
        c = stack.pop()
        if selected[c]:
            chosen.add(c)
        else:
            stack.extend(tree.child_clusters(c))
    return chosen


def _select_leaves(tree: CondensedTree) -> set[int]:
    return {c for c in tree.cluster_ids() if not tree.child_clusters(c)}


def extract_clusters(tree: CondensedTree, leaf_selection: bool = False) -> ClusterAssignment:
    """Stability-maximizing cluster selection plus per-point scores."""
    chosen = _select_leaves(tree) if leaf_selection else _select_eom(tree)
    n = tree.n_points

    # map every condensed cluster to its selected ancestor (or None)
    owner: dict[int, int | None] = {}
    stack = [(tree.root, None)]
    while stack:
        c, inherited = stack.pop()
        current = c if c in chosen else inherited
        owner[c] = current
        for k in tree.child_clusters(c):
            stack.append((k, current))

    cluster_order = {c: i for i, c in enumerate(sorted(chosen))}
    labels = np.full(n, NOISE, dtype=np.int64)
    point_lambda = np.zeros(n)
    point_parent = np.zeros(n, dtype=np.int64)
    for p, c, lam in zip(tree.parents, tree.children, tree.lambdas):
        if c < n:
            point_lambda[c] = lam
            point_parent[c] = p
            sel = owner[int(p)]
            if sel is not None:
                labels[c] = cluster_order[sel]

    # lambda_max per selected cluster, over its member points
    probabilities = np.zeros(n)
    for sel, lab in cluster_order.items():
        members = labels == lab
        lam = point_lambda[members]
        lam_max = lam.max()
        if not np.isfinite(lam_max) or lam_max == 0:
            probabilities[members] = np.where(lam == lam_max, 1.0, 0.0)
        else:
            probabilities[members] = np.minimum(lam, lam_max) / lam_max

    # GLOSH-style score: 1 - lambda_p / max lambda in the point's branch
    branch_max: dict[int, float] = {}
    for c in sorted(tree.cluster_ids(), reverse=True):
        own = tree.lambdas[(tree.parents == c) & (tree.children < n)]
        best = own.max() if len(own) else 0.0
        for k in tree.child_clusters(c):
            best = max(best, branch_max[k])
        branch_max[c] = float(best)
    outlier = np.zeros(n)
    for i in range(n):
        bmax = branch_max[int(point_parent[i])]
        lam = point_lambda[i]
        if not np.isfinite(bmax) or bmax == 0:
            outlier[i] = 0.0 if lam == bmax else 1.0
        else:
            outlier[i] = 1.0 - min(lam, bmax) / bmax
    return ClusterAssignment(labels=labels, probabilities=probabilities, outlier_scores=outlier)


def hdbscan(points: np.ndarray, cfg: HdbscanConfig) -> ClusterAssignment:
    """Run the full clustering pipeline on a (n, d) point array."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n < cfg.min_size:
        raise TooFewPointsError(f"need at least min_size={cfg.min_size} points, got {n}")
    core = core_distances(points, cfg.effective_min_samples)
    weights = mutual_reachability_matrix(points, core)
    mst = build_mst(weights)
    tree = condense_tree(mst, n, cfg.min_size)
    return extract_clusters(tree, leaf_selection=cfg.leaf_selection)


class Hdbscan(BaseEstimator, ClusterMixin):
    """Estimator facade over :func:`hdbscan`.

    After fit: ``labels_``, ``probabilities_``, ``outlier_scores_``.
    """

    def __init__(self, min_size=14, min_samples=None, leaf_selection=False):
        self.min_size = min_size
        self.min_samples = min_samples
        self.leaf_selection = leaf_selection

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be 2-D (n_samples, n_features)")
        cfg = HdbscanConfig(
            min_size=self.min_size,
            min_samples=self.min_samples,
            leaf_selection=self.leaf_selection,
        )
        result = hdbscan(X, cfg)
        self.labels_ = result.labels
        self.probabilities_ = result.probabilities
        self.outlier_scores_ = result.outlier_scores
        return self
