"""Clustering evaluation: adjusted mutual information, homogeneity,
completeness, and outlier-fraction sweeps.

All entropies are natural-log (nats); the reported scores are ratios, so
the base cancels everywhere except the raw mutual information value.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, exp, log

import numpy as np
from scipy.special import gammaln

from .errors import EmptyRemainderError, LengthMismatchError

NOISE = -1

NORMALIZERS = ("arithmetic", "max", "min", "sqrt")


@dataclass(frozen=True)
class ContingencyTable:
    """Joint counts of true class (rows) x predicted cluster (columns)."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or np.any(c < 0):
            raise ValueError("counts must be a non-negative 2-D table")
        object.__setattr__(self, "counts", c)

    @property
    def row_marginals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_marginals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def contingency(labels_true, labels_pred) -> ContingencyTable:
    """Exact joint counts; callers filter NOISE/excluded points first."""
    labels_true = np.asarray(labels_true)
    labels_pred = np.asarray(labels_pred)
    if len(labels_true) != len(labels_pred):
        raise LengthMismatchError(
            f"label lengths differ: {len(labels_true)} vs {len(labels_pred)}"
        )
    if len(labels_true) == 0:
        raise LengthMismatchError("label arrays must be non-empty")
    rows, ri = np.unique(labels_true, return_inverse=True)
    cols, ci = np.unique(labels_pred, return_inverse=True)
    counts = np.zeros((len(rows), len(cols)), dtype=np.int64)
    np.add.at(counts, (ri, ci), 1)
    return ContingencyTable(counts=counts)


def _entropy(marginals: np.ndarray, total: int) -> float:
    p = marginals[marginals > 0] / total
    return float(-(p * np.log(p)).sum())


def entropies(table: ContingencyTable) -> tuple[float, float]:
    """(H of true classes, H of predicted clusters) in nats."""
    n = table.total
    return _entropy(table.row_marginals, n), _entropy(table.col_marginals, n)


def mutual_information(table: ContingencyTable) -> float:
    """Plug-in MI of the joint counts, in nats."""
    n = table.total
    if n <= 0:
        raise ValueError("empty table")
    outer = table.row_marginals[:, None] * table.col_marginals[None, :]
    c = table.counts
    nz = c > 0
    return float(((c[nz] / n) * np.log(c[nz] * n / outer[nz])).sum())


def expected_mi(table: ContingencyTable) -> float:
    """E[MI] under the permutation (hypergeometric) model of the marginals."""
    a = table.row_marginals
    b = table.col_marginals
    n = table.total
    lf = gammaln(np.arange(n + 2) + 1.0)  # lf[k] = ln(k!)
    emi = 0.0
    for ai in a:
        if ai == 0:
            continue
        for bj in b:
            if bj == 0:
                continue
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            for nij in range(lo, hi + 1):
                log_term = (
                    lf[ai]
                    + lf[bj]
                    + lf[n - ai]
                    + lf[n - bj]
                    - lf[n]
                    - lf[nij]
                    - lf[ai - nij]
                    - lf[bj - nij]
                    - lf[n - ai - bj + nij]
                )
                emi += (nij / n) * log(nij * n / (ai * bj)) * exp(log_term)
    return emi


def _normalize(hu: float, hv: float, normalizer: str) -> float:
    if normalizer == "arithmetic":
        return 0.5 * (hu + hv)
    if normalizer == "max":
        return max(hu, hv)
    if normalizer == "min":
        return min(hu, hv)
    if normalizer == "sqrt":
        return float(np.sqrt(hu * hv))
    raise ValueError(f"unknown normalizer {normalizer!r}; choose from {NORMALIZERS}")


def ami(table: ContingencyTable, normalizer: str = "arithmetic") -> float:
    """(MI - E[MI]) / (norm(H(U), H(V)) - E[MI])."""
    mi = mutual_information(table)
    emi = expected_mi(table)
    hu, hv = entropies(table)
    denom = _normalize(hu, hv, normalizer) - emi
    if denom == 0.0:
        return 1.0 if abs(mi - emi) < 1e-12 else 0.0
    return (mi - emi) / denom


def homogeneity_completeness(table: ContingencyTable) -> tuple[float, float]:
    """Entropy-based purity of clusters and concentration of classes."""
    n = table.total
    c = table.counts
    a = table.row_marginals
    b = table.col_marginals
    hu, hv = entropies(table)
    nz = c > 0
    # H(true | pred) and H(pred | true)
    h_uv = float(-((c[nz] / n) * np.log(c[nz] / np.broadcast_to(b, c.shape)[nz])).sum())
    h_vu = float(-((c[nz] / n) * np.log(c[nz] / np.broadcast_to(a[:, None], c.shape)[nz])).sum())
    h = 1.0 if hu == 0 else 1.0 - h_uv / hu
    comp = 1.0 if hv == 0 else 1.0 - h_vu / hv
    return h, comp


@dataclass(frozen=True)
class SweepPoint:
    fraction: float
    retained: int
    ami: float
    homogeneity: float
    completeness: float


def outlier_sweep(
    labels_pred,
    labels_true,
    fractions,
    outlier_scores=None,
    normalizer: str = "arithmetic",
    exclude_noise: bool = True,
) -> list[SweepPoint]:
    """Metrics after excluding the top-f fraction of points by outlier score.

    At each fraction f the ceil((1-f)*N) lowest-scored points are kept
    (score ties resolved by point id, smaller id dropped first). Without
    scores only the f=0 point is produced.
    """
    labels_pred = np.asarray(labels_pred)
    labels_true = np.asarray(labels_true)
    if len(labels_pred) != len(labels_true):
        raise LengthMismatchError("prediction and truth lengths differ")
    scored = np.arange(len(labels_pred))
    if exclude_noise:
        scored = scored[labels_pred != NOISE]
    n = len(scored)
    if n == 0:
        raise EmptyRemainderError("no scored points to evaluate")

    fractions = sorted(float(f) for f in fractions)
    if any(f < 0 or f >= 1 for f in fractions):
        raise ValueError("fractions must lie in [0, 1)")
    if outlier_scores is None:
        fractions = [0.0]
        order = scored
    else:
        scores = np.asarray(outlier_scores, dtype=np.float64)[scored]
        # descending score, ascending id among ties: dropped from the front
        order = scored[np.lexsort((scored, -scores))]

    points = []
    for f in fractions:
        retained = ceil((1.0 - f) * n)
        if retained == 0:
            raise EmptyRemainderError(f"fraction {f} removes all points")
        keep = np.sort(order[n - retained :]) if n - retained else np.sort(order)
        table = contingency(labels_true[keep], labels_pred[keep])
        h, c = homogeneity_completeness(table)
        points.append(
            SweepPoint(
                fraction=f,
                retained=retained,
                ami=ami(table, normalizer),
                homogeneity=h,
                completeness=c,
            )
        )
    return points
