"""Ranking metrics over ground-truth outliers and a k-th nearest neighbor baseline."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit, prange
from scipy.spatial import cKDTree

from .dataset import Dataset
from .detector import ScoreReport

BRUTE_FORCE_LIMIT = 20_000


@dataclass(frozen=True)
class LabeledRanking:
    """Objects ordered best-first together with the true outlier set."""

    order: np.ndarray
    outliers: frozenset

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.int64)
        n = order.size
        if n == 0 or not np.array_equal(np.sort(order), np.arange(n)):
            raise ValueError("ranking must be a permutation of 0..N-1")
        outliers = frozenset(int(i) for i in self.outliers)
        if any(i < 0 or i >= n for i in outliers):
            raise ValueError("outlier indices must lie in [0, N)")
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "outliers", outliers)

    @classmethod
    def from_report(cls, report: ScoreReport, labels) -> LabeledRanking:
        return cls(report.order, frozenset(int(i) for i in labels))

    @property
    def n_objects(self) -> int:
        return self.order.size

    def hits(self) -> np.ndarray:
        """Boolean indicator of an outlier at each ranked position."""
        mask = np.zeros(self.n_objects, dtype=bool)
        mask[list(self.outliers)] = True
        return mask[self.order]

    def _check_n(self, n: int) -> None:
        if not 1 <= n <= self.n_objects:
            raise ValueError(f"n must lie in [1, {self.n_objects}]")


def precision_at_n(lr: LabeledRanking, n: int) -> float:
    lr._check_n(n)
    return float(lr.hits()[:n].sum()) / n


def _discounts(n: int) -> np.ndarray:
    pos = np.arange(1, n + 1, dtype=np.float64)
    d = np.ones(n)
    d[1:] = 1.0 / np.log2(pos[1:])
    return d


def ndcg_at_n(lr: LabeledRanking, n: int) -> float:
    """``DCG(n) / IDCG(n)`` with gains ``1`` at position 1 and ``1/log2(i)`` after.

    The ideal DCG counts every one of the top ``n`` positions as an outlier.
    """
    lr._check_n(n)
    d = _discounts(n)
    return float((lr.hits()[:n] * d).sum() / d.sum())


def prc_auc(lr: LabeledRanking) -> float:
    """Area under the precision-recall curve as average precision.

    Sums the precision at every rank where an outlier appears (where recall
    steps up) and divides by ``|O|``.
    """
    if not lr.outliers:
        raise ValueError("prc_auc needs at least one outlier")
    hits = lr.hits()
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, ranks.size + 1) / ranks
    return float(precision.sum() / len(lr.outliers))


def default_top_n(n_outliers: int, n_objects: int | None = None) -> int:
    n = min(100, 4 * max(1, n_outliers))
    return n if n_objects is None else min(n, n_objects)


@dataclass(frozen=True)
class MetricReport:
    prc_auc: float
    precision_at: dict = field(default_factory=dict)
    ndcg_at: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "prc_auc": self.prc_auc,
            "precision_at": {str(k): v for k, v in self.precision_at.items()},
            "ndcg_at": {str(k): v for k, v in self.ndcg_at.items()},
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def table_row(self, dataset: str, method: str, n: int) -> dict:
        return {
            "dataset": dataset,
            "method": method,
            "prc_auc": self.prc_auc,
            f"p@{n}": self.precision_at[n],
            f"ndcg@{n}": self.ndcg_at[n],
        }

    def write_csv_row(self, path, dataset: str, method: str, n: int, append: bool = False) -> None:
        """One ``dataset,method,prc_auc,p@n,ndcg@n`` row (header written for new files)."""
        row = self.table_row(dataset, method, n)
        path = Path(path)
        new = not (append and path.exists() and path.stat().st_size > 0)
        with path.open("w" if new else "a", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
            if new:
                writer.writeheader()
            writer.writerow(row)


def evaluate(lr: LabeledRanking, ns=(100,)) -> MetricReport:
    ns = [min(int(n), lr.n_objects) for n in ns]
    return MetricReport(
        prc_auc=prc_auc(lr),
        precision_at={n: precision_at_n(lr, n) for n in ns},
        ndcg_at={n: ndcg_at_n(lr, n) for n in ns},
    )


# --------------------------------------------------------------------------
# k-th nearest neighbor distance baseline
# --------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _sqdist(z, i, j):
    s = 0.0
    for t in range(z.shape[1]):
        d = z[i, t] - z[j, t]
        s += d * d
    return s


@njit(parallel=True, cache=True)
def _kth_brute(z, k):
    n = z.shape[0]
    out = np.empty(n)
    for i in prange(n):
        d = np.empty(n)
        for j in range(n):
            d[j] = _sqdist(z, i, j)
        # the object itself sits at distance 0, so position k skips it
        out[i] = math.sqrt(np.partition(d, k)[k])
    return out


@njit(parallel=True, cache=True)
def _recompute(z, nbr):
    out = np.empty(z.shape[0])
    for i in prange(z.shape[0]):
        out[i] = math.sqrt(_sqdist(z, i, nbr[i]))
    return out


def kth_neighbor_distances(z: np.ndarray, k: int, method: str = "auto") -> np.ndarray:
    """Euclidean distance from every row of ``z`` to its ``k``-th nearest other row."""
    z = np.ascontiguousarray(z, dtype=np.float64)
    n = z.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must lie in [1, N) with N={n}")
    if method == "auto":
        method = "brute" if n <= BRUTE_FORCE_LIMIT else "kdtree"
    if method == "brute":
        return _kth_brute(z, k)
    if method != "kdtree":
        raise ValueError(f"unknown method {method!r}")
    _, idx = cKDTree(z).query(z, k=[k + 1])
    # distances recomputed exactly as in the brute-force path
    return _recompute(z, np.ascontiguousarray(idx[:, 0], dtype=np.int64))


def knn_distance_baseline(ds: Dataset, k: int = 30, method: str = "auto") -> ScoreReport:
    """Score every object by the distance from its full vector ``(x, y)`` to the k-th neighbor."""
    s = kth_neighbor_distances(ds.z, k, method)
    return ScoreReport.from_scores(s, info={"method": "knn", "k": k})
