"""Adaptive local/global ensemble, R^2 attribute weights and outlierness scores."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .global_model import GlobalModel
from .local_model import LocalExpectation, NeighborTable

VARIANTS = ("diagonal", "scalar")
WEIGHTINGS = ("adaptive", "local", "global")


def neighbor_weights(counts: np.ndarray) -> np.ndarray:
    """``sqrt(|CN_i|) / max_j sqrt(|CN_j|)``, or all zeros when nobody has neighbors."""
    root = np.sqrt(np.asarray(counts, dtype=np.float64))
    top = root.max() if root.size else 0.0
    if top <= 0:
        return np.zeros_like(root)
    return root / top


@dataclass(frozen=True)
class EnsembleExpectation:
    lam: np.ndarray
    y_hat: np.ndarray
    local: np.ndarray
    global_: np.ndarray
    counts: np.ndarray

    @property
    def local_defined(self) -> np.ndarray:
        return self.counts > 0


def ensemble(
    ds: Dataset,
    local: LocalExpectation,
    global_model: GlobalModel | np.ndarray,
    nt: NeighborTable,
    weighting: str = "adaptive",
) -> EnsembleExpectation:
    """Blend local and global expectations, ``lam * local + (1 - lam) * global``.

    ``weighting="local"`` and ``"global"`` give the single-model ablations
    (objects without neighbors always fall back to the global expectation).
    """
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}")
    psi = global_model.predict(ds.x) if isinstance(global_model, GlobalModel) else np.asarray(global_model)
    if psi.shape != ds.y.shape or local.values.shape != ds.y.shape:
        raise ValueError("expectations do not match the dataset shape")
    counts = nt.counts
    defined = counts > 0
    if weighting == "adaptive":
        lam = neighbor_weights(counts)
    elif weighting == "local":
        lam = defined.astype(np.float64)
    else:
        lam = np.zeros(ds.n_objects)
    y_hat = psi.copy()
    d = defined & (lam > 0)
    ld = lam[d, None]
    y_hat[d] = ld * local.values[d] + (1.0 - ld) * psi[d]
    return EnsembleExpectation(lam=lam, y_hat=y_hat, local=local.values, global_=psi, counts=counts)


@dataclass(frozen=True)
class AttributeWeights:
    weights: np.ndarray
    r2: np.ndarray


def r_squared(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    """Per-column coefficient of determination; NaN for constant columns."""
    y = np.asarray(y, dtype=np.float64)
    resid = ((y - y_hat) ** 2).sum(axis=0)
    total = ((y - y.mean(axis=0)) ** 2).sum(axis=0)
    out = np.full(y.shape[1], np.nan)
    ok = total > 0
    out[ok] = 1.0 - resid[ok] / total[ok]
    return out


def attribute_weights(ds: Dataset, ee: EnsembleExpectation) -> AttributeWeights:
    r2 = r_squared(ds.y, ee.y_hat)
    w = np.where(np.isnan(r2), 0.0, np.maximum(r2, 0.0))
    return AttributeWeights(weights=w, r2=r2)


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Indices by decreasing score; equal scores keep increasing index order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


@dataclass(frozen=True)
class ScoreReport:
    scores: np.ndarray
    order: np.ndarray
    weights: np.ndarray | None = None
    r2: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @classmethod
    def from_scores(cls, scores, **kwargs) -> ScoreReport:
        scores = np.asarray(scores, dtype=np.float64)
        return cls(scores=scores, order=rank_order(scores), **kwargs)

    @property
    def n_objects(self) -> int:
        return self.scores.shape[0]

    @property
    def ranks(self) -> np.ndarray:
        """1-based rank of every object (1 = highest score)."""
        ranks = np.empty(self.n_objects, dtype=np.int64)
        ranks[self.order] = np.arange(1, self.n_objects + 1)
        return ranks

    def write_csv(self, path, n: int | None = None) -> None:
        """Scores as ``index,score,rank,is_flagged_top_n`` rows in index order."""
        ranks = self.ranks
        flagged = np.zeros(self.n_objects, dtype=bool) if n is None else ranks <= n
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "score", "rank", "is_flagged_top_n"])
            for i in range(self.n_objects):
                writer.writerow([i, repr(float(self.scores[i])), int(ranks[i]), int(flagged[i])])

    @classmethod
    def read_csv(cls, path) -> ScoreReport:
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no score rows")
        index = np.array([int(r["index"]) for r in rows])
        scores = np.empty(len(rows))
        scores[index] = [float(r["score"]) for r in rows]
        order = np.empty(len(rows), dtype=np.int64)
        order[np.array([int(r["rank"]) for r in rows]) - 1] = index
        return cls(scores=scores, order=order)

    def summary(self) -> dict:
        doc = dict(self.info)
        if self.weights is not None:
            doc["weights"] = self.weights.tolist()
        if self.r2 is not None:
            doc["r2"] = [None if np.isnan(v) else float(v) for v in self.r2]
        return doc

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n", encoding="utf-8")


def score(ds: Dataset, ee: EnsembleExpectation, weights: AttributeWeights | np.ndarray,
          variant: str = "diagonal") -> ScoreReport:
    """Weighted residual norm per object.

    ``diagonal``: ``sqrt(sum_j (w_j * (y_j - y_hat_j))**2)``.
    ``scalar``: ``|sum_j w_j * (y_j - y_hat_j)|``, the literal dot-product reading.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    w = weights.weights if isinstance(weights, AttributeWeights) else np.asarray(weights, dtype=np.float64)
    r2 = weights.r2 if isinstance(weights, AttributeWeights) else None
    resid = ds.y - ee.y_hat
    if variant == "diagonal":
        s = np.sqrt(((resid * w) ** 2).sum(axis=1))
    else:
        s = np.abs(resid @ w)
    lam = ee.lam
    info = {
        "variant": variant,
        "lambda_mean": float(lam.mean()),
        "lambda_zero_fraction": float((lam == 0).mean()),
        "neighbor_count_max": int(ee.counts.max()),
        "neighbor_count_mean": float(ee.counts.mean()),
    }
    return ScoreReport.from_scores(s, weights=w, r2=r2, info=info)


def top_n(report: ScoreReport, n: int) -> np.ndarray:
    if not 1 <= n <= report.n_objects:
        raise ValueError(f"n must lie in [1, {report.n_objects}]")
    return report.order[:n].copy()
