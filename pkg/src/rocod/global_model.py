"""Global expected behavior: one regressor per behavioral attribute, fit on all objects."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from numba import njit

from .dataset import Dataset
from .parallel import parallel_map

LINEAR = "linear"
TREE = "tree"


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class RidgeParams:
    strength: float = 1.0
    intercept: bool = True

    def __post_init__(self):
        if self.strength < 0:
            raise ValueError("ridge strength must be nonnegative")


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 10
    min_samples_leaf: int = 5

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError("max_depth must be nonnegative")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be positive")


# --------------------------------------------------------------------------
# Ridge
# --------------------------------------------------------------------------


def ridge_coefficients(x: np.ndarray, y: np.ndarray, strength: float = 1.0, intercept: bool = True):
    """Solve ``(Xc'Xc + strength I) beta = Xc'yc`` by Cholesky for every column of ``y``.

    With an intercept the data are centered first, which leaves the intercept
    unpenalized. Returns ``(coef, intercepts)`` with shapes ``(C, B)`` and ``(B,)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    squeeze = y.ndim == 1
    y2 = y[:, None] if squeeze else y
    xm = x.mean(axis=0) if intercept else np.zeros(x.shape[1])
    xc = x - xm
    gram = xc.T @ xc
    if strength == 0 and np.linalg.cond(gram) > 1e12:
        raise SingularSystemError(
            "normal equations are singular without regularization; use ridge strength > 0"
        )
    gram[np.diag_indices_from(gram)] += strength
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"{exc}; use ridge strength > 0") from exc
    # one contiguous column at a time: each fit depends on its own target only
    coef = np.empty((x.shape[1], y2.shape[1]))
    b0 = np.empty(y2.shape[1])
    for j in range(y2.shape[1]):
        col = np.ascontiguousarray(y2[:, j])
        ym = col.mean() if intercept else 0.0
        coef[:, j] = scipy.linalg.cho_solve(factor, xc.T @ (col - ym), check_finite=False)
        b0[j] = ym - xm @ coef[:, j]
    if squeeze:
        return coef[:, 0], float(b0[0])
    return coef, b0


@dataclass(frozen=True)
class RidgeRegressor:
    coef: np.ndarray
    intercept: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.coef + self.intercept

    def to_dict(self) -> dict:
        return {"coef": self.coef.tolist(), "intercept": self.intercept}

    @classmethod
    def from_dict(cls, doc: dict) -> RidgeRegressor:
        return cls(np.asarray(doc["coef"], dtype=np.float64), float(doc["intercept"]))


# --------------------------------------------------------------------------
# Regression tree
# --------------------------------------------------------------------------


@njit(nogil=True, cache=True)
def _grow(x, y, presorted, max_depth, min_leaf, max_nodes):
    n, dim = x.shape
    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    value = np.zeros(max_nodes)
    count = np.zeros(max_nodes, dtype=np.int64)
    idx = presorted.copy()
    tmp = np.empty(n, dtype=np.int64)
    goes_left = np.zeros(n, dtype=np.bool_)

    # stack of (node, lo, hi, depth)
    stack = np.empty((max_nodes, 4), dtype=np.int64)
    stack[0, 0], stack[0, 1], stack[0, 2], stack[0, 3] = 0, 0, n, 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node, lo, hi, depth = stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3]
        m = hi - lo
        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for p in range(lo, hi):
            v = y[idx[0, p]]
            total += v
            ymin = min(ymin, v)
            ymax = max(ymax, v)
        mean = total / m
        # a constant node stores its value exactly
        value[node] = ymin if ymax == ymin else mean
        count[node] = m
        if depth >= max_depth or m < 2 * min_leaf or ymax == ymin:
            continue

        # variance reduction of a split = sL^2 * m / (nL * nR) on centered targets
        best_gain = 0.0
        best_f = -1
        best_k = -1
        best_thr = 0.0
        for f in range(dim):
            s_left = 0.0
            for k in range(m - 1):
                s_left += y[idx[f, lo + k]] - mean
                n_left = k + 1
                if n_left < min_leaf:
                    continue
                if m - n_left < min_leaf:
                    break
                xv = x[idx[f, lo + k], f]
                xn = x[idx[f, lo + k + 1], f]
                if xn <= xv:
                    continue
                gain = s_left * s_left * m / (n_left * (m - n_left))
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_k = k
                    mid = 0.5 * (xv + xn)
                    best_thr = mid if mid < xn else xv
        if best_f < 0 or n_nodes + 2 > max_nodes:
            continue

        n_left = best_k + 1
        for p in range(lo, hi):
            goes_left[idx[best_f, p]] = (p - lo) < n_left
        for f in range(dim):
            a = 0
            b = n_left
            for p in range(lo, hi):
                s = idx[f, p]
                if goes_left[s]:
                    tmp[a] = s
                    a += 1
                else:
                    tmp[b] = s
                    b += 1
            for q in range(m):
                idx[f, lo + q] = tmp[q]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lc
        right[node] = rc
        # right pushed first so the left subtree is grown first
        stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3] = rc, lo + n_left, hi, depth + 1
        top += 1
        stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3] = lc, lo, lo + n_left, depth + 1
        top += 1
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        count[:n_nodes].copy(),
    )


@njit(nogil=True, cache=True)
def _apply(x, feature, threshold, left, right, value):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        node = 0
        while feature[node] >= 0:
            if x[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


def presort(x: np.ndarray) -> np.ndarray:
    """Per-feature stable sort order, shape ``(C, N)``."""
    return np.ascontiguousarray(np.argsort(x, axis=0, kind="stable").T.astype(np.int64))


@dataclass(frozen=True)
class RegressionTree:
    """CART regression tree stored as flat node arrays (``feature == -1`` marks a leaf).

    Samples with ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray, params: TreeParams = TreeParams(),
            presorted: np.ndarray | None = None) -> RegressionTree:
        """Greedy variance-reduction splits over midpoints of consecutive distinct values.

        Ties between equally good splits go to the lowest feature index, then
        the lowest threshold.
        """
        x = np.ascontiguousarray(x, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        if presorted is None:
            presorted = presort(x)
        n = x.shape[0]
        max_nodes = min(2 ** (params.max_depth + 1) - 1, 2 * max(1, n // params.min_samples_leaf) + 1)
        return cls(*_grow(x, y, presorted, params.max_depth, params.min_samples_leaf, max_nodes))

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def apply_leaf_values(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
        return _apply(x, self.feature, self.threshold, self.left, self.right, self.value)

    predict = apply_leaf_values

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> RegressionTree:
        ints = ("feature", "left", "right", "n_samples")
        return cls(**{
            k: np.asarray(doc[k], dtype=np.int64 if k in ints else np.float64)
            for k in ("feature", "threshold", "left", "right", "value", "n_samples")
        })


# --------------------------------------------------------------------------
# Global model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GlobalModel:
    kind: str
    regressors: tuple
    n_context: int
    residual_norms: np.ndarray = field(default_factory=lambda: np.empty(0))
    params: RidgeParams | TreeParams | None = None

    @property
    def n_behavior(self) -> int:
        return len(self.regressors)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
        if x2.shape[1] != self.n_context:
            raise ValueError(f"expected contextual vectors of length {self.n_context}, got {x2.shape[1]}")
        out = np.column_stack([r.predict(x2) for r in self.regressors])
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_context": self.n_context,
            "params": None if self.params is None else vars(self.params),
            "residual_norms": self.residual_norms.tolist(),
            "regressors": [r.to_dict() for r in self.regressors],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> GlobalModel:
        kind = doc["kind"]
        reg_cls = RidgeRegressor if kind == LINEAR else RegressionTree
        params_cls = RidgeParams if kind == LINEAR else TreeParams
        return cls(
            kind=kind,
            regressors=tuple(reg_cls.from_dict(r) for r in doc["regressors"]),
            n_context=int(doc["n_context"]),
            residual_norms=np.asarray(doc.get("residual_norms", []), dtype=np.float64),
            params=None if doc.get("params") is None else params_cls(**doc["params"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> GlobalModel:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_global(ds: Dataset, kind: str = TREE, params: RidgeParams | TreeParams | None = None,
               threads: int | None = 1) -> GlobalModel:
    """Fit one regressor of ``y[:, j]`` on ``x`` for every behavioral attribute ``j``."""
    if ds.n_objects < 2:
        raise ValueError("need at least two objects to fit a regression model")
    x, y = ds.x, ds.y
    if kind == LINEAR:
        params = params or RidgeParams()
        coef, b0 = ridge_coefficients(x, y, params.strength, params.intercept)
        regressors = tuple(RidgeRegressor(coef[:, j].copy(), float(b0[j])) for j in range(ds.n_behavior))
    elif kind == TREE:
        params = params or TreeParams()
        order = presort(x)
        regressors = tuple(parallel_map(
            lambda j: RegressionTree.fit(x, y[:, j], params, presorted=order),
            range(ds.n_behavior),
            threads,
        ))
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    model = GlobalModel(kind=kind, regressors=regressors, n_context=ds.n_context, params=params)
    residual = y - model.predict(x)
    return GlobalModel(
        kind=kind,
        regressors=regressors,
        n_context=ds.n_context,
        residual_norms=np.sqrt((residual**2).sum(axis=0)),
        params=params,
    )


def predict_global(model: GlobalModel, x: np.ndarray) -> np.ndarray:
    return model.predict(x)
