"""Contextual neighbors and local expected behavior.

Three neighbor modes are supported:

``exact``
    every pair is checked with the exact cosine similarity (no hashing);
``lsh``
    LSH candidates (shared signature slot) verified with the exact cosine;
``hamming``
    LSH candidates accepted when the signature Hamming distance is at most
    ``l * d * arccos(alpha) / pi``.

The kernels fuse neighbor search with the behavior sums needed for the local
mean, so full neighbor lists are only materialized on request.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit, prange

from .dataset import Dataset
from .lsh import LshParams, SignatureSet, build_signatures, derive_params, hamming_words, popcount64

MODES = ("exact", "lsh", "hamming")
_TILE = 512
DEFAULT_ALPHA_PAIRS = 100_000


class DegenerateContextError(ValueError):
    """Raised when cosine similarity is undefined for (almost) every object."""


def unit_contexts(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized contexts and a mask of rows with nonzero norm."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt((x * x).sum(axis=1))
    valid = norms > 0
    u = np.zeros_like(x)
    u[valid] = x[valid] / norms[valid, None]
    return np.ascontiguousarray(u), valid


# --------------------------------------------------------------------------
# Threshold selection
# --------------------------------------------------------------------------


def percentile_from_top(similarities, percentile: float = 5.0) -> float:
    """Nearest-rank value at ``percentile`` percent from the top of ``similarities``."""
    s = np.sort(np.asarray(similarities, dtype=np.float64))[::-1]
    if s.size == 0:
        raise ValueError("no similarities given")
    if not 0 < percentile < 100:
        raise ValueError("percentile must lie in (0, 100)")
    rank = max(1, math.ceil(percentile / 100.0 * s.size - 1e-9))
    return float(s[rank - 1])


def sample_pairs(n: int, r: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``r`` distinct unordered pairs ``(i < j)`` drawn uniformly from ``n`` objects."""
    total = n * (n - 1) // 2
    r = min(r, total)
    if r == total:
        return np.triu_indices(n, k=1)
    flat = np.sort(rng.choice(total, size=r, replace=False))
    rows = np.arange(n, dtype=np.int64)
    offsets = rows * (2 * n - rows - 1) // 2
    i = np.searchsorted(offsets, flat, side="right") - 1
    j = flat - offsets[i] + i + 1
    return i, j


def select_alpha(
    ds: Dataset,
    sample_pairs_count: int | None = None,
    percentile: float = 5.0,
    seed=None,
) -> float:
    """Cosine threshold taken from a sample of pairwise context similarities.

    Samples ``r`` unordered pairs (default ``min(100_000, N(N-1)/2)``) among
    objects with a nonzero context, and returns the similarity at
    ``percentile`` percent from the top (nearest rank).
    """
    if sample_pairs_count is not None and sample_pairs_count < 1:
        raise ValueError("need at least one sampled pair")
    u, valid = unit_contexts(ds.x)
    idx = np.flatnonzero(valid)
    if idx.size < 2:
        raise DegenerateContextError("fewer than two objects have a nonzero contextual vector")
    r = DEFAULT_ALPHA_PAIRS if sample_pairs_count is None else sample_pairs_count
    i, j = sample_pairs(idx.size, r, np.random.default_rng(seed))
    sims = np.einsum("ij,ij->i", u[idx[i]], u[idx[j]])
    return percentile_from_top(np.clip(sims, -1.0, 1.0), percentile)


# --------------------------------------------------------------------------
# Neighbor kernels
# --------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _dot(u, i, j):
    s = 0.0
    for t in range(u.shape[1]):
        s += u[i, t] * u[j, t]
    return s


@njit(cache=True, inline="always")
def _shares_slot(codes, i, j):
    for k in range(codes.shape[1]):
        if codes[i, k] == codes[j, k]:
            return True
    return False


@njit(parallel=True, cache=True)
def _scan_kernel(
    mode, u, ut, valid, y, words, wt, codes, alpha, max_ham, n_chunks,
    fill, indptr, indices, counts, sums,
):
    n = u.shape[0]
    b = y.shape[1]
    dim = u.shape[1]
    n_words = wt.shape[0]
    chunk = (n + n_chunks - 1) // n_chunks
    for c in prange(n_chunks):
        lo = c * chunk
        hi = min(n, lo + chunk)
        key = np.empty(_TILE)
        for i in range(lo, hi):
            if not valid[i]:
                counts[i] = 0
                continue
            acc = np.zeros(b)
            m = 0
            pos = indptr[i] if fill else 0
            for j0 in range(0, n, _TILE):
                j1 = min(n, j0 + _TILE)
                w_ = j1 - j0
                # dense, vectorizable pass computing the filter key for the tile
                kk = key[:w_]
                kk[:] = 0.0
                if mode == 2:
                    for w in range(n_words):
                        wi = words[i, w]
                        row = wt[w, j0:j1]
                        for q in range(w_):
                            kk[q] += popcount64(wi ^ row[q])
                else:
                    for t in range(dim):
                        ui = u[i, t]
                        row = ut[t, j0:j1]
                        for q in range(w_):
                            kk[q] += ui * row[q]
                # remaining predicate on the survivors, in index order
                for q in range(w_):
                    if mode == 2:
                        if key[q] > max_ham:
                            continue
                    elif key[q] < alpha:
                        continue
                    j = j0 + q
                    if j == i or not valid[j]:
                        continue
                    if mode != 0 and not _shares_slot(codes, i, j):
                        continue
                    m += 1
                    for t in range(b):
                        acc[t] += y[j, t]
                    if fill:
                        indices[pos] = j
                        pos += 1
            counts[i] = m
            sums[i, :] = acc


@njit(parallel=True, cache=True)
def _bucket_kernel(
    mode, u, valid, y, words, codes, order, start, end, alpha, max_ham, n_chunks,
    fill, indptr, indices, counts, sums,
):
    n = u.shape[0]
    b = y.shape[1]
    l = order.shape[0]
    chunk = (n + n_chunks - 1) // n_chunks
    for c in prange(n_chunks):
        lo = c * chunk
        hi = min(n, lo + chunk)
        stamp = np.full(n, -1, dtype=np.int64)
        buf = np.empty(n, dtype=np.int64)
        for i in range(lo, hi):
            if not valid[i]:
                counts[i] = 0
                continue
            stamp[i] = i
            m = 0
            for k in range(l):
                for p in range(start[k, i], end[k, i]):
                    j = order[k, p]
                    if stamp[j] == i:
                        continue
                    stamp[j] = i
                    if not valid[j]:
                        continue
                    # a shared slot is guaranteed here; only the filter remains
                    if mode == 2:
                        ok = np.int64(hamming_words(words[i], words[j])) <= max_ham
                    else:
                        ok = _dot(u, i, j) >= alpha
                    if ok:
                        buf[m] = j
                        m += 1
            # index order keeps the behavior sums identical to the scan kernel
            seg = np.sort(buf[:m])
            acc = np.zeros(b)
            for q in range(m):
                for t in range(b):
                    acc[t] += y[seg[q], t]
            counts[i] = m
            sums[i, :] = acc
            if fill:
                indices[indptr[i]:indptr[i] + m] = seg


# --------------------------------------------------------------------------
# Public API
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NeighborTable:
    """Contextual neighbor counts (and optionally lists) for every object.

    ``sums`` holds the componentwise sum of the neighbors' behavioral vectors,
    accumulated in increasing neighbor index order.
    """

    counts: np.ndarray
    sums: np.ndarray
    alpha: float
    mode: str
    indptr: np.ndarray | None = None
    indices: np.ndarray | None = None
    strategy: str = "scan"
    lsh: LshParams | None = None

    @property
    def n_objects(self) -> int:
        return self.counts.shape[0]

    @property
    def has_lists(self) -> bool:
        return self.indices is not None

    def neighbors(self, i: int) -> np.ndarray:
        if self.indices is None:
            raise ValueError("neighbor lists were not stored; pass store_lists=True")
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def as_sets(self) -> list[set[int]]:
        return [set(self.neighbors(i).tolist()) for i in range(self.n_objects)]


# Bucket probing wins while it touches fewer entries than a share of all pairs.
_BUCKET_VISIT_FRACTION = 0.1


def choose_strategy(sigs: SignatureSet) -> str:
    n = sigs.n_objects
    return "buckets" if sigs.buckets.visit_count() < _BUCKET_VISIT_FRACTION * n * n else "scan"


def find_neighbors(
    ds: Dataset,
    alpha: float,
    lsh_params: LshParams | None = None,
    mode: str = "exact",
    *,
    signatures: SignatureSet | None = None,
    store_lists: bool = False,
    strategy: str = "auto",
) -> NeighborTable:
    """Neighbors ``{j != i : sim(x_i, x_j) >= alpha}`` under the chosen ``mode``.

    Objects with an all-zero context have no neighbors and are nobody's
    neighbor. ``strategy`` selects how LSH candidates are enumerated
    (``"buckets"`` probes the hash tables, ``"scan"`` tests the shared-slot
    predicate on every pair); both give identical tables.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    u, valid = unit_contexts(ds.x)
    y = np.ascontiguousarray(ds.y)
    n = ds.n_objects
    alpha = float(alpha)

    if alpha > 1.0:
        # no cosine exceeds 1, whatever the approximation would say
        return NeighborTable(
            counts=np.zeros(n, dtype=np.int64),
            sums=np.zeros((n, ds.n_behavior)),
            alpha=alpha,
            mode=mode,
            indptr=np.zeros(n + 1, dtype=np.int64) if store_lists else None,
            indices=np.zeros(0, dtype=np.int64) if store_lists else None,
        )
    if mode == "exact":
        words = np.zeros((n, 1), dtype=np.uint64)
        codes = np.zeros((n, 1), dtype=np.int64)
        sigs = None
        max_ham = 0
        strategy = "scan"
    else:
        if signatures is None:
            if lsh_params is None:
                # the hash family needs alpha strictly inside (0, 1)
                lsh_params = derive_params(min(alpha, math.nextafter(1.0, 0.0)))
            signatures = build_signatures(ds, lsh_params)
        sigs = signatures
        lsh_params = sigs.params
        words, codes = sigs.words, sigs.codes
        max_ham = int(math.floor(lsh_params.hamming_threshold + 1e-9))
        if strategy == "auto":
            strategy = choose_strategy(sigs)
    if strategy not in ("scan", "buckets"):
        raise ValueError(f"unknown strategy {strategy!r}")
    mode_code = MODES.index(mode)
    n_chunks = max(1, min(n, 256))
    ut = np.ascontiguousarray(u.T)
    wt = np.ascontiguousarray(words.T)

    def run(fill, indptr, indices, counts, sums):
        if strategy == "scan":
            _scan_kernel(mode_code, u, ut, valid, y, words, wt, codes, alpha, max_ham,
                         n_chunks, fill, indptr, indices, counts, sums)
        else:
            bk = sigs.buckets
            _bucket_kernel(mode_code, u, valid, y, words, codes, bk.order, bk.start, bk.end,
                           alpha, max_ham, n_chunks, fill, indptr, indices, counts, sums)

    counts = np.zeros(n, dtype=np.int64)
    sums = np.zeros((n, ds.n_behavior))
    dummy = np.zeros(1, dtype=np.int64)
    run(False, dummy, dummy, counts, sums)
    indptr = indices = None
    if store_lists:
        indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        indices = np.empty(indptr[-1], dtype=np.int64)
        run(True, indptr, indices, counts, sums)
    return NeighborTable(
        counts=counts,
        sums=sums,
        alpha=alpha,
        mode=mode,
        indptr=indptr,
        indices=indices,
        strategy=strategy,
        lsh=None if mode == "exact" else lsh_params,
    )


@dataclass(frozen=True)
class LocalExpectation:
    """Mean neighbor behavior per object; rows without neighbors are NaN."""

    values: np.ndarray
    defined: np.ndarray


def local_expected(ds: Dataset, nt: NeighborTable) -> LocalExpectation:
    if nt.n_objects != ds.n_objects or nt.sums.shape[1] != ds.n_behavior:
        raise ValueError("neighbor table was built on a different dataset")
    defined = nt.counts > 0
    values = np.full((ds.n_objects, ds.n_behavior), np.nan)
    values[defined] = nt.sums[defined] / nt.counts[defined, None]
    return LocalExpectation(values=values, defined=defined)


def write_neighbor_counts(nt: NeighborTable, path) -> None:
    """Diagnostic dump: one ``index,neighbor_count`` row per object."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "neighbor_count"])
        for i, c in enumerate(nt.counts):
            writer.writerow([i, int(c)])
