"""Sign-random-projection LSH over contextual vectors.

Each object gets ``l`` signatures of ``d`` sign bits. Two objects are
candidate neighbors when at least one signature slot holds the same value,
and the Hamming distance of the full ``l * d``-bit strings approximates
their angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .dataset import Dataset

MAX_BITS_PER_SIGNATURE = 62

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)


@njit(cache=True, inline="always")
def popcount64(v):
    v = v - ((v >> np.uint64(1)) & _M1)
    v = (v & _M2) + ((v >> np.uint64(2)) & _M2)
    v = (v + (v >> np.uint64(4))) & _M4
    return (v * _H01) >> np.uint64(56)


@njit(cache=True, inline="always")
def hamming_words(a, b):
    """Number of differing bits between two packed rows."""
    h = np.uint64(0)
    for w in range(a.shape[0]):
        h += popcount64(a[w] ^ b[w])
    return h


@dataclass(frozen=True)
class LshParams:
    """Signature settings for a cosine threshold ``alpha`` and recall target ``epsilon``."""

    alpha: float
    epsilon: float = 0.975
    d: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 1 <= self.d <= MAX_BITS_PER_SIGNATURE:
            raise ValueError(f"d must lie in [1, {MAX_BITS_PER_SIGNATURE}]")

    @property
    def p(self) -> float:
        """Per-bit collision probability of a pair at cosine exactly ``alpha``."""
        return 1.0 - math.acos(self.alpha) / math.pi

    @property
    def l(self) -> int:  # noqa: E743
        return max(1, math.ceil(math.log(1.0 - self.epsilon) / math.log(1.0 - self.p**self.d)))

    @property
    def n_signatures(self) -> int:
        return self.l

    @property
    def n_bits(self) -> int:
        return self.l * self.d

    @property
    def hamming_threshold(self) -> float:
        return self.n_bits * math.acos(self.alpha) / math.pi


def derive_params(alpha: float, epsilon: float = 0.975, d: int = 8, seed: int = 0) -> LshParams:
    return LshParams(alpha=float(alpha), epsilon=float(epsilon), d=int(d), seed=int(seed))


def random_projections(n_bits: int, dim: int, seed) -> np.ndarray:
    """``n_bits`` i.i.d. standard normal projection vectors of length ``dim``."""
    return np.random.default_rng(seed).standard_normal((n_bits, dim))


@njit(parallel=True, cache=True)
def _pack_sign_bits(x, proj, n_words):
    n, dim = x.shape
    nbits = proj.shape[0]
    out = np.zeros((n, n_words), dtype=np.uint64)
    for i in prange(n):
        for b in range(nbits):
            s = 0.0
            for t in range(dim):
                s += proj[b, t] * x[i, t]
            # exact zero counts as the positive side
            if s >= 0.0:
                out[i, b >> 6] |= np.uint64(1) << np.uint64(b & 63)
    return out


@njit(parallel=True, cache=True)
def _band_codes(words, l, d):
    n = words.shape[0]
    codes = np.zeros((n, l), dtype=np.int64)
    for i in prange(n):
        for k in range(l):
            c = 0
            for t in range(d):
                b = k * d + t
                bit = (words[i, b >> 6] >> np.uint64(b & 63)) & np.uint64(1)
                c |= np.int64(bit) << t
            codes[i, k] = c
    return codes


def sign_bits(x: np.ndarray, projections: np.ndarray) -> np.ndarray:
    """Unpacked sign bits, shape ``(N, n_bits)``: bit ``b`` is ``projections[b] . x >= 0``."""
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    proj = np.ascontiguousarray(projections, dtype=np.float64)
    n_bits = proj.shape[0]
    words = _pack_sign_bits(x, proj, (n_bits + 63) // 64)
    return _unpack(words, n_bits)


def _unpack(words: np.ndarray, n_bits: int) -> np.ndarray:
    as_bytes = words.astype("<u8").view(np.uint8).reshape(words.shape[0], -1)
    return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :n_bits].astype(bool)


@dataclass(frozen=True)
class BucketIndex:
    """One hash table per signature slot, stored as sorted runs.

    For slot ``k``, ``order[k]`` lists objects sorted by their slot-``k``
    value; the objects sharing object ``i``'s value are
    ``order[k, start[k, i]:end[k, i]]``, in increasing index order.
    """

    order: np.ndarray
    start: np.ndarray
    end: np.ndarray

    def visit_count(self) -> int:
        """Total bucket entries touched when every object probes every slot."""
        return int((self.end - self.start).sum())


def _build_buckets(codes: np.ndarray) -> BucketIndex:
    n, l = codes.shape
    order = np.empty((l, n), dtype=np.int64)
    start = np.empty((l, n), dtype=np.int64)
    end = np.empty((l, n), dtype=np.int64)
    for k in range(l):
        o = np.argsort(codes[:, k], kind="stable")
        sc = codes[o, k]
        edges = np.flatnonzero(np.diff(sc)) + 1
        lo = np.concatenate([[0], edges])
        hi = np.concatenate([edges, [n]])
        run = np.repeat(np.arange(lo.size), hi - lo)
        order[k] = o
        start[k, o] = lo[run]
        end[k, o] = hi[run]
    return BucketIndex(order, start, end)


@dataclass(frozen=True)
class SignatureSet:
    """Packed ``l * d``-bit signatures for every object plus the projections used."""

    params: LshParams
    projections: np.ndarray
    words: np.ndarray
    codes: np.ndarray
    buckets: BucketIndex

    @property
    def n_objects(self) -> int:
        return self.words.shape[0]

    def bits(self) -> np.ndarray:
        return _unpack(self.words, self.params.n_bits)

    def hamming(self, i: int, j) -> np.ndarray | int:
        """Hamming distance between object ``i`` and object(s) ``j``."""
        x = np.bitwise_xor(self.words[i], self.words[j])
        return np.bitwise_count(x).sum(axis=-1)

    def to_hex(self) -> list[str]:
        """Signature bit strings as hex, most significant bit first."""
        out = []
        for row in self.bits():
            value = 0
            for b in np.flatnonzero(row):
                value |= 1 << int(b)
            out.append(format(value, f"0{(self.params.n_bits + 3) // 4}x"))
        return out


def _context_matrix(data) -> np.ndarray:
    x = data.x if isinstance(data, Dataset) else data
    return np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)


def build_signatures(data, params: LshParams) -> SignatureSet:
    """Hash the contextual vectors of ``data`` (a Dataset or an ``(N, C)`` array)."""
    x = _context_matrix(data)
    proj = random_projections(params.n_bits, x.shape[1], params.seed)
    words = _pack_sign_bits(x, proj, (params.n_bits + 63) // 64)
    codes = _band_codes(words, params.l, params.d)
    return SignatureSet(params, proj, words, codes, _build_buckets(codes))


@njit(parallel=True, cache=True)
def _candidate_kernel(order, start, end, n_chunks, fill, indptr, indices, counts):
    l, n = order.shape
    chunk = (n + n_chunks - 1) // n_chunks
    for c in prange(n_chunks):
        lo = c * chunk
        hi = min(n, lo + chunk)
        stamp = np.full(n, -1, dtype=np.int64)
        buf = np.empty(n, dtype=np.int64)
        for i in range(lo, hi):
            m = 0
            stamp[i] = i
            for k in range(l):
                for p in range(start[k, i], end[k, i]):
                    j = order[k, p]
                    if stamp[j] != i:
                        stamp[j] = i
                        buf[m] = j
                        m += 1
            counts[i] = m
            if fill:
                seg = np.sort(buf[:m])
                indices[indptr[i]:indptr[i] + m] = seg


def _n_chunks(n: int) -> int:
    return max(1, min(n, 256))


def candidates(sigs: SignatureSet) -> list[np.ndarray]:
    """For each object, the sorted indices of other objects sharing at least one signature."""
    b = sigs.buckets
    n = sigs.n_objects
    counts = np.zeros(n, dtype=np.int64)
    dummy = np.zeros(1, dtype=np.int64)
    _candidate_kernel(b.order, b.start, b.end, _n_chunks(n), False, dummy, dummy, counts)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    indices = np.empty(indptr[-1], dtype=np.int64)
    _candidate_kernel(b.order, b.start, b.end, _n_chunks(n), True, indptr, indices, counts)
    return [indices[indptr[i]:indptr[i + 1]] for i in range(n)]


def hamming_filter(sigs: SignatureSet, i: int, j: int, params: LshParams | None = None) -> bool:
    """Accept the pair when ``popcount(sig_i XOR sig_j) <= l * d * arccos(alpha) / pi``."""
    params = params or sigs.params
    return bool(sigs.hamming(i, j) <= params.hamming_threshold)

