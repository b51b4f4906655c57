"""Data model, CSV ingestion, normalization, synthetic generation and outlier injection."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

CONTEXTUAL = "contextual"
BEHAVIORAL = "behavioral"
NUMERIC = "numeric"
CATEGORICAL = "categorical"


class DataError(ValueError):
    """Raised for malformed input data (bad rows, empty files, bad label files)."""


@dataclass(frozen=True)
class AttributeSchema:
    """Names, roles and kinds of the attributes in a raw data file."""

    names: tuple[str, ...]
    roles: tuple[str, ...]
    kinds: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "roles", tuple(self.roles))
        object.__setattr__(self, "kinds", tuple(self.kinds))
        if not (len(self.names) == len(self.roles) == len(self.kinds)):
            raise ValueError("names, roles and kinds must have the same length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("attribute names must be unique")
        for role in self.roles:
            if role not in (CONTEXTUAL, BEHAVIORAL):
                raise ValueError(f"unknown role {role!r}")
        for kind in self.kinds:
            if kind not in (NUMERIC, CATEGORICAL):
                raise ValueError(f"unknown kind {kind!r}")
        if CONTEXTUAL not in self.roles or BEHAVIORAL not in self.roles:
            raise ValueError("schema needs at least one contextual and one behavioral attribute")

    @classmethod
    def numeric(cls, contextual: Sequence[str], behavioral: Sequence[str]) -> AttributeSchema:
        names = tuple(contextual) + tuple(behavioral)
        roles = (CONTEXTUAL,) * len(contextual) + (BEHAVIORAL,) * len(behavioral)
        return cls(names, roles, (NUMERIC,) * len(names))

    def to_dict(self) -> dict:
        return {
            "attributes": [
                {"name": n, "role": r, "kind": k}
                for n, r, k in zip(self.names, self.roles, self.kinds)
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict) -> AttributeSchema:
        try:
            attrs = doc["attributes"]
            return cls(
                tuple(a["name"] for a in attrs),
                tuple(a["role"] for a in attrs),
                tuple(a.get("kind", NUMERIC) for a in attrs),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed schema document: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> AttributeSchema:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON schema ({exc})") from exc
        return cls.from_dict(doc)


class DataObject(NamedTuple):
    x: np.ndarray
    y: np.ndarray


def _frozen(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of objects split into contextual ``x`` and behavioral ``y``.

    ``bounds`` holds the per-column ``(min, max)`` recorded by :func:`normalize`
    (contextual columns first, then behavioral); it is ``None`` for raw data.
    ``injections`` holds the ``(donor, partner)`` pairs used by
    :func:`inject_outliers`, one row per injected object.
    """

    x: np.ndarray
    y: np.ndarray
    context_names: tuple[str, ...] = ()
    behavior_names: tuple[str, ...] = ()
    labels: np.ndarray | None = None
    bounds: tuple[np.ndarray, np.ndarray] | None = None
    injections: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        x = _frozen(self.x)
        y = _frozen(self.y)
        if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ValueError("x and y must be 2-D with the same number of rows")
        if x.shape[0] == 0:
            raise ValueError("a dataset needs at least one object")
        if x.shape[1] == 0 or y.shape[1] == 0:
            raise ValueError("need at least one contextual and one behavioral column")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        cn = tuple(self.context_names) or tuple(f"x{k}" for k in range(x.shape[1]))
        bn = tuple(self.behavior_names) or tuple(f"y{k}" for k in range(y.shape[1]))
        if len(cn) != x.shape[1] or len(bn) != y.shape[1]:
            raise ValueError("column names do not match array shapes")
        object.__setattr__(self, "context_names", cn)
        object.__setattr__(self, "behavior_names", bn)
        if self.labels is not None:
            labels = np.unique(np.asarray(self.labels, dtype=np.int64))
            if labels.size and (labels[0] < 0 or labels[-1] >= x.shape[0]):
                raise ValueError("labels must be object indices in [0, N)")
            object.__setattr__(self, "labels", _frozen(labels, np.int64))
        if self.bounds is not None:
            lo, hi = self.bounds
            object.__setattr__(self, "bounds", (_frozen(lo), _frozen(hi)))
        if self.injections is not None:
            object.__setattr__(self, "injections", _frozen(self.injections, np.int64).reshape(-1, 2))

    @property
    def n_objects(self) -> int:
        return self.x.shape[0]

    @property
    def n_context(self) -> int:
        return self.x.shape[1]

    @property
    def n_behavior(self) -> int:
        return self.y.shape[1]

    @property
    def normalized(self) -> bool:
        return self.bounds is not None

    def __len__(self) -> int:
        return self.n_objects

    def __getitem__(self, i: int) -> DataObject:
        return DataObject(self.x[i], self.y[i])

    @property
    def z(self) -> np.ndarray:
        """Concatenated full attribute vectors, shape ``(N, C + B)``."""
        return np.hstack([self.x, self.y])

    def label_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_objects, dtype=bool)
        if self.labels is not None:
            mask[self.labels] = True
        return mask

    def with_labels(self, labels: Iterable[int] | None) -> Dataset:
        return replace(self, labels=None if labels is None else np.asarray(list(labels), dtype=np.int64))

    def append_pairs(self, pairs: np.ndarray) -> Dataset:
        """Append objects ``(x[i], y[j])`` for each row ``(i, j)`` of ``pairs``, in order.

        Indices may refer to rows appended earlier in the same call. The new
        indices are added to ``labels``.
        """
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        n = self.n_objects
        total = n + len(pairs)
        x = np.empty((total, self.n_context))
        y = np.empty((total, self.n_behavior))
        x[:n] = self.x
        y[:n] = self.y
        for t, (i, j) in enumerate(pairs):
            if not (0 <= i < n + t and 0 <= j < n + t):
                raise ValueError(f"pair {t} refers to an object that does not exist yet")
            x[n + t] = x[i]
            y[n + t] = y[j]
        old = self.labels if self.labels is not None else np.empty(0, dtype=np.int64)
        prev = self.injections if self.injections is not None else np.empty((0, 2), dtype=np.int64)
        return replace(
            self,
            x=x,
            y=y,
            labels=np.concatenate([old, np.arange(n, total)]),
            injections=np.vstack([prev, pairs]),
        )

    def summary(self) -> dict:
        doc = {
            "N": self.n_objects,
            "C": self.n_context,
            "B": self.n_behavior,
            "n_outliers": 0 if self.labels is None else int(self.labels.size),
            "normalized": self.normalized,
        }
        if self.bounds is not None:
            names = list(self.context_names) + list(self.behavior_names)
            doc["bounds"] = {
                name: [float(lo), float(hi)] for name, lo, hi in zip(names, *self.bounds)
            }
        return doc


# --------------------------------------------------------------------------
# CSV / label IO
# --------------------------------------------------------------------------


def load_csv(path, schema: AttributeSchema, *, delimiter: str = ",") -> Dataset:
    """Read a headed CSV file and 1-of-m encode its categorical attributes.

    Categorical columns expand to one 0/1 column per distinct value, in order
    of first appearance, named ``"<attr>=<value>"``. The result is not
    normalized.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise DataError(f"{path}: header lacks schema attributes {missing}")
        pos = [header.index(n) for n in schema.names]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            rows.append((lineno, [row[p].strip() for p in pos]))
    if not rows:
        raise DataError(f"{path}: no data rows")

    columns: list[np.ndarray] = []
    names: list[str] = []
    roles: list[str] = []
    for a, (name, role, kind) in enumerate(zip(schema.names, schema.roles, schema.kinds)):
        values = [r[a] for _, r in rows]
        if kind == NUMERIC:
            col = np.empty(len(values))
            for k, v in enumerate(values):
                try:
                    col[k] = float(v)
                except ValueError:
                    raise DataError(
                        f"{path}: row {rows[k][0]}: {name}={v!r} is not a number"
                    ) from None
            if not np.all(np.isfinite(col)):
                bad = int(np.flatnonzero(~np.isfinite(col))[0])
                raise DataError(f"{path}: row {rows[bad][0]}: {name} is not finite")
            columns.append(col)
            names.append(name)
            roles.append(role)
        else:
            lookup = {c: k for k, c in enumerate(dict.fromkeys(values))}
            categories = list(lookup)
            codes = np.array([lookup[v] for v in values])
            for k, cat in enumerate(categories):
                columns.append((codes == k).astype(np.float64))
                names.append(f"{name}={cat}")
                roles.append(role)

    ctx = [k for k, r in enumerate(roles) if r == CONTEXTUAL]
    beh = [k for k, r in enumerate(roles) if r == BEHAVIORAL]
    return Dataset(
        x=np.column_stack([columns[k] for k in ctx]),
        y=np.column_stack([columns[k] for k in beh]),
        context_names=tuple(names[k] for k in ctx),
        behavior_names=tuple(names[k] for k in beh),
    )


def encoded_schema(ds: Dataset) -> AttributeSchema:
    """Numeric schema describing ``ds`` as written by :func:`write_csv`."""
    return AttributeSchema.numeric(ds.context_names, ds.behavior_names)


def write_csv(ds: Dataset, path) -> None:
    """Write the encoded columns of ``ds`` with full float precision."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(ds.context_names) + list(ds.behavior_names))
        for row in ds.z:
            writer.writerow([repr(float(v)) for v in row])


def read_labels(path) -> np.ndarray:
    """Read a label file: one 0-based object index per line."""
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(int(line))
        except ValueError:
            raise DataError(f"{path}: line {lineno}: {line!r} is not an index") from None
    return np.array(out, dtype=np.int64)


def write_labels(labels: Iterable[int] | None, path) -> None:
    labels = [] if labels is None else [int(i) for i in labels]
    Path(path).write_text("".join(f"{i}\n" for i in labels), encoding="utf-8")


# --------------------------------------------------------------------------
# Normalization
# --------------------------------------------------------------------------


def _minmax(a: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = hi - lo
    out = np.zeros_like(a)
    ok = span > 0
    out[:, ok] = (a[:, ok] - lo[ok]) / span[ok]
    return out


def normalize(ds: Dataset) -> Dataset:
    """Min-max scale every column to [0, 1]; constant columns become 0.

    Already-normalized datasets are returned unchanged.
    """
    if ds.normalized:
        return ds
    z = ds.z
    lo, hi = z.min(axis=0), z.max(axis=0)
    c = ds.n_context
    return replace(
        ds,
        x=_minmax(ds.x, lo[:c], hi[:c]),
        y=_minmax(ds.y, lo[c:], hi[c:]),
        bounds=(lo, hi),
    )


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    """Two-stage Gaussian mixture: context component, then a mapped behavior component.

    ``spread`` bounds the per-axis standard deviations of each component
    (drawn uniformly from ``spread``). ``mapping_concentration`` is the
    Dirichlet concentration of each row of the context-to-behavior mapping;
    small values concentrate each row on few behavior components, so that
    behavior depends strongly on context. With values near 1 or above the
    mapping approaches uniform and context carries little information.
    """

    n_points: int = 50_000
    n_context: int = 20
    n_behavior: int = 20
    n_components: int = 16
    seed: int = 0
    spread: tuple[float, float] = (0.05, 0.15)
    mapping_concentration: float = 0.01

    def __post_init__(self):
        for name in ("n_points", "n_context", "n_behavior", "n_components"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        lo, hi = self.spread
        if not 0 < lo <= hi:
            raise ValueError("spread must satisfy 0 < low <= high")
        if self.mapping_concentration <= 0:
            raise ValueError("mapping_concentration must be positive")


def _random_gaussians(rng: np.random.Generator, k: int, dim: int, spread) -> tuple[np.ndarray, np.ndarray]:
    means = rng.uniform(0.0, 1.0, size=(k, dim))
    chols = np.empty((k, dim, dim))
    for c in range(k):
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        q *= np.sign(np.diag(r))
        sd = rng.uniform(spread[0], spread[1], size=dim)
        cov = (q * sd**2) @ q.T
        chols[c] = np.linalg.cholesky(cov + 1e-12 * np.eye(dim))
    return means, chols


def mixture_parameters(config: SyntheticConfig) -> dict:
    """The seeded generative parameters behind :func:`generate_synthetic`."""
    rng = np.random.default_rng(config.seed)
    k = config.n_components
    ctx_means, ctx_chols = _random_gaussians(rng, k, config.n_context, config.spread)
    beh_means, beh_chols = _random_gaussians(rng, k, config.n_behavior, config.spread)
    weights = rng.dirichlet(np.full(k, 5.0))
    mapping = rng.dirichlet(np.full(k, config.mapping_concentration), size=k)
    return {
        "context_weights": weights,
        "context_means": ctx_means,
        "context_chols": ctx_chols,
        "behavior_means": beh_means,
        "behavior_chols": beh_chols,
        "mapping": mapping,
        "sample_seed": int(rng.integers(2**63)),
    }


def generate_synthetic(config: SyntheticConfig | None = None, **kwargs) -> Dataset:
    """Sample a contextual dataset from a seeded two-stage Gaussian mixture.

    Each object first draws a contextual component and samples ``x`` from it,
    then draws a behavioral component from that component's row of a
    row-stochastic mapping matrix and samples ``y``.
    """
    if config is None:
        config = SyntheticConfig(**kwargs)
    elif kwargs:
        config = replace(config, **kwargs)
    params = mixture_parameters(config)
    rng = np.random.default_rng(params["sample_seed"])
    n, k = config.n_points, config.n_components
    u = rng.choice(k, size=n, p=params["context_weights"])
    cum = np.cumsum(params["mapping"], axis=1)
    cum[:, -1] = 1.0
    v = np.minimum((rng.random(n)[:, None] > cum[u]).sum(axis=1), k - 1)
    x = params["context_means"][u] + np.einsum(
        "nij,nj->ni", params["context_chols"][u], rng.standard_normal((n, config.n_context))
    )
    y = params["behavior_means"][v] + np.einsum(
        "nij,nj->ni", params["behavior_chols"][v], rng.standard_normal((n, config.n_behavior))
    )
    return Dataset(
        x=x,
        y=y,
        context_names=tuple(f"c{j}" for j in range(config.n_context)),
        behavior_names=tuple(f"b{j}" for j in range(config.n_behavior)),
    )


# --------------------------------------------------------------------------
# Injection
# --------------------------------------------------------------------------


def injection_pool_size(n: int) -> int:
    return min(50, n // 4)


def inject_outliers(ds: Dataset, count: int, seed=None) -> Dataset:
    """Append ``count`` contextual outliers with the perturbation scheme.

    For every injected object a donor ``i`` is drawn uniformly, a pool of
    ``min(50, N // 4)`` other objects is sampled without replacement, and the
    pool member ``j`` whose behavior is farthest from ``y[i]`` (smallest index
    on ties) contributes its behavior: the new object is ``(x[i], y[j])``.
    Later draws see earlier injected objects.
    """
    if not ds.normalized:
        raise ValueError("inject_outliers expects a normalized dataset")
    if count < 1:
        raise ValueError("count must be at least 1")
    n0 = ds.n_objects
    if 4 * count >= n0:
        raise ValueError(f"count={count} is not below N/4 (N={n0})")
    rng = np.random.default_rng(seed)
    y = np.empty((n0 + count, ds.n_behavior))
    y[:n0] = ds.y
    pairs = np.empty((count, 2), dtype=np.int64)
    for t in range(count):
        n = n0 + t
        i = int(rng.integers(n))
        pool = rng.choice(n - 1, size=injection_pool_size(n), replace=False)
        pool[pool >= i] += 1
        dist = np.sqrt(((y[pool] - y[i]) ** 2).sum(axis=1))
        j = int(pool[dist == dist.max()].min())
        pairs[t] = i, j
        y[n] = y[j]
    return ds.append_pairs(pairs)
