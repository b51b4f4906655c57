"""Run configuration: a flat key/value document in TOML syntax.

Every key is optional; unknown keys are rejected. Example::

    data = "synthetic.csv"
    schema = "synthetic.schema.json"
    alpha = "auto:percentile=5,r=100000"
    model = "tree"
    neighbor_mode = "hamming"
    threads = 4
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .detector import VARIANTS
from .evaluation import default_top_n
from .global_model import LINEAR, TREE
from .local_model import DEFAULT_ALPHA_PAIRS, MODES


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # inputs / outputs
    data: str = ""
    schema: str = ""
    labels: str = ""
    output: str = "rocod"
    # synthetic generation
    n_points: int = 50_000
    n_context: int = 20
    n_behavior: int = 20
    n_components: int = 16
    generate_seed: int = 0
    # injection
    inject_count: int = 0
    inject_seed: int = 1
    # neighbor threshold: a number, or "auto[:percentile=P,r=R]"
    alpha: str = "auto"
    alpha_seed: int = 2
    # hashing
    lsh_epsilon: float = 0.975
    lsh_bits: int = 8
    lsh_seed: int = 3
    neighbor_mode: str = "hamming"
    # global model
    model: str = TREE
    ridge_strength: float = 1.0
    tree_max_depth: int = 10
    tree_min_samples_leaf: int = 5
    # scoring and evaluation
    score_variant: str = "diagonal"
    # 0 picks min(100, 4 * |O|) from the labels, or 100 without labels
    top_n: int = 0
    knn_k: int = 30
    dataset_name: str = ""
    method_name: str = "ROCOD"
    # execution
    threads: int = 1
    bench_threads: str = "1,2,4,8,max"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.neighbor_mode not in MODES:
            raise ConfigError(f"neighbor_mode must be one of {MODES}")
        if self.model not in (LINEAR, TREE):
            raise ConfigError(f"model must be {LINEAR!r} or {TREE!r}")
        if self.score_variant not in VARIANTS:
            raise ConfigError(f"score_variant must be one of {VARIANTS}")
        if not 0 < self.lsh_epsilon < 1:
            raise ConfigError("lsh_epsilon must lie in (0, 1)")
        if self.lsh_bits < 1:
            raise ConfigError("lsh_bits must be positive")
        if self.ridge_strength < 0:
            raise ConfigError("ridge_strength must be nonnegative")
        if self.tree_max_depth < 0 or self.tree_min_samples_leaf < 1:
            raise ConfigError("invalid tree settings")
        if self.top_n < 0 or self.knn_k < 1:
            raise ConfigError("top_n must be nonnegative and knn_k positive")
        if self.inject_count < 0:
            raise ConfigError("inject_count must be nonnegative")
        self.alpha_setting()
        self.bench_thread_counts(1)

    def alpha_setting(self) -> tuple[float | None, float, int]:
        """``(alpha, percentile, pairs)``; ``alpha`` is None for automatic selection."""
        text = str(self.alpha).strip()
        if not text.startswith("auto"):
            try:
                return float(text), 5.0, DEFAULT_ALPHA_PAIRS
            except ValueError:
                raise ConfigError(f"alpha must be a number or 'auto', got {text!r}") from None
        percentile, pairs = 5.0, DEFAULT_ALPHA_PAIRS
        rest = text[4:]
        if rest:
            if not rest.startswith(":"):
                raise ConfigError(f"malformed alpha setting {text!r}")
            for part in filter(None, rest[1:].split(",")):
                m = re.fullmatch(r"\s*(percentile|r)\s*=\s*([0-9.eE+-]+)\s*", part)
                if not m:
                    raise ConfigError(f"malformed alpha option {part!r}")
                try:
                    if m.group(1) == "percentile":
                        percentile = float(m.group(2))
                    else:
                        pairs = int(float(m.group(2)))
                except ValueError:
                    raise ConfigError(f"malformed alpha option {part!r}") from None
        if not 0 < percentile < 100 or pairs < 1:
            raise ConfigError("alpha percentile must lie in (0, 100) and r >= 1")
        return None, percentile, pairs

    def resolved_top_n(self, n_outliers: int, n_objects: int) -> int:
        """``top_n`` with 0 resolved from the outlier count, capped at ``n_objects``."""
        if self.top_n:
            return min(self.top_n, n_objects)
        if n_outliers:
            return default_top_n(n_outliers, n_objects)
        return min(100, n_objects)

    def bench_thread_counts(self, maximum: int) -> list[int]:
        out = []
        for part in str(self.bench_threads).split(","):
            part = part.strip()
            if part == "max":
                out.append(maximum)
            else:
                try:
                    out.append(int(part))
                except ValueError:
                    raise ConfigError(f"bad thread count {part!r}") from None
        if not out or min(out) < 1:
            raise ConfigError("bench_threads needs positive thread counts")
        return list(dict.fromkeys(out))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        values = {}
        for key, value in doc.items():
            ftype = known[key].type
            try:
                if ftype == "int":
                    if isinstance(value, bool) or float(value) != int(float(value)):
                        raise ValueError
                    value = int(float(value))
                elif ftype == "float":
                    value = float(value)
                else:
                    value = str(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: expected {ftype}, got {value!r}") from None
            values[key] = value
        return cls(**values)

    @classmethod
    def from_toml(cls, text: str) -> RunConfig:
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        nested = [k for k, v in doc.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"config must be flat; found tables {nested}")
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_toml(text)

    def save(self, path) -> None:
        Path(path).write_text(self.to_toml(), encoding="utf-8")

    def merged(self, overrides: dict) -> RunConfig:
        """Copy with the non-None entries of ``overrides`` applied."""
        doc = self.to_dict()
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(doc)
