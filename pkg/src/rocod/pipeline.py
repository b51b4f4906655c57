"""End-to-end detection: normalize, neighbors, global fit, ensemble, score."""

from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .dataset import Dataset, normalize
from .detector import (
    AttributeWeights,
    EnsembleExpectation,
    ScoreReport,
    attribute_weights,
    ensemble,
    score,
)
from .global_model import LINEAR, GlobalModel, RidgeParams, TreeParams, fit_global
from .local_model import (
    DegenerateContextError,
    NeighborTable,
    find_neighbors,
    local_expected,
    select_alpha,
)
from .lsh import derive_params
from .parallel import worker_threads

STAGES = ("normalize", "neighbors", "fit", "ensemble", "score")


@dataclass
class DetectionResult:
    report: ScoreReport
    alpha: float
    neighbors: NeighborTable
    model: GlobalModel
    expectation: EnsembleExpectation
    weights: AttributeWeights
    dataset: Dataset
    threads: int
    timings: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def manifest(self, config: RunConfig) -> dict:
        nt = self.neighbors
        return {
            "config": config.to_dict(),
            "alpha": None if math.isnan(self.alpha) else self.alpha,
            "lsh": None if nt.lsh is None else {
                "l": nt.lsh.l, "d": nt.lsh.d, "epsilon": nt.lsh.epsilon, "seed": nt.lsh.seed,
            },
            "neighbor_strategy": nt.strategy,
            "dataset": self.dataset.summary(),
            "threads": self.threads,
            "timings": self.timings,
            "wall_time": self.wall_time,
            "scoring": self.report.summary(),
        }


def _empty_table(ds: Dataset, mode: str) -> NeighborTable:
    return NeighborTable(
        counts=np.zeros(ds.n_objects, dtype=np.int64),
        sums=np.zeros((ds.n_objects, ds.n_behavior)),
        alpha=math.nan,
        mode=mode,
    )


def detect(ds: Dataset, config: RunConfig | None = None, **overrides) -> DetectionResult:
    """Run the full pipeline on ``ds`` (normalized here if it is not already)."""
    config = config or RunConfig()
    if overrides:
        config = config.merged(overrides)
    timings: dict[str, float] = {}

    @contextmanager
    def stage(name):
        t0 = time.perf_counter()
        yield
        timings[name] = time.perf_counter() - t0

    start = time.perf_counter()
    with worker_threads(config.threads) as n_threads:
        with stage("normalize"):
            ds = normalize(ds)

        with stage("neighbors"):
            alpha, percentile, pairs = config.alpha_setting()
            try:
                if alpha is None:
                    alpha = select_alpha(ds, pairs, percentile, seed=config.alpha_seed)
                lsh = None
                if config.neighbor_mode != "exact":
                    lsh = derive_params(min(alpha, math.nextafter(1.0, 0.0)), config.lsh_epsilon,
                                        config.lsh_bits, config.lsh_seed)
                nt = find_neighbors(ds, alpha, lsh, config.neighbor_mode)
            except DegenerateContextError:
                alpha = math.nan
                nt = _empty_table(ds, config.neighbor_mode)
            local = local_expected(ds, nt)

        with stage("fit"):
            if config.model == LINEAR:
                params = RidgeParams(strength=config.ridge_strength)
            else:
                params = TreeParams(config.tree_max_depth, config.tree_min_samples_leaf)
            model = fit_global(ds, config.model, params, threads=n_threads)

        with stage("ensemble"):
            ee = ensemble(ds, local, model, nt)
            weights = attribute_weights(ds, ee)

        with stage("score"):
            report = score(ds, ee, weights, config.score_variant)
    wall = time.perf_counter() - start
    return DetectionResult(
        report=report,
        alpha=float(alpha),
        neighbors=nt,
        model=model,
        expectation=ee,
        weights=weights,
        dataset=ds,
        threads=n_threads,
        timings=timings,
        wall_time=wall,
    )
