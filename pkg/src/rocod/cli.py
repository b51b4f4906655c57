"""Command-line front end: ``rocod {generate,inject,detect,evaluate,bench}``.

Settings come from an optional flat TOML file (``--config``) with command
line flags taking precedence. Exit status: 0 on success, 1 for usage or
configuration errors, 2 for data errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .dataset import (
    AttributeSchema,
    DataError,
    SyntheticConfig,
    encoded_schema,
    generate_synthetic,
    inject_outliers,
    load_csv,
    normalize,
    read_labels,
    write_csv,
    write_labels,
)
from .detector import ScoreReport
from .evaluation import LabeledRanking, evaluate, knn_distance_baseline
from .local_model import write_neighbor_counts
from .parallel import available_threads, worker_threads
from .pipeline import detect

log = logging.getLogger("rocod")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _paths(prefix: str, *suffixes: str) -> list[Path]:
    base = Path(prefix)
    if base.parent and not base.parent.exists():
        base.parent.mkdir(parents=True, exist_ok=True)
    return [base.with_name(base.name + s) for s in suffixes]


def _load_dataset(cfg: RunConfig):
    if not cfg.data or not cfg.schema:
        raise UsageError("both --data and --schema are required")
    schema = AttributeSchema.load(cfg.schema)
    ds = load_csv(cfg.data, schema)
    if cfg.labels:
        ds = ds.with_labels(read_labels(cfg.labels))
    return ds


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_generate(cfg: RunConfig) -> int:
    ds = generate_synthetic(SyntheticConfig(
        n_points=cfg.n_points,
        n_context=cfg.n_context,
        n_behavior=cfg.n_behavior,
        n_components=cfg.n_components,
        seed=cfg.generate_seed,
    ))
    csv_path, schema_path, labels_path = _paths(cfg.output, ".csv", ".schema.json", ".labels.txt")
    write_csv(ds, csv_path)
    encoded_schema(ds).save(schema_path)
    write_labels([], labels_path)
    log.info("wrote %d objects to %s", ds.n_objects, csv_path)
    return EXIT_OK


def cmd_inject(cfg: RunConfig) -> int:
    if cfg.inject_count < 1:
        raise UsageError("--count must be at least 1")
    raw = _load_dataset(cfg)
    injected = inject_outliers(normalize(raw), cfg.inject_count, seed=cfg.inject_seed)
    # replay the chosen (donor, partner) pairs on the raw values
    out = raw.append_pairs(injected.injections[-cfg.inject_count:])
    csv_path, schema_path, labels_path, summary_path = _paths(
        cfg.output, ".csv", ".schema.json", ".labels.txt", ".summary.json"
    )
    write_csv(out, csv_path)
    encoded_schema(out).save(schema_path)
    write_labels(out.labels, labels_path)
    summary = out.summary()
    summary["injections"] = out.injections.tolist()
    summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    log.info("injected %d outliers; N=%d", cfg.inject_count, out.n_objects)
    return EXIT_OK


def _run_detect(cfg: RunConfig, ds):
    if cfg.method_name.lower() == "knn":
        t0 = time.perf_counter()
        with worker_threads(cfg.threads) as n:
            report = knn_distance_baseline(normalize(ds), cfg.knn_k)
        wall = time.perf_counter() - t0
        manifest = {"config": cfg.to_dict(), "threads": n, "timings": {"knn": wall}, "wall_time": wall}
        return report, manifest, None
    result = detect(ds, cfg)
    return result.report, result.manifest(cfg), result


def cmd_detect(cfg: RunConfig, neighbor_dump: str | None = None, model_json: str | None = None) -> int:
    ds = _load_dataset(cfg)
    report, manifest, result = _run_detect(cfg, ds)
    scores_path, manifest_path = _paths(cfg.output, ".scores.csv", ".manifest.json")
    report.write_csv(scores_path, n=cfg.resolved_top_n(ds.label_mask().sum(), report.n_objects))
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    if result is not None and neighbor_dump:
        write_neighbor_counts(result.neighbors, neighbor_dump)
    if result is not None and model_json:
        result.model.save(model_json)
    log.info("scored %d objects in %.2fs", report.n_objects, manifest["wall_time"])
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, scores: str) -> int:
    if not cfg.labels:
        raise UsageError("--labels is required")
    if not Path(cfg.labels).exists():
        raise DataError(f"label file {cfg.labels} does not exist")
    if not Path(scores).exists():
        raise DataError(f"score file {scores} does not exist")
    labels = read_labels(cfg.labels)
    if labels.size == 0:
        raise DataError(f"{cfg.labels}: no outlier labels")
    report = ScoreReport.read_csv(scores)
    lr = LabeledRanking.from_report(report, labels)
    n = cfg.resolved_top_n(labels.size, lr.n_objects)
    metrics = evaluate(lr, (n,))
    json_path, csv_path = _paths(cfg.output, ".metrics.json", ".metrics.csv")
    metrics.write_json(json_path)
    name = cfg.dataset_name or Path(scores).name.split(".")[0]
    metrics.write_csv_row(csv_path, name, cfg.method_name, n)
    print(json.dumps(metrics.table_row(name, cfg.method_name, n)))
    return EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    ds = _load_dataset(cfg)
    counts = cfg.bench_thread_counts(available_threads())
    runs = []
    reference = None
    base_wall = None
    # untimed warm-up so compilation and caches do not count against the first run
    _run_detect(cfg.merged({"threads": counts[0]}), ds)
    for n in counts:
        run_cfg = cfg.merged({"threads": n})
        report, manifest, _ = _run_detect(run_cfg, ds)
        if reference is None:
            reference = report.scores
        if base_wall is None:
            base_wall = manifest["wall_time"]
        manifest["requested_threads"] = n
        manifest["speedup"] = base_wall / manifest["wall_time"]
        manifest["identical_scores"] = bool(np.array_equal(reference, report.scores))
        runs.append(manifest)
        log.info("threads=%d (effective %d): %.2fs speedup %.2f", n, manifest["threads"],
                 manifest["wall_time"], manifest["speedup"])
    (bench_path,) = _paths(cfg.output, ".bench.json")
    bench_path.write_text(json.dumps({"runs": runs}, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat TOML configuration file")
    p.add_argument("--output", "-o", help="output path prefix")
    p.add_argument("--threads", type=int)
    p.add_argument("--verbose", "-v", action="store_true")


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="input CSV file")
    p.add_argument("--schema", help="attribute schema JSON file")
    p.add_argument("--labels", help="label file, one 0-based index per line")


def _detect_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", help="cosine threshold or 'auto[:percentile=P,r=R]'")
    p.add_argument("--alpha-seed", type=int)
    p.add_argument("--lsh-epsilon", type=float)
    p.add_argument("--lsh-bits", type=int, help="bits per signature (d)")
    p.add_argument("--lsh-seed", type=int)
    p.add_argument("--neighbor-mode", choices=["exact", "lsh", "hamming"])
    p.add_argument("--verify", dest="neighbor_mode", action="store_const", const="lsh",
                   help="verify LSH candidates with the exact cosine (same as --neighbor-mode lsh)")
    p.add_argument("--model", choices=["linear", "tree"])
    p.add_argument("--ridge-strength", type=float)
    p.add_argument("--tree-max-depth", type=int)
    p.add_argument("--tree-min-samples-leaf", type=int)
    p.add_argument("--score-variant", choices=["diagonal", "scalar"])
    p.add_argument("--top-n", type=int)
    p.add_argument("--method-name", help="'knn' runs the k-th neighbor baseline instead")
    p.add_argument("--knn-k", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rocod", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="sample a synthetic contextual dataset")
    _common(p)
    p.add_argument("--n-points", type=int)
    p.add_argument("--n-context", type=int)
    p.add_argument("--n-behavior", type=int)
    p.add_argument("--n-components", type=int)
    p.add_argument("--seed", dest="generate_seed", type=int)

    p = sub.add_parser("inject", help="inject contextual outliers by perturbation")
    _common(p)
    _data_args(p)
    p.add_argument("--count", dest="inject_count", type=int)
    p.add_argument("--seed", dest="inject_seed", type=int)

    p = sub.add_parser("detect", help="score every object")
    _common(p)
    _data_args(p)
    _detect_args(p)
    p.add_argument("--neighbor-dump", help="write index,neighbor_count CSV here")
    p.add_argument("--model-json", help="write the fitted global model here")

    p = sub.add_parser("evaluate", help="ranking metrics for a score file")
    _common(p)
    p.add_argument("--scores", required=True, help="score CSV written by detect")
    p.add_argument("--labels", help="label file, one 0-based index per line")
    p.add_argument("--top-n", type=int)
    p.add_argument("--dataset-name")
    p.add_argument("--method-name")

    p = sub.add_parser("bench", help="time detect over several thread counts")
    _common(p)
    _data_args(p)
    _detect_args(p)
    p.add_argument("--bench-threads", help="comma-separated thread counts, 'max' allowed")
    return parser


_LOCAL_KEYS = {"command", "config", "verbose", "scores", "neighbor_dump", "model_json"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        overrides = {k: v for k, v in vars(args).items() if k not in _LOCAL_KEYS}
        cfg = cfg.merged(overrides)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "inject":
            return cmd_inject(cfg)
        if args.command == "detect":
            return cmd_detect(cfg, args.neighbor_dump, args.model_json)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.scores)
        return cmd_bench(cfg)
    except (ConfigError, UsageError) as exc:
        print(f"rocod: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"rocod: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
