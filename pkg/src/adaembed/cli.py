"""Command-line entry point.

Subcommands: gen-data, train, ablate, sweep-labels, export-features, selftest.
Exit codes: 0 success, 1 failed selftest or unexpected error, 2 config
error, 3 numeric divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from .config import RunConfig, parse_text
from .data import write_datasets_csv
from .errors import AdaEmbedError, ConfigError, ContractError, DivergenceError
from .model import load_checkpoint, save_checkpoint
from .trainer import (
    build_benchmark,
    export_features,
    format_ablation_table,
    generate_domains,
    run_ablation,
    run_label_sweep,
    train,
    write_metrics_csv,
    write_summary,
)

OUTPUT_ROOT_ENV = "ADAEMBED_OUTPUT_ROOT"
EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4


class ClobberError(OSError):
    pass


def load_config(path: str | None, overrides: list[str]) -> RunConfig:
    """Config file (optional) with ``key=value`` overrides applied on top."""
    values = parse_text(Path(path).read_text(), path) if path else {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        values[key] = value
    return RunConfig.from_dict(values)


def output_dir(args, command: str) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return Path(root) / command


def prepare(out: Path, names: list[str], overwrite: bool) -> dict[str, Path]:
    """Create ``out`` and return artifact paths, refusing to clobber unless asked."""
    paths = {name: out / name for name in names}
    existing = [str(p) for p in paths.values() if p.exists()]
    if existing and not overwrite:
        raise ClobberError(f"refusing to overwrite {', '.join(existing)} (pass --overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return paths


def _write_rows(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for r in rows:
            writer.writerow([";".join(repr(v) for v in r[c]) if isinstance(r[c], list) else r[c] for c in columns])


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------

def cmd_gen_data(args, config: RunConfig) -> int:
    if config.dataset == "csv":
        raise ConfigError("dataset: gen-data needs a generated dataset (blobs or moons)")
    paths = prepare(output_dir(args, "gen-data"), ["datasets.csv", "config.resolved"], args.overwrite)
    source, target_train, target_test = generate_domains(config)
    write_datasets_csv(paths["datasets.csv"], [source, target_train, target_test])
    paths["config.resolved"].write_text(config.to_text())
    print(f"wrote {len(source) + len(target_train) + len(target_test)} rows to {paths['datasets.csv']}")
    return EXIT_OK


def cmd_train(args, config: RunConfig) -> int:
    mode = getattr(args, "mode", "train")
    if mode == "ablation":
        return cmd_ablate(args, config)
    if mode == "sweep":
        return cmd_sweep(args, config)
    names = ["metrics.csv", "summary.json", "config.resolved", "checkpoint.npz"]
    if config.dataset != "csv":
        names.append("datasets.csv")
    if config.export_features:
        names.append("features.csv")
    paths = prepare(output_dir(args, "train"), names, args.overwrite)
    paths["config.resolved"].write_text(config.to_text())
    benchmark = build_benchmark(config)
    if "datasets.csv" in paths:
        write_datasets_csv(paths["datasets.csv"], [benchmark.source, benchmark.target_train, benchmark.target_test])
    result = train(config, benchmark)
    write_metrics_csv(paths["metrics.csv"], result.metrics)
    write_summary(paths["summary.json"], result.summary())
    save_checkpoint(result.state, paths["checkpoint.npz"], config.to_dict())
    if config.export_features:
        export_features(result.state, benchmark, paths["features.csv"])
    print(f"final accuracy {result.final_accuracy:.4f}  best {result.best_accuracy:.4f}  ({paths['summary.json'].parent})")
    return EXIT_OK


def cmd_ablate(args, config: RunConfig) -> int:
    paths = prepare(output_dir(args, "ablate"), ["ablation.csv", "summary.json", "config.resolved"], args.overwrite)
    paths["config.resolved"].write_text(config.to_text())
    rows = run_ablation(config, workers=args.workers)
    _write_rows(paths["ablation.csv"], rows, ["ablation", "L_t", "L_c", "H", "avg", "acc", "best_acc", "mask_rate", "per_seed_acc"])
    write_summary(paths["summary.json"], {"config": config.to_dict(), "seeds": list(config.seeds), "rows": rows})
    print(format_ablation_table(rows))
    return _report_cell_errors(rows, "ablation")


def cmd_sweep(args, config: RunConfig) -> int:
    paths = prepare(output_dir(args, "sweep-labels"), ["sweep.csv", "summary.json", "config.resolved"], args.overwrite)
    paths["config.resolved"].write_text(config.to_text())
    rows = run_label_sweep(config, workers=args.workers)
    _write_rows(paths["sweep.csv"], rows, ["shots", "avg", "acc", "best_acc", "per_seed_acc"])
    write_summary(paths["summary.json"], {"config": config.to_dict(), "seeds": list(config.seeds), "rows": rows})
    for r in rows:
        print(f"shots={r['shots']:<3d} acc {100 * r['acc']:6.2f}  avg {100 * r['avg']:6.2f}")
    return _report_cell_errors(rows, "sweep")


def _report_cell_errors(rows: list[dict], what: str) -> int:
    errors = [e for r in rows for e in r["errors"]]
    for e in errors:
        print(f"{what} cell failed: {e}", file=sys.stderr)
    return EXIT_OK if not errors else EXIT_FAILED


def cmd_export_features(args, config: RunConfig) -> int:
    paths = prepare(output_dir(args, "export-features"), ["features.csv", "config.resolved"], args.overwrite)
    paths["config.resolved"].write_text(config.to_text())
    benchmark = build_benchmark(config)
    if args.checkpoint:
        try:
            state = load_checkpoint(args.checkpoint, config.to_dict())
        except ContractError as exc:
            raise ConfigError(f"{args.checkpoint}: {exc}") from None
    else:
        state = train(config, benchmark).state
    export_features(state, benchmark, paths["features.csv"])
    print(f"wrote {paths['features.csv']}")
    return EXIT_OK


def cmd_selftest(args, config: RunConfig) -> int:
    from .selftest import run_selftest

    results = run_selftest(seed=config.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<12} {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


COMMANDS = {
    "gen-data": (cmd_gen_data, "write source/target datasets as CSV"),
    "train": (cmd_train, "run one experiment (or --mode ablation|sweep)"),
    "ablate": (cmd_ablate, "four-row ablation over the configured seeds"),
    "sweep-labels": (cmd_sweep, "accuracy versus labeled-target shots"),
    "export-features": (cmd_export_features, "dump encoder features and predictions"),
    "selftest": (cmd_selftest, "gradient and oracle checks"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaembed", description="Embedding-space domain adaptation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/{name} or runs/{name})")
        p.add_argument("--overwrite", action="store_true", help="replace existing artifacts")
        p.add_argument("--workers", type=int, default=1, help="parallel runs for ablation / sweep cells")
        if name == "train":
            p.add_argument("--mode", choices=("train", "ablation", "sweep"), default="train")
        if name == "export-features":
            p.add_argument("--checkpoint", help="checkpoint.npz from a train run; trains afresh when absent")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = COMMANDS[args.command][0]
    try:
        config = load_config(args.config, args.overrides)
        return handler(args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except AdaEmbedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
