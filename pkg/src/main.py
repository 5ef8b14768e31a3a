"""
Command-Line Entry Point for the Popularity Bias Audit

Subcommands:
  synth   generate synthetic long-tail listening data
  ingest  filter raw listening data and write the filtered dataset
  audit   run the cross-validated audit and write the report
  report  re-render the report from a per-user dump
  tune    grid-search hyperparameters on validation users

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 experiment or model failure.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from dotenv import load_dotenv

# Environment must be loaded before the module loggers are created.
load_dotenv()

from bias.metrics import build_bias_report
from data.dataset import (
    apply_filters,
    dataset_statistics,
    make_split_plan,
    parse_interactions,
    parse_users,
    sample_items,
    write_dataset,
)
from data.synthetic import SyntheticSpec, generate_synthetic, write_synthetic
from tuning import grid_search
from utils.config import VARIANTS, ExperimentConfig, load_config
from utils.errors import ConfigError, DataError, ExperimentError, ModelError
from utils.helpers import read_per_user, save_json_report, write_report
from utils.logger import get_logger
from workflow import filter_report_dict, run_experiment, write_outputs

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_EXPERIMENT = 3

DEFAULT_CONFIG = "config.json"


class AuditArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage code 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolve_config(args) -> ExperimentConfig:
    """Load the configuration file and apply the command-line overrides."""
    path = args.config
    if path is None and os.path.exists(DEFAULT_CONFIG):
        path = DEFAULT_CONFIG
    if path is None:
        config = ExperimentConfig()
    elif not os.path.exists(path):
        raise ConfigError(f"Configuration file not found: {path}")
    else:
        config = load_config(path)

    data = config.data
    if getattr(args, "interactions", None):
        data = replace(data, interactions_path=args.interactions)
    if getattr(args, "users", None) is not None:
        data = replace(data, users_path=args.users)
    config = replace(config, data=data)

    if getattr(args, "format", None):
        config = replace(config, output=replace(config.output, formats=(args.format,)))
    return config.with_overrides(
        seed=getattr(args, "seed", None),
        output_dir=getattr(args, "output", None),
        workers=getattr(args, "workers", None),
    )


def _parse_value(token: str):
    try:
        return json.loads(token)
    except ValueError:
        return token


def parse_grid(entries: Sequence[str]) -> Dict[str, List]:
    """Parse NAME=V1,V2,... grid entries."""
    grid = {}
    for entry in entries:
        name, sep, values = entry.partition("=")
        if not sep or not name or not values:
            raise ConfigError(f"Grid entry must look like name=v1,v2: {entry!r}")
        grid[name.strip()] = [_parse_value(v.strip()) for v in values.split(",")]
    return grid


def _command_synth(args) -> int:
    spec = SyntheticSpec(
        n_users=args.n_users,
        n_items=args.n_items,
        exponent=args.exponent,
        mean_history=args.mean_history,
        mainstreaminess_spread=args.mainstreaminess_spread,
        gender_ratio=args.gender_ratio,
        play_count_floor=args.play_count_floor,
        n_clusters=args.n_clusters,
        cluster_affinity=args.cluster_affinity,
        seed=args.seed,
    )
    interactions, users = generate_synthetic(spec)
    paths = write_synthetic(interactions, users, args.output)
    print(f"✓ Wrote {len(interactions)} interactions for {len(users)} users")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return EXIT_OK


def _prepare_dataset(config: ExperimentConfig):
    """Parse, filter and (optionally) sample the configured input files."""
    interactions = parse_interactions(config.data.interactions_path)
    users = parse_users(config.data.users_path) if config.data.users_path else None
    dataset, report = apply_filters(interactions, users, config.filters)
    if config.sampling.n_items is not None:
        dataset = sample_items(dataset, config.sampling.n_items, config.sampling.seed,
                               min_items_per_user=config.filters.min_items_per_user, report=report)
    return interactions, dataset, report


def _command_ingest(args) -> int:
    config = _resolve_config(args)
    interactions, dataset, report = _prepare_dataset(config)

    directory = config.output.directory
    paths = write_dataset(dataset, directory)
    paths["filter_report"] = str(Path(directory) / "filter_report.json")
    save_json_report(filter_report_dict(report, interactions.attrs.get("malformed_lines", 0)),
                     paths["filter_report"])
    paths["dataset_stats"] = str(Path(directory) / "dataset_stats.json")
    save_json_report(dataset_statistics(dataset), paths["dataset_stats"])

    print(f"✓ Filtered dataset: {dataset.n_users} users, {dataset.n_items} items, {len(dataset)} interactions")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return EXIT_OK


def _command_audit(args) -> int:
    config = _resolve_config(args)
    result = run_experiment(config)
    write_outputs(result)
    print(f"\n✅ Audit complete: {len(result.records)} per-user records, "
          f"{len(result.failures)} skipped")
    return EXIT_OK


def _command_report(args) -> int:
    records = read_per_user(args.dump)
    if not records:
        raise DataError(f"Per-user dump {args.dump} holds no records")
    report = build_bias_report(records)
    formats = (args.format,) if args.format else ("tsv", "json")
    paths = write_report(report, args.output, formats)
    for name, path in paths.items():
        print(f"✓ Saved {name} to: {path}")
    return EXIT_OK


def _command_tune(args) -> int:
    config = _resolve_config(args)
    grid = parse_grid(args.grid)
    _, dataset, _ = _prepare_dataset(config)
    split = config.split
    plan = make_split_plan(dataset, split.ratios, split.folds, split.input_fraction, split.seed)
    if not 0 <= args.fold < len(plan.folds):
        raise ConfigError(f"Fold {args.fold} does not exist (folds: {len(plan.folds)})")

    results = grid_search(dataset, plan, args.fold, args.algorithm, grid,
                          hyperparameters=config.hyperparameters, ndcg_k=config.metrics.ndcg_k)

    Path(config.output.directory).mkdir(parents=True, exist_ok=True)
    path = str(Path(config.output.directory) / f"tuning_{args.algorithm}.json")
    save_json_report({"algorithm": args.algorithm, "fold": args.fold,
                      "results": [asdict(r) for r in results]}, path)
    best = results[0]
    print(f"✓ Best {args.algorithm}: {best.hyperparameters} (mean NDCG {best.mean_ndcg:.4f})")
    print(f"✓ Saved tuning results to: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    formatter = argparse.ArgumentDefaultsHelpFormatter
    parser = AuditArgumentParser(
        prog="popularity-audit",
        description="Train collaborative-filtering recommenders and audit them for popularity bias.",
        formatter_class=formatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    defaults = SyntheticSpec()
    synth = subparsers.add_parser("synth", help="generate synthetic long-tail data", formatter_class=formatter)
    synth.add_argument("--n-users", type=int, default=defaults.n_users)
    synth.add_argument("--n-items", type=int, default=defaults.n_items)
    synth.add_argument("--exponent", type=float, default=defaults.exponent,
                       help="power-law exponent of item popularity over rank")
    synth.add_argument("--mean-history", type=int, default=defaults.mean_history)
    synth.add_argument("--mainstreaminess-spread", type=float, default=defaults.mainstreaminess_spread)
    synth.add_argument("--gender-ratio", type=float, default=defaults.gender_ratio,
                       help="fraction of users labelled female")
    synth.add_argument("--play-count-floor", type=int, default=defaults.play_count_floor)
    synth.add_argument("--n-clusters", type=int, default=defaults.n_clusters,
                       help="taste clusters over the catalog (1 disables them)")
    synth.add_argument("--cluster-affinity", type=float, default=defaults.cluster_affinity,
                       help="share of each user's draws aimed at their own cluster")
    synth.add_argument("--seed", type=int, default=defaults.seed)
    synth.add_argument("--output", default="data", help="directory for interactions.tsv and users.tsv")
    synth.set_defaults(handler=_command_synth)

    def _common(sub, with_format=False, with_workers=False):
        sub.add_argument("--config", default=None,
                         help=f"JSON configuration file (default: ./{DEFAULT_CONFIG} if present)")
        sub.add_argument("--interactions", default=None, help="override data.interactions_path")
        sub.add_argument("--users", default=None, help="override data.users_path")
        sub.add_argument("--seed", type=int, default=None, help="reseed every seeded stage")
        sub.add_argument("--output", default=None, help="override output.directory")
        if with_format:
            sub.add_argument("--format", choices=("tsv", "json"), default=None,
                             help="report format (default: both)")
        if with_workers:
            sub.add_argument("--workers", type=int, default=None, help="per-user worker threads")

    ingest = subparsers.add_parser("ingest", help="filter raw data", formatter_class=formatter)
    _common(ingest)
    ingest.set_defaults(handler=_command_ingest)

    audit = subparsers.add_parser("audit", help="run the audit", formatter_class=formatter)
    _common(audit, with_format=True, with_workers=True)
    audit.set_defaults(handler=_command_audit)

    report = subparsers.add_parser("report", help="re-render a report from per_user.tsv", formatter_class=formatter)
    report.add_argument("dump", help="per_user.tsv written by audit")
    report.add_argument("--output", default=".", help="directory for report.tsv / report.json")
    report.add_argument("--format", choices=("tsv", "json"), default=None, help="report format (default: both)")
    report.set_defaults(handler=_command_report)

    tune = subparsers.add_parser("tune", help="grid-search one algorithm on validation users",
                                 formatter_class=formatter)
    _common(tune)
    tune.add_argument("--algorithm", choices=VARIANTS, required=True)
    tune.add_argument("--grid", action="append", required=True, metavar="NAME=V1,V2",
                      help="candidate values of one hyperparameter (repeatable)")
    tune.add_argument("--fold", type=int, default=0)
    tune.set_defaults(handler=_command_tune)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"\n❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"\n❌ Data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ExperimentError, ModelError) as e:
        print(f"\n❌ Experiment failed: {e}", file=sys.stderr)
        diagnostics = getattr(e, "diagnostics", None)
        if diagnostics:
            logger.debug(f"Diagnostics: {json.dumps(diagnostics, default=str)}")
        return EXIT_EXPERIMENT


if __name__ == "__main__":
    sys.exit(main())
