#!/usr/bin/env python3
"""
fsilab command line
Generate the reference dataset, train models, evaluate them and write reports.

    python cli.py generate --grid 32 --t-end 1.0
    python cli.py train --models M1,M4 --seeds 0,1,2 --desk-scale
    python cli.py evaluate
    python cli.py report
"""

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from eval_report import (
    emit_profiles, evaluate_model, field_statistics, load_checkpoint, ordering_verdicts, read_metrics,
    write_field_statistics, write_loss_curves, write_metrics, write_verdicts,
)
from fsi_types import ConfigError, FsiDataset, FsiLabError, MissingInputError, NumericalError
from ibm_solver import disc_motion_summary, run_simulation, statistics_cross_check
from log import enable_console, setup_logger
from pinn import ModelConfig, train
from report_generator import ReportGenerator
from run_config import RunConfig, parse_overrides, resolve, split_run
from sampling import build_training_set, write_manifest
from train_log import TrainingSession, TrainReport

logger = setup_logger()

COMMANDS = ("generate", "train", "evaluate", "report")


class Layout:
    """Output paths under the run's output directory."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.data = self.root / "data"
        self.dataset = self.data / "dataset.npz"
        self.training = self.root / "training"
        self.manifest = self.training / "training_set_manifest.txt"
        self.checkpoints = self.training / "checkpoints"
        self.reports = self.training / "reports"
        self.eval = self.root / "eval"
        self.metrics = self.eval / "metrics.csv"
        self.report = self.root / "report"


def _guard(paths: Sequence[Path], force: bool) -> None:
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise ConfigError(f"refusing to overwrite {', '.join(existing)}; pass --force to replace")


def _load_dataset(layout: Layout) -> FsiDataset:
    if not layout.dataset.exists():
        raise MissingInputError(f"dataset not found at {layout.dataset}; run 'generate' first")
    return FsiDataset.load(layout.dataset)


def _fluid_std(dataset: FsiDataset) -> Dict[str, float]:
    stats = field_statistics(dataset)
    return {name: stats[("fluid", name)]["std"] for name in ("u", "v", "p") if ("fluid", name) in stats}


def cmd_generate(config: RunConfig) -> Path:
    layout = Layout(config.output_dir)
    _guard([layout.dataset], config.force)
    solver_config = config.solver_config()
    print(f"\n🌊 Simulating cavity: grid {solver_config.grid}², Re {solver_config.reynolds:g}, "
          f"T {solver_config.t_end:g}, disc {'on' if solver_config.with_disc else 'off'}")
    try:
        dataset = run_simulation(solver_config)
    except NumericalError as exc:
        if exc.partial is not None:
            partial = exc.partial.save(layout.data / "dataset_partial.npz")
            logger.error(f"Partial dataset written to {partial}")
        raise

    dataset.save(layout.dataset)
    (layout.data / "dataset_metadata.json").write_text(json.dumps(dataset.metadata, indent=2, sort_keys=True))
    stats = field_statistics(dataset)
    write_field_statistics(stats, layout.data / "field_statistics.csv")
    warnings = statistics_cross_check(_fluid_std(dataset))
    if dataset.n_markers:
        motion = disc_motion_summary(dataset)
        (layout.data / "disc_motion.json").write_text(json.dumps(motion, indent=2, sort_keys=True))
        print(f"  • Disc rotations about the vortex: {motion['rotations']:.2f}, "
              f"max shape deviation {100 * motion['max_shape_deviation']:.2f}% of radius")
    if config.export_csv:
        dataset.write_csv(layout.data)
    config.write_snapshot(layout.root, "generate")

    print(f"\n✅ Dataset written to {layout.dataset}")
    print(f"  • {dataset.n_eulerian_records} Eulerian records, {dataset.n_marker_records} marker records")
    for message in warnings:
        print(f"  ⚠️  {message}")
    return layout.dataset


def _train_one(model_dict: Dict, training_set, dataset_path: str, output_dir: str) -> Dict:
    config = ModelConfig.from_dict(model_dict)
    run = f"{config.model_id}_seed{config.seed}"
    dataset = FsiDataset.load(Path(dataset_path))
    try:
        report = train(config, training_set, dataset=dataset, output_dir=Path(output_dir))
    except FsiLabError as exc:
        exc.args = (f"{run}: {exc}",)
        raise
    return report.to_dict()


def cmd_train(config: RunConfig) -> List[TrainReport]:
    layout = Layout(config.output_dir)
    dataset = _load_dataset(layout)
    model_configs = config.model_configs()
    checkpoints = [layout.checkpoints / f"{mc.model_id}_seed{mc.seed}.npz" for mc in model_configs]
    _guard(checkpoints + [layout.manifest], config.force)

    training_set = build_training_set(
        dataset, config.fluid_fraction, config.interface_fraction, config.boundary_points,
        config.initial_points, seed=config.sampling_seed, skip_origin=config.skip_origin,
    )
    write_manifest(training_set, layout.manifest)
    print(f"\n🧮 Training {len(model_configs)} run(s) on {training_set.collections()}")

    jobs = [(mc.to_dict(), training_set, str(layout.dataset), str(layout.training)) for mc in model_configs]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_train_one, *zip(*jobs)))
    else:
        results = [_train_one(*job) for job in jobs]
    reports = [TrainReport.from_dict(r) for r in results]
    config.write_snapshot(layout.root, "train")

    print(f"\n✅ Trained {len(reports)} run(s):")
    for report in reports:
        print(f"  • {report.run}: loss {report.initial_loss:.3e} → {report.final_loss:.3e}")
    return reports


def cmd_evaluate(config: RunConfig) -> Path:
    layout = Layout(config.output_dir)
    dataset = _load_dataset(layout)
    checkpoints = sorted(layout.checkpoints.glob("*.npz")) if layout.checkpoints.exists() else []
    if not checkpoints:
        raise MissingInputError(f"no checkpoints found in {layout.checkpoints}")
    _guard([layout.metrics], config.force)

    print(f"\n📏 Evaluating {len(checkpoints)} checkpoint(s)")
    results = {}
    for path in checkpoints:
        predictor = load_checkpoint(path)
        results[path.stem] = evaluate_model(predictor, dataset)
        emit_profiles(predictor, dataset, layout.eval / "profiles", path.stem,
                      config.profile_time_list(), config.y_line_list())
    write_metrics(results, layout.metrics)
    write_field_statistics(field_statistics(dataset), layout.eval / "field_statistics.csv")
    config.write_snapshot(layout.root, "evaluate")

    print(f"\n✅ Metrics written to {layout.metrics}")
    return layout.metrics


def _load_reports(layout: Layout) -> List[TrainReport]:
    if not layout.reports.exists():
        return []
    return [TrainingSession.load_session(path) for path in sorted(layout.reports.glob("*.json"))]


def cmd_report(config: RunConfig) -> Path:
    layout = Layout(config.output_dir)
    metrics = read_metrics(layout.metrics)
    if not metrics:
        raise MissingInputError(f"no metrics found in {layout.metrics}; run 'evaluate' first")
    _guard([layout.report / "report.md"], config.force)
    dataset = _load_dataset(layout)
    reports = _load_reports(layout)

    keyed = {split_run(run): value for run, value in metrics.items() if split_run(run) is not None}
    final_losses = {split_run(r.run): r.final_loss for r in reports if r.final_loss is not None}
    verdicts = ordering_verdicts(keyed, final_losses)
    write_verdicts(verdicts, layout.report / "verdicts.txt")
    write_loss_curves(reports, layout.report / "loss_curves.csv")

    fluid_std = _fluid_std(dataset)
    generator = ReportGenerator({
        "metrics": metrics,
        "runs": [r.to_dict() for r in reports],
        "verdicts": verdicts,
        "statistics": {"fluid": fluid_std},
        "warnings": statistics_cross_check(fluid_std),
        "dataset": dataset.metadata,
    })
    generator.generate_all_reports(layout.report)
    config.write_snapshot(layout.root, "report")

    print(f"\n📝 Report written to {layout.report}/")
    for name, value in verdicts.items():
        print(f"  • {name}: {value}")
    return layout.report / "report.md"


HANDLERS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Reference data generation, PINN training and evaluation for the cavity FSI problem",
        epilog="Any RunConfig key can be overridden as --key value (dashes or underscores); "
               "a bare --flag sets a boolean key to true.",
        allow_abbrev=False,
    )
    parser.add_argument("command", choices=COMMANDS, help="Pipeline stage to run")
    parser.add_argument("--config", type=str, help="Path to a 'key = value' config file")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    try:
        config = resolve(Path(args.config) if args.config else None, parse_overrides(rest))
        if config.verbose:
            enable_console(logger)
        logger.info(f"Command {args.command} with output_dir={config.output_dir}")
        HANDLERS[args.command](config)
    except FsiLabError as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"❌ {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
