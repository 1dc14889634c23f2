"""Command line entry point.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..channel import feature_budget
from ..errors import ConfigError, ContractError
from ..fir import POLICIES, save_importance
from ..training import train_stage1, train_stage2
from . import sweep as sw
from .config import ExperimentConfig, load_config, write_config
from .report import emit_csv, emit_plot_series

log = logging.getLogger("smsc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="experiment YAML file (defaults apply to omitted keys)")
    p.add_argument("--seed", type=int, help="base seed; overrides experiment.seed")
    p.add_argument("--out", metavar="DIR", help="output directory; overrides experiment.output_dir")
    p.add_argument("--mode", choices=("mtc", "stc"), help="restrict to one coding mode")
    p.add_argument("--snr", type=float, metavar="DB", help="evaluate at this SNR only (eval, sweep)")
    p.add_argument("--method", choices=POLICIES, help="restrict to one selection method (eval, sweep)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smsc", description="Scalable multi-task semantic communication simulator.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    commands = {
        "train": "stage-1 training (all features sent); writes <name>_stage1.npz",
        "rank": "compute and persist feature importance vectors from stage-1 checkpoints",
        "retrain": "stage-2 retraining under the SNR-dependent feature budget",
        "sweep": "full experiment: train, rank, retrain and evaluate every seed/mode/SNR/method",
        "eval": "evaluate stored checkpoints and print result rows",
    }
    for name, text in commands.items():
        _common(sub.add_parser(name, help=text, description=text))
    return parser


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(
        seed=args.seed,
        output_dir=args.out,
        modes=(args.mode,) if args.mode else None,
        methods=(args.method,) if args.method else None,
        snr_grid=(args.snr,) if args.snr is not None else None,
    )


def _cells(cfg: ExperimentConfig):
    for seed in cfg.experiment.seeds:
        directory = sw.run_dir(cfg, seed)
        directory.mkdir(parents=True, exist_ok=True)
        write_config(cfg, directory)
        for mode in cfg.experiment.modes:
            yield seed, mode, directory


def cmd_train(cfg: ExperimentConfig) -> None:
    for seed, mode, directory in _cells(cfg):
        dataset = sw.seeded_dataset(cfg, seed)
        for name in sw.unit_names(mode):
            index = sw.unit_index(name)
            pipeline = sw.new_pipeline(cfg, name, seed, index)
            result = train_stage1(pipeline, dataset, sw._train_cfg(cfg, seed, index), cfg.channel,
                                  directory / f"{name}_stage1_log.csv")
            sw.save_checkpoint(directory / f"{name}_stage1.npz", pipeline, dataset.config)
            log.info("%s seed %d: stage-1 loss %.4f -> %.4f", name, seed, result.initial_loss, result.final_loss)
        print(directory)


def cmd_rank(cfg: ExperimentConfig) -> None:
    exp = cfg.experiment
    for seed, mode, directory in _cells(cfg):
        dataset = sw.seeded_dataset(cfg, seed)
        for unit in sw.load_units(cfg, directory, mode, stage=1):
            s = sw.compute_importance(unit.pipeline, dataset, exp.calibration_size, exp.signed_importance)
            save_importance(directory / f"{unit.name}_importance.txt", s)
        print(directory)


def cmd_retrain(cfg: ExperimentConfig) -> None:
    for seed, mode, directory in _cells(cfg):
        dataset = sw.seeded_dataset(cfg, seed)
        for unit in sw.load_units(cfg, directory, mode, stage=1):
            if unit.importance is None:
                raise ContractError(f"{directory}: no importance vector for {unit.name}; run `rank` first")
            index = sw.unit_index(unit.name)
            train_stage2(unit.pipeline, dataset, sw._train_cfg(cfg, seed, index), cfg.channel, unit.importance,
                         directory / f"{unit.name}_stage2_log.csv",
                         budget=lambda snr, u=unit: u.budget(cfg.channel, snr))
            sw.save_checkpoint(directory / f"{unit.name}_stage2.npz", unit.pipeline, dataset.config)
        print(directory)


def cmd_eval(cfg: ExperimentConfig) -> None:
    rows = []
    for seed, mode, directory in _cells(cfg):
        rows += sw.evaluate_cell(cfg, seed, mode, sw.load_units(cfg, directory, mode, stage=2))
    out = Path(cfg.experiment.output_dir)
    emit_csv(rows, out / "eval.csv")
    sys.stdout.write((out / "eval.csv").read_text())


def cmd_sweep(cfg: ExperimentConfig) -> None:
    out = Path(cfg.experiment.output_dir)
    write_config(cfg, out)
    rows = sw.run_sweep(cfg)
    emit_csv(rows, out / "results.csv")
    emit_plot_series(rows, out)
    n = cfg.model.n_channel
    budgets = ", ".join(f"{s:g} dB->{feature_budget(cfg.channel, n, s)}" for s in cfg.experiment.snr_grid_db)
    log.info("budgets: %s", budgets)
    print(out / "results.csv")


COMMANDS = {"train": cmd_train, "rank": cmd_rank, "retrain": cmd_retrain, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _resolve(args)
    except (ConfigError, OSError) as exc:
        print(f"smsc: configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](cfg)
    except (ConfigError, ContractError) as exc:
        print(f"smsc: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.exception("run failed")
        print(f"smsc: runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0
