"""Run a full sweep and print mean-over-seeds tables in the layout of a results table.

    python scripts/run_experiment.py --config configs/default.yaml --out runs/default
"""
import argparse
import dataclasses
import logging
from pathlib import Path

from smsc.harness.config import load_config
from smsc.harness.report import aggregate, emit_csv, emit_plot_series
from smsc.harness.sweep import run_sweep

LABELS = {"rank1": "Rank-1 acc.", "color_acc": "Color acc.", "type_acc": "Type acc."}


def table(rows, grid) -> str:
    means = {}
    for metric in LABELS:
        for snr, method, mode, mean, _, _ in aggregate(rows, metric):
            means[(metric, mode, method, snr)] = mean
    modes = sorted({r.mode for r in rows})
    methods = sorted({r.method for r in rows})
    lines = [f"{'':28s}" + "".join(f"{s:>8g}" for s in grid)]
    for metric, label in LABELS.items():
        for mode in modes:
            for method in methods:
                cells = "".join(f"{100 * means.get((metric, mode, method, s), float('nan')):8.2f}" for s in grid)
                lines.append(f"{label:12s} {mode:4s} {method:10s}{cells}")
    return "\n".join(lines)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="experiment YAML (defaults if omitted)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seeds", type=int, help="override experiment.num_seeds")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    cfg = load_config(args.config).with_overrides(output_dir=args.out)
    if args.seeds is not None:
        cfg = dataclasses.replace(cfg, experiment=dataclasses.replace(cfg.experiment, num_seeds=args.seeds))
    out = Path(cfg.experiment.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_sweep(cfg)
    emit_csv(rows, out / "results.csv")
    emit_plot_series(rows, out)
    print(table(rows, cfg.experiment.snr_grid_db))


if __name__ == "__main__":
    main()
