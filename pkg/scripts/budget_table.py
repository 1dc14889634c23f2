"""Print the feature budget B at each SNR of the grid, with and without a shared (STC) slot.

    python scripts/budget_table.py --config configs/default.yaml
"""
import argparse

from smsc.channel import feature_budget, shared_budget
from smsc.harness.config import load_config


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config")
    args = parser.parse_args()
    cfg = load_config(args.config)
    n = cfg.model.n_channel
    print(f"T*Wb = {cfg.channel.time_bandwidth:g}, L = {n}, {cfg.channel.bits_per_feature} bits per feature")
    print(f"{'snr_db':>7} {'B':>4} {'stc shares':>12}")
    for snr in cfg.experiment.snr_grid_db:
        shares = [shared_budget(cfg.channel, n, snr, 3, i) for i in range(3)]
        print(f"{snr:7g} {feature_budget(cfg.channel, n, snr):4d} {str(shares):>12}")


if __name__ == "__main__":
    main()
