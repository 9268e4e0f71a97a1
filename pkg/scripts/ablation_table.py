"""Train the four module-ablation rows and print a summary table.

Each row adds one module on top of the previous one (plain encoder-decoder,
then PPA, then PPA+DASI, then the full network).  Every row trains for the
same short budget on the same synthetic scenes, so the table shows parameter
cost next to the loss each configuration reaches.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from hcfnet.network import NetworkConfig, build_network, count_params_macs
from hcfnet.train import TrainConfig, train

ROWS = (
    ("baseline", dict(use_ppa=False, use_dasi=False, use_mdcr=False)),
    ("+ppa", dict(use_ppa=True, use_dasi=False, use_mdcr=False)),
    ("+ppa+dasi", dict(use_ppa=True, use_dasi=True, use_mdcr=False)),
    ("full", dict(use_ppa=True, use_dasi=True, use_mdcr=True)),
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--data-seed", type=int, default=0)
    parser.add_argument("--steps", type=int, default=50)
    parser.add_argument("--n", type=int, default=4, help="number of scenes")
    parser.add_argument("--size", type=int, default=32, help="scene extent")
    args = parser.parse_args()

    if args.n % 4 != 0:
        parser.error("--n must be a multiple of the batch size 4")
    steps_per_epoch = args.n // 4

    print(f"{'row':<12} {'params':>9} {'macs@' + str(args.size):>12} {'loss0':>8} {'lossN':>8} {'iou':>7} {'sec':>6}")
    for name, flags in ROWS:
        net_config = NetworkConfig(dropout=0.0, **flags)
        train_config = TrainConfig(
            epochs=args.steps // steps_per_epoch,
            batch_size=4,
            seed=args.seed,
            synthetic_n=args.n,
            synthetic_seed=args.data_seed,
            image_size=args.size,
        )
        start = time.time()
        result = train(net_config, train_config)
        elapsed = time.time() - start
        params, macs, _ = count_params_macs(
            build_network(net_config, seed=args.seed), args.size, args.size
        )
        print(
            f"{name:<12} {params:>9d} {macs:>12d} {result.epoch_losses[0]:>8.4f} "
            f"{result.epoch_losses[-1]:>8.4f} {result.epoch_ious[-1]:>7.4f} {elapsed:>6.1f}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
