"""Repeat one experiment matrix over disjoint blocks of seeds.

Prints each configuration's mean unseen EER per block together with the
standard error, so gaps smaller than the seed noise are easy to spot.

    python3 scripts/seed_blocks.py aug --blocks 3 --jobs 4
"""
import argparse
from dataclasses import replace

import numpy as np

from latentspoof import experiments as ex

MATRICES = {
    "loss": ex.ablate_loss,
    "aug": ex.ablate_aug,
    "sweep": lambda cfg: ex.sweep_prototypes(cfg, (1, 8)),
}


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("matrix", choices=sorted(MATRICES))
    p.add_argument("--blocks", type=int, default=3)
    p.add_argument("--block-size", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args()

    base = replace(ex.ExperimentConfig(), jobs=args.jobs)
    for b in range(args.blocks):
        seeds = tuple(range(b * args.block_size, (b + 1) * args.block_size))
        s = MATRICES[args.matrix](replace(base, seeds=seeds))
        cells = []
        for e in s["table"]:
            u = e["unseen"]
            sem = u["std"] / np.sqrt(u["n"])
            cells.append(f"{e['config_id']} {100 * u['mean']:.2f}+-{100 * sem:.2f}")
        print(f"seeds {seeds[0]}-{seeds[-1]}: " + "  ".join(cells))
        print(f"  checks: {s['checks']}", flush=True)


if __name__ == "__main__":
    main()
