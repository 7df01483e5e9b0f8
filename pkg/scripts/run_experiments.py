"""Run the loss ablation, augmentation ablation and prototype-count sweep.

    python3 scripts/run_experiments.py --out runs --jobs 4
"""
import argparse
from dataclasses import replace
from pathlib import Path

from latentspoof import experiments as ex


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON experiment config (defaults otherwise)")
    p.add_argument("--out", default="runs")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seeds", type=int, default=10, help="seeds 0..N-1")
    p.add_argument("--K-list", default="1,2,4,8,16,20")
    args = p.parse_args()

    cfg = ex.load_config(args.config) if args.config else ex.ExperimentConfig()
    cfg = replace(cfg, seeds=tuple(range(args.seeds)), jobs=args.jobs, out=args.out)
    out = Path(args.out)
    ks = [int(k) for k in args.K_list.split(",")]
    for summary in (ex.ablate_loss(cfg, out), ex.ablate_aug(cfg, out), ex.sweep_prototypes(cfg, ks, out)):
        print(ex.format_summary(summary))


if __name__ == "__main__":
    main()
