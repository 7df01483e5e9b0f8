"""Command-line entry point: ``latentspoof <subcommand>``."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .core_math import ConfigurationError, DomainError
from .data import generate, read_dataset, split_unseen, write_dataset
from .encoder import DivergenceError, Trainer
from .gradcheck import gradient_suite
from .metrics import ScoreRecord, compute_eer, dump_embeddings, read_scores, write_scores

log = logging.getLogger("latentspoof")

TRACE_FIELDS = ("epoch", "l_proto", "l_intra", "l_inter", "l_wce", "total", "mean_proto_sim", "max_inter_sim",
                "train_eer", "val_eer")


def _parse_seeds(text: str) -> tuple[int, ...]:
    text = text.strip()
    if "," not in text and ":" not in text:
        return tuple(range(int(text)))
    if ":" in text:
        lo, hi = (int(x) for x in text.split(":"))
        return tuple(range(lo, hi))
    return tuple(int(x) for x in text.split(",") if x)


def build_config(args) -> ex.ExperimentConfig:
    """Defaults, then the config file, then command-line flags."""
    cfg = ex.load_config(args.config) if args.config else ex.ExperimentConfig()
    data_kw, train_kw, top = {}, {}, {}
    if getattr(args, "families", None) is not None:
        data_kw["n_families"] = args.families
        data_kw["train_families"] = tuple(range(1, max(args.families * 2 // 3, 1) + 1))
    for flag, key in (("samples_per_family", "samples_per_family"), ("bonafide", "n_bonafide"), ("dim", "input_dim")):
        if getattr(args, flag, None) is not None:
            data_kw[key] = getattr(args, flag)
    for flag, key in (("loss", "loss_mode"), ("K", "K"), ("epochs", "epochs"), ("lr_encoder", "lr_encoder"),
                      ("lr_proto", "lr_proto"), ("score_mode", "score_mode"), ("batch_size", "batch_size")):
        if getattr(args, flag, None) is not None:
            train_kw[key] = getattr(args, flag)
    if getattr(args, "augment", None) is not None:
        train_kw["augment"] = None if args.augment.lower() == "none" else args.augment
    if args.seed is not None:
        if args.command == "train":
            train_kw["seed"] = args.seed
        else:
            data_kw["seed"] = args.seed
    if getattr(args, "seeds", None):
        top["seeds"] = _parse_seeds(args.seeds)
    if args.out is not None:
        top["out"] = args.out
    if args.jobs is not None:
        top["jobs"] = args.jobs
    cfg = replace(cfg, data=replace(cfg.data, **data_kw), train=replace(cfg.train, **train_kw), **top)
    cfg.validate()
    return cfg


def _load_data(args, cfg):
    if getattr(args, "data", None):
        return read_dataset(args.data)
    return generate(cfg.data)


def _write_trace(trace, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_FIELDS)
    for row in trace:
        w.writerow([repr(row.get(k)) if isinstance(row.get(k), float) else row.get(k, "") for k in TRACE_FIELDS])
    ex.atomic_write(path, buf.getvalue())


# -- subcommands -------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = build_config(args)
    data = generate(cfg.data)
    out = Path(args.file or Path(cfg.out) / "data.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(data, out)
    fams, counts = np.unique(data.families, return_counts=True)
    print(f"wrote {len(data)} samples ({cfg.data.n_families} spoof families) to {out}")
    for f, c in zip(fams, counts):
        print(f"  {f}: {c}")
    return 0


def cmd_train(args) -> int:
    cfg = build_config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    data = _load_data(args, cfg)
    train_data, eval_data = split_unseen(data, cfg.data)
    if args.resume:
        tr = Trainer.load(args.resume)
        if args.epochs is not None and args.epochs != tr.config.epochs:
            tr.config = replace(tr.config, epochs=args.epochs)
    else:
        tr = Trainer.fresh(cfg.train, train_data)

    def on_epoch(t):
        if args.checkpoint_every and t.epoch % args.checkpoint_every == 0:
            t.save(out / f"checkpoint_epoch{t.epoch}.json")

    try:
        tr.train(train_data, eval_data, on_epoch=on_epoch)
    except DivergenceError as exc:
        _write_trace(tr.trace, out / "trace.csv")
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    tr.save(out / "checkpoint.json")
    _write_trace(tr.trace, out / "trace.csv")
    rows = ex.result_rows(args.config_id, tr, train_data, eval_data)
    ex.atomic_write(out / "results.csv", ex.rows_to_csv(rows))
    for r in rows:
        print(f"{r.split:>6} EER = {100 * r.eer:.2f}%")
    return 0


def cmd_eval(args) -> int:
    if args.scores_in:
        records = read_scores(args.scores_in)
    else:
        if not args.checkpoint:
            raise ConfigurationError("eval needs --checkpoint (or --scores-in)")
        cfg = build_config(args)
        tr = Trainer.load(args.checkpoint)
        if args.score_mode:
            tr.config = replace(tr.config, score_mode=args.score_mode)
        data = _load_data(args, cfg)
        if args.split != "all":
            train_data, eval_data = split_unseen(data, cfg.data)
            data = train_data if args.split == "seen" else eval_data
        scores = tr.scores(data)
        records = [ScoreRecord(str(i), int(y), float(s)) for i, y, s in zip(data.ids, data.labels, scores)]
    if args.scores:
        write_scores(records, args.scores)
    eer, thr = compute_eer(records)
    print(f"EER = {100 * eer:.4f}%  threshold = {thr!r}  ({len(records)} scores)")
    return 0


def _print_summary(summary) -> None:
    print(ex.format_summary(summary), end="")


def cmd_ablate_loss(args) -> int:
    cfg = build_config(args)
    s = ex.ablate_loss(cfg, out_dir=cfg.out)
    _print_summary(s)
    return 0


def cmd_ablate_aug(args) -> int:
    cfg = build_config(args)
    s = ex.ablate_aug(cfg, out_dir=cfg.out)
    _print_summary(s)
    return 0


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    ks = [int(k) for k in args.K_list.split(",") if k]
    s = ex.sweep_prototypes(cfg, ks, out_dir=cfg.out)
    _print_summary(s)
    return 0


def cmd_gradcheck(args) -> int:
    res = gradient_suite(args.n_configs, seed=args.seed or 0)
    for term, err in res["max_rel_error"].items():
        status = "ok" if err < args.tol else "FAIL"
        print(f"{term:<8} max rel err {err:.3e}  {status}")
    print(f"{res['n_configs']} configs ({res['skipped']} redrawn near the hinge) in {res['seconds']:.1f}s")
    return 0 if max(res["max_rel_error"].values()) < args.tol else 1


def cmd_dump(args) -> int:
    cfg = build_config(args)
    tr = Trainer.load(args.checkpoint)
    data = _load_data(args, cfg)
    n = dump_embeddings(data, tr.model, args.file, augment=args.augment_rows, seed=tr.config.seed)
    print(f"wrote {n} embeddings to {args.file}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="training seed for 'train', dataset seed otherwise")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, help="parallel experiment cells")
    common.add_argument("-v", "--verbose", action="store_true")

    data_flags = argparse.ArgumentParser(add_help=False)
    data_flags.add_argument("--families", type=int)
    data_flags.add_argument("--samples-per-family", type=int)
    data_flags.add_argument("--bonafide", type=int)
    data_flags.add_argument("--dim", type=int)
    data_flags.add_argument("--data", help="dataset file (default: generate from config)")

    train_flags = argparse.ArgumentParser(add_help=False)
    train_flags.add_argument("--loss", choices=["wce", "lsr", "wce+lsr", "minus-intra", "minus-inter", "minus-both"])
    train_flags.add_argument("--augment", help="AN, AT, BM, LI, LE, ALL or none")
    train_flags.add_argument("--K", type=int, help="number of spoof prototypes")
    train_flags.add_argument("--epochs", type=int)
    train_flags.add_argument("--batch-size", type=int)
    train_flags.add_argument("--lr-encoder", type=float)
    train_flags.add_argument("--lr-proto", type=float)
    train_flags.add_argument("--score-mode", choices=["proto-margin", "head-logit"])

    p = argparse.ArgumentParser(prog="latentspoof", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common, data_flags], help="write a synthetic dataset file")
    g.add_argument("--file", help="output path (default OUT/data.txt)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common, data_flags, train_flags], help="train one model")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--config-id", default="train")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common, data_flags], help="score a dataset and report EER")
    e.add_argument("--checkpoint")
    e.add_argument("--split", choices=["all", "seen", "unseen"], default="unseen")
    e.add_argument("--scores", help="write 'id label score' lines here")
    e.add_argument("--scores-in", help="compute EER of an existing score file instead")
    e.add_argument("--score-mode", choices=["proto-margin", "head-logit"])
    e.set_defaults(func=cmd_eval)

    for name, func, doc in (("ablate-loss", cmd_ablate_loss, "loss-configuration ablation"),
                            ("ablate-aug", cmd_ablate_aug, "latent augmentation ablation")):
        a = sub.add_parser(name, parents=[common, data_flags, train_flags], help=doc)
        a.add_argument("--seeds", help="N (=0..N-1), lo:hi, or a comma list")
        a.set_defaults(func=func)

    s = sub.add_parser("sweep-prototypes", parents=[common, data_flags, train_flags], help="EER versus K")
    s.add_argument("--seeds", help="N (=0..N-1), lo:hi, or a comma list")
    s.add_argument("--K-list", default="1,2,4,8,16,20")
    s.set_defaults(func=cmd_sweep)

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    gc.add_argument("--n-configs", type=int, default=100)
    gc.add_argument("--tol", type=float, default=1e-5)
    gc.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("dump-embeddings", parents=[common, data_flags], help="write embeddings for plotting")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--file", required=True)
    d.add_argument("--augment-rows", help="also append augmented spoof rows of this kind")
    d.set_defaults(func=cmd_dump)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, DomainError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
