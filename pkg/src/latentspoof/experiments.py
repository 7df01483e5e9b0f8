"""Experiment configuration, per-cell runs and the ablation matrices."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import traceback
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from joblib import Parallel, delayed

from .core_math import ConfigurationError
from .data import Dataset, DatasetSpec, generate, split_unseen
from .encoder import Trainer, TrainConfig, config_from_dict
from .metrics import proto_diagnostics

log = logging.getLogger(__name__)

ROW_FIELDS = ("config_id", "seed", "split", "eer", "l_proto", "l_intra", "l_inter", "l_wce", "mean_proto_sim",
              "max_inter_sim")

LOSS_CELLS = (
    ("wce", {"loss_mode": "wce"}),
    ("lsr", {"loss_mode": "lsr"}),
    ("lsr-no-inter", {"loss_mode": "minus-inter"}),
    ("lsr-no-intra", {"loss_mode": "minus-intra"}),
    ("lsr-no-both", {"loss_mode": "minus-both"}),
    ("wce+lsr", {"loss_mode": "wce+lsr"}),
)

AUG_CELLS = tuple([("none", {"augment": None})] + [(k, {"augment": k}) for k in ("AN", "AT", "BM", "LI", "LE", "ALL")])

DEFAULT_K_LIST = (1, 2, 4, 8, 16, 20)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = tuple(range(10))
    out: str = "runs"
    jobs: int = 1

    def validate(self) -> None:
        self.data.validate()
        self.train.validate()
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data"]["train_families"] = list(self.data.train_families)
        d["train"] = self.train.to_dict()
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kw: dict[str, Any] = {}
        if "data" in d:
            dk = {f.name for f in fields(DatasetSpec)}
            bad = set(d["data"]) - dk
            if bad:
                raise ConfigurationError(f"unknown data keys: {sorted(bad)}")
            data = dict(d["data"])
            if "train_families" in data:
                data["train_families"] = tuple(data["train_families"])
            kw["data"] = DatasetSpec(**data)
        if "train" in d:
            kw["train"] = config_from_dict(d["train"])
        if "seeds" in d:
            kw["seeds"] = tuple(int(s) for s in d["seeds"])
        for k in ("out", "jobs"):
            if k in d:
                kw[k] = d[k]
        cfg = cls(**kw)
        cfg.validate()
        return cfg


def load_config(path) -> ExperimentConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(d)


@dataclass
class ResultRow:
    config_id: str
    seed: int
    split: str  # "seen" (training families) or "unseen" (held-out families)
    eer: float
    l_proto: float = 0.0
    l_intra: float = 0.0
    l_inter: float = 0.0
    l_wce: float = 0.0
    mean_proto_sim: float = 0.0
    max_inter_sim: float = 0.0

    def as_list(self) -> list[str]:
        out = []
        for name in ROW_FIELDS:
            v = getattr(self, name)
            out.append(repr(float(v)) if isinstance(v, float) else str(v))
        return out


def rows_to_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in rows:
        w.writerow(r.as_list())
    return buf.getvalue()


def rows_from_csv(path) -> list[ResultRow]:
    with open(path) as fh:
        rd = csv.DictReader(fh)
        rows = []
        for rec in rd:
            kw = {k: float(rec[k]) for k in ROW_FIELDS[3:]}
            rows.append(ResultRow(rec["config_id"], int(rec["seed"]), rec["split"], **kw))
    return rows


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def result_rows(config_id: str, trainer: Trainer, train_data: Dataset, eval_data: Dataset) -> list[ResultRow]:
    last = trainer.trace[-1] if trainer.trace else {}
    diag = proto_diagnostics(trainer.model.bank)
    common = {k: float(last.get(k, 0.0)) for k in ("l_proto", "l_intra", "l_inter", "l_wce")}
    common["mean_proto_sim"] = diag.mean_pairwise_sim
    common["max_inter_sim"] = diag.max_inter_sim
    seed = trainer.config.seed
    return [
        ResultRow(config_id, seed, "seen", trainer.eer(train_data), **common),
        ResultRow(config_id, seed, "unseen", trainer.eer(eval_data), **common),
    ]


def run_cell(config_id: str, spec: DatasetSpec, train_cfg: TrainConfig, seed: int, dataset: Dataset | None = None):
    """Train one (config, seed) cell on the unseen-family split."""
    data = generate(spec) if dataset is None else dataset
    train_data, eval_data = split_unseen(data, spec)
    tr = Trainer.fresh(replace(train_cfg, seed=seed), train_data)
    tr.train(train_data)
    return result_rows(config_id, tr, train_data, eval_data), tr


def _cell_job(config_id, spec, train_cfg, seed, dataset, cell_dir):
    try:
        rows, _ = run_cell(config_id, spec, train_cfg, seed, dataset)
    except Exception as exc:  # a failed cell must not stop the matrix
        return config_id, seed, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"
    if cell_dir is not None:
        safe = config_id.replace("/", "_").replace("=", "")
        atomic_write(Path(cell_dir) / f"{safe}__seed{seed}.csv", rows_to_csv(rows))
    return config_id, seed, rows, None


def run_matrix(name: str, cells, cfg: ExperimentConfig, out_dir=None, dataset: Dataset | None = None) -> dict:
    """Run every (cell, seed) pair and write ``<name>_rows.csv`` and summaries.

    Cells execute in parallel up to ``cfg.jobs``; results are merged in
    (cell order, seed order) so outputs do not depend on scheduling.
    """
    cfg.validate()
    data = generate(cfg.data) if dataset is None else dataset
    cell_dir = None
    if out_dir is not None:
        cell_dir = Path(out_dir) / "cells" / name
        cell_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for config_id, overrides in cells:
        tcfg = replace(cfg.train, **overrides)
        tcfg.validate()
        for seed in cfg.seeds:
            jobs.append(delayed(_cell_job)(config_id, cfg.data, tcfg, seed, data, cell_dir))
    results = Parallel(n_jobs=cfg.jobs)(jobs)
    rows, failures = [], []
    for config_id, seed, cell_rows, err in results:
        if err is None:
            rows.extend(cell_rows)
        else:
            failures.append({"config_id": config_id, "seed": seed, "error": err})
            log.error("cell %s seed %s failed: %s", config_id, seed, err.splitlines()[0])
    order = [c for c, _ in cells]
    summary = summarize(rows, order, name)
    summary["failures"] = failures
    if out_dir is not None:
        atomic_write(Path(out_dir) / f"{name}_rows.csv", rows_to_csv(rows))
        atomic_write(Path(out_dir) / f"{name}_summary.json", json.dumps(summary, indent=2))
        atomic_write(Path(out_dir) / f"{name}_summary.txt", format_summary(summary))
    summary["rows"] = rows
    return summary


def _stats(vals: list[float]) -> dict:
    a = np.asarray(vals, dtype=np.float64)
    return {
        "n": int(a.size),
        "mean": float(a.mean()) if a.size else float("nan"),
        "std": float(a.std(ddof=1)) if a.size > 1 else 0.0,
    }


def summarize(rows: list[ResultRow], order: list[str], name: str) -> dict:
    """Per-config mean/std of EER by split, plus the matrix's direction checks."""
    table = []
    by: dict[tuple[str, str], list[float]] = {}
    sims: dict[str, dict[int, float]] = {}
    for r in rows:
        by.setdefault((r.config_id, r.split), []).append(r.eer)
        if r.split == "unseen":
            sims.setdefault(r.config_id, {})[r.seed] = r.mean_proto_sim
    for cid in order:
        entry = {"config_id": cid}
        for split in ("seen", "unseen"):
            entry[split] = _stats(by.get((cid, split), []))
        table.append(entry)
    mean = {e["config_id"]: e["unseen"]["mean"] for e in table if e["unseen"]["n"]}
    checks: dict[str, Any] = {}

    def le(a, b, strict=False):
        if a in mean and b in mean:
            checks[f"{a} {'<' if strict else '<='} {b}"] = bool(mean[a] < mean[b] if strict else mean[a] <= mean[b])

    if name == "ablate_loss":
        le("wce+lsr", "lsr")
        le("lsr", "wce")
        le("wce+lsr", "wce")
        le("lsr", "lsr-no-intra", strict=True)
        if "lsr" in sims and "lsr-no-intra" in sims:
            common = sorted(set(sims["lsr"]) & set(sims["lsr-no-intra"]))
            wins = sum(sims["lsr"][s] < sims["lsr-no-intra"][s] for s in common)
            checks["anti_collapse_seeds"] = f"{wins}/{len(common)}"
    elif name == "ablate_aug":
        le("ALL", "none")
        le("LE", "none")
    elif name == "sweep_prototypes":
        le("K=8", "K=1")
    return {"name": name, "table": table, "checks": checks}


def format_summary(summary: dict) -> str:
    lines = [f"# {summary['name']}: EER (%) mean +- std over seeds", "",
             f"{'config':<16}{'seen':>18}{'unseen':>18}"]
    for e in summary["table"]:
        cells = []
        for split in ("seen", "unseen"):
            s = e[split]
            cells.append(f"{100 * s['mean']:8.2f} +- {100 * s['std']:5.2f}" if s["n"] else f"{'-':>16}")
        lines.append(f"{e['config_id']:<16}{cells[0]:>18}{cells[1]:>18}")
    if summary["checks"]:
        lines += ["", "direction checks (unseen split):"]
        lines += [f"  {k}: {v}" for k, v in summary["checks"].items()]
    if summary.get("failures"):
        lines += ["", f"{len(summary['failures'])} failed cell(s):"]
        lines += [f"  {f['config_id']} seed {f['seed']}: {f['error'].splitlines()[0]}" for f in summary["failures"]]
    return "\n".join(lines) + "\n"


def ablate_loss(cfg: ExperimentConfig, out_dir=None, dataset=None) -> dict:
    return run_matrix("ablate_loss", LOSS_CELLS, cfg, out_dir, dataset)


def ablate_aug(cfg: ExperimentConfig, out_dir=None, dataset=None) -> dict:
    base = replace(cfg, train=replace(cfg.train, loss_mode="wce+lsr"))
    return run_matrix("ablate_aug", AUG_CELLS, base, out_dir, dataset)


def sweep_prototypes(cfg: ExperimentConfig, k_list=DEFAULT_K_LIST, out_dir=None, dataset=None) -> dict:
    ks = sorted(set(int(k) for k in k_list))
    if not ks or ks[0] < 1:
        raise ConfigurationError("K list must hold positive integers")
    base = replace(cfg, train=replace(cfg.train, loss_mode="wce+lsr"))
    cells = [(f"K={k}", {"K": k}) for k in ks]
    return run_matrix("sweep_prototypes", cells, base, out_dir, dataset)
