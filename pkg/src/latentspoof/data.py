"""Synthetic bonafide/spoof data with several attack families.

Bonafide samples form one isotropic Gaussian cluster; each spoof family is
another cluster whose mean sits on a shell around the bonafide mean.  Some
families are held out of training to mimic evaluation on unseen attacks.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core_math import ConfigurationError, RngStream
from .losses import BONAFIDE, SPOOF

BONAFIDE_TAG = "bonafide"


def family_tag(i: int) -> str:
    """Attack families are numbered from 1."""
    return f"A{i}"


@dataclass(frozen=True)
class DatasetSpec:
    input_dim: int = 20
    n_families: int = 6
    samples_per_family: int = 200
    n_bonafide: int = 1200
    bonafide_spread: float = 1.0
    bonafide_norm: float = 0.0  # distance of the bonafide mean from the origin
    shell_radius: float = 4.0
    shell_rank: int | None = 4  # family directions span min(rank, input_dim) dims (None: all)
    family_spread: float = 1.0
    spread_jitter: float = 0.5  # family spreads are family_spread * U(1 - j, 1 + j)
    train_families: tuple[int, ...] = (1, 2, 3, 4)
    bonafide_train_share: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ConfigurationError("input_dim must be >= 1")
        if self.n_families < 2:
            raise ConfigurationError(f"need at least 2 spoof families, got {self.n_families}")
        if self.samples_per_family < 1 or self.n_bonafide < 2:
            raise ConfigurationError("sample counts too small")
        if min(self.bonafide_spread, self.family_spread) < 0 or not 0 <= self.spread_jitter < 1:
            raise ConfigurationError("spreads must be non-negative and jitter in [0, 1)")
        fams = set(self.train_families)
        if not fams or not fams <= set(range(1, self.n_families + 1)):
            raise ConfigurationError(f"train_families must be a non-empty subset of 1..{self.n_families}")
        if len(fams) == self.n_families:
            raise ConfigurationError("at least one family must be held out for evaluation")
        if self.shell_rank is not None and self.shell_rank < 1:
            raise ConfigurationError("shell_rank must be >= 1")
        if not 0 < self.bonafide_train_share < 1:
            raise ConfigurationError("bonafide_train_share must lie in (0, 1)")

    @property
    def eval_families(self) -> tuple[int, ...]:
        return tuple(i for i in range(1, self.n_families + 1) if i not in set(self.train_families))


@dataclass
class Dataset:
    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    families: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.ids[idx], self.features[idx], self.labels[idx], self.families[idx], dict(self.meta))


def family_geometry(spec: DatasetSpec):
    """Bonafide mean, family means (M, dim) and family spreads (M,)."""
    rng = RngStream(spec.seed, "init")
    u = rng.gaussian(spec.input_dim)
    bona_mean = spec.bonafide_norm * u / np.linalg.norm(u)
    rank = min(spec.shell_rank or spec.input_dim, spec.input_dim)
    dirs = rng.gaussian((spec.n_families, rank))
    if rank < spec.input_dim:
        basis, _ = np.linalg.qr(rng.gaussian((spec.input_dim, rank)))
        dirs = dirs @ basis.T
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    means = bona_mean + spec.shell_radius * dirs
    if spec.spread_jitter > 0:
        jitter = rng.uniform(1 - spec.spread_jitter, 1 + spec.spread_jitter, spec.n_families)
    else:
        jitter = np.ones(spec.n_families)
    return bona_mean, means, spec.family_spread * jitter


def generate(spec: DatasetSpec) -> Dataset:
    spec.validate()
    bona_mean, means, spreads = family_geometry(spec)
    rng = RngStream(spec.seed, "samples")
    dim = spec.input_dim
    feats = [bona_mean + spec.bonafide_spread * rng.gaussian((spec.n_bonafide, dim))]
    ids = [f"{BONAFIDE_TAG}_{i:05d}" for i in range(spec.n_bonafide)]
    fams = [BONAFIDE_TAG] * spec.n_bonafide
    for f in range(spec.n_families):
        tag = family_tag(f + 1)
        feats.append(means[f] + spreads[f] * rng.gaussian((spec.samples_per_family, dim)))
        ids += [f"{tag}_{i:05d}" for i in range(spec.samples_per_family)]
        fams += [tag] * spec.samples_per_family
    families = np.array(fams)
    labels = np.where(families == BONAFIDE_TAG, BONAFIDE, SPOOF)
    return Dataset(np.array(ids), np.concatenate(feats), labels, families,
                   {"dim": dim, "M": spec.n_families, "seed": spec.seed})


def split_unseen(data: Dataset, spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    """Train on bonafide share + train families; evaluate on the rest."""
    spec.validate()
    train_tags = {family_tag(i) for i in spec.train_families}
    eval_tags = {family_tag(i) for i in spec.eval_families}
    bona = np.flatnonzero(data.families == BONAFIDE_TAG)
    n_train_bona = int(np.floor(spec.bonafide_train_share * len(bona)))
    train_idx = np.concatenate([bona[:n_train_bona], np.flatnonzero(np.isin(data.families, list(train_tags)))])
    eval_idx = np.concatenate([bona[n_train_bona:], np.flatnonzero(np.isin(data.families, list(eval_tags)))])
    train, ev = data.subset(np.sort(train_idx)), data.subset(np.sort(eval_idx))
    for name, part in (("train", train), ("eval", ev)):
        if not (np.any(part.labels == BONAFIDE) and np.any(part.labels == SPOOF)):
            raise ConfigurationError(f"{name} split lacks one of the two classes")
    return train, ev


def _label_name(y: int) -> str:
    return "bonafide" if y == BONAFIDE else "spoof"


def write_dataset(data: Dataset, path) -> None:
    meta = data.meta
    lines = [f"{meta.get('dim', data.dim)} {meta.get('M', 0)} {meta.get('seed', 0)}"]
    for i in range(len(data)):
        vals = " ".join(repr(float(v)) for v in data.features[i])
        lines.append(f"{data.ids[i]} {_label_name(data.labels[i])} {data.families[i]} {vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ConfigurationError(f"{path}: bad header {header!r}")
        dim, M, seed = (int(x) for x in header)
        ids, labels, fams, feats = [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 + dim or parts[1] not in ("bonafide", "spoof"):
                raise ConfigurationError(f"{path}:{lineno}: malformed sample line")
            ids.append(parts[0])
            labels.append(BONAFIDE if parts[1] == "bonafide" else SPOOF)
            fams.append(parts[2])
            feats.append([float(v) for v in parts[3:]])
    return Dataset(np.array(ids), np.array(feats, dtype=np.float64).reshape(-1, dim), np.array(labels),
                   np.array(fams), {"dim": dim, "M": M, "seed": seed})


def with_overrides(spec: DatasetSpec, **kw) -> DatasetSpec:
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(spec, **kw)
