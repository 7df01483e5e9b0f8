"""Detection scores, equal error rate, ROC points and prototype diagnostics."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core_math import ConfigurationError, DomainError, cosine_matrix, smoothed_max
from .losses import BONAFIDE, SPOOF, PrototypeBank, intra_reg

SCORE_MODES = ("proto-margin", "head-logit")


@dataclass(frozen=True)
class ScoreRecord:
    id: str
    label: int  # BONAFIDE or SPOOF
    score: float  # higher means more bonafide


def score_embeddings(Z, bank: PrototypeBank | None = None, head: dict | None = None, mode: str = "proto-margin") -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if mode == "proto-margin":
        if bank is None:
            raise ConfigurationError("proto-margin scoring needs a prototype bank")
        cos_b = np.clip(cosine_matrix(Z, bank.bonafide[None])[:, 0], -1.0, 1.0)
        cos_s, _ = smoothed_max(np.clip(cosine_matrix(Z, bank.spoof), -1.0, 1.0), bank.gamma)
        return cos_b - cos_s
    if mode == "head-logit":
        if head is None:
            raise ConfigurationError("head-logit scoring needs a classifier head")
        logits = Z @ head["W"].T + head["b"]
        return logits[:, 0] - logits[:, 1]
    raise ConfigurationError(f"unknown score mode {mode!r}; expected one of {SCORE_MODES}")


def score_sample(z, bank: PrototypeBank | None = None, head: dict | None = None, mode: str = "proto-margin") -> float:
    z = np.asarray(z, dtype=np.float64)
    if np.linalg.norm(z) == 0.0 and mode == "proto-margin":
        raise DomainError("z has zero norm")
    return float(score_embeddings(z[None], bank, head, mode)[0])


def _split_scores(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.all(np.isfinite(scores)):
        raise DomainError("scores must be finite")
    bona = np.sort(scores[labels == BONAFIDE])
    spoof = np.sort(scores[labels == SPOOF])
    if bona.size == 0 or spoof.size == 0:
        raise DomainError("EER needs at least one bonafide and one spoof score")
    return bona, spoof


def _operating_points(bona: np.ndarray, spoof: np.ndarray):
    u = np.unique(np.concatenate([bona, spoof]))
    thr = np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2.0, [np.inf]])
    frr = np.searchsorted(bona, thr, side="left") / bona.size
    far = (spoof.size - np.searchsorted(spoof, thr, side="left")) / spoof.size
    return far, frr, thr


def _records_arrays(records: Iterable[ScoreRecord]):
    records = list(records)
    return [r.score for r in records], [r.label for r in records]


def compute_eer_arrays(scores, labels) -> tuple[float, float]:
    """EER and its threshold from parallel score/label arrays.

    A bonafide score strictly below the threshold is a false rejection; a
    spoof score at or above it is a false acceptance.  When FAR = FRR is not
    attained at any midpoint threshold, the two bracketing operating points
    are interpolated linearly.
    """
    far, frr, thr = _operating_points(*_split_scores(scores, labels))
    gap = far - frr  # strictly decreasing
    k = int(np.argmax(gap <= 0.0))
    if gap[k] == 0.0:
        return float(frr[k]), float(thr[k])
    a, b = gap[k - 1], gap[k]
    frac = a / (a - b)
    eer = frr[k - 1] + frac * (frr[k] - frr[k - 1])
    t0, t1 = thr[k - 1], thr[k]
    if np.isfinite(t0) and np.isfinite(t1):
        t = t0 + frac * (t1 - t0)
    else:
        t = t1 if np.isfinite(t1) else t0
    return float(eer), float(t)


def compute_eer(records: Sequence[ScoreRecord]) -> tuple[float, float]:
    return compute_eer_arrays(*_records_arrays(records))


def roc_points(records: Sequence[ScoreRecord]) -> list[tuple[float, float, float]]:
    """(FAR, FRR, threshold) for every midpoint threshold plus the two infinite ends."""
    far, frr, thr = _operating_points(*_split_scores(*_records_arrays(records)))
    return [(float(a), float(r), float(t)) for a, r, t in zip(far, frr, thr)]


@dataclass
class ProtoDiagnostics:
    spoof_cosines: np.ndarray  # (K, K)
    mean_pairwise_sim: float
    max_inter_sim: float
    assignment_counts: np.ndarray  # (K,)


def proto_diagnostics(bank: PrototypeBank, embeddings=None, labels=None) -> ProtoDiagnostics:
    """Geometry summary of a bank; counts use spoof rows only when labels are given."""
    C = cosine_matrix(bank.spoof, bank.spoof)
    np.fill_diagonal(C, 1.0)
    mean_sim, _ = intra_reg(bank.spoof)
    inter = cosine_matrix(bank.spoof, bank.bonafide[None])[:, 0]
    counts = np.zeros(bank.K, dtype=np.int64)
    if embeddings is not None:
        Z = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
        if labels is not None:
            Z = Z[np.asarray(labels) == SPOOF]
        if Z.shape[0]:
            nearest = np.argmax(cosine_matrix(Z, bank.spoof), axis=1)
            counts = np.bincount(nearest, minlength=bank.K)
    return ProtoDiagnostics(C, float(mean_sim), float(inter.max()), counts)


# -- files ----------------------------------------------------------------------------


def _label_name(y: int) -> str:
    return "bonafide" if y == BONAFIDE else "spoof"


def _parse_label(s: str) -> int:
    if s == "bonafide":
        return BONAFIDE
    if s == "spoof":
        return SPOOF
    raise ValueError(f"bad label {s!r}")


def write_scores(records: Iterable[ScoreRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(f"{r.id} {_label_name(r.label)} {r.score!r}\n")


def read_scores(path) -> list[ScoreRecord]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'id label score'")
            out.append(ScoreRecord(parts[0], _parse_label(parts[1]), float(parts[2])))
    return out


def dump_embeddings(dataset, model, path, augment: str | None = None, seed: int = 0) -> int:
    """Write ``id label family v1 .. v_d`` per sample; returns the line count.

    With ``augment`` set, augmented spoof rows are appended with ids
    ``<source>+<kind>`` and family ``<family>+<kind>``.
    """
    from .augment import augment_batch
    from .core_math import RngStream

    Z = model.embed(dataset.features)
    ids, labels, fams = list(dataset.ids), list(dataset.labels), list(dataset.families)
    rows = Z
    if augment:
        ab = augment_batch(Z, dataset.labels, augment, model.bank, RngStream(seed, "aug"), families=dataset.families)
        rows = ab.embeddings
        for p in ab.provenance:
            ids.append(f"{dataset.ids[p.source]}+{p.kind}")
            labels.append(SPOOF)
            fams.append(f"{dataset.families[p.source]}+{p.kind}")
    try:
        with open(path, "w") as fh:
            for i in range(rows.shape[0]):
                vals = " ".join(repr(float(v)) for v in rows[i])
                fh.write(f"{ids[i]} {_label_name(labels[i])} {fams[i]} {vals}\n")
    except OSError as exc:
        raise OSError(f"cannot write embeddings to {path}: {exc}") from exc
    return rows.shape[0]


def read_embeddings(path):
    ids, labels, fams, vecs = [], [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        ids.append(parts[0])
        labels.append(_parse_label(parts[1]))
        fams.append(parts[2])
        vecs.append([float(v) for v in parts[3:]])
    return ids, np.array(labels), fams, np.array(vecs, dtype=np.float64)
