"""Latent-space augmentation of spoof embeddings.

Each operator returns ``(augmented_rows, coeffs)`` and accepts explicit
coefficients in place of sampling, which is how the identity endpoints are
pinned in tests.  ``augment_batch`` appends the augmented spoof rows after
the original batch and keeps enough state to backpropagate into the source
rows.  Prototypes used by LI/LE are constants in the backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_math import ConfigurationError, DomainError, RngStream
from .losses import BONAFIDE, SPOOF, PrototypeBank

KINDS = ("AN", "AT", "BM", "LI", "LE")
NEEDS_BANK = {"LI", "LE", "ALL"}


def _rows(zs) -> np.ndarray:
    zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
    if zs.shape[0] == 0:
        raise DomainError("no rows to augment")
    return zs


def _row_norms(zs: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(zs, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DomainError(f"row {int(zero[0])} has zero norm")
    return norms


def additive_noise(zs, rng: RngStream | None = None, *, beta=None, noise=None):
    zs = _rows(zs)
    n, d = zs.shape
    beta = rng.gaussian(n) if beta is None else np.broadcast_to(np.asarray(beta, dtype=np.float64), (n,))
    noise = rng.gaussian((n, d)) if noise is None else np.broadcast_to(np.asarray(noise, dtype=np.float64), (n, d))
    return zs + beta[:, None] * noise, {"beta": np.array(beta)}


def affine(zs, rng: RngStream | None = None, *, a=None, b=0.0):
    zs = _rows(zs)
    n = zs.shape[0]
    a = rng.uniform(0.9, 1.1, n) if a is None else np.broadcast_to(np.asarray(a, dtype=np.float64), (n,))
    return a[:, None] * zs + b, {"a": np.array(a)}


def batch_mixup(zs, rng: RngStream | None = None, *, alpha=None, perm=None):
    """One Beta(0.5, 0.5) coefficient and one permutation for the whole set."""
    zs = _rows(zs)
    n = zs.shape[0]
    if n == 1:
        # nothing to blend with
        return zs.copy(), {"alpha": 1.0, "perm": np.zeros(1, dtype=np.int64), "degenerate": True}
    alpha = float(rng.beta(0.5, 0.5, 1)[0]) if alpha is None else float(alpha)
    perm = rng.permutation(n) if perm is None else np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(n)):
        raise DomainError("perm must be a permutation of the row indices")
    return alpha * zs + (1.0 - alpha) * zs[perm], {"alpha": alpha, "perm": perm}


def linear_interp(zs, bank: PrototypeBank, rng: RngStream | None = None, *, lam=None):
    """Move each row toward the bonafide prototype rescaled to the row's norm."""
    zs = _rows(zs)
    n = zs.shape[0]
    norms = _row_norms(zs)
    lam = rng.uniform(0.0, 0.1, n) if lam is None else np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))
    cb = bank.bonafide
    target = (norms / np.linalg.norm(cb))[:, None] * cb[None, :]
    return zs + lam[:, None] * (target - zs), {"lam": np.array(lam)}


def nearest_spoof_prototype(z, bank: PrototypeBank) -> int:
    z = np.asarray(z, dtype=np.float64)
    return int(_nearest(z[None], bank)[0])


def _nearest(zs: np.ndarray, bank: PrototypeBank) -> np.ndarray:
    _row_norms(zs)
    cs = bank.spoof / np.linalg.norm(bank.spoof, axis=1)[:, None]
    # argmax returns the first maximum, i.e. lowest index on ties
    return np.argmax(zs @ cs.T, axis=1)


def linear_extrap(zs, bank: PrototypeBank, rng: RngStream | None = None, *, lam=None):
    """Push each row away from its nearest spoof prototype."""
    zs = _rows(zs)
    n = zs.shape[0]
    norms = _row_norms(zs)
    lam = rng.uniform(0.0, 0.1, n) if lam is None else np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))
    idx = _nearest(zs, bank)
    cn = bank.spoof[idx]
    anchor = (norms / np.linalg.norm(cn, axis=1))[:, None] * cn
    return zs + lam[:, None] * (zs - anchor), {"lam": np.array(lam), "nearest": idx}


def apply_op(kind: str, zs, bank: PrototypeBank | None, rng: RngStream):
    if kind in ("LI", "LE") and bank is None:
        raise ConfigurationError(f"{kind} augmentation needs a prototype bank")
    if kind == "AN":
        return additive_noise(zs, rng)
    if kind == "AT":
        return affine(zs, rng)
    if kind == "BM":
        return batch_mixup(zs, rng)
    if kind == "LI":
        return linear_interp(zs, bank, rng)
    if kind == "LE":
        return linear_extrap(zs, bank, rng)
    raise ConfigurationError(f"unknown augmentation kind {kind!r}")


def op_vjp(kind: str, zs: np.ndarray, coeffs: dict, bank: PrototypeBank | None, grad: np.ndarray) -> np.ndarray:
    """Pull ``grad`` (dL/d augmented rows) back onto the source rows ``zs``."""
    if kind == "AN":
        return grad.copy()
    if kind == "AT":
        return coeffs["a"][:, None] * grad
    if kind == "BM":
        if coeffs.get("degenerate"):
            return grad.copy()
        alpha = coeffs["alpha"]
        out = alpha * grad
        np.add.at(out, coeffs["perm"], (1.0 - alpha) * grad)
        return out
    lam = coeffs["lam"][:, None]
    zhat = zs / np.linalg.norm(zs, axis=1)[:, None]
    if kind == "LI":
        u = bank.bonafide / np.linalg.norm(bank.bonafide)
        return (1.0 - lam) * grad + lam * (grad @ u)[:, None] * zhat
    if kind == "LE":
        cn = bank.spoof[coeffs["nearest"]]
        un = cn / np.linalg.norm(cn, axis=1)[:, None]
        return (1.0 + lam) * grad - lam * (grad * un).sum(axis=1)[:, None] * zhat
    raise ConfigurationError(f"unknown augmentation kind {kind!r}")


@dataclass
class Provenance:
    kind: str
    source: int
    coeffs: dict

    def line(self) -> str:
        parts = [self.kind, str(self.source)]
        parts += [f"{k}={v!r}" for k, v in self.coeffs.items()]
        return " ".join(parts)


@dataclass
class AugmentedBatch:
    embeddings: np.ndarray
    labels: np.ndarray
    families: np.ndarray | None
    provenance: list[Provenance] = field(default_factory=list)
    n_original: int = 0
    # (kind, source rows, source embeddings, coeffs) per operator application
    _ops: list = field(default_factory=list, repr=False)
    _bank: PrototypeBank | None = field(default=None, repr=False)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the original rows given one w.r.t. all rows."""
        n = self.n_original
        out = grad[:n].copy()
        offset = n
        for kind, src, zs, coeffs in self._ops:
            g = grad[offset : offset + len(src)]
            np.add.at(out, src, op_vjp(kind, zs, coeffs, self._bank, g))
            offset += len(src)
        return out

    def provenance_lines(self) -> list[str]:
        return [p.line() for p in self.provenance]


def _row_coeffs(kind: str, coeffs: dict, j: int, src: np.ndarray) -> dict:
    if kind == "AN":
        return {"beta": float(coeffs["beta"][j])}
    if kind == "AT":
        return {"a": float(coeffs["a"][j])}
    if kind == "BM":
        return {"alpha": float(coeffs["alpha"]), "partner": int(src[coeffs["perm"][j]])}
    if kind == "LI":
        return {"lam": float(coeffs["lam"][j])}
    return {"lam": float(coeffs["lam"][j]), "nearest": int(coeffs["nearest"][j])}


def augment_batch(
    Z,
    labels,
    kind: str | None,
    bank: PrototypeBank | None = None,
    rng: RngStream | None = None,
    families=None,
    per_row: bool = False,
) -> AugmentedBatch:
    """Append augmented copies of the spoof rows of ``Z``.

    ``kind`` is one of AN, AT, BM, LI, LE, ALL or None (no augmentation).
    ALL draws one operator per batch, or one per row when ``per_row``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    labels = np.asarray(labels)
    fam = None if families is None else np.asarray(families)
    if kind is not None:
        kind = kind.upper()
        if kind != "ALL" and kind not in KINDS:
            raise ConfigurationError(f"unknown augmentation kind {kind!r}")
        if kind in NEEDS_BANK and bank is None:
            raise ConfigurationError(f"{kind} augmentation needs a prototype bank")
    out = AugmentedBatch(Z.copy(), labels.copy(), None if fam is None else fam.copy(), n_original=Z.shape[0], _bank=bank)
    spoof_idx = np.flatnonzero(labels == SPOOF)
    if kind is None or spoof_idx.size == 0:
        return out

    if kind == "ALL":
        if per_row:
            picks = rng.integers(0, len(KINDS), spoof_idx.size)
            groups = [(KINDS[k], spoof_idx[picks == k]) for k in range(len(KINDS)) if np.any(picks == k)]
        else:
            groups = [(KINDS[int(rng.integers(0, len(KINDS)))], spoof_idx)]
    else:
        groups = [(kind, spoof_idx)]

    new_rows, new_fam = [], []
    for k, src in groups:
        zs = Z[src]
        aug, coeffs = apply_op(k, zs, bank, rng)
        out._ops.append((k, src, zs, coeffs))
        new_rows.append(aug)
        for j, s in enumerate(src):
            out.provenance.append(Provenance(k, int(s), _row_coeffs(k, coeffs, j, src)))
        if fam is not None:
            new_fam.append(fam[src])

    aug_rows = np.concatenate(new_rows)
    out.embeddings = np.concatenate([Z, aug_rows])
    out.labels = np.concatenate([labels, np.full(aug_rows.shape[0], SPOOF, dtype=labels.dtype)])
    if fam is not None:
        out.families = np.concatenate([fam, *new_fam])
    return out


def write_provenance(batch: AugmentedBatch, path) -> None:
    with open(path, "a") as fh:
        for line in batch.provenance_lines():
            fh.write(line + "\n")


__all__ = [
    "KINDS",
    "BONAFIDE",
    "SPOOF",
    "ConfigurationError",
    "AugmentedBatch",
    "Provenance",
    "additive_noise",
    "affine",
    "batch_mixup",
    "linear_interp",
    "linear_extrap",
    "nearest_spoof_prototype",
    "augment_batch",
    "op_vjp",
    "write_provenance",
]
