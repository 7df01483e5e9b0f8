"""Multi-prototype margin losses, regularizers and weighted cross entropy.

Every loss returns its value together with analytic gradients.  Prototype
gradients are taken with respect to the raw stored vectors; since all terms
go through cosines they are tangent to the unit sphere at unit norm.

Labels follow the convention ``BONAFIDE = 1``, ``SPOOF = 0``.  Logit pairs
are ordered ``(bonafide, spoof)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_math import (
    DomainError,
    RngStream,
    as_vec,
    cosine_grads,
    cosine_matrix,
    log1pexp,
    sigmoid,
    smoothed_max,
)

BONAFIDE = 1
SPOOF = 0

UNIT_NORM_TOL = 1e-9


@dataclass
class PrototypeBank:
    bonafide: np.ndarray  # (d,)
    spoof: np.ndarray  # (K, d)
    gamma: float = 10.0

    def __post_init__(self):
        self.bonafide = np.asarray(self.bonafide, dtype=np.float64)
        self.spoof = np.atleast_2d(np.asarray(self.spoof, dtype=np.float64))
        if self.bonafide.ndim != 1:
            raise DomainError("bonafide prototype must be a vector")
        if self.spoof.shape[0] < 1:
            raise DomainError("need at least one spoof prototype")
        if self.spoof.shape[1] != self.bonafide.shape[0]:
            raise DomainError("all prototypes must share one dimension")

    @property
    def dim(self) -> int:
        return self.bonafide.shape[0]

    @property
    def K(self) -> int:
        return self.spoof.shape[0]

    def copy(self) -> "PrototypeBank":
        return PrototypeBank(self.bonafide.copy(), self.spoof.copy(), self.gamma)

    def check_unit(self, tol: float = UNIT_NORM_TOL) -> None:
        norms = np.concatenate([[np.linalg.norm(self.bonafide)], np.linalg.norm(self.spoof, axis=1)])
        bad = np.flatnonzero(np.abs(norms - 1.0) > tol)
        if bad.size:
            raise DomainError(f"prototype(s) {bad.tolist()} not unit norm: {norms[bad].tolist()}")

    @classmethod
    def random(cls, dim: int, K: int, rng: RngStream, gamma: float = 10.0, bonafide_init=None) -> "PrototypeBank":
        """Random unit prototypes; optionally point the bonafide one at ``bonafide_init``."""
        raw = rng.gaussian((K + 1, dim))
        if bonafide_init is not None:
            raw[0] = np.asarray(bonafide_init, dtype=np.float64)
        return renormalize(cls(raw[0], raw[1:], gamma))


@dataclass(frozen=True)
class LossHyper:
    s: float = 32.0
    m: float = 0.2
    delta: float = 0.2
    gamma: float = 10.0
    wce_weights: tuple[float, float] = (0.9, 0.1)  # (bonafide, spoof)

    def __post_init__(self):
        if not self.s > 0:
            raise DomainError("s must be positive")
        if not 0 <= self.m < math.pi / 2:
            raise DomainError("m must lie in [0, pi/2)")
        if not self.delta >= 0:
            raise DomainError("delta must be non-negative")
        if not self.gamma > 0:
            raise DomainError("gamma must be positive")
        if len(self.wce_weights) != 2 or min(self.wce_weights) <= 0:
            raise DomainError("wce_weights must be two positive numbers")
        object.__setattr__(self, "wce_weights", tuple(float(w) for w in self.wce_weights))


@dataclass
class LossReport:
    l_proto: float = 0.0
    l_intra: float = 0.0
    l_inter: float = 0.0
    l_wce: float = 0.0
    total: float = 0.0
    grad_embeddings: np.ndarray | None = None
    grad_bonafide: np.ndarray | None = None
    grad_spoof: np.ndarray | None = None
    grad_head: dict[str, np.ndarray] = field(default_factory=dict)

    def terms(self) -> dict[str, float]:
        return {
            "l_proto": self.l_proto,
            "l_intra": self.l_intra,
            "l_inter": self.l_inter,
            "l_wce": self.l_wce,
            "total": self.total,
        }


def renormalize(bank: PrototypeBank) -> PrototypeBank:
    nb = np.linalg.norm(bank.bonafide)
    ns = np.linalg.norm(bank.spoof, axis=1)
    if nb == 0.0 or np.any(ns == 0.0):
        raise RuntimeError("zero-norm prototype; the optimizer has diverged")
    return PrototypeBank(bank.bonafide / nb, bank.spoof / ns[:, None], bank.gamma)


# -- smoothed maximum cosine -------------------------------------------------


def smoothed_max_cos(prototypes, z, gamma: float = 10.0) -> float:
    C = np.atleast_2d(np.asarray(prototypes, dtype=np.float64))
    z = as_vec(z, "z")
    if np.linalg.norm(z) == 0.0:
        raise DomainError("z has zero norm")
    cos = np.clip(cosine_matrix(z[None], C)[0], -1.0, 1.0)
    val, _ = smoothed_max(cos, gamma)
    return float(val)


def _smax_cos_forward(Z: np.ndarray, C: np.ndarray, gamma: float):
    cos = cosine_matrix(Z, C)
    val, dval = smoothed_max(cos, gamma)
    return val, dval


# -- angular margin ------------------------------------------------------------


def margin_cos(c: np.ndarray, m: float) -> tuple[np.ndarray, np.ndarray]:
    """cos(acos(c) + m) and its derivative with respect to ``c``.

    For acos(c) + m > pi the curve is continued linearly (slope 1 in ``c``)
    from -1, so the margin logit stays strictly increasing in ``c``.
    """
    c = np.clip(np.asarray(c, dtype=np.float64), -1.0, 1.0)
    cm, sm = math.cos(m), math.sin(m)
    sin_t = np.sqrt(np.maximum(1.0 - c * c, 0.0))
    main = c > -cm
    phi = np.where(main, c * cm - sin_t * sm, c - 1.0 + cm)
    dphi = np.where(main, cm + c * sm / np.maximum(sin_t, 1e-12), 1.0)
    return phi, dphi


# -- individual terms ----------------------------------------------------------


def _proto_batch(Z, y, cb, cs, hyper: LossHyper):
    """Mean prototype margin loss over rows of Z, with gradients."""
    n = Z.shape[0]
    cos_b = cosine_matrix(Z, cb[None])[:, 0]
    cos_s, dcs = _smax_cos_forward(Z, cs, hyper.gamma)
    is_b = np.asarray(y) == BONAFIDE
    cos_t = np.where(is_b, cos_b, cos_s)
    cos_o = np.where(is_b, cos_s, cos_b)
    phi, dphi = margin_cos(cos_t, hyper.m)
    diff = hyper.s * (cos_o - phi)
    losses = log1pexp(diff)

    g = sigmoid(diff) * hyper.s / n
    g_t = -g * dphi
    g_o = g
    g_cb = np.where(is_b, g_t, g_o)
    g_cs = np.where(is_b, g_o, g_t)
    gZ1, gcb = cosine_grads(Z, cb[None], g_cb[:, None])
    gZ2, gcs = cosine_grads(Z, cs, g_cs[:, None] * dcs)
    return float(losses.mean()), gZ1 + gZ2, gcb[0], gcs


def proto_loss(z, y: int, bank: PrototypeBank, hyper: LossHyper = LossHyper()):
    """Margin loss for one embedding.

    Returns ``(loss, grad_z, grad_bonafide, grad_spoof)``.
    """
    z = as_vec(z, "z")
    if np.linalg.norm(z) == 0.0:
        raise DomainError("z has zero norm")
    loss, gz, gcb, gcs = _proto_batch(z[None], np.array([y]), bank.bonafide, bank.spoof, hyper)
    return loss, gz[0], gcb, gcs


def intra_reg(spoof) -> tuple[float, np.ndarray]:
    """Mean pairwise cosine between spoof prototypes (0 for a single one)."""
    cs = np.atleast_2d(np.asarray(spoof, dtype=np.float64))
    K = cs.shape[0]
    if K < 2:
        return 0.0, np.zeros_like(cs)
    coef = 2.0 / (K * (K - 1))
    C = cosine_matrix(cs, cs)
    upper = np.triu(np.ones((K, K)), 1)
    val = coef * float((C * upper).sum())
    ga, gb = cosine_grads(cs, cs, coef * upper)
    return val, ga + gb


def inter_reg(spoof, bonafide, hyper: LossHyper = LossHyper()) -> tuple[float, np.ndarray, np.ndarray]:
    """Hinged smoothed-max similarity between spoof prototypes and the bonafide one.

    Returns ``(value, grad_spoof, grad_bonafide)``; both gradients are zero
    when the hinge is inactive.
    """
    cs = np.atleast_2d(np.asarray(spoof, dtype=np.float64))
    cb = np.asarray(bonafide, dtype=np.float64)
    sims = cosine_matrix(cs, cb[None])[:, 0]
    sm, dsm = smoothed_max(sims, hyper.gamma)
    raw = hyper.delta + float(sm)
    if raw <= 0.0:
        return 0.0, np.zeros_like(cs), np.zeros_like(cb)
    gcs, gcb = cosine_grads(cs, cb[None], dsm[:, None])
    return raw, gcs, gcb[0]


def inter_reg_raw(spoof, bonafide, hyper: LossHyper = LossHyper()) -> float:
    """delta + smoothed max, before the hinge (used to detect the kink)."""
    cs = np.atleast_2d(np.asarray(spoof, dtype=np.float64))
    sims = cosine_matrix(cs, np.asarray(bonafide, dtype=np.float64)[None])[:, 0]
    return hyper.delta + float(smoothed_max(sims, hyper.gamma)[0])


def wce_loss(logits, labels, weights=(0.9, 0.1)) -> tuple[float, np.ndarray]:
    """Class-weighted cross entropy, averaged over the batch.

    ``logits`` is (n, 2) ordered (bonafide, spoof); ``weights`` likewise.
    Returns ``(loss, grad_logits)``.
    """
    L = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels)
    if not np.all(np.isfinite(L)):
        raise DomainError("logits must be finite")
    n = L.shape[0]
    col = np.where(labels == BONAFIDE, 0, 1)
    w = np.asarray(weights, dtype=np.float64)[col]
    lse = np.logaddexp(L[:, 0], L[:, 1])
    nll = lse - L[np.arange(n), col]
    p = np.exp(L - lse[:, None])
    onehot = np.zeros_like(L)
    onehot[np.arange(n), col] = 1.0
    grad = (w / n)[:, None] * (p - onehot)
    return float((w * nll).mean()), grad


# -- combined objective -----------------------------------------------------------

LOSS_MODES = {
    # mode: (wce, proto, intra, inter)
    "wce": (True, False, False, False),
    "lsr": (False, True, True, True),
    "wce+lsr": (True, True, True, True),
    "minus-intra": (False, True, False, True),
    "minus-inter": (False, True, True, False),
    "minus-both": (False, True, False, False),
}


def lsr_loss(
    Z,
    y,
    bank: PrototypeBank,
    hyper: LossHyper = LossHyper(),
    *,
    use_intra: bool = True,
    use_inter: bool = True,
) -> LossReport:
    """Mean margin loss over the batch plus the two prototype regularizers."""
    return objective(Z, y, bank, hyper, mode=(False, True, use_intra, use_inter))


def objective(
    Z,
    y,
    bank: PrototypeBank,
    hyper: LossHyper = LossHyper(),
    head: dict[str, np.ndarray] | None = None,
    mode: str | tuple[bool, bool, bool, bool] = "wce+lsr",
) -> LossReport:
    """Sum of the enabled terms for a batch of embeddings.

    ``head`` holds ``W`` (2, d) and ``b`` (2,) of the linear classifier
    feeding the weighted cross entropy.  Regularizers are added once per
    batch, the margin and cross-entropy terms are batch means.
    """
    use_wce, use_proto, use_intra, use_inter = LOSS_MODES[mode] if isinstance(mode, str) else mode
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    y = np.asarray(y)
    if Z.shape[0] == 0:
        raise DomainError("empty batch")
    norms = np.linalg.norm(Z, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DomainError(f"embedding at index {int(zero[0])} has zero norm")

    rep = LossReport(
        grad_embeddings=np.zeros_like(Z),
        grad_bonafide=np.zeros_like(bank.bonafide),
        grad_spoof=np.zeros_like(bank.spoof),
    )
    if use_proto:
        rep.l_proto, gz, gcb, gcs = _proto_batch(Z, y, bank.bonafide, bank.spoof, hyper)
        rep.grad_embeddings += gz
        rep.grad_bonafide += gcb
        rep.grad_spoof += gcs
    if use_intra:
        rep.l_intra, gcs = intra_reg(bank.spoof)
        rep.grad_spoof += gcs
    if use_inter:
        rep.l_inter, gcs, gcb = inter_reg(bank.spoof, bank.bonafide, hyper)
        rep.grad_spoof += gcs
        rep.grad_bonafide += gcb
    if use_wce:
        if head is None:
            raise DomainError("cross-entropy term needs a classifier head")
        logits = Z @ head["W"].T + head["b"]
        rep.l_wce, gl = wce_loss(logits, y, hyper.wce_weights)
        rep.grad_embeddings += gl @ head["W"]
        rep.grad_head = {"W": gl.T @ Z, "b": gl.sum(axis=0)}
    rep.total = rep.l_proto + rep.l_intra + rep.l_inter + rep.l_wce
    return rep


# -- persistence ------------------------------------------------------------------


def bank_to_dict(bank: PrototypeBank) -> dict:
    return {
        "dim": bank.dim,
        "K": bank.K,
        "gamma": bank.gamma,
        "bonafide": bank.bonafide.tolist(),
        "spoof": bank.spoof.reshape(-1).tolist(),
    }


def bank_from_dict(d: dict) -> PrototypeBank:
    dim, K = int(d["dim"]), int(d["K"])
    spoof = np.asarray(d["spoof"], dtype=np.float64)
    if spoof.size != dim * K:
        raise DomainError(f"expected {dim * K} spoof values, got {spoof.size}")
    bank = PrototypeBank(np.asarray(d["bonafide"], dtype=np.float64), spoof.reshape(K, dim), float(d["gamma"]))
    if bank.dim != dim:
        raise DomainError("bonafide prototype has the wrong dimension")
    bank.check_unit()
    return bank


def save_bank(bank: PrototypeBank, path) -> None:
    Path(path).write_text(json.dumps(bank_to_dict(bank), indent=1))


def load_bank(path) -> PrototypeBank:
    return bank_from_dict(json.loads(Path(path).read_text()))
