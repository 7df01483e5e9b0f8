"""Central finite-difference checks for every loss term."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .losses import LossHyper, PrototypeBank, intra_reg, inter_reg, inter_reg_raw, objective, wce_loss

TERMS = ("l_proto", "l_intra", "l_inter", "l_wce", "l_lsr")


def numeric_grad(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x``, which is perturbed in place."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def numeric_grad_multi(f, x: np.ndarray, n_out: int, h: float = 1e-4) -> np.ndarray:
    """Like ``numeric_grad`` for a vector-valued ``f``; returns (n_out, *x.shape)."""
    g = np.zeros((n_out, *x.shape))
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = np.asarray(f())
        x[idx] = old - h
        fm = np.asarray(f())
        x[idx] = old
        g[(slice(None), *idx)] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-12:
        return float(np.linalg.norm(a - n))
    return float(np.linalg.norm(a - n) / scale)


@dataclass
class GradCase:
    d: int
    K: int
    Z: np.ndarray
    y: np.ndarray
    bonafide: np.ndarray
    spoof: np.ndarray
    head: dict
    errors: dict


def random_case(rng: np.random.Generator, d: int, K: int, batch: int = 6):
    Z = rng.standard_normal((batch, d))
    y = rng.integers(0, 2, batch)
    cb = rng.standard_normal(d)
    cb /= np.linalg.norm(cb)
    cs = rng.standard_normal((K, d))
    cs /= np.linalg.norm(cs, axis=1)[:, None]
    head = {"W": rng.standard_normal((2, d)), "b": rng.standard_normal(2)}
    return Z, y, cb, cs, head


def check_case(Z, y, cb, cs, head, hyper: LossHyper, h: float = 1e-4) -> dict[str, float]:
    """Max relative error per term over all its inputs."""

    def values():
        r = objective(Z, y, PrototypeBank(cb, cs, hyper.gamma), hyper, head, "wce+lsr")
        return [r.l_proto, r.l_intra, r.l_inter, r.l_wce, r.l_proto + r.l_intra + r.l_inter]

    num = {name: numeric_grad_multi(values, x, 5, h) for name, x in (("Z", Z), ("cb", cb), ("cs", cs))}

    bank = PrototypeBank(cb, cs, hyper.gamma)
    rp = objective(Z, y, bank, hyper, mode=(False, True, False, False))
    _, g_intra = intra_reg(cs)
    _, gi_s, gi_b = inter_reg(cs, cb, hyper)
    logits = Z @ head["W"].T + head["b"]
    _, gl = wce_loss(logits, y, hyper.wce_weights)
    lsr = objective(Z, y, bank, hyper, mode="lsr")
    zeros_z, zeros_b, zeros_s = np.zeros_like(Z), np.zeros_like(cb), np.zeros_like(cs)
    analytic = [
        (rp.grad_embeddings, rp.grad_bonafide, rp.grad_spoof),
        (zeros_z, zeros_b, g_intra),
        (zeros_z, gi_b, gi_s),
        (gl @ head["W"], zeros_b, zeros_s),
        (lsr.grad_embeddings, lsr.grad_bonafide, lsr.grad_spoof),
    ]
    out = {}
    for t, term in enumerate(TERMS):
        gz, gb, gs = analytic[t]
        flat_a = np.concatenate([gz.ravel(), gb.ravel(), gs.ravel()])
        flat_n = np.concatenate([num["Z"][t].ravel(), num["cb"][t].ravel(), num["cs"][t].ravel()])
        out[term] = rel_error(flat_a, flat_n)
    return out


def gradient_suite(n_configs: int = 100, seed: int = 0, hyper: LossHyper = LossHyper(), h: float = 1e-4,
                   clamp_margin: float = 1e-3) -> dict:
    """Random (d, K) configurations cycling d in {4, 16}, K in {1, 3, 8}.

    Configurations within ``clamp_margin`` of the inter-class hinge are
    redrawn, since the finite difference straddles the kink there.
    """
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(TERMS, 0.0)
    skipped = 0
    t0 = time.perf_counter()
    done = 0
    while done < n_configs:
        d = (4, 16)[done % 2]
        K = (1, 3, 8)[done % 3]
        Z, y, cb, cs, head = random_case(rng, d, K)
        if abs(inter_reg_raw(cs, cb, hyper)) < clamp_margin:
            skipped += 1
            continue
        errs = check_case(Z, y, cb, cs, head, hyper, h)
        for k, v in errs.items():
            worst[k] = max(worst[k], v)
        done += 1
    return {"n_configs": done, "skipped": skipped, "max_rel_error": worst, "seconds": time.perf_counter() - t0}
