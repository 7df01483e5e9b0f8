"""Small tanh MLP encoder, two-group Adam, and the training loop.

One training step encodes a batch, optionally appends augmented spoof
embeddings, evaluates the configured objective, backpropagates through the
augmentation into the encoder, updates encoder/head and prototypes with
separate learning rates, and projects the prototypes back onto the sphere.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .augment import KINDS, augment_batch
from .core_math import ConfigurationError, RngStream
from .losses import (
    BONAFIDE,
    LOSS_MODES,
    LossHyper,
    LossReport,
    PrototypeBank,
    bank_from_dict,
    bank_to_dict,
    objective,
    renormalize,
)
from .metrics import compute_eer_arrays, proto_diagnostics, score_embeddings

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, msg: str, report: LossReport | None = None):
        super().__init__(msg)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    loss_mode: str = "wce+lsr"
    augment: str | None = None
    K: int = 8
    embed_dim: int = 4
    hidden: tuple[int, ...] = (32,)
    lr_encoder: float = 1e-3
    lr_proto: float = 1e-2
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    hyper: LossHyper = field(default_factory=LossHyper)
    aug_per_row: bool = False
    aug_warmup_epochs: int = 0
    score_mode: str | None = None  # None picks proto-margin when prototypes are trained

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.augment is not None:
            object.__setattr__(self, "augment", str(self.augment).upper())

    def validate(self) -> None:
        if self.loss_mode not in LOSS_MODES:
            raise ConfigurationError(f"unknown loss_mode {self.loss_mode!r}; choose from {sorted(LOSS_MODES)}")
        if self.augment is not None and self.augment not in (*KINDS, "ALL"):
            raise ConfigurationError(f"unknown augment {self.augment!r}")
        if self.augment in ("LI", "LE", "ALL") and not LOSS_MODES[self.loss_mode][1]:
            raise ConfigurationError(f"{self.augment} augmentation needs the prototype loss enabled")
        if self.K < 1 or self.embed_dim < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("K, embed_dim, batch_size must be >= 1 and epochs >= 0")
        if not (self.lr_encoder >= 0 and self.lr_proto >= 0):
            raise ConfigurationError("learning rates must be non-negative")
        if self.score_mode not in (None, "proto-margin", "head-logit"):
            raise ConfigurationError(f"unknown score_mode {self.score_mode!r}")
        if self.score_mode == "head-logit" and not LOSS_MODES[self.loss_mode][0]:
            raise ConfigurationError("head-logit scoring needs the cross-entropy head to be trained")

    @property
    def effective_score_mode(self) -> str:
        if self.score_mode:
            return self.score_mode
        return "proto-margin" if LOSS_MODES[self.loss_mode][1] else "head-logit"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["hyper"]["wce_weights"] = list(self.hyper.wce_weights)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


class MLP:
    """tanh hidden layers followed by a linear embedding layer."""

    def __init__(self, sizes: list[int], weights: list[np.ndarray], biases: list[np.ndarray]):
        self.sizes = list(sizes)
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(cls, sizes, rng: RngStream) -> "MLP":
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            ws.append(rng.gaussian((fan_out, fan_in)) / np.sqrt(fan_in))
            bs.append(np.zeros(fan_out))
        return cls(sizes, ws, bs)

    def forward(self, X: np.ndarray):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.sizes[0]:
            raise ConfigurationError(f"expected inputs of width {self.sizes[0]}, got shape {X.shape}")
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W.T + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts: list[np.ndarray], grad: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        gW, gb = [None] * len(self.weights), [None] * len(self.weights)
        g = grad
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            gW[i] = g.T @ acts[i]
            gb[i] = g.sum(axis=0)
            g = g @ self.weights[i]
        return gW, gb

    def copy(self) -> "MLP":
        return MLP(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class Model:
    encoder: MLP
    head: dict[str, np.ndarray]
    bank: PrototypeBank

    def embed(self, X) -> np.ndarray:
        Z, _ = self.encoder.forward(X)
        if not np.all(np.isfinite(Z)):
            raise DivergenceError("non-finite embedding")
        return Z

    def params(self) -> dict[str, np.ndarray]:
        p = {}
        for i, (W, b) in enumerate(zip(self.encoder.weights, self.encoder.biases)):
            p[f"enc.W{i}"], p[f"enc.b{i}"] = W, b
        p["head.W"], p["head.b"] = self.head["W"], self.head["b"]
        p["proto.bonafide"], p["proto.spoof"] = self.bank.bonafide, self.bank.spoof
        return p

    def copy(self) -> "Model":
        return Model(self.encoder.copy(), {k: v.copy() for k, v in self.head.items()}, self.bank.copy())


def init_model(config: TrainConfig, input_dim: int, warmup: np.ndarray | None = None) -> Model:
    """Random encoder/head/prototypes from the "init" stream.

    ``warmup`` is a batch of bonafide inputs; the bonafide prototype starts at
    the normalized mean of their embeddings.
    """
    rng = RngStream(config.seed, "init")
    enc = MLP.init([input_dim, *config.hidden, config.embed_dim], rng)
    head = {"W": 0.1 * rng.gaussian((2, config.embed_dim)), "b": np.zeros(2)}
    bona_init = None
    if warmup is not None and len(warmup):
        mean = enc.forward(warmup)[0].mean(axis=0)
        if np.linalg.norm(mean) > 0:
            bona_init = mean
    bank = PrototypeBank.random(config.embed_dim, config.K, rng, config.hyper.gamma, bonafide_init=bona_init)
    return Model(enc, head, bank)


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lrs: dict[str, float]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lrs[name] * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
        }

    @classmethod
    def from_state(cls, d: dict) -> "Adam":
        opt = cls()
        opt.t = int(d["t"])
        opt.m = {k: np.asarray(v, dtype=np.float64) for k, v in d["m"].items()}
        opt.v = {k: np.asarray(v, dtype=np.float64) for k, v in d["v"].items()}
        return opt


def _lr_groups(params: dict, config: TrainConfig) -> dict[str, float]:
    return {k: (config.lr_proto if k.startswith("proto.") else config.lr_encoder) for k in params}


def loss_and_grads(
    model: Model,
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    aug_rng: RngStream | None = None,
    augment: bool = True,
) -> tuple[LossReport, dict[str, np.ndarray]]:
    """Objective on one batch and its gradient for every entry of ``model.params()``."""
    Z, acts = model.encoder.forward(X)
    if not all(np.all(np.isfinite(a)) for a in acts):
        raise DivergenceError("non-finite activation")
    ab = None
    Zp, yp = Z, y
    if augment and config.augment is not None:
        ab = augment_batch(Z, y, config.augment, model.bank, aug_rng, per_row=config.aug_per_row)
        Zp, yp = ab.embeddings, ab.labels
    rep = objective(Zp, yp, model.bank, config.hyper, model.head, config.loss_mode)
    if not np.isfinite(rep.total):
        raise DivergenceError(f"non-finite loss: {rep.terms()}", rep)

    gZ = ab.backward(rep.grad_embeddings) if ab is not None else rep.grad_embeddings
    gW, gb = model.encoder.backward(acts, gZ)
    grads = {}
    for i in range(len(gW)):
        grads[f"enc.W{i}"], grads[f"enc.b{i}"] = gW[i], gb[i]
    grads["head.W"] = rep.grad_head.get("W", np.zeros_like(model.head["W"]))
    grads["head.b"] = rep.grad_head.get("b", np.zeros_like(model.head["b"]))
    grads["proto.bonafide"], grads["proto.spoof"] = rep.grad_bonafide, rep.grad_spoof
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise DivergenceError(f"non-finite gradient for {bad}", rep)
    return rep, grads


def train_step(
    model: Model,
    opt: Adam,
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    aug_rng: RngStream | None = None,
    augment: bool = True,
) -> LossReport:
    """One optimizer step; updates ``model`` and ``opt`` in place."""
    try:
        rep, grads = loss_and_grads(model, X, y, config, aug_rng, augment)
    except DivergenceError as exc:
        raise DivergenceError(f"{exc} at step {opt.t}", exc.report) from None
    params = model.params()
    opt.step(params, grads, _lr_groups(params, config))
    model.bank = renormalize(model.bank)
    return rep


class Trainer:
    """Owns a model, its optimizer and the data/augmentation streams."""

    def __init__(self, config: TrainConfig, model: Model, opt: Adam | None = None):
        config.validate()
        self.config = config
        self.model = model
        self.opt = opt or Adam()
        self.data_rng = RngStream(config.seed, "data")
        self.aug_rng = RngStream(config.seed, "aug")
        self.epoch = 0
        self.trace: list[dict[str, Any]] = []

    @classmethod
    def fresh(cls, config: TrainConfig, train_data) -> "Trainer":
        bona = train_data.features[train_data.labels == BONAFIDE][: config.batch_size]
        return cls(config, init_model(config, train_data.dim, bona))

    def scores(self, data) -> np.ndarray:
        Z = self.model.embed(data.features)
        return score_embeddings(Z, self.model.bank, self.model.head, self.config.effective_score_mode)

    def eer(self, data) -> float:
        return compute_eer_arrays(self.scores(data), data.labels)[0]

    def run_epoch(self, train_data, eval_data=None) -> dict[str, Any]:
        cfg = self.config
        n = len(train_data)
        order = self.data_rng.permutation(n)
        do_aug = self.epoch >= cfg.aug_warmup_epochs
        sums = dict.fromkeys(("l_proto", "l_intra", "l_inter", "l_wce", "total"), 0.0)
        steps = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            rep = train_step(self.model, self.opt, train_data.features[idx], train_data.labels[idx], cfg,
                             self.aug_rng, augment=do_aug)
            for k, v in rep.terms().items():
                sums[k] += v
            steps += 1
        self.epoch += 1
        row: dict[str, Any] = {"epoch": self.epoch}
        row.update({k: v / max(steps, 1) for k, v in sums.items()})
        Z = self.model.embed(train_data.features)
        diag = proto_diagnostics(self.model.bank, Z, train_data.labels)
        row["mean_proto_sim"] = diag.mean_pairwise_sim
        row["max_inter_sim"] = diag.max_inter_sim
        row["train_eer"] = compute_eer_arrays(
            score_embeddings(Z, self.model.bank, self.model.head, cfg.effective_score_mode), train_data.labels)[0]
        row["val_eer"] = self.eer(eval_data) if eval_data is not None else None
        self.trace.append(row)
        log.debug("epoch %d %s", self.epoch, row)
        return row

    def train(self, train_data, eval_data=None, until: int | None = None, on_epoch=None) -> list[dict[str, Any]]:
        until = self.config.epochs if until is None else until
        while self.epoch < until:
            self.run_epoch(train_data, eval_data)
            if on_epoch is not None:
                on_epoch(self)
        return self.trace

    # -- checkpoints -------------------------------------------------------------

    def state_dict(self) -> dict:
        enc = self.model.encoder
        return {
            "config": self.config.to_dict(),
            "config_hash": self.config.digest(),
            "epoch": self.epoch,
            "encoder": {
                "sizes": enc.sizes,
                "W": [w.tolist() for w in enc.weights],
                "b": [b.tolist() for b in enc.biases],
            },
            "head": {k: v.tolist() for k, v in self.model.head.items()},
            "bank": bank_to_dict(self.model.bank),
            "opt": self.opt.state_dict(),
            "rng": {"data": self.data_rng.get_state(), "aug": self.aug_rng.get_state()},
            "trace": self.trace,
        }

    @classmethod
    def from_state(cls, d: dict) -> "Trainer":
        config = config_from_dict(d["config"])
        if config.digest() != d["config_hash"]:
            raise ConfigurationError("checkpoint config hash mismatch")
        e = d["encoder"]
        enc = MLP(e["sizes"], [np.asarray(w, dtype=np.float64) for w in e["W"]],
                  [np.asarray(b, dtype=np.float64) for b in e["b"]])
        head = {k: np.asarray(v, dtype=np.float64) for k, v in d["head"].items()}
        tr = cls(config, Model(enc, head, bank_from_dict(d["bank"])), Adam.from_state(d["opt"]))
        tr.data_rng.set_state(d["rng"]["data"])
        tr.aug_rng.set_state(d["rng"]["aug"])
        tr.epoch = int(d["epoch"])
        tr.trace = list(d["trace"])
        return tr

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.state_dict()))
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "Trainer":
        return cls.from_state(json.loads(Path(path).read_text()))


def config_from_dict(d: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
    d = dict(d)
    if "hyper" in d and isinstance(d["hyper"], dict):
        h = dict(d["hyper"])
        hk = {f.name for f in fields(LossHyper)}
        if set(h) - hk:
            raise ConfigurationError(f"unknown loss hyperparameter keys: {sorted(set(h) - hk)}")
        if "wce_weights" in h:
            h["wce_weights"] = tuple(h["wce_weights"])
        d["hyper"] = LossHyper(**h)
    if "hidden" in d:
        d["hidden"] = tuple(d["hidden"])
    return TrainConfig(**d)


def train(model: Model, train_data, config: TrainConfig, eval_data=None) -> tuple[Model, list[dict]]:
    """Train ``model`` for ``config.epochs`` epochs; returns it with the per-epoch trace."""
    tr = Trainer(config, model)
    tr.train(train_data, eval_data)
    return tr.model, tr.trace


__all__ = [
    "TrainConfig",
    "MLP",
    "Model",
    "Adam",
    "Trainer",
    "DivergenceError",
    "init_model",
    "loss_and_grads",
    "train_step",
    "train",
    "config_from_dict",
]
