"""Vector primitives and named, seeded random streams."""
from __future__ import annotations

import hashlib
from typing import Any, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when an argument lies outside an operation's domain."""


class ConfigurationError(ValueError):
    """Raised for invalid or inconsistent configuration."""


def as_vec(x: Sequence[float] | np.ndarray, name: str = "x") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DomainError(f"{name} must be a non-empty 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DomainError(f"{name} has non-finite entries")
    return v


def cosine_sim(x, y) -> float:
    x = as_vec(x, "x")
    y = as_vec(y, "y")
    if x.shape != y.shape:
        raise DomainError(f"dimension mismatch: {x.size} vs {y.size}")
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0:
        raise DomainError("x has zero norm")
    if ny == 0.0:
        raise DomainError("y has zero norm")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosines between ``a`` (n, d) and ``b`` (k, d), unclamped."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise DomainError("zero-norm row in cosine_matrix")
    return (a @ b.T) / np.outer(na, nb)


def cosine_grads(a: np.ndarray, b: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backprop ``g`` = dL/dcos (n, k) through ``cosine_matrix(a, b)``.

    Uses d cos(x, y)/dx = y/(|x||y|) - cos * x/|x|^2.
    """
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    cos = (a @ b.T) / np.outer(na, nb)
    ga = (g / np.outer(na, nb)) @ b - (g * cos).sum(axis=1)[:, None] * a / (na**2)[:, None]
    gb = (g / np.outer(na, nb)).T @ a - (g * cos).sum(axis=0)[:, None] * b / (nb**2)[:, None]
    return ga, gb


def softmax_weights(scores, gamma: float) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise DomainError("softmax_weights needs at least one score")
    if not np.all(np.isfinite(s)):
        raise DomainError("scores must be finite")
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    e = np.exp(gamma * (s - s.max(axis=-1, keepdims=True)))
    return e / e.sum(axis=-1, keepdims=True)


def smoothed_max(scores: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Softmax-weighted mean along the last axis.

    Returns ``(value, dvalue/dscores)``; the derivative is
    w_i * (1 + gamma * (s_i - value)).
    """
    w = softmax_weights(scores, gamma)
    val = (w * scores).sum(axis=-1)
    grad = w * (1.0 + gamma * (scores - val[..., None]))
    return val, grad


def log1pexp(x):
    """Numerically stable log(1 + e^x)."""
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")


class RngStream:
    """A reproducible random stream keyed by ``(seed, label)``.

    Streams with different labels come from independent ``SeedSequence``
    entropy, so turning one consumer off does not shift another's draws.
    """

    def __init__(self, seed: int, label: str):
        if not 0 <= int(seed) < 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.label = label
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32, *divmod(_label_key(label), 2**32)])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, label={self.label!r})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def get_state(self) -> dict[str, Any]:
        return self._gen.bit_generator.state

    def set_state(self, state: dict[str, Any]) -> None:
        self._gen.bit_generator.state = state

    def gaussian(self, n: int | tuple[int, ...]) -> np.ndarray:
        _check_count(n)
        return self._gen.standard_normal(n)

    def uniform(self, lo: float, hi: float, n: int | tuple[int, ...]) -> np.ndarray:
        _check_count(n)
        if not lo < hi:
            raise DomainError(f"need lo < hi, got [{lo}, {hi}]")
        return self._gen.uniform(lo, hi, n)

    def beta(self, a_shape: float, b_shape: float, n: int) -> np.ndarray:
        # ratio of independent Gamma draws is exactly Beta(a, b)
        _check_count(n)
        if not (a_shape > 0 and b_shape > 0):
            raise DomainError("beta shape parameters must be positive")
        x = self._gen.standard_gamma(a_shape, n)
        y = self._gen.standard_gamma(b_shape, n)
        out = x / (x + y)
        bad = ~np.isfinite(out)
        if np.any(bad):  # both gammas underflowed to 0
            out[bad] = 0.5
        return out

    def permutation(self, n: int) -> np.ndarray:
        _check_count(n)
        return self._gen.permutation(n)

    def integers(self, lo: int, hi: int, n: int | None = None):
        return self._gen.integers(lo, hi, n)


def _check_count(n) -> None:
    dims = n if isinstance(n, tuple) else (n,)
    if any(int(k) < 1 for k in dims):
        raise DomainError(f"sample count must be >= 1, got {n}")


# free-function forms of the stream samplers
def sample_gaussian(rng: RngStream, n: int) -> np.ndarray:
    return rng.gaussian(n)


def sample_uniform(rng: RngStream, lo: float, hi: float, n: int) -> np.ndarray:
    return rng.uniform(lo, hi, n)


def sample_beta(rng: RngStream, a_shape: float, b_shape: float, n: int) -> np.ndarray:
    return rng.beta(a_shape, b_shape, n)


def sample_permutation(rng: RngStream, n: int) -> np.ndarray:
    return rng.permutation(n)
