"""Dense double-precision matrices, seeded random streams and the small set
of numeric kernels the rest of the package is built from.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 with an
explicit 2-D shape; helpers here check shapes eagerly so mismatches fail at
the call site instead of broadcasting silently.
"""

from __future__ import annotations

import numpy as np

UNIFORM_CLAMP = 1e-12


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    m = np.asarray(data, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise DimensionError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise DimensionError(f"expected {cols} cols, got {m.shape[1]}")
    return m


def check_finite(m: np.ndarray, what: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise FloatingPointError(f"non-finite entries in {what}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return check_finite(a @ b, "matmul result")


def row_softmax(m: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    m = np.asarray(m, dtype=np.float64)
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_vjp(s: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of a row softmax given its output ``s``."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != s.shape:
        raise DimensionError(f"upstream {upstream.shape} vs softmax output {s.shape}")
    return s * (upstream - np.sum(upstream * s, axis=-1, keepdims=True))


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def normalize_vjp(x: np.ndarray, upstream: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Gradient through the parameter-free standardisation ``(x - mean) / std`` of each row."""
    mu = x.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + eps)
    xhat = (x - mu) * inv
    g = upstream
    return inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation; smooth everywhere, which the finite-difference checks need
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x * x * x)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du


def l2_normalize_rows(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norms, eps)


class SeededRng:
    """Reproducible random stream (PCG64) that can fork independent children.

    The same seed yields the same draw sequence on every platform numpy
    supports. Instances are single-owner; do not share one across threads.
    """

    def __init__(self, seed: int | np.random.SeedSequence):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
            self.seed = int(seed.entropy) if isinstance(seed.entropy, int) else 0
        else:
            self.seed = int(seed)
            self._seq = np.random.SeedSequence(self.seed & (2**64 - 1))
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    def child(self, *key: int) -> "SeededRng":
        """Independent stream keyed by ``key``; does not advance this stream."""
        seq = np.random.SeedSequence(self._seq.entropy, spawn_key=tuple(self._seq.spawn_key) + tuple(key))
        return SeededRng(seq)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def gumbel(self, shape) -> np.ndarray:
        u = np.clip(self._gen.random(shape), UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
        return -np.log(-np.log(u))


def sample_gumbel(rng: SeededRng, n: int) -> np.ndarray:
    """``n`` i.i.d. standard Gumbel draws ``-log(-log(u))``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.gumbel(n)
