"""Two-layer MLP scoring head shared by the Map-SM and the Selective Modules."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor_math import SeededRng, gelu, gelu_grad, layer_norm, normalize_vjp

KEEP, DROP = 0, 1


@dataclass
class HeadCache:
    x: np.ndarray       # standardised input rows
    raw: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray


@dataclass
class MlpHead:
    """E -> floor(E/2) -> 2 (keep, drop) logits with a GELU in between.

    Input rows are standardised first (a layer norm without parameters), so
    the head sees the same scale at every depth of the residual stream.
    """

    EPS = 1e-6

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    PARAMS = ("w1", "b1", "w2", "b2")

    @classmethod
    def init(cls, embed_dim: int, rng: SeededRng, scale: float = 1.0) -> "MlpHead":
        hidden = embed_dim // 2
        return cls(
            w1=rng.normal(size=(embed_dim, hidden)) * scale / math.sqrt(embed_dim),
            b1=np.zeros(hidden),
            w2=rng.normal(size=(hidden, 2)) * 0.1 * scale / math.sqrt(hidden),
            b2=np.zeros(2),
        )

    @property
    def embed_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, HeadCache]:
        if x.shape[-1] != self.embed_dim:
            raise ValueError(f"head expects width {self.embed_dim}, got {x.shape[-1]}")
        xn = layer_norm(x, 1.0, 0.0, self.EPS)
        pre = xn @ self.w1 + self.b1
        hidden = gelu(pre)
        return hidden @ self.w2 + self.b2, HeadCache(xn, x, pre, hidden)

    def backward(self, cache: HeadCache, d_logits: np.ndarray) -> dict[str, np.ndarray]:
        d_hidden = d_logits @ self.w2.T
        d_pre = d_hidden * gelu_grad(cache.pre)
        return {
            "w1": cache.x.T @ d_pre,
            "b1": d_pre.sum(axis=0),
            "w2": cache.hidden.T @ d_logits,
            "b2": d_logits.sum(axis=0),
        }

    def input_grad(self, cache: HeadCache, d_logits: np.ndarray) -> np.ndarray:
        d_pre = (d_logits @ self.w2.T) * gelu_grad(cache.pre)
        return normalize_vjp(cache.raw, d_pre @ self.w1.T, self.EPS)

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.PARAMS}

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in self.PARAMS])

    def with_flat(self, theta: np.ndarray) -> "MlpHead":
        out, off = {}, 0
        for k in self.PARAMS:
            ref = getattr(self, k)
            out[k] = np.asarray(theta[off : off + ref.size], dtype=np.float64).reshape(ref.shape)
            off += ref.size
        return MlpHead(**out)

    def copy(self) -> "MlpHead":
        return MlpHead(**{k: getattr(self, k).copy() for k in self.PARAMS})

    def flops(self, n: int) -> float:
        e, h = self.embed_dim, self.hidden_dim
        return float(2 * n * (e * h + h * 2))


def flatten_grads(grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[k].ravel() for k in MlpHead.PARAMS])
