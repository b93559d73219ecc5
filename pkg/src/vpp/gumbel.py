"""Soft and hard Gumbel-Softmax with the temperature acting on the noise.

For class scores ``pi`` the soft relaxation is

    soft_i = exp((log(pi_i) * tau + g_i) / tau) / sum_j exp((log(pi_j) * tau + g_j) / tau)

which simplifies to ``softmax(log(pi) + g / tau)``: the temperature only
attenuates the noise, so with ``g = 0`` the output is ``pi`` normalised per
row whatever ``tau`` is. Raw network logits ``z`` are fed in as ``pi = exp(z)``
(see :func:`soft_from_logits`), giving ``softmax(z + g / tau)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_math import SeededRng, row_softmax, softmax_vjp


@dataclass
class GumbelConfig:
    tau: float = 10.0
    noise_enabled: bool = True
    rng: SeededRng = field(default_factory=lambda: SeededRng(0))

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    def draw(self, shape) -> np.ndarray:
        """Noise for one forward call; zeros when noise is disabled."""
        if not self.noise_enabled:
            return np.zeros(shape)
        return self.rng.gumbel(shape)


def _check_positive(pi: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if np.any(~(pi > 0)):
        raise ValueError("Gumbel-Softmax scores must be strictly positive")
    return pi


def _noise_for(pi: np.ndarray, cfg: GumbelConfig, noise) -> np.ndarray:
    if noise is None:
        return cfg.draw(pi.shape)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != pi.shape:
        raise ValueError(f"noise shape {noise.shape} does not match scores {pi.shape}")
    return noise


def gumbel_soft(pi: np.ndarray, cfg: GumbelConfig, noise: np.ndarray | None = None) -> np.ndarray:
    pi = _check_positive(pi)
    g = _noise_for(pi, cfg, noise)
    return row_softmax((np.log(pi) * cfg.tau + g) / cfg.tau)


def one_hot_argmax(soft: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest column
    hard = np.zeros_like(soft)
    idx = np.argmax(soft, axis=-1)
    np.put_along_axis(hard, idx[..., None], 1.0, axis=-1)
    return hard


def gumbel_hard(pi: np.ndarray, cfg: GumbelConfig, noise: np.ndarray | None = None):
    """Return ``(hard, soft)``; ``hard`` is the forward value, ``soft`` carries the gradient."""
    soft = gumbel_soft(pi, cfg, noise)
    return one_hot_argmax(soft), soft


def gumbel_soft_grad(pi: np.ndarray, cfg: GumbelConfig, frozen_noise: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """dL/dpi for ``L = sum(upstream * gumbel_soft(pi))`` under fixed noise."""
    pi = _check_positive(pi)
    soft = gumbel_soft(pi, cfg, frozen_noise)
    return softmax_vjp(soft, upstream) / pi


def soft_from_logits(logits: np.ndarray, cfg: GumbelConfig, noise: np.ndarray | None = None):
    """Soft relaxation for unconstrained logits; returns ``(soft, noise)``.

    Identical to ``gumbel_soft(exp(logits))`` but never forms ``exp`` of a
    large logit.
    """
    logits = np.asarray(logits, dtype=np.float64)
    g = _noise_for(logits, cfg, noise)
    return row_softmax(logits + g / cfg.tau), g


def hard_from_logits(logits: np.ndarray, cfg: GumbelConfig, noise: np.ndarray | None = None):
    """Returns ``(hard, soft, noise)`` for unconstrained logits."""
    soft, g = soft_from_logits(logits, cfg, noise)
    return one_hot_argmax(soft), soft, g


def logits_grad(soft: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Backward of :func:`soft_from_logits` (the noise shift has unit Jacobian)."""
    return softmax_vjp(soft, upstream)
