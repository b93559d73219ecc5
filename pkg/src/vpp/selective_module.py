"""Selective Module: per-patch hard keep/drop decisions at a fixed depth."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .gumbel import GumbelConfig, hard_from_logits, logits_grad
from .heads import KEEP, HeadCache, MlpHead
from .vit_sim import PatchFeatures, PruneMask

log = logging.getLogger(__name__)


@dataclass
class SmHead:
    layer: int
    kappa: float
    mlp: MlpHead


@dataclass
class SmResult:
    mask: PruneMask
    soft_keep: np.ndarray   # per active patch, gradient path
    hard_keep: np.ndarray   # per active patch, forward value (after repair)
    soft: np.ndarray
    noise: np.ndarray
    active_ids: np.ndarray
    head_cache: HeadCache
    degenerate: bool = False


def sm_forward(x: PatchFeatures, head: SmHead, cfg: GumbelConfig, noise: np.ndarray | None = None) -> SmResult:
    """Keep/drop every active patch of ``x``; the result never re-activates a pruned patch.

    If every patch would be dropped, the patch with the highest soft keep
    score survives and a warning is logged.
    """
    if x.n_active == 0:
        raise ValueError("selective module needs at least one active patch")
    logits, cache = head.mlp.forward(x.tokens)
    hard, soft, g = hard_from_logits(logits, cfg, noise)
    hard_keep = hard[:, KEEP].astype(bool)
    degenerate = False
    if not hard_keep.any():
        degenerate = True
        hard_keep[int(np.argmax(soft[:, KEEP]))] = True
        log.warning("SM at layer %d dropped every patch of frame %d; keeping the best one", head.layer, x.frame)
    keep = np.zeros(x.grid[0] * x.grid[1], dtype=bool)
    keep[x.active_ids[hard_keep]] = True
    return SmResult(PruneMask(head.layer, x.frame, keep), soft[:, KEEP], hard_keep, soft, g,
                    x.active_ids.copy(), cache, degenerate)


def sm_backward(head: SmHead, res: SmResult, d_keep: np.ndarray) -> dict[str, np.ndarray]:
    """Straight-through: an upstream gradient on the hard keep flows through the soft keep."""
    upstream = np.zeros_like(res.soft)
    upstream[:, KEEP] = d_keep
    return head.mlp.backward(res.head_cache, logits_grad(res.soft, upstream))


def sm_flops(n_active: int, head: SmHead) -> float:
    return head.mlp.flops(n_active)
