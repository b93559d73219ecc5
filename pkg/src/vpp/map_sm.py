"""Mapping-Selective Module.

Aligns the retained deep features of frame t-1 onto frame t through a
one-hot association computed from early-layer similarities, scores every
current patch with a small MLP, and keeps the top-k patches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gumbel import GumbelConfig, hard_from_logits, logits_grad, soft_from_logits
from .heads import KEEP, HeadCache, MlpHead
from .tensor_math import DimensionError, l2_normalize_rows
from .vit_sim import PatchFeatures, PruneMask

MapSmHead = MlpHead


@dataclass
class TemporalState:
    x1_prev: PatchFeatures
    x6_prev: PatchFeatures
    m6_prev: PruneMask

    def __post_init__(self):
        if not np.array_equal(self.x6_prev.active_ids, self.m6_prev.ids):
            raise ValueError("x6_prev must hold exactly the patches kept by m6_prev")
        if not (self.x1_prev.frame == self.x6_prev.frame == self.m6_prev.frame):
            raise ValueError("temporal state mixes frames")


@dataclass
class DistancePenalty:
    lambda_d: float = 0.1

    def __post_init__(self):
        if self.lambda_d < 0:
            raise ValueError("lambda_d must be nonnegative")

    def matrix(self, rows: PatchFeatures | np.ndarray, cols: PatchFeatures | np.ndarray) -> np.ndarray:
        rc = rows.coords if isinstance(rows, PatchFeatures) else rows
        cc = cols.coords if isinstance(cols, PatchFeatures) else cols
        d = np.sqrt(((rc[:, None, :] - cc[None, :, :]) ** 2).sum(-1))
        return -self.lambda_d * d


@dataclass
class AssociationMatrix:
    A: np.ndarray
    col_ids: np.ndarray  # original patch index of each retained previous patch
    soft: np.ndarray | None = None

    def __post_init__(self):
        if self.A.shape[1] != len(self.col_ids):
            raise DimensionError("association columns must match retained ids")

    @property
    def targets(self) -> np.ndarray:
        """Column chosen by each row."""
        return np.argmax(self.A, axis=1)


@dataclass(frozen=True)
class SparsitySchedule:
    kappa_init: float = 0.5
    topk_fraction: float = 0.7
    rho: float = 0.665
    stages: int = 3

    def __post_init__(self):
        if not 0 < self.kappa_init < 1:
            raise ValueError("kappa_init must be in (0, 1)")
        if not 0 < self.topk_fraction <= 1:
            raise ValueError("topk_fraction must be in (0, 1]")
        if not 0 < self.rho < 1:
            raise ValueError("rho must be in (0, 1)")

    @property
    def sm_targets(self) -> list[float]:
        """Geometric keep-ratio targets rho, rho^2, ... (one per SM stage)."""
        return [self.rho ** (k + 1) for k in range(self.stages)]


def _retained(x_prev: PatchFeatures, m6_prev: PruneMask) -> PatchFeatures:
    keep_rows = m6_prev.keep[x_prev.active_ids]
    if not keep_rows.any():
        raise ValueError("no reference patches")
    return PatchFeatures(x_prev.frame, x_prev.layer, x_prev.tokens[keep_rows], x_prev.active_ids[keep_rows], x_prev.grid)


def similarity(x1_t: PatchFeatures, state: TemporalState, pen: DistancePenalty, normalize: bool = True) -> np.ndarray:
    """Similarity of every current patch to every retained previous patch.

    The previous-frame mask restricts the columns by gathering the retained
    rows of ``x1_prev``; a distance penalty favours local matches. Rows are
    L2-normalised first unless ``normalize`` is False.
    """
    if x1_t.tokens.shape[1] != state.x1_prev.tokens.shape[1]:
        raise DimensionError("embedding widths differ between frames")
    ref = _retained(state.x1_prev, state.m6_prev)
    a, b = x1_t.tokens, ref.tokens
    if normalize:
        a, b = l2_normalize_rows(a), l2_normalize_rows(b)
    return a @ b.T + pen.matrix(x1_t, ref)


def associate(phi: np.ndarray, col_ids: np.ndarray, cfg: GumbelConfig, noise: np.ndarray | None = None) -> AssociationMatrix:
    """Hard Gumbel-Softmax over each row of ``phi`` (fed as logits)."""
    if not np.all(np.isfinite(phi)):
        raise ValueError("similarity matrix has non-finite entries")
    hard, soft, _ = hard_from_logits(phi, cfg, noise)
    return AssociationMatrix(hard, np.asarray(col_ids), soft)


def map_features(assoc: AssociationMatrix, state: TemporalState, frame: int | None = None,
                 row_ids: np.ndarray | None = None) -> PatchFeatures:
    """Each current patch receives the retained deep feature its row selects."""
    ref = _retained(state.x6_prev, state.m6_prev)
    if assoc.A.shape[1] != ref.n_active or not np.array_equal(assoc.col_ids, ref.active_ids):
        raise DimensionError("association does not match the retained reference patches")
    tokens = assoc.A @ ref.tokens
    ids = np.arange(assoc.A.shape[0]) if row_ids is None else row_ids
    return PatchFeatures(state.x6_prev.frame + 1 if frame is None else frame, 1, tokens, ids, ref.grid)


def keep_count(fraction: float, n: int) -> int:
    if fraction * n < 1:
        raise ValueError(f"top-k fraction {fraction} keeps no patch out of {n}")
    return min(math.ceil(fraction * n - 1e-9), n)


def topk_mask(scores: np.ndarray, k: int) -> np.ndarray:
    # stable sort on -score: equal scores resolve to the lowest index
    order = np.argsort(-scores, kind="stable")
    keep = np.zeros(len(scores), dtype=bool)
    keep[order[:k]] = True
    return keep


@dataclass
class ScorePass:
    p: np.ndarray          # keep probability of every current patch
    soft: np.ndarray       # (N, 2) soft Gumbel output
    noise: np.ndarray
    head_cache: HeadCache


def score_and_mask(x_hat: PatchFeatures, head: MapSmHead, sched: SparsitySchedule, cfg: GumbelConfig,
                   noise: np.ndarray | None = None, n_total: int | None = None):
    """Returns ``(p, mask, pass)``; ``mask`` keeps exactly ceil(topk_fraction * N) patches."""
    n = x_hat.n_active
    k = keep_count(sched.topk_fraction, n)
    logits, cache = head.forward(x_hat.tokens)
    soft, g = soft_from_logits(logits, cfg, noise)
    p = soft[:, KEEP]
    n_total = n_total or x_hat.grid[0] * x_hat.grid[1]
    keep = np.zeros(n_total, dtype=bool)
    keep[x_hat.active_ids[topk_mask(p, k)]] = True
    return p, PruneMask(layer=x_hat.layer, frame=x_hat.frame, keep=keep), ScorePass(p, soft, g, cache)


def score_backward(head: MapSmHead, sp: ScorePass, d_p: np.ndarray) -> dict[str, np.ndarray]:
    """Head parameter gradients for an upstream ``dL/dp``."""
    upstream = np.zeros_like(sp.soft)
    upstream[:, KEEP] = d_p
    return head.backward(sp.head_cache, logits_grad(sp.soft, upstream))


@dataclass
class MapSmResult:
    mask: PruneMask
    p: np.ndarray
    x_hat: PatchFeatures
    assoc: AssociationMatrix
    score: ScorePass

    def __iter__(self):
        return iter((self.mask, self.p, self.x_hat))


def mapsm_forward(x1_t: PatchFeatures, state: TemporalState, pen: DistancePenalty, head: MapSmHead,
                  sched: SparsitySchedule, cfg: GumbelConfig, normalize: bool = True) -> MapSmResult:
    if x1_t.n_active != x1_t.grid[0] * x1_t.grid[1]:
        raise ValueError("Map-SM expects the dense current frame")
    phi = similarity(x1_t, state, pen, normalize)
    ref_ids = _retained(state.x1_prev, state.m6_prev).active_ids
    assoc = associate(phi, ref_ids, cfg)
    x_hat = map_features(assoc, state, frame=x1_t.frame, row_ids=x1_t.active_ids)
    x_hat.layer = x1_t.layer
    p, mask, sp = score_and_mask(x_hat, head, sched, cfg)
    return MapSmResult(mask, p, x_hat, assoc, sp)


def mapsm_flops(n_current: int, n_reference: int, head: MapSmHead) -> float:
    """Similarity product plus head; the one-hot mapping is a gather and costs nothing."""
    e = head.embed_dim
    return float(2 * n_current * n_reference * e) + head.flops(n_current)
