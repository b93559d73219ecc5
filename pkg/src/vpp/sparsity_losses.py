"""Sparsification regularisers, the surrogate task loss, and their gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SCALE_MAP = 10.0
SCALE_SM = 40.0
LOG_EPS = 1e-12


def loss_sp_map(p: np.ndarray, kappa_init: float = 0.5) -> float:
    """Squared gap between the mean keep probability and ``kappa_init``."""
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty probability vector")
    return float((p.mean() - kappa_init) ** 2)


def loss_sp_map_grad(p: np.ndarray, kappa_init: float = 0.5) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.full(p.shape, 2.0 * (p.mean() - kappa_init) / p.size)


def loss_sp_map_batch(ps: list[np.ndarray], kappa_init: float = 0.5) -> float:
    """Per-frame losses averaged over the batch."""
    if not ps:
        return 0.0
    return float(np.mean([loss_sp_map(p, kappa_init) for p in ps]))


def loss_sp_map_batch_grad(ps: list[np.ndarray], kappa_init: float = 0.5) -> list[np.ndarray]:
    return [loss_sp_map_grad(p, kappa_init) / len(ps) for p in ps]


def _stack_masks(masks) -> np.ndarray:
    m = np.asarray(masks, dtype=np.float64)
    if m.size == 0:
        raise ValueError("empty mask batch")
    return m.reshape(-1, m.shape[-1]) if m.ndim > 1 else m[None]


def loss_sp_sm(masks, kappa_l: float) -> float:
    """Squared gap between the batch-mean mask density and ``kappa_l``.

    ``masks`` is one keep vector or a (frames, N) batch; the mean is taken
    over the whole batch before squaring, so single frames may deviate.
    """
    m = _stack_masks(masks)
    return float((m.mean() - kappa_l) ** 2)


def loss_sp_sm_grad(masks, kappa_l: float) -> np.ndarray:
    m = _stack_masks(masks)
    return np.full(m.shape, 2.0 * (m.mean() - kappa_l) / m.size)


def class_weights(r_fg: float) -> tuple[float, float]:
    """(w_bg, w_fg) for a running foreground ratio ``r_fg``."""
    return r_fg, 1.0 - r_fg


@dataclass
class RunningRatio:
    """Cumulative mean of the foreground ratio over every frame seen."""

    total: float = 0.0
    count: int = 0
    prior: float = 0.5

    def update(self, gt_fg: np.ndarray) -> float:
        gt_fg = np.asarray(gt_fg, dtype=bool)
        self.total += float(gt_fg.sum())
        self.count += gt_fg.size
        return self.value

    @property
    def value(self) -> float:
        return self.total / self.count if self.count else self.prior


def weighted_bce(p: np.ndarray, gt_fg: np.ndarray, r_fg: float) -> float:
    p = np.clip(np.asarray(p, dtype=np.float64), LOG_EPS, 1 - LOG_EPS)
    y = np.asarray(gt_fg, dtype=np.float64)
    w_bg, w_fg = class_weights(r_fg)
    return float(np.mean(-(w_fg * y * np.log(p) + w_bg * (1 - y) * np.log(1 - p))))


def weighted_bce_grad(p: np.ndarray, gt_fg: np.ndarray, r_fg: float) -> np.ndarray:
    p_raw = np.asarray(p, dtype=np.float64)
    p = np.clip(p_raw, LOG_EPS, 1 - LOG_EPS)
    y = np.asarray(gt_fg, dtype=np.float64)
    w_bg, w_fg = class_weights(r_fg)
    g = -(w_fg * y / p - w_bg * (1 - y) / (1 - p)) / p.size
    return np.where((p_raw > LOG_EPS) & (p_raw < 1 - LOG_EPS), g, 0.0)


def toy_task_loss(masks, p_t, gt_fg, r_fg: float) -> float:
    """Weighted BCE of the keep scores against the foreground labels.

    ``p_t`` holds Map-SM probabilities (one vector per frame, may be empty),
    ``masks`` holds ``(soft_keep, gt_on_active)`` pairs from the SM stages.
    Each group is averaged over its entries and the groups are summed.
    """
    total = 0.0
    if p_t:
        total += float(np.mean([weighted_bce(p, y, r_fg) for p, y in zip(p_t, gt_fg)]))
    for soft, y in masks:
        total += weighted_bce(soft, y, r_fg)
    return total


@dataclass
class LossReport:
    l_sp_map: float
    l_sp_sm: list[float]
    task: float
    scale_map: float = SCALE_MAP
    scale_sm: float = SCALE_SM
    extras: dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.task + self.scale_map * self.l_sp_map + self.scale_sm * sum(self.l_sp_sm)

    def row(self) -> dict[str, float]:
        out = {"task": self.task, "l_sp_map": self.l_sp_map}
        for i, v in enumerate(self.l_sp_sm):
            out[f"l_sp_sm{i}"] = v
        out["total"] = self.total
        out.update(self.extras)
        return out
