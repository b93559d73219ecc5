"""Central-difference checks for every hand-written gradient.

Gumbel noise is drawn once per instance and replayed for every
evaluation; hard one-hot decisions are never differentiated, only the
soft path behind them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gumbel import GumbelConfig, gumbel_soft, gumbel_soft_grad, soft_from_logits, logits_grad
from .heads import KEEP, MlpHead, flatten_grads
from .sparsity_losses import (loss_sp_map, loss_sp_map_grad, loss_sp_sm, loss_sp_sm_grad, weighted_bce,
                              weighted_bce_grad)
from .tensor_math import SeededRng

H_MIN, H_MAX = 1e-7, 1e-3


def fd_gradient(f, theta, h: float = 1e-5, check_step: bool = True) -> np.ndarray:
    """Central differences of scalar ``f`` at ``theta``."""
    if check_step and not H_MIN <= h <= H_MAX:
        raise ValueError(f"step {h} outside [{H_MIN}, {H_MAX}]")
    theta = np.asarray(theta, dtype=np.float64)
    flat = theta.ravel().copy()
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(flat.reshape(theta.shape)))
        flat[i] = orig - h
        fm = float(f(flat.reshape(theta.shape)))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite objective at coordinate {i}")
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(theta.shape)


def relative_error(a, n) -> float:
    a, n = np.ravel(a), np.ravel(n)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-8))


@dataclass
class GradCheckReport:
    name: str
    analytic: np.ndarray
    numeric: np.ndarray
    relative_error: float
    passed: bool

    def row(self) -> dict:
        return {"name": self.name, "size": int(np.size(self.analytic)),
                "analytic_norm": float(np.linalg.norm(self.analytic)),
                "numeric_norm": float(np.linalg.norm(self.numeric)),
                "relative_error": self.relative_error, "passed": self.passed}


def compare(name: str, analytic, f, theta, tolerance: float = 1e-4, h: float = 1e-5) -> GradCheckReport:
    numeric = fd_gradient(f, theta, h)
    err = relative_error(analytic, numeric)
    return GradCheckReport(name, np.asarray(analytic, dtype=np.float64), numeric, err, err <= tolerance)


# --- individual checks ---------------------------------------------------

def check_gumbel_soft(rng: SeededRng, rows: int = 4, cols: int = 3, tau: float = 10.0, tolerance=1e-4,
                      upstream=None) -> GradCheckReport:
    cfg = GumbelConfig(tau, True, rng.child(0))
    pi = rng.uniform(0.2, 1.0, size=(rows, cols))
    noise = cfg.draw(pi.shape)
    up = rng.normal(size=pi.shape) if upstream is None else upstream
    f = lambda x: np.sum(up * gumbel_soft(x, cfg, noise))
    return compare("gumbel_soft", gumbel_soft_grad(pi, cfg, noise, up), f, pi, tolerance)


def check_map_loss(rng: SeededRng, n: int = 4, tau: float = 10.0, tolerance=1e-4) -> GradCheckReport:
    """Map-SM sparsity loss composed with the soft Gumbel keep probability."""
    cfg = GumbelConfig(tau, True, rng.child(0))
    logits = rng.normal(scale=3.0, size=(n, 2))
    noise = cfg.draw(logits.shape)

    def f(z):
        soft, _ = soft_from_logits(z, cfg, noise)
        return loss_sp_map(soft[:, KEEP])

    soft, _ = soft_from_logits(logits, cfg, noise)
    up = np.zeros_like(soft)
    up[:, KEEP] = loss_sp_map_grad(soft[:, KEEP])
    return compare("loss_sp_map", logits_grad(soft, up), f, logits, tolerance)


def check_sm_loss(rng: SeededRng, frames: int = 3, n: int = 6, tolerance=1e-4) -> GradCheckReport:
    kappa = float(rng.uniform(0.1, 0.9))
    m = rng.uniform(0, 1, size=(frames, n))
    return compare("loss_sp_sm", loss_sp_sm_grad(m, kappa), lambda x: loss_sp_sm(x, kappa), m, tolerance)


def check_task_loss(rng: SeededRng, n: int = 8, tolerance=1e-4) -> GradCheckReport:
    p = rng.uniform(0.05, 0.95, size=n)
    y = rng.uniform(size=n) < 0.4
    r = float(rng.uniform(0.1, 0.5))
    return compare("toy_task_loss", weighted_bce_grad(p, y, r), lambda x: weighted_bce(x, y, r), p, tolerance)


def _head_objective(head: MlpHead, x, cfg, noise, weight_fn):
    def f(theta):
        logits, _ = head.with_flat(theta).forward(x)
        soft, _ = soft_from_logits(logits, cfg, noise)
        return weight_fn(soft[:, KEEP])
    return f


def check_mapsm_head(rng: SeededRng, n: int = 5, embed: int = 8, tau: float = 10.0, tolerance=1e-4,
                     r_fg: float = 0.3) -> GradCheckReport:
    """Map-SM head through the soft keep probability into its sparsity and task losses."""
    cfg = GumbelConfig(tau, True, rng.child(0))
    head = MlpHead.init(embed, rng.child(1), scale=3.0)
    x = rng.normal(size=(n, embed))
    y = rng.uniform(size=n) < 0.4
    logits, cache = head.forward(x)
    noise = cfg.draw(logits.shape)
    soft, _ = soft_from_logits(logits, cfg, noise)
    p = soft[:, KEEP]
    up = np.zeros_like(soft)
    up[:, KEEP] = 10.0 * loss_sp_map_grad(p) + weighted_bce_grad(p, y, r_fg)
    analytic = flatten_grads(head.backward(cache, logits_grad(soft, up)))
    f = _head_objective(head, x, cfg, noise, lambda q: 10.0 * loss_sp_map(q) + weighted_bce(q, y, r_fg))
    return compare("mapsm_head", analytic, f, head.flat(), tolerance)


def check_sm_head(rng: SeededRng, n: int = 6, embed: int = 8, tau: float = 10.0, tolerance=1e-4,
                  upstream=None) -> GradCheckReport:
    """SM head: a fixed upstream gradient on the keep decision, taken through the soft path."""
    cfg = GumbelConfig(tau, True, rng.child(0))
    head = MlpHead.init(embed, rng.child(1), scale=3.0)
    x = rng.normal(size=(n, embed))
    logits, cache = head.forward(x)
    noise = cfg.draw(logits.shape)
    soft, _ = soft_from_logits(logits, cfg, noise)
    d_keep = rng.normal(size=n) if upstream is None else upstream
    up = np.zeros_like(soft)
    up[:, KEEP] = d_keep
    analytic = flatten_grads(head.backward(cache, logits_grad(soft, up)))
    f = _head_objective(head, x, cfg, noise, lambda q: float(np.sum(d_keep * q)))
    return compare("sm_head", analytic, f, head.flat(), tolerance)


CHECKS = {
    "gumbel_soft": check_gumbel_soft,
    "loss_sp_map": check_map_loss,
    "loss_sp_sm": check_sm_loss,
    "toy_task_loss": check_task_loss,
    "mapsm_head": check_mapsm_head,
    "sm_head": check_sm_head,
}


def check_all(pipeline=None, tolerance: float = 1e-4, seed: int = 0, instances: int = 1) -> list[GradCheckReport]:
    """Every check on ``instances`` random small problems each.

    With a pipeline model, its own heads are checked on random inputs in addition.
    """
    rng = SeededRng(seed)
    out = []
    for i in range(instances):
        for k, (name, fn) in enumerate(CHECKS.items()):
            rep = fn(rng.child(i, k), tolerance=tolerance)
            rep.name = f"{name}[{i}]"
            out.append(rep)
    if pipeline is not None:
        for k, (name, head) in enumerate(pipeline.heads().items()):
            out.append(_check_given_head(name, head, rng.child(10**6, k), tolerance, pipeline.cfg.tau))
    return out


def _check_given_head(name, head: MlpHead, rng: SeededRng, tolerance, tau) -> GradCheckReport:
    cfg = GumbelConfig(tau, True, rng.child(0))
    x = rng.normal(size=(6, head.embed_dim))
    logits, cache = head.forward(x)
    noise = cfg.draw(logits.shape)
    soft, _ = soft_from_logits(logits, cfg, noise)
    d_keep = rng.normal(size=len(x))
    up = np.zeros_like(soft)
    up[:, KEEP] = d_keep
    analytic = flatten_grads(head.backward(cache, logits_grad(soft, up)))
    f = _head_objective(head, x, cfg, noise, lambda q: float(np.sum(d_keep * q)))
    return compare(name, analytic, f, head.flat(), tolerance)


def failures(reports: list[GradCheckReport]) -> list[str]:
    return [r.name for r in reports if not r.passed]


def convergence_ratio(f, grad, theta, h: float = 1e-3, shrink: float = 10.0) -> float:
    """FD error at ``h`` over FD error at ``h / shrink``; about ``shrink**2`` for central differences."""
    e1 = np.linalg.norm(fd_gradient(f, theta, h) - grad)
    e2 = np.linalg.norm(fd_gradient(f, theta, h / shrink) - grad)
    return float(e1 / max(e2, 1e-300))


def write_report(path, reports: list[GradCheckReport]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(reports[0].row()), lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.row())
