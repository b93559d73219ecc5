"""Patch Keep Ratio, Intersection over Instance and the foreground probe.

Mask stacks passed to :func:`compute_pkr` and :func:`compute_ioi` are
per-layer: entry ``[t, l]`` is the set of patches processed by block
``l + 1`` of frame ``t``. Layers without a pruning module simply inherit
the previous stage's mask.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .sparsity_losses import RunningRatio, class_weights
from .synth_video import GtInstanceMask, size_stratum
from .tensor_math import SeededRng, row_softmax


@dataclass
class PkrReport:
    per_layer: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_layer))


def compute_pkr(layer_masks) -> PkrReport:
    """``layer_masks``: (L, N) for one frame or (T, L, N) for a video."""
    m = np.asarray(layer_masks, dtype=bool)
    if m.ndim == 2:
        m = m[None]
    per_layer = m.mean(axis=(0, 2))
    return PkrReport(per_layer)


@dataclass
class IoiReport:
    overall: float
    by_stratum: dict[str, float | None]
    per_instance: list[float] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def S(self):
        return self.by_stratum["S"]

    @property
    def M(self):
        return self.by_stratum["M"]

    @property
    def L(self):
        return self.by_stratum["L"]


def instance_coverage(layer_masks: np.ndarray, patches: np.ndarray) -> float:
    """Mean over layers of the fraction of ``patches`` each layer keeps."""
    m = np.asarray(layer_masks, dtype=bool)
    gt = np.asarray(patches, dtype=bool)
    n_gt = gt.sum()
    if n_gt == 0:
        raise ValueError("empty ground-truth instance")
    return float((m & gt[None, :]).sum(axis=1).mean() / n_gt)


def compute_ioi(layer_masks, gt_instances: list[GtInstanceMask], frames: list[int] | None = None) -> IoiReport:
    """IoI over every (frame, instance) pair; ``nan`` when there is none."""
    m = np.asarray(layer_masks, dtype=bool)
    if m.ndim == 2:
        m = m[None]
    values, strata = [], []
    for inst in gt_instances:
        if frames is not None and inst.frame not in frames:
            continue
        values.append(instance_coverage(m[inst.frame], inst.patches))
        strata.append(size_stratum(inst.area_fraction))
    by, counts = {}, {}
    for s in ("S", "M", "L"):
        sel = [v for v, k in zip(values, strata) if k == s]
        by[s] = float(np.mean(sel)) if sel else None
        counts[s] = len(sel)
    overall = float(np.mean(values)) if values else float("nan")
    return IoiReport(overall, by, values, counts)


def random_masks_like(layer_masks, rng: SeededRng) -> np.ndarray:
    """Nested random masks with the same per-frame, per-layer keep counts."""
    m = np.asarray(layer_masks, dtype=bool)
    squeeze = m.ndim == 2
    if squeeze:
        m = m[None]
    t_count, n_layers, n = m.shape
    out = np.zeros_like(m)
    for t in range(t_count):
        order = rng.permutation(n)
        for l in range(n_layers):
            out[t, l, order[: int(m[t, l].sum())]] = True
    return out[0] if squeeze else out


def expected_random_ioi(layer_masks) -> np.ndarray:
    """Per-frame expected IoI of a density-matched random mask: the mean layer density."""
    m = np.asarray(layer_masks, dtype=bool)
    return m.mean(axis=2).mean(axis=1)


@dataclass
class FgsProbe:
    """Linear foreground/background probe trained with class-balanced CE."""

    layer: int
    l2: float = 1e-4
    weights: np.ndarray | None = None
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    r_fg: float = 0.5
    accuracy: float | None = None

    def _design(self, x: np.ndarray) -> np.ndarray:
        z = (x - self.mean) / self.scale
        return np.hstack([z, np.ones((len(z), 1))])

    def fit(self, frames_x: list[np.ndarray], frames_y: list[np.ndarray]) -> "FgsProbe":
        ratio = RunningRatio()
        xs, ys = [], []
        for x, y in zip(frames_x, frames_y):
            y = np.asarray(y, dtype=bool)
            if y.all() or not y.any():
                continue  # single-class frames carry no contrast
            ratio.update(y)
            xs.append(x)
            ys.append(y)
        if not xs:
            raise ValueError("no frame with both classes to train the probe")
        x = np.concatenate(xs)
        y = np.concatenate(ys).astype(np.int64)
        self.r_fg = ratio.value
        self.mean = x.mean(axis=0)
        self.scale = x.std(axis=0) + 1e-8
        d = self._design(x)
        w_bg, w_fg = class_weights(self.r_fg)
        # class 0 = background, class 1 = foreground
        sample_w = np.where(y == 1, w_fg, w_bg)
        onehot = np.eye(2)[y]
        n = len(y)

        def objective(theta):
            w = theta.reshape(d.shape[1], 2)
            prob = row_softmax(d @ w)
            nll = -np.sum(sample_w * np.log(np.clip(prob[np.arange(n), y], 1e-300, None))) / n
            g = d.T @ ((prob - onehot) * sample_w[:, None]) / n
            return nll + 0.5 * self.l2 * np.sum(w[:-1] ** 2), (g + self.l2 * np.vstack([w[:-1], np.zeros((1, 2))])).ravel()

        res = minimize(objective, np.zeros(d.shape[1] * 2), jac=True, method="L-BFGS-B",
                       options={"maxiter": 500})
        self.weights = res.x.reshape(d.shape[1], 2)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.weights is None:
            raise RuntimeError("probe is not trained")
        logits = self._design(x) @ self.weights
        return logits[:, 1] > logits[:, 0]

    def score(self, frames_x: list[np.ndarray], frames_y: list[np.ndarray]) -> float:
        x = np.concatenate(frames_x)
        y = np.concatenate([np.asarray(v, dtype=bool) for v in frames_y])
        pred = self.predict(x)
        # class-balanced, so a label-blind probe sits at 0.5 whatever the foreground share
        recalls = [np.mean(pred[y == c] == c) for c in (False, True) if np.any(y == c)]
        self.accuracy = float(np.mean(recalls))
        return self.accuracy


def probe_fgs(train_x, train_y, test_x, test_y, probe: FgsProbe) -> float:
    """Fit ``probe`` on the training frames and return class-balanced patch accuracy on the test frames."""
    probe.fit(train_x, train_y)
    return probe.score(test_x, test_y)


# --- CSV reports ----------------------------------------------------------

def write_rows(path, rows: list[dict]) -> None:
    if not rows:
        raise ValueError("nothing to write")
    path = Path(path)
    keys = list(rows[0].keys())
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in keys})


def _fmt(v):
    if v is None:
        return "n/a"
    if isinstance(v, (float, np.floating)):
        return "n/a" if np.isnan(v) else repr(float(v))
    return v


def pkr_rows(report: PkrReport) -> list[dict]:
    rows = [{"layer": l + 1, "density": float(d)} for l, d in enumerate(report.per_layer)]
    rows.append({"layer": "mean", "density": report.mean})
    return rows


def ioi_rows(report: IoiReport) -> list[dict]:
    rows = [{"stratum": "all", "ioi": report.overall, "instances": len(report.per_instance)}]
    for s in ("S", "M", "L"):
        rows.append({"stratum": s, "ioi": report.by_stratum[s], "instances": report.counts[s]})
    return rows
