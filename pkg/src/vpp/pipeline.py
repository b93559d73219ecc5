"""Frame-by-frame pruning pipeline, head training and the experiments built on it.

Mask indexing: ``M_i`` is the keep set after index ``i`` (``M_0`` after the
embedding, ``M_i`` after block ``i``). Block ``l`` processes ``M_{l-1}``.
A pruning stage at index ``i`` acts on the output of block ``i``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import bisect

from .gumbel import GumbelConfig
from .heads import MlpHead
from .map_sm import (DistancePenalty, ScorePass, SparsitySchedule, TemporalState, mapsm_flops,
                     mapsm_forward, score_backward)
from .metrics import (IoiReport, PkrReport, compute_ioi, compute_pkr, random_masks_like)
from .selective_module import SmHead, SmResult, sm_backward, sm_flops, sm_forward
from .sparsity_losses import (RunningRatio, LossReport, loss_sp_map_batch, loss_sp_map_batch_grad,
                              weighted_bce, weighted_bce_grad)
from .synth_video import SynthScenario, SynthVideo, generate, size_stratum, write_pgm
from .tensor_math import SeededRng
from .vit_sim import (FlopLedger, PatchFeatures, PruneMask, VitConfig, VitWeights, block_forward,
                      count_flops, embed_frame, gather, load_snapshot, save_snapshot)

log = logging.getLogger(__name__)

PRESET_TOPK = {0.55: 0.7, 0.40: 0.6}

# frozen random backbone tuned so that deeper features mix spatial context
BACKBONE_DEFAULTS = dict(pos_scale=1.0, qk_scale=1.0, attn_gain=1.0, mlp_gain=0.1, proj_gain=1.0, slope=1.0)


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    vit: VitConfig = field(default_factory=VitConfig)
    mapsm_index: int | None = 1
    sm_indices: tuple[int, ...] = (3, 6, 9)
    ref_layer: int = 6
    goal_pkr: float = 0.55
    kappa_init: float = 0.5
    tau: float = 10.0
    scale_map: float = 10.0
    scale_sm: float = 40.0
    topk_fraction: float | None = None
    rho: float | None = None
    lambda_d: float = 0.1
    normalize_similarity: bool = True
    steps: int = 500
    lr: float = 1e-2
    momentum: float = 0.9
    head_scale: float = 1.0
    seed: int = 0
    backbone_seed: int = 0
    backbone: dict = field(default_factory=lambda: dict(BACKBONE_DEFAULTS))

    def __post_init__(self):
        self.sm_indices = tuple(sorted(int(i) for i in self.sm_indices))
        n_layers = self.vit.layers
        if len(set(self.sm_indices)) != len(self.sm_indices):
            raise ConfigError("duplicate SM index")
        if any(not 0 <= i < n_layers for i in self.sm_indices):
            raise ConfigError(f"SM indices must lie in [0, {n_layers - 1}]")
        if self.mapsm_index is not None:
            if not 0 <= self.mapsm_index < n_layers:
                raise ConfigError(f"Map-SM index must lie in [0, {n_layers - 1}]")
            if self.sm_indices and self.mapsm_index >= self.sm_indices[0]:
                raise ConfigError("Map-SM must come before every SM stage")
            if not self.mapsm_index < self.ref_layer <= n_layers:
                raise ConfigError("ref_layer must follow the Map-SM index")
        if not 0 < self.goal_pkr <= 1:
            raise ConfigError("goal_pkr must be in (0, 1]")
        if self.steps < 0 or self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ConfigError("invalid optimizer settings")

    @classmethod
    def preset(cls, goal_pkr: float = 0.55, **kw) -> "PipelineConfig":
        return cls(goal_pkr=goal_pkr, **kw)

    @property
    def stage_kinds(self) -> dict[int, str]:
        kinds = {i: "sm" for i in self.sm_indices}
        if self.mapsm_index is not None:
            kinds[self.mapsm_index] = "map"
        return kinds

    def solved(self) -> "PipelineConfig":
        """Copy with ``topk_fraction`` and ``rho`` filled in to hit ``goal_pkr``."""
        topk, rho = solve_schedule(self)
        return replace(self, topk_fraction=topk, rho=rho)

    def schedule(self) -> SparsitySchedule:
        topk, rho = solve_schedule(self)
        return SparsitySchedule(self.kappa_init, topk, rho if rho is not None else 0.5,
                                max(len(self.sm_indices), 1))


# --- schedule ------------------------------------------------------------

def analytic_profile(cfg: PipelineConfig, topk: float, rho: float) -> np.ndarray:
    """Density of the tokens entering each block 1..L under the nominal schedule."""
    return index_densities(cfg, topk, rho)[: cfg.vit.layers]


def index_densities(cfg: PipelineConfig, topk: float, rho: float) -> np.ndarray:
    """Nominal density of every keep set M_0..M_L."""
    densities = np.ones(cfg.vit.layers + 1)
    d, k = 1.0, 0
    kinds = cfg.stage_kinds
    for idx in range(cfg.vit.layers + 1):
        if kinds.get(idx) == "map":
            d = min(d, topk)
        elif kinds.get(idx) == "sm":
            k += 1
            d = min(d, rho ** k)
        densities[idx] = d
    return densities


def solve_schedule(cfg: PipelineConfig) -> tuple[float, float | None]:
    """(topk_fraction, rho). Bisection fills whichever of the two controls the goal PKR."""
    preset_topk = cfg.topk_fraction if cfg.topk_fraction is not None else PRESET_TOPK.get(round(cfg.goal_pkr, 2), 0.7)
    if not cfg.sm_indices:
        if cfg.mapsm_index is None:
            return 1.0, None
        if cfg.topk_fraction is not None:
            return cfg.topk_fraction, None
        f = lambda k: analytic_profile(cfg, k, 0.5).mean() - cfg.goal_pkr
        lo = 1.0 / cfg.vit.n_patches
        if f(lo) > 0 or f(1.0) < 0:
            raise ConfigError(f"goal PKR {cfg.goal_pkr} unreachable with Map-SM alone")
        return float(bisect(f, lo, 1.0, xtol=1e-12)), None
    if cfg.rho is not None:
        return preset_topk, cfg.rho
    f = lambda r: analytic_profile(cfg, preset_topk, r).mean() - cfg.goal_pkr
    lo, hi = 1e-6, 1.0 - 1e-9
    if f(lo) > 0 or f(hi) < 0:
        raise ConfigError(f"goal PKR {cfg.goal_pkr} unreachable with this stage layout")
    return preset_topk, float(bisect(f, lo, hi, xtol=1e-12))


def analytic_ledger(cfg: PipelineConfig) -> tuple[FlopLedger, FlopLedger]:
    """(scheduled, dense) FLOP ledgers from the nominal densities, heads included as overhead."""
    topk, rho = solve_schedule(cfg)
    dens = index_densities(cfg, topk, rho if rho is not None else 0.5)
    n, e = cfg.vit.n_patches, cfg.vit.embed_dim
    probe = MlpHead(np.zeros((e, e // 2)), np.zeros(e // 2), np.zeros((e // 2, 2)), np.zeros(2))
    over = {}
    if cfg.mapsm_index is not None:
        over["mapsm"] = mapsm_flops(n, dens[cfg.ref_layer] * n, probe)
    for idx in cfg.sm_indices:
        over[f"sm{idx}"] = probe.flops((dens[idx - 1] if idx > 0 else 1.0) * n)
    ledger = count_flops(cfg.vit, dens[: cfg.vit.layers] * n, over)
    return ledger, count_flops(cfg.vit, [n] * cfg.vit.layers)


# --- model ---------------------------------------------------------------

@dataclass
class VppModel:
    cfg: PipelineConfig
    weights: VitWeights
    map_head: MlpHead | None
    sm_heads: list[SmHead]
    topk: float
    rho: float | None

    @classmethod
    def init(cls, cfg: PipelineConfig) -> "VppModel":
        topk, rho = solve_schedule(cfg)
        weights = VitWeights.init(cfg.vit, cfg.backbone_seed, **cfg.backbone)
        rng = SeededRng(cfg.seed).child(1)
        e = cfg.vit.embed_dim
        map_head = MlpHead.init(e, rng.child(0), cfg.head_scale) if cfg.mapsm_index is not None else None
        sm_heads = [SmHead(idx, rho ** (k + 1), MlpHead.init(e, rng.child(k + 1), cfg.head_scale))
                    for k, idx in enumerate(cfg.sm_indices)]
        return cls(cfg, weights, map_head, sm_heads, topk, rho)

    @property
    def schedule(self) -> SparsitySchedule:
        return SparsitySchedule(self.cfg.kappa_init, self.topk, self.rho if self.rho is not None else 0.5,
                                max(len(self.sm_heads), 1))

    def heads(self) -> dict[str, MlpHead]:
        out = {}
        if self.map_head is not None:
            out["mapsm"] = self.map_head
        for h in self.sm_heads:
            out[f"sm{h.layer}"] = h.mlp
        return out

    def set_head(self, name: str, head: MlpHead) -> None:
        if name == "mapsm":
            self.map_head = head
            return
        for h in self.sm_heads:
            if f"sm{h.layer}" == name:
                h.mlp = head
                return
        raise KeyError(name)

    def to_arrays(self) -> dict[str, np.ndarray]:
        arrays = dict(self.weights.to_arrays())
        for name, head in self.heads().items():
            for k, v in head.params().items():
                arrays[f"{name}.{k}"] = v
        arrays["schedule"] = np.array([self.topk, np.nan if self.rho is None else self.rho])
        return arrays

    def save(self, path) -> None:
        save_snapshot(path, self.to_arrays())

    @classmethod
    def load(cls, cfg: PipelineConfig, path) -> "VppModel":
        arrays = load_snapshot(path)
        model = cls.init(cfg)
        backbone = {k: v for k, v in arrays.items() if k.startswith(("block", "patch_", "pos_"))}
        model.weights = VitWeights.from_arrays(backbone)
        for name in model.heads():
            try:
                model.set_head(name, MlpHead(**{k: arrays[f"{name}.{k}"] for k in MlpHead.PARAMS}))
            except KeyError as exc:
                raise ConfigError(f"checkpoint lacks head {name!r}") from exc
        return model


# --- forward -------------------------------------------------------------

@dataclass
class FrameTrace:
    masks: np.ndarray                 # (L+1, N) keep sets M_0..M_L
    map_pass: ScorePass | None = None
    map_ref_count: int = 0
    sm: dict[int, SmResult] = field(default_factory=dict)
    features: list[PatchFeatures] | None = None


def forward_frame(model: VppModel, image: np.ndarray, t: int, state: TemporalState | None,
                  rng: SeededRng, keep_features: bool = False) -> tuple[FrameTrace, TemporalState | None]:
    cfg, vit = model.cfg, model.cfg.vit
    n, n_layers = vit.n_patches, vit.layers
    gcfg = GumbelConfig(cfg.tau, True, rng)
    pen = DistancePenalty(cfg.lambda_d)
    sched = model.schedule
    heads = {h.layer: h for h in model.sm_heads}
    trace = FrameTrace(np.zeros((n_layers + 1, n), dtype=bool))
    feats = [] if keep_features else None
    keep = np.ones(n, dtype=bool)
    x = embed_frame(image, vit, model.weights, t)
    x_map = x_ref = None
    for idx in range(n_layers + 1):
        if idx > 0:
            x = block_forward(x, model.weights.blocks[idx - 1], None, vit)
        if feats is not None:
            feats.append(x)
        pruned = False
        if idx == cfg.mapsm_index:
            x_map = x
            if state is not None:
                res = mapsm_forward(x, state, pen, model.map_head, sched, gcfg, cfg.normalize_similarity)
                trace.map_pass = res.score
                trace.map_ref_count = res.assoc.A.shape[1]
                keep = keep & res.mask.keep
                pruned = True
        elif idx in heads:
            res = sm_forward(x, heads[idx], gcfg)
            trace.sm[idx] = res
            keep = keep & res.mask.keep
            pruned = True
        if pruned:
            x = gather(x, PruneMask(idx, t, keep.copy()))
        trace.masks[idx] = keep
        if idx == cfg.ref_layer:
            x_ref = x
    trace.features = feats
    new_state = None
    if cfg.mapsm_index is not None:
        m_ref = PruneMask(cfg.ref_layer, t, trace.masks[cfg.ref_layer].copy())
        new_state = TemporalState(gather(x_map, m_ref), x_ref, m_ref)
    return trace, new_state


def forward_video(model: VppModel, video: SynthVideo, rng: SeededRng, keep_features: bool = False,
                  frames: int | None = None) -> list[FrameTrace]:
    """Sequential pass; frame ``t`` uses only frames ``<= t``. Frame 0 is dense below the first SM."""
    state = None
    traces = []
    n_frames = video.n_frames if frames is None else min(frames, video.n_frames)
    for t in range(n_frames):
        trace, state = forward_frame(model, video.frames[t], t, state, rng.child(t), keep_features)
        traces.append(trace)
    return traces


def dense_features(weights: VitWeights, vit: VitConfig, image: np.ndarray) -> list[np.ndarray]:
    """Token features after the embedding and after every block of an unpruned pass."""
    x = embed_frame(image, vit, weights)
    out = [x.tokens]
    for b in weights.blocks:
        x = block_forward(x, b, None, vit)
        out.append(x.tokens)
    return out


# --- artifacts -----------------------------------------------------------

@dataclass
class RunArtifacts:
    masks: np.ndarray           # (T, L+1, N) keep sets M_0..M_L
    profile: np.ndarray         # per-block density averaged over frames
    pkr: PkrReport
    ioi: IoiReport
    flops: FlopLedger
    curves: list[dict] = field(default_factory=list)
    ioi_trace: list[float | None] = field(default_factory=list)
    random_ioi: IoiReport | None = None

    @property
    def layer_masks(self) -> np.ndarray:
        return self.masks[:, :-1]


def layer_masks_of(index_masks: np.ndarray) -> np.ndarray:
    """Block-input masks (T, L, N) from keep sets (T, L+1, N)."""
    return np.asarray(index_masks)[:, :-1]


def survival_counts(index_masks: np.ndarray) -> np.ndarray:
    """Per patch, the number of indices 1..L at which it is still kept."""
    return np.asarray(index_masks)[..., 1:, :].sum(axis=-2)


def video_flops(model: VppModel, traces: list[FrameTrace]) -> FlopLedger:
    """FLOPs averaged over frames, with Map-SM and SM heads as overhead."""
    cfg = model.cfg
    masks = np.stack([tr.masks for tr in traces])
    active = masks[:, :-1].sum(axis=2).mean(axis=0)
    over = {"mapsm": 0.0}
    over.update({f"sm{h.layer}": 0.0 for h in model.sm_heads})
    n = cfg.vit.n_patches
    for tr in traces:
        if tr.map_pass is not None:
            over["mapsm"] += mapsm_flops(n, tr.map_ref_count, model.map_head)
        for h in model.sm_heads:
            idx = h.layer
            n_in = n if idx == 0 else int(tr.masks[idx - 1].sum())
            over[f"sm{idx}"] += sm_flops(n_in, h)
    over = {k: v / len(traces) for k, v in over.items()}
    if model.map_head is None:
        over.pop("mapsm")
    return count_flops(cfg.vit, active, over)


def run_video(model: VppModel, video: SynthVideo, rng: SeededRng | None = None,
              baseline_rng: SeededRng | None = None) -> RunArtifacts:
    rng = rng if rng is not None else SeededRng(model.cfg.seed).child(2, video.scenario.seed)
    traces = forward_video(model, video, rng)
    masks = np.stack([tr.masks for tr in traces])
    lm = masks[:, :-1]
    pkr = compute_pkr(lm)
    ioi = compute_ioi(lm, video.gt)
    brng = baseline_rng if baseline_rng is not None else rng.child(10**6)
    rnd = compute_ioi(random_masks_like(lm, brng), video.gt)
    trace = []
    for t in range(len(traces)):
        r = compute_ioi(lm, video.gt, frames=[t])
        trace.append(None if np.isnan(r.overall) else r.overall)
    return RunArtifacts(masks, pkr.per_layer, pkr, ioi, video_flops(model, traces),
                        ioi_trace=trace, random_ioi=rnd)


# --- training ------------------------------------------------------------

def video_loss(model: VppModel, video: SynthVideo, traces: list[FrameTrace], r_fg: float):
    """Loss report and per-head gradients for one video (the batch)."""
    cfg = model.cfg
    n = cfg.vit.n_patches
    fg = video.fg()
    grads = {name: {k: np.zeros_like(v) for k, v in head.params().items()} for name, head in model.heads().items()}

    def add(name, g):
        for k, v in g.items():
            grads[name][k] += v

    task = 0.0
    # Map-SM group
    map_frames = [t for t, tr in enumerate(traces) if tr.map_pass is not None]
    l_map = 0.0
    if map_frames:
        ps = [traces[t].map_pass.p for t in map_frames]
        l_map = loss_sp_map_batch(ps, cfg.kappa_init)
        d_sp = loss_sp_map_batch_grad(ps, cfg.kappa_init)
        task += float(np.mean([weighted_bce(p, fg[t], r_fg) for p, t in zip(ps, map_frames)]))
        for p, t, dsp in zip(ps, map_frames, d_sp):
            d_p = cfg.scale_map * dsp + weighted_bce_grad(p, fg[t], r_fg) / len(map_frames)
            add("mapsm", score_backward(model.map_head, traces[t].map_pass, d_p))
    # SM groups
    l_sm = []
    for h in model.sm_heads:
        results = [tr.sm[h.layer] for tr in traces]
        kept = sum(int(r.hard_keep.sum()) for r in results)
        density = kept / (len(results) * n)
        l_sm.append((density - h.kappa) ** 2)
        d_keep = cfg.scale_sm * 2.0 * (density - h.kappa) / (len(results) * n)
        soft = np.concatenate([r.soft_keep for r in results])
        gt = np.concatenate([fg[t][r.active_ids] for t, r in enumerate(results)])
        task += weighted_bce(soft, gt, r_fg)
        d_task = weighted_bce_grad(soft, gt, r_fg)
        off = 0
        for t, r in enumerate(results):
            m = len(r.soft_keep)
            add(f"sm{h.layer}", sm_backward(h, r, d_keep + d_task[off : off + m]))
            off += m
    report = LossReport(l_map, l_sm, task, cfg.scale_map, cfg.scale_sm)
    return report, grads


@dataclass
class TrainResult:
    model: VppModel
    curves: list[dict]


def train_heads(model: VppModel, videos: list[SynthVideo], steps: int | None = None,
                rng: SeededRng | None = None, log_every: int = 1) -> TrainResult:
    """Momentum SGD on the pruning heads; the backbone stays frozen. One video per step."""
    cfg = model.cfg
    steps = cfg.steps if steps is None else steps
    rng = rng if rng is not None else SeededRng(cfg.seed).child(3)
    ratio = RunningRatio()
    velocity = {name: {k: np.zeros_like(v) for k, v in head.params().items()} for name, head in model.heads().items()}
    curves = []
    if not model.heads():
        return TrainResult(model, curves)
    for step in range(steps):
        video = videos[step % len(videos)]
        ratio.update(video.fg())
        traces = forward_video(model, video, rng.child(step))
        report, grads = video_loss(model, video, traces, ratio.value)
        if not np.isfinite(report.total):
            raise NumericalError(f"loss became non-finite at step {step}: {report.row()}")
        for name, head in model.heads().items():
            new = {}
            for k, v in head.params().items():
                g = grads[name][k]
                if not np.all(np.isfinite(g)):
                    raise NumericalError(f"non-finite gradient for {name}.{k} at step {step}")
                velocity[name][k] = cfg.momentum * velocity[name][k] - cfg.lr * g
                new[k] = v + velocity[name][k]
            model.set_head(name, MlpHead(**new))
        if step % log_every == 0 or step == steps - 1:
            masks = np.stack([tr.masks for tr in traces])
            row = {"step": step}
            row.update(report.row())
            row["pkr"] = float(masks[:, :-1].mean())
            for h in model.sm_heads:
                row[f"density_sm{h.layer}"] = float(masks[:, h.layer].mean())
            maps = [tr.map_pass.p.mean() for tr in traces if tr.map_pass is not None]
            if maps:
                row["mean_p"] = float(np.mean(maps))
            curves.append(row)
    return TrainResult(model, curves)


def build_and_train(cfg: PipelineConfig, scenarios: list[SynthScenario], steps: int | None = None) -> TrainResult:
    model = VppModel.init(cfg)
    return train_heads(model, [generate(s) for s in scenarios], steps)


# --- experiments ---------------------------------------------------------

ABLATION_ROWS = (
    ("SM 0,3,6,9", None, (0, 3, 6, 9)),
    ("SM 1,3,6,9", None, (1, 3, 6, 9)),
    ("Map-SM 0 + SM 3,6,9", 0, (3, 6, 9)),
    ("Map-SM 1 const Kr", 1, ()),
    ("Map-SM 1 + SM 3,6,9", 1, (3, 6, 9)),
)


@dataclass
class AblationRow:
    name: str
    mapsm_index: int | None
    sm_indices: tuple[int, ...]
    pkr: float
    ioi: float
    ioi_s: float | None
    ioi_m: float | None
    ioi_l: float | None
    random_ioi: float
    per_video_ioi: list[float]

    @property
    def image_only(self) -> bool:
        return self.mapsm_index is None

    def row(self) -> dict:
        return {"config": self.name, "pkr": self.pkr, "ioi": self.ioi, "ioi_s": self.ioi_s,
                "ioi_m": self.ioi_m, "ioi_l": self.ioi_l, "random_ioi": self.random_ioi}


def pooled_ioi(arts: list[RunArtifacts], videos: list[SynthVideo], random: bool = False) -> IoiReport:
    vals, strata = [], {"S": [], "M": [], "L": []}
    for a, v in zip(arts, videos):
        rep = a.random_ioi if random else a.ioi
        vals += rep.per_instance
        for inst, val in zip(v.gt, rep.per_instance):
            strata[size_stratum(inst.area_fraction)].append(val)
    by = {k: (float(np.mean(s)) if s else None) for k, s in strata.items()}
    return IoiReport(float(np.mean(vals)), by, vals, {k: len(s) for k, s in strata.items()})


def evaluate(model: VppModel, videos: list[SynthVideo]) -> tuple[list[RunArtifacts], IoiReport, IoiReport, float]:
    arts = [run_video(model, v) for v in videos]
    pkr = float(np.mean([a.pkr.mean for a in arts]))
    return arts, pooled_ioi(arts, videos), pooled_ioi(arts, videos, random=True), pkr


def ablation_grid(base: PipelineConfig, train: list[SynthScenario], test: list[SynthScenario],
                  steps: int | None = None, rows=ABLATION_ROWS) -> list[AblationRow]:
    """Positioning ablation at matched goal PKR."""
    train_v = [generate(s) for s in train]
    test_v = [generate(s) for s in test]
    out = []
    for name, mi, smi in rows:
        cfg = replace(base, mapsm_index=mi, sm_indices=smi, topk_fraction=None if not smi else base.topk_fraction,
                      rho=None)
        model = VppModel.init(cfg)
        train_heads(model, train_v, steps)
        arts, ioi, rnd, pkr = evaluate(model, test_v)
        out.append(AblationRow(name, mi, tuple(smi), pkr, ioi.overall, ioi.S, ioi.M, ioi.L, rnd.overall,
                               [a.ioi.overall for a in arts]))
    return out


@dataclass
class SceneSwitchReport:
    onset: int
    ioi: list[float | None]
    random: list[float | None]
    masks: np.ndarray

    @property
    def margin_after_onset(self) -> float:
        return self.ioi[self.onset + 1] - self.random[self.onset + 1]


def scene_switch_experiment(model: VppModel, scenario: SynthScenario, outdir=None) -> SceneSwitchReport:
    """IoI per timestep after a run of blank frames, against the expected random IoI."""
    if scenario.blank_prefix < 1:
        raise ConfigError("scene switch needs blank_prefix >= 1")
    video = generate(scenario)
    art = run_video(model, video)
    lm = art.layer_masks
    expected = lm.mean(axis=2).mean(axis=1)
    rnd = [None if v is None else float(expected[t]) for t, v in enumerate(art.ioi_trace)]
    if outdir is not None:
        render_masks(art, outdir, model.cfg.vit, video)
    return SceneSwitchReport(scenario.blank_prefix, art.ioi_trace, rnd, art.masks)


def mask_images(masks: np.ndarray, vit: VitConfig) -> np.ndarray:
    """(T, H, W) gray levels: 255 times the fraction of indices 1..L a patch survives."""
    counts = survival_counts(masks)
    gh, gw = vit.grid
    p = vit.patch_size
    gray = np.rint(255.0 * counts / vit.layers).astype(np.uint8).reshape(-1, gh, gw)
    return np.kron(gray, np.ones((p, p), dtype=np.uint8))


def render_masks(art: RunArtifacts, outdir, vit: VitConfig, video: SynthVideo | None = None) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, img in enumerate(mask_images(art.masks, vit)):
        path = outdir / f"mask_{t:03d}.pgm"
        write_pgm(path, img)
        paths.append(path)
    return paths
