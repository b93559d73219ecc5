"""Temporal patch pruning for vision transformers on video, at desk scale.

A frozen toy ViT processes synthetic video frame by frame. A Mapping-Selective
Module reuses the previous frame's deep features to prune patches early, and
Selective Modules prune further at fixed depths.
"""

from .gumbel import GumbelConfig, gumbel_hard, gumbel_soft
from .metrics import FgsProbe, IoiReport, PkrReport, compute_ioi, compute_pkr, probe_fgs
from .pipeline import PipelineConfig, RunArtifacts, VppModel, run_video, train_heads
from .synth_video import InstanceSpec, SynthScenario, generate
from .vit_sim import VitConfig, VitWeights

__all__ = [
    "GumbelConfig", "gumbel_hard", "gumbel_soft", "FgsProbe", "IoiReport", "PkrReport", "compute_ioi",
    "compute_pkr", "probe_fgs", "PipelineConfig", "RunArtifacts", "VppModel", "run_video", "train_heads",
    "InstanceSpec", "SynthScenario", "generate", "VitConfig", "VitWeights",
]
