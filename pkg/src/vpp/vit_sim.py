"""A minimal mask-aware ViT over patch tokens.

Pruned tokens are gathered out before each block, so attention and MLP cost
scale with the number of active tokens. There is no class token. Backbone
weights are drawn once from a seed and then frozen.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor_math import DimensionError, SeededRng, gelu, layer_norm, row_softmax


@dataclass(frozen=True)
class VitConfig:
    layers: int = 12
    embed_dim: int = 32
    heads: int = 4
    mlp_ratio: float = 4.0
    grid: tuple[int, int] = (10, 10)
    patch_size: int = 4
    channels: int = 3
    ln_eps: float = 1e-6

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.layers < 10:
            raise ValueError("need at least 10 layers so stages 1, 3, 6, 9 exist")

    @property
    def n_patches(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size**2

    @property
    def hidden_dim(self) -> int:
        return int(round(self.mlp_ratio * self.embed_dim))

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.grid[0] * self.patch_size, self.grid[1] * self.patch_size)

    def coords(self) -> np.ndarray:
        """(row, col) grid coordinates of every patch, row-major."""
        r, c = np.divmod(np.arange(self.n_patches), self.grid[1])
        return np.stack([r, c], axis=1).astype(np.float64)


@dataclass
class PatchFeatures:
    frame: int
    layer: int
    tokens: np.ndarray
    active_ids: np.ndarray
    grid: tuple[int, int]

    def __post_init__(self):
        self.active_ids = np.asarray(self.active_ids, dtype=np.int64)
        if self.tokens.ndim != 2 or self.tokens.shape[0] != len(self.active_ids):
            raise DimensionError("tokens rows must match active_ids")
        n = self.grid[0] * self.grid[1]
        if len(self.active_ids) and (np.any(np.diff(self.active_ids) <= 0) or self.active_ids[-1] >= n or self.active_ids[0] < 0):
            raise ValueError("active_ids must be strictly increasing and inside the grid")

    @property
    def coords(self) -> np.ndarray:
        r, c = np.divmod(self.active_ids, self.grid[1])
        return np.stack([r, c], axis=1).astype(np.float64)

    @property
    def n_active(self) -> int:
        return len(self.active_ids)

    def keep_vector(self) -> np.ndarray:
        keep = np.zeros(self.grid[0] * self.grid[1], dtype=bool)
        keep[self.active_ids] = True
        return keep


@dataclass
class PruneMask:
    layer: int
    frame: int
    keep: np.ndarray

    def __post_init__(self):
        self.keep = np.asarray(self.keep, dtype=bool)
        if self.keep.ndim != 1:
            raise DimensionError("keep must be a vector")

    @property
    def ids(self) -> np.ndarray:
        return np.flatnonzero(self.keep)

    @property
    def density(self) -> float:
        return float(self.keep.mean())

    @classmethod
    def dense(cls, n: int, layer: int = 0, frame: int = 0) -> "PruneMask":
        return cls(layer=layer, frame=frame, keep=np.ones(n, dtype=bool))


def gather(x: PatchFeatures, mask: PruneMask) -> PatchFeatures:
    """Drop tokens outside ``mask``; the mask may only remove tokens."""
    keep_rows = mask.keep[x.active_ids]
    if not keep_rows.any():
        raise ValueError("mask removes every active token")
    return PatchFeatures(x.frame, x.layer, x.tokens[keep_rows], x.active_ids[keep_rows], x.grid)


@dataclass
class BlockWeights:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w_fc1: np.ndarray
    b_fc1: np.ndarray
    w_fc2: np.ndarray
    b_fc2: np.ndarray
    dist_slope: np.ndarray  # per head; attention logit penalty per unit grid distance

    FIELDS = ("ln1_g", "ln1_b", "w_q", "w_k", "w_v", "w_o", "b_o",
              "ln2_g", "ln2_b", "w_fc1", "b_fc1", "w_fc2", "b_fc2", "dist_slope")


def sinusoidal_positions(cfg: VitConfig) -> np.ndarray:
    """2-D sine/cosine table: half the channels encode the row, half the column."""
    e = cfg.embed_dim
    quarter = e // 4
    freqs = 1.0 / (4.0 ** (np.arange(quarter) / max(quarter, 1)))
    rc = cfg.coords()
    parts = []
    for axis in (0, 1):
        ang = rc[:, axis : axis + 1] * freqs[None, :]
        parts += [np.sin(ang), np.cos(ang)]
    pos = np.concatenate(parts, axis=1)
    if pos.shape[1] < e:
        pos = np.pad(pos, ((0, 0), (0, e - pos.shape[1])))
    return pos


@dataclass
class VitWeights:
    patch_proj: np.ndarray
    patch_bias: np.ndarray
    pos_embed: np.ndarray
    blocks: list[BlockWeights] = field(default_factory=list)

    @classmethod
    def init(cls, cfg: VitConfig, seed: int = 0, *, pos_scale: float = 1.5, qk_scale: float = 2.0,
             attn_gain: float = 1.0, mlp_gain: float = 0.5, proj_gain: float = 4.0,
             slope: float = 1.0, vo_mode: str = "orth") -> "VitWeights":
        """Scaled-Gaussian init. Query and key projections share one draw, which
        makes attention scores a positive semi-definite similarity so tokens
        attend mostly to tokens that look (and sit) like themselves."""
        rng = SeededRng(seed)
        e, h, p = cfg.embed_dim, cfg.hidden_dim, cfg.patch_dim
        proj = rng.normal(size=(p, e)) / math.sqrt(p) * proj_gain
        bias = np.zeros(e)
        pos = sinusoidal_positions(cfg) * pos_scale
        blocks = []
        for _ in range(cfg.layers):
            w_q = rng.normal(size=(e, e)) * qk_scale / math.sqrt(e)
            if vo_mode == "orth":
                w_v, _ = np.linalg.qr(rng.normal(size=(e, e)))
                w_o = w_v.T * attn_gain
            else:
                w_v = rng.normal(size=(e, e)) / math.sqrt(e)
                w_o = rng.normal(size=(e, e)) * attn_gain / math.sqrt(e)
            blocks.append(BlockWeights(
                ln1_g=np.ones(e), ln1_b=np.zeros(e),
                w_q=w_q, w_k=w_q.copy(),
                w_v=w_v, w_o=w_o,
                b_o=np.zeros(e),
                ln2_g=np.ones(e), ln2_b=np.zeros(e),
                w_fc1=rng.normal(size=(e, h)) / math.sqrt(e),
                b_fc1=np.zeros(h),
                w_fc2=rng.normal(size=(h, e)) * mlp_gain / math.sqrt(h),
                b_fc2=np.zeros(e),
                dist_slope=slope * np.linspace(0.5, 1.5, cfg.heads),
            ))
        return cls(proj, bias, pos, blocks)

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {"patch_proj": self.patch_proj, "patch_bias": self.patch_bias, "pos_embed": self.pos_embed}
        for i, b in enumerate(self.blocks):
            for name in BlockWeights.FIELDS:
                out[f"block{i}.{name}"] = getattr(b, name)
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "VitWeights":
        n_blocks = len({k.split(".")[0] for k in arrays if k.startswith("block")})
        blocks = [BlockWeights(**{name: arrays[f"block{i}.{name}"] for name in BlockWeights.FIELDS})
                  for i in range(n_blocks)]
        return cls(arrays["patch_proj"], arrays["patch_bias"], arrays["pos_embed"], blocks)


def patchify(image: np.ndarray, cfg: VitConfig) -> np.ndarray:
    """(C, H, W) image -> (N, C*p*p) flattened patches in row-major grid order."""
    image = np.asarray(image, dtype=np.float64)
    c, hh, ww = image.shape
    p = cfg.patch_size
    if c != cfg.channels or hh % p or ww % p or (hh // p, ww // p) != tuple(cfg.grid):
        raise DimensionError(f"image {image.shape} does not fit grid {cfg.grid} with patch {p}")
    gh, gw = hh // p, ww // p
    x = image.reshape(c, gh, p, gw, p).transpose(1, 3, 0, 2, 4)
    return x.reshape(gh * gw, c * p * p)


def embed_frame(image: np.ndarray, cfg: VitConfig, weights: VitWeights, frame: int = 0) -> PatchFeatures:
    tokens = patchify(image, cfg) @ weights.patch_proj + weights.patch_bias + weights.pos_embed
    return PatchFeatures(frame, 0, tokens, np.arange(cfg.n_patches), tuple(cfg.grid))


def grid_distances(coords: np.ndarray) -> np.ndarray:
    return np.sqrt(((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1))


def attention(x: np.ndarray, coords: np.ndarray, b: BlockWeights, heads: int, eps: float) -> np.ndarray:
    """Multi-head self-attention over the rows of ``x`` (pre-norm, no residual).

    Each head subtracts ``dist_slope[h] * grid_distance`` from its logits, a
    fixed locality prior in the spirit of relative position biases."""
    n, e = x.shape
    dh = e // heads
    z = layer_norm(x, b.ln1_g, b.ln1_b, eps)
    q = (z @ b.w_q).reshape(n, heads, dh).transpose(1, 0, 2)
    k = (z @ b.w_k).reshape(n, heads, dh).transpose(1, 0, 2)
    v = (z @ b.w_v).reshape(n, heads, dh).transpose(1, 0, 2)
    logits = q @ k.transpose(0, 2, 1) / math.sqrt(dh) - b.dist_slope[:, None, None] * grid_distances(coords)[None]
    att = row_softmax(logits)
    out = (att @ v).transpose(1, 0, 2).reshape(n, e)
    return out @ b.w_o + b.b_o


def mlp(x: np.ndarray, b: BlockWeights, eps: float) -> np.ndarray:
    z = layer_norm(x, b.ln2_g, b.ln2_b, eps)
    return gelu(z @ b.w_fc1 + b.b_fc1) @ b.w_fc2 + b.b_fc2


def dense_block(x: np.ndarray, coords: np.ndarray, b: BlockWeights, cfg: VitConfig) -> np.ndarray:
    x = x + attention(x, coords, b, cfg.heads, cfg.ln_eps)
    return x + mlp(x, b, cfg.ln_eps)


def block_forward(x: PatchFeatures, b: BlockWeights, mask: PruneMask | None, cfg: VitConfig) -> PatchFeatures:
    """Run one block over the active tokens of ``x``.

    ``mask`` must describe exactly the active set: gather first with
    :func:`gather`, then call this.
    """
    if mask is not None and not np.array_equal(np.flatnonzero(mask.keep), x.active_ids):
        raise ValueError("mask does not match the active token set")
    out = dense_block(x.tokens, x.coords, b, cfg)
    return PatchFeatures(x.frame, x.layer + 1, out, x.active_ids.copy(), x.grid)


@dataclass
class FlopLedger:
    attention: list[float]
    mlp: list[float]
    overhead: dict[str, float]

    @property
    def backbone_total(self) -> float:
        return float(sum(self.attention) + sum(self.mlp))

    @property
    def overhead_total(self) -> float:
        return float(sum(self.overhead.values()))

    @property
    def total(self) -> float:
        return self.backbone_total + self.overhead_total


def layer_flops(n: float, cfg: VitConfig) -> tuple[float, float]:
    # 2 flops per multiply-add: four E x E projections, then Q K^T and the weighted sum of V
    e = cfg.embed_dim
    att = 2 * (4 * n * e * e) + 2 * (2 * n * n * e)
    mlp_f = 2 * (2 * n * e * cfg.hidden_dim)
    return float(att), float(mlp_f)


def count_flops(cfg: VitConfig, per_layer_active, overhead: dict[str, float] | None = None) -> FlopLedger:
    """Analytic multiply-add count (2 flops each) for blocks 1..L.

    ``per_layer_active[l]`` is the number of tokens entering block ``l + 1``.
    """
    counts = list(per_layer_active)
    if len(counts) != cfg.layers:
        raise ValueError(f"need {cfg.layers} per-layer counts, got {len(counts)}")
    if any(c > cfg.n_patches or c < 0 for c in counts):
        raise ValueError("active count outside [0, N]")
    att, mlp_f = zip(*(layer_flops(c, cfg) for c in counts))
    return FlopLedger(list(att), list(mlp_f), dict(overhead or {}))


SNAPSHOT_MAGIC = b"VPPW"
SNAPSHOT_VERSION = 1


def save_snapshot(path, arrays: dict[str, np.ndarray]) -> None:
    """Flat binary weight file: magic, version, shape table, little-endian doubles."""
    parts = [SNAPSHOT_MAGIC, struct.pack("<II", SNAPSHOT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in arrays.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_snapshot(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a weight snapshot")
    version, count = struct.unpack_from("<II", data, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    off = 12
    table = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        table.append((name, shape))
    out = {}
    for name, shape in table:
        size = int(np.prod(shape)) if shape else 1
        out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
        off += 8 * size
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in snapshot")
    return out
