"""Synthetic videos of textured blobs moving over a textured background.

Shapes are rasterised on the patch grid, so every ground-truth patch is
fully covered by its instance. Object texture moves with the object; the
background texture is static apart from per-frame pixel noise. Motion is
linear with reflection at the borders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensor_math import SeededRng

SMALL_MAX = 0.10
MEDIUM_MAX = 0.20


@dataclass(frozen=True)
class InstanceSpec:
    shape: str = "disc"
    area_fraction: float = 0.1
    velocity: tuple[float, float] = (1.0, 0.0)  # (dx, dy) in patches per frame
    texture_amplitude: float = 0.15
    start: tuple[float, float] | None = None  # centre (x, y) in patch units; random if None

    def __post_init__(self):
        if self.shape not in ("disc", "rect"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if not 0 < self.area_fraction < 1:
            raise ValueError("area_fraction must be in (0, 1)")


@dataclass(frozen=True)
class SynthScenario:
    seed: int = 0
    frames: int = 8
    grid: tuple[int, int] = (10, 10)
    patch_size: int = 4
    channels: int = 3
    instances: tuple[InstanceSpec, ...] = (InstanceSpec(),)
    background_amplitude: float = 0.15
    fg_offset: float = 0.15
    pixel_noise: float = 0.03
    blank_prefix: int = 0
    detail: float = 0.3

    @property
    def n_patches(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def total_frames(self) -> int:
        return self.blank_prefix + self.frames


@dataclass
class GtInstanceMask:
    frame: int
    instance: int
    patches: np.ndarray  # bool, length N

    @property
    def area_fraction(self) -> float:
        return float(self.patches.mean())


@dataclass
class SynthVideo:
    scenario: SynthScenario
    frames: np.ndarray  # (T, C, H, W) in [0, 1]
    gt: list[GtInstanceMask] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def fg(self) -> np.ndarray:
        """(T, N) union of instance patches per frame."""
        out = np.zeros((self.n_frames, self.scenario.n_patches), dtype=bool)
        for m in self.gt:
            out[m.frame] |= m.patches
        return out

    def instances_at(self, t: int) -> list[GtInstanceMask]:
        return [m for m in self.gt if m.frame == t]


def size_stratum(area_fraction: float) -> str:
    if area_fraction <= SMALL_MAX:
        return "S"
    if area_fraction <= MEDIUM_MAX:
        return "M"
    return "L"


def _footprint(spec: InstanceSpec, n_patches: int) -> np.ndarray:
    """Offsets (drow, dcol) of the shape's patches relative to its centre cell."""
    area = spec.area_fraction * n_patches
    if spec.shape == "rect":
        side = max(1, int(round(math.sqrt(area))))
        other = max(1, int(round(area / side)))
        r0, c0 = -(other // 2), -(side // 2)
        rr, cc = np.mgrid[r0 : r0 + other, c0 : c0 + side]
        return np.stack([rr.ravel(), cc.ravel()], axis=1)
    radius = math.sqrt(area / math.pi)
    span = int(math.ceil(radius)) + 1
    rr, cc = np.mgrid[-span : span + 1, -span : span + 1]
    inside = rr**2 + cc**2 <= radius**2 + 1e-9
    return np.stack([rr[inside], cc[inside]], axis=1)


def _extent(offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return offsets.min(axis=0), offsets.max(axis=0)


def _reflect(pos: float, lo: float, hi: float) -> float:
    if hi <= lo:
        return lo
    span = hi - lo
    u = (pos - lo) % (2 * span)
    return lo + (u if u <= span else 2 * span - u)


def _patch_texture(rng: SeededRng, shape: tuple[int, int], amplitude: float, p: int, channels: int,
                   detail: float = 0.3) -> np.ndarray:
    """Per-cell level plus per-pixel detail (``detail`` times the amplitude) so patches are distinctive."""
    cell = rng.normal(size=shape, scale=amplitude)
    up = np.kron(cell, np.ones((p, p)))
    up = up + rng.normal(size=up.shape, scale=amplitude * detail)
    tint = 1.0 + rng.normal(size=channels, scale=0.05)
    return up[None, :, :] * tint[:, None, None]


def generate(scenario: SynthScenario) -> SynthVideo:
    gh, gw = scenario.grid
    p = scenario.patch_size
    n = scenario.n_patches
    rng = SeededRng(scenario.seed)
    h, w = gh * p, gw * p

    base = 0.45 + rng.normal(size=scenario.channels, scale=0.03)
    background = base[:, None, None] + _patch_texture(rng.child(1), (gh, gw), scenario.background_amplitude, p, scenario.channels,
                                                    scenario.detail)

    footprints, positions, textures = [], [], []
    for k, spec in enumerate(scenario.instances):
        off = _footprint(spec, n)
        lo, hi = _extent(off)
        if hi[0] - lo[0] + 1 > gh or hi[1] - lo[1] + 1 > gw:
            raise ValueError(f"instance {k} does not fit in grid {scenario.grid}")
        if spec.start is None:
            r = rng.uniform(low=-lo[0], high=gh - 1 - hi[0])
            c = rng.uniform(low=-lo[1], high=gw - 1 - hi[1])
        else:
            c, r = spec.start
        footprints.append(off)
        positions.append((float(r), float(c)))
        size = (hi - lo + 1)
        tex = _patch_texture(rng.child(10 + k), (int(size[0]), int(size[1])), spec.texture_amplitude, p,
                             scenario.channels, scenario.detail)
        textures.append((tex, lo))

    frames = np.empty((scenario.total_frames, scenario.channels, h, w))
    gt: list[GtInstanceMask] = []
    noise_rng = rng.child(2)
    for t in range(scenario.total_frames):
        if t < scenario.blank_prefix:
            frames[t] = 1.0
            continue
        tc = t - scenario.blank_prefix
        img = background + noise_rng.normal(size=(scenario.channels, h, w), scale=scenario.pixel_noise)
        owner = -np.ones((gh, gw), dtype=np.int64)
        for k, spec in enumerate(scenario.instances):
            off = footprints[k]
            lo, hi = _extent(off)
            r0, c0 = positions[k]
            r = _reflect(r0 + spec.velocity[1] * tc, -lo[0], gh - 1 - hi[0])
            c = _reflect(c0 + spec.velocity[0] * tc, -lo[1], gw - 1 - hi[1])
            cr, cc = int(round(r)), int(round(c))
            tex, tlo = textures[k]
            for dr, dc in off:
                pr, pc = cr + dr, cc + dc
                ty, tx = (dr - tlo[0]) * p, (dc - tlo[1]) * p
                ys, xs = pr * p, pc * p
                img[:, ys : ys + p, xs : xs + p] = (
                    base[:, None, None] + scenario.fg_offset + tex[:, ty : ty + p, tx : tx + p]
                    + noise_rng.normal(size=(scenario.channels, p, p), scale=scenario.pixel_noise)
                )
                owner[pr, pc] = k
        frames[t] = np.clip(img, 0.0, 1.0)
        for k in range(len(scenario.instances)):
            patches = (owner == k).ravel()
            if patches.any():
                gt.append(GtInstanceMask(t, k, patches))
    return SynthVideo(scenario, frames, gt)


def default_suite(seed: int = 0, count: int = 5, frames: int = 8, blank_prefix: int = 0,
                  grid: tuple[int, int] = (10, 10), fg_offset: float = 0.15) -> list[SynthScenario]:
    """Small benchmark mix: a small and a medium instance, plus a large one in every other scenario."""
    rng = SeededRng(seed).child(99)
    out = []
    for i in range(count):
        insts = []
        for frac in (0.05, 0.12) + ((0.22,) if i % 2 == 0 else ()):
            ang = rng.uniform(0, 2 * math.pi)
            speed = rng.uniform(0.6, 1.2)
            insts.append(InstanceSpec(
                shape="disc" if rng.uniform() < 0.6 else "rect",
                area_fraction=frac,
                velocity=(speed * math.cos(ang), speed * math.sin(ang)),
                texture_amplitude=0.15,
            ))
        out.append(SynthScenario(seed=seed * 1000 + i, frames=frames, grid=grid,
                                 instances=tuple(insts), blank_prefix=blank_prefix, fg_offset=fg_offset))
    return out


# --- file formats -------------------------------------------------------

def write_pgm(path, gray: np.ndarray) -> None:
    """Binary P5 image from an (H, W) array of values in [0, 255]."""
    g = np.clip(np.rint(np.asarray(gray, dtype=np.float64)), 0, 255).astype(np.uint8)
    h, w = g.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + g.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError("16-bit PGM not supported")
    pos += 1
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


def export_video(video: SynthVideo, outdir) -> list[Path]:
    """One PGM per frame (channel mean) plus one GT PGM per frame (instance id + 1 as gray level)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sc = video.scenario
    p = sc.patch_size
    written = []
    for t in range(video.n_frames):
        fpath = outdir / f"frame_{t:03d}.pgm"
        write_pgm(fpath, video.frames[t].mean(axis=0) * 255.0)
        ids = np.zeros(sc.n_patches)
        for m in video.instances_at(t):
            ids[m.patches] = m.instance + 1
        gpath = outdir / f"gt_{t:03d}.pgm"
        write_pgm(gpath, np.kron(ids.reshape(sc.grid), np.ones((p, p))))
        written += [fpath, gpath]
    return written


def parse_scenario(text: str) -> SynthScenario:
    """Read ``key = value`` lines; ``instance = shape area dx,dy [texture]`` may repeat."""
    from .config import parse_kv

    kv, instances = parse_kv(text, repeatable=("instance",))
    fields = {}
    for key, val in kv.items():
        if key in ("seed", "frames", "patch_size", "channels", "blank_prefix"):
            fields[key] = int(val)
        elif key == "grid":
            a, b = val.lower().split("x")
            fields[key] = (int(a), int(b))
        elif key in ("background_amplitude", "fg_offset", "pixel_noise", "detail"):
            fields[key] = float(val)
        else:
            raise ValueError(f"unknown scenario key {key!r}")
    specs = []
    for line in instances.get("instance", []):
        parts = line.split()
        if len(parts) < 3:
            raise ValueError(f"bad instance line {line!r}")
        dx, dy = (float(v) for v in parts[2].split(","))
        tex = float(parts[3]) if len(parts) > 3 else 0.15
        specs.append(InstanceSpec(parts[0], float(parts[1]), (dx, dy), tex))
    sc = SynthScenario(**fields)
    if specs:
        sc = replace(sc, instances=tuple(specs))
    return sc


def format_scenario(sc: SynthScenario) -> str:
    lines = [
        f"seed = {sc.seed}", f"frames = {sc.frames}", f"grid = {sc.grid[0]}x{sc.grid[1]}",
        f"patch_size = {sc.patch_size}", f"channels = {sc.channels}",
        f"background_amplitude = {sc.background_amplitude!r}", f"fg_offset = {sc.fg_offset!r}",
        f"pixel_noise = {sc.pixel_noise!r}", f"blank_prefix = {sc.blank_prefix}", f"detail = {sc.detail!r}",
    ]
    for spec in sc.instances:
        lines.append(f"instance = {spec.shape} {spec.area_fraction!r} {spec.velocity[0]!r},{spec.velocity[1]!r} {spec.texture_amplitude!r}")
    return "\n".join(lines) + "\n"
