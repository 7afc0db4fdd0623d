"""Synthetic continuous-signing clips with ground-truth instrumentation.

Each gloss id owns a motion program: a colored shape sweeping along a
trajectory over a static background of smooth color noise plus frozen
gloss lookalikes.  Per frame the lookalikes are indistinguishable from a
real signing, so label evidence lives entirely in what moves.  Sentences
concatenate gloss segments separated by idle frames that repeat the
background unchanged, so adjacent-frame differences vanish exactly
between glosses.  Every sample carries the pixel mask of the informative
region per frame and a per-frame motion flag, so attention statistics can
be computed against ground truth.

Frames are quantized to multiples of 1/255, which makes the uint8 disk
cache lossless.
"""

from __future__ import annotations

import colorsys
import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ChecksumError, ConfigError, VersionMismatchError

_SHAPES = ("square", "disc", "diamond")
_TRAJECTORIES = ("sweep_right", "sweep_down", "diagonal", "orbit")


@dataclass(frozen=True)
class DataConfig:
    """Renderer geometry and sentence statistics."""

    vocab_size: int = 12
    render_size: int = 32
    min_sentence: int = 2
    max_sentence: int = 3
    min_gloss_frames: int = 6
    max_gloss_frames: int = 9
    min_idle_frames: int = 2
    max_idle_frames: int = 3
    noise_level: float = 0.10
    min_distractors: int = 1
    max_distractors: int = 2
    # the moving shape is blended at this opacity while distractors are
    # opaque, so the informative signal is the weakest content on screen
    shape_opacity: float = 0.8

    def validate(self) -> None:
        if self.vocab_size < 1 or self.vocab_size > len(_SHAPES) * len(_TRAJECTORIES):
            raise ConfigError(
                f"vocab_size must be in [1, {len(_SHAPES) * len(_TRAJECTORIES)}], got {self.vocab_size}")
        if self.render_size < 8:
            raise ConfigError(f"render_size must be at least 8, got {self.render_size}")
        if not 1 <= self.min_sentence <= self.max_sentence:
            raise ConfigError("sentence length bounds must satisfy 1 <= min <= max")
        if not 1 <= self.min_gloss_frames <= self.max_gloss_frames:
            raise ConfigError("gloss frame bounds must satisfy 1 <= min <= max")
        if not 0 <= self.min_idle_frames <= self.max_idle_frames:
            raise ConfigError("idle frame bounds must satisfy 0 <= min <= max")
        if not 0.0 <= self.noise_level <= 0.3:
            raise ConfigError(f"noise_level must be in [0, 0.3], got {self.noise_level}")
        if not 0 <= self.min_distractors <= self.max_distractors:
            raise ConfigError("distractor bounds must satisfy 0 <= min <= max")
        if not 0.0 < self.shape_opacity <= 1.0:
            raise ConfigError(f"shape_opacity must be in (0, 1], got {self.shape_opacity}")


@dataclass(frozen=True)
class AugmentConfig:
    resize_to: int = 32
    crop_to: int = 28
    hflip_prob: float = 0.5
    temporal_scale_range: float = 0.2

    def validate(self) -> None:
        if self.crop_to > self.resize_to:
            raise ConfigError(f"crop_to {self.crop_to} exceeds resize_to {self.resize_to}")
        if self.crop_to < 1:
            raise ConfigError(f"crop_to must be positive, got {self.crop_to}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ConfigError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")
        if not 0.0 <= self.temporal_scale_range <= 0.5:
            raise ConfigError(
                f"temporal_scale_range must be in [0, 0.5], got {self.temporal_scale_range}")


@dataclass(frozen=True)
class GlossProgram:
    """What one gloss looks like: shape silhouette, path, and color."""

    gloss: int
    shape: str
    trajectory: str
    color: tuple[float, float, float]


@dataclass
class SyntheticSample:
    frames: np.ndarray        # (T, 3, H, W) float32 in [0, 1]
    labels: list[int]         # gloss ids, 1-based (0 is the CTC blank)
    region_masks: np.ndarray  # (T, H, W) bool, informative pixels
    motion_flags: np.ndarray  # (T,) bool, True on gloss frames

    @property
    def t_len(self) -> int:
        return self.frames.shape[0]


def make_vocab(cfg: DataConfig) -> list[GlossProgram]:
    """Deterministic gloss programs; index g-1 holds gloss id g."""
    cfg.validate()
    programs = []
    for g in range(1, cfg.vocab_size + 1):
        hue = (g - 1) / cfg.vocab_size
        color = colorsys.hsv_to_rgb(hue, 0.9, 0.95)
        programs.append(GlossProgram(
            gloss=g,
            shape=_SHAPES[(g - 1) % len(_SHAPES)],
            trajectory=_TRAJECTORIES[(g - 1) // len(_SHAPES) % len(_TRAJECTORIES)],
            color=color,
        ))
    return programs


def _trajectory_point(kind: str, phase: float) -> tuple[float, float]:
    """Informative-region center in unit coordinates at phase in [0, 1]."""
    lo, hi = 0.25, 0.75
    run = lo + (hi - lo) * phase
    if kind == "sweep_right":
        return run, 0.5
    if kind == "sweep_down":
        return 0.5, run
    if kind == "diagonal":
        return run, run
    if kind == "orbit":
        ang = 2.0 * np.pi * phase
        return 0.5 + 0.22 * np.cos(ang), 0.5 + 0.22 * np.sin(ang)
    raise ConfigError(f"unknown trajectory {kind!r}")


def _shape_mask(kind: str, size: int, cx: float, cy: float, radius: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    dx = (xs + 0.5) / size - cx
    dy = (ys + 0.5) / size - cy
    if kind == "square":
        return (np.abs(dx) <= radius) & (np.abs(dy) <= radius)
    if kind == "disc":
        return dx * dx + dy * dy <= radius * radius
    if kind == "diamond":
        return np.abs(dx) + np.abs(dy) <= radius * 1.3
    raise ConfigError(f"unknown shape {kind!r}")


def _background(rng, size: int, level: float) -> np.ndarray:
    """Static distractor field shared by every frame of a clip.

    Smooth colored blobs at +-level around mid gray: strong enough that a
    frame-wise feature extractor responds to them, constant in time so only
    the moving shape carries label information.
    """
    coarse = rng.uniform(-1.0, 1.0, size=(3, 5, 5)).astype(np.float32)
    grid = np.linspace(0.0, 4.0, size, dtype=np.float32)
    i0 = np.floor(grid).astype(np.int64)
    i1 = np.minimum(i0 + 1, 4)
    fr = grid - i0
    rows = coarse[:, i0] * (1.0 - fr)[None, :, None] + coarse[:, i1] * fr[None, :, None]
    field = (rows[:, :, i0] * (1.0 - fr)[None, None, :]
             + rows[:, :, i1] * fr[None, None, :])
    return 0.5 + level * field


def _quantize(frames: np.ndarray) -> np.ndarray:
    return (np.clip(frames, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8).astype(np.float32) / 255.0


def render_sentence(labels, vocab: list[GlossProgram], seed,
                    cfg: DataConfig | None = None) -> SyntheticSample:
    """Render one sentence; bit-identical for identical (labels, seed, cfg)."""
    cfg = cfg or DataConfig()
    cfg.validate()
    labels = [int(g) for g in labels]
    if not labels:
        raise ConfigError("a sentence needs at least one gloss")
    for g in labels:
        if not 1 <= g <= len(vocab):
            raise ConfigError(f"gloss id {g} outside vocabulary [1, {len(vocab)}]")

    entropy = [int(s) for s in np.atleast_1d(seed)] + labels
    rng = np.random.default_rng(entropy)
    size = cfg.render_size

    segments = []  # (gloss id or 0 for idle, frame count)
    segments.append((0, int(rng.integers(cfg.min_idle_frames, cfg.max_idle_frames + 1))))
    for g in labels:
        segments.append((g, int(rng.integers(cfg.min_gloss_frames, cfg.max_gloss_frames + 1))))
        segments.append((0, int(rng.integers(cfg.min_idle_frames, cfg.max_idle_frames + 1))))

    t_total = sum(n for _, n in segments)
    bg = _background(rng, size, cfg.noise_level)
    # burn gloss lookalikes into the static field: per-frame appearance
    # cannot separate them from true signings, only their stillness can
    for _ in range(int(rng.integers(cfg.min_distractors, cfg.max_distractors + 1))):
        prog = vocab[int(rng.integers(0, len(vocab)))]
        m = _shape_mask(prog.shape, size,
                        float(rng.uniform(0.15, 0.85)), float(rng.uniform(0.15, 0.85)),
                        float(rng.uniform(0.10, 0.14)))
        for ch, v in enumerate(prog.color):
            bg[ch][m] = v
    frames = np.broadcast_to(bg, (t_total, 3, size, size)).astype(np.float32).copy()
    masks = np.zeros((t_total, size, size), dtype=bool)
    flags = np.zeros(t_total, dtype=bool)

    t = 0
    for g, n in segments:
        if g:
            prog = vocab[g - 1]
            radius = float(rng.uniform(0.10, 0.14))
            for f in range(n):
                phase = f / max(n - 1, 1)
                cx, cy = _trajectory_point(prog.trajectory, phase)
                m = _shape_mask(prog.shape, size, cx, cy, radius)
                a = cfg.shape_opacity
                for ch, v in enumerate(prog.color):
                    frames[t + f, ch][m] = (1.0 - a) * bg[ch][m] + a * v
                masks[t + f] = m
                flags[t + f] = True
        t += n

    return SyntheticSample(_quantize(frames), labels, masks, flags)


def make_sentences(count: int, cfg: DataConfig, seed: int) -> list[list[int]]:
    """Label sequences for a dataset; sentence i depends only on (seed, i)."""
    cfg.validate()
    out = []
    for i in range(count):
        rng = np.random.default_rng([int(seed), int(i)])
        length = int(rng.integers(cfg.min_sentence, cfg.max_sentence + 1))
        out.append([int(g) for g in rng.integers(1, cfg.vocab_size + 1, size=length)])
    return out


def generate_dataset(cfg: DataConfig, count: int, seed: int) -> list[SyntheticSample]:
    vocab = make_vocab(cfg)
    sentences = make_sentences(count, cfg, seed)
    return [render_sentence(s, vocab, [int(seed), int(i)], cfg)
            for i, s in enumerate(sentences)]


# -- augmentation ------------------------------------------------------------


def _resample_indices(t: int, factor: float) -> np.ndarray:
    """Nearest-index temporal resampling grid; keeps masks boolean."""
    new_t = max(4, int(round(t * factor)))
    if new_t == t:
        return np.arange(t)
    return np.round(np.linspace(0.0, t - 1, new_t)).astype(np.int64)


def _resize_nearest(frames: np.ndarray, masks: np.ndarray, to: int):
    size = frames.shape[-1]
    if to == size:
        return frames, masks
    idx = np.minimum((np.arange(to) * size) // to, size - 1)
    return frames[..., idx[:, None], idx[None, :]], masks[..., idx[:, None], idx[None, :]]


def augment(sample: SyntheticSample, acfg: AugmentConfig, seed) -> SyntheticSample:
    """Temporal rescale, spatial resize, random crop, random horizontal flip."""
    acfg.validate()
    rng = np.random.default_rng([int(s) for s in np.atleast_1d(seed)])
    f = acfg.temporal_scale_range
    factor = float(rng.uniform(1.0 - f, 1.0 + f)) if f > 0 else 1.0
    idx = _resample_indices(sample.t_len, factor)
    frames = sample.frames[idx]
    masks = sample.region_masks[idx]
    flags = sample.motion_flags[idx]

    frames, masks = _resize_nearest(frames, masks, acfg.resize_to)
    span = acfg.resize_to - acfg.crop_to
    oy = int(rng.integers(0, span + 1)) if span else 0
    ox = int(rng.integers(0, span + 1)) if span else 0
    frames = frames[:, :, oy : oy + acfg.crop_to, ox : ox + acfg.crop_to]
    masks = masks[:, oy : oy + acfg.crop_to, ox : ox + acfg.crop_to]

    if rng.random() < acfg.hflip_prob:
        frames = frames[..., ::-1]
        masks = masks[..., ::-1]

    return SyntheticSample(np.ascontiguousarray(frames), list(sample.labels),
                           np.ascontiguousarray(masks), flags.copy())


def center_crop(sample: SyntheticSample, acfg: AugmentConfig) -> SyntheticSample:
    """Deterministic evaluation view: resize then central crop, no flip."""
    acfg.validate()
    frames, masks = _resize_nearest(sample.frames, sample.region_masks, acfg.resize_to)
    off = (acfg.resize_to - acfg.crop_to) // 2
    frames = frames[:, :, off : off + acfg.crop_to, off : off + acfg.crop_to]
    masks = masks[:, off : off + acfg.crop_to, off : off + acfg.crop_to]
    return SyntheticSample(np.ascontiguousarray(frames), list(sample.labels),
                           np.ascontiguousarray(masks), sample.motion_flags.copy())


# -- batching and splits ------------------------------------------------------


@dataclass
class VideoBatch:
    frames: np.ndarray        # (B, T_max, 3, H, W), zero padded
    lengths: list[int]
    labels: list[list[int]]


def batch_pad(samples: list[SyntheticSample]) -> VideoBatch:
    if not samples:
        raise ConfigError("batch_pad needs a non-empty batch")
    t_max = max(s.t_len for s in samples)
    b = len(samples)
    _, c, h, w = samples[0].frames.shape
    frames = np.zeros((b, t_max, c, h, w), dtype=np.float32)
    for i, s in enumerate(samples):
        frames[i, : s.t_len] = s.frames
    return VideoBatch(frames, [s.t_len for s in samples], [list(s.labels) for s in samples])


def split_dataset(total: int, ratios, seed: int):
    """Disjoint covering id lists, sized by floor with leftovers to the front."""
    ratios = [float(r) for r in ratios]
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")
    if any(r < 0 for r in ratios):
        raise ConfigError("split ratios must be non-negative")
    sizes = [int(np.floor(r * total)) for r in ratios]
    for i in range(total - sum(sizes)):
        sizes[i % len(sizes)] += 1
    perm = np.random.default_rng(seed).permutation(total)
    out, at = [], 0
    for n in sizes:
        out.append([int(i) for i in perm[at : at + n]])
        at += n
    return tuple(out)


# -- on-disk sample cache -----------------------------------------------------

_MAGIC = b"EMPHSMP"
_CACHE_VERSION = 1


def save_sample(path: str, sample: SyntheticSample) -> None:
    """Little-endian layout: magic, version, dims, labels, frames (uint8),
    packed masks, packed flags, then a sha256 trailer over all prior bytes."""
    t, _, h, w = sample.frames.shape
    head = _MAGIC + struct.pack(
        "<HHHHH", _CACHE_VERSION, t, h, w, len(sample.labels))
    head += struct.pack(f"<{len(sample.labels)}H", *sample.labels)
    body = (np.round(sample.frames * 255.0).astype(np.uint8).tobytes()
            + np.packbits(sample.region_masks).tobytes()
            + np.packbits(sample.motion_flags).tobytes())
    blob = head + body
    blob += hashlib.sha256(blob).digest()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_sample(path: str) -> SyntheticSample:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 42 or blob[: len(_MAGIC)] != _MAGIC:
        raise ChecksumError(f"{path}: not a sample cache file")
    if hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
        raise ChecksumError(f"{path}: sha256 mismatch, file corrupted")
    at = len(_MAGIC)
    version, t, h, w, n_labels = struct.unpack_from("<HHHHH", blob, at)
    if version != _CACHE_VERSION:
        raise VersionMismatchError(
            f"{path}: cache version {version}, this build reads {_CACHE_VERSION}")
    at += 10
    labels = list(struct.unpack_from(f"<{n_labels}H", blob, at))
    at += 2 * n_labels
    n_frame = t * 3 * h * w
    frames = np.frombuffer(blob, np.uint8, n_frame, at).reshape(t, 3, h, w)
    at += n_frame
    n_mask = (t * h * w + 7) // 8
    masks = np.unpackbits(np.frombuffer(blob, np.uint8, n_mask, at),
                          count=t * h * w).reshape(t, h, w).astype(bool)
    at += n_mask
    n_flag = (t + 7) // 8
    flags = np.unpackbits(np.frombuffer(blob, np.uint8, n_flag, at), count=t).astype(bool)
    return SyntheticSample(frames.astype(np.float32) / 255.0, labels, masks, flags)


def write_cache(directory: str, cfg: DataConfig, count: int, seed: int) -> list[str]:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for i, sample in enumerate(generate_dataset(cfg, count, seed)):
        p = os.path.join(directory, f"sample_{i:05d}.bin")
        save_sample(p, sample)
        paths.append(p)
    return paths
