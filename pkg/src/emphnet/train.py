"""Training loop, Adam with L2 decay, stepped schedule, checkpoints, evaluation.

Every source of randomness is derived statelessly from (seed, purpose, epoch,
sample index), so an interrupted run resumed from its checkpoint walks the
exact same trajectory as an uninterrupted one, bitwise.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .ctc import ctc_loss, edit_alignment, greedy_decode, min_frames
from .errors import (
    ChecksumError,
    ConfigError,
    DivergenceError,
    NonFiniteGradientError,
    VersionMismatchError,
)
from .network import Model
from .synth import AugmentConfig, SyntheticSample, augment, center_crop
from .tensor import Tensor, backward

# entropy tags keeping the stateless RNG streams apart
_TAG_ORDER = 101
_TAG_AUGMENT = 202


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    base_lr: float = 1e-3
    weight_decay: float = 1e-3  # applied through decay_exempt, see adam_step
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 2
    decay_points: tuple[float, ...] = (0.5, 0.75)
    decay_factor: float = 5.0
    keep_checkpoints: int = 1

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.base_lr < 0:
            raise ConfigError(f"base_lr must be non-negative, got {self.base_lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ConfigError("betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        pts = self.decay_points
        if any(not 0.0 < p < 1.0 for p in pts) or list(pts) != sorted(set(pts)):
            raise ConfigError(
                f"decay_points must be strictly increasing within (0, 1), got {pts}")
        if self.decay_factor <= 1.0:
            raise ConfigError(f"decay_factor must exceed 1, got {self.decay_factor}")
        if self.keep_checkpoints < 1:
            raise ConfigError("keep_checkpoints must be at least 1")


def apply_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Piecewise-constant lr: divided by decay_factor at each decay point."""
    if not 0 <= epoch < cfg.epochs:
        raise ConfigError(f"epoch {epoch} outside the scheduled range [0, {cfg.epochs})")
    drops = sum(1 for p in cfg.decay_points if epoch >= int(np.floor(p * cfg.epochs)))
    return cfg.base_lr / cfg.decay_factor ** drops


class AdamState:
    """First/second moment estimates plus the shared step counter."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step = 0


def decay_exempt(name: str) -> bool:
    """Parameters kept out of weight decay.

    Biases, normalization parameters, and branch gains follow common
    practice.  The emphasis modules are exempt wholesale: behind their
    zero-initialized projections they receive no task gradient at first,
    and Adam turns a pure lambda*w gradient into a sign(w) step, so any
    decay at all erases them faster than they can wake.
    """
    if name.endswith((".b", ".gamma", ".beta", ".sigma")):
        return True
    return ".ssem." in name or ".tsem." in name


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float, cfg: TrainConfig) -> None:
    """One update; weight decay enters as the classic L2 gradient term."""
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter {name!r}")
        if cfg.weight_decay and not decay_exempt(name):
            g = g + cfg.weight_decay * p.data
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


# -- checkpoints --------------------------------------------------------------

_CKPT_MAGIC = b"EMPHCKPT"
_CKPT_VERSION = 1


def save_checkpoint(path: str, model: Model, state: AdamState, epoch: int,
                    seed: int, config_hash: str) -> None:
    """Binary layout: magic, version, JSON index, raw blobs, sha256 trailer."""
    blobs: list[bytes] = []
    entries = []
    offset = 0

    def put(kind: str, name: str, arr: np.ndarray):
        nonlocal offset
        raw = arr.tobytes()
        entries.append({"kind": kind, "name": name, "dtype": str(arr.dtype),
                        "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    for k in sorted(model.params):
        put("param", k, model.params[k].data)
    for k in sorted(model.buffers):
        put("buffer", k, model.buffers[k])
    for k in sorted(state.m):
        put("adam_m", k, state.m[k])
        put("adam_v", k, state.v[k])

    header = json.dumps({
        "epoch": epoch, "seed": seed, "config_hash": config_hash,
        "adam_step": state.step, "entries": entries,
    }).encode()
    out = _CKPT_MAGIC + struct.pack("<HI", _CKPT_VERSION, len(header)) + header
    out += b"".join(blobs)
    out += hashlib.sha256(out).digest()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(out)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_CKPT_MAGIC) + 38 or blob[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise ChecksumError(f"{path}: not a checkpoint file")
    if hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
        raise ChecksumError(f"{path}: sha256 mismatch, file corrupted")
    at = len(_CKPT_MAGIC)
    version, header_len = struct.unpack_from("<HI", blob, at)
    if version != _CKPT_VERSION:
        raise VersionMismatchError(
            f"{path}: checkpoint version {version}, this build reads {_CKPT_VERSION}")
    at += 6
    header = json.loads(blob[at : at + header_len])
    at += header_len
    arrays: dict[tuple[str, str], np.ndarray] = {}
    for e in header["entries"]:
        raw = blob[at + e["offset"] : at + e["offset"] + e["nbytes"]]
        arrays[(e["kind"], e["name"])] = np.frombuffer(raw, dtype=e["dtype"]).reshape(
            e["shape"]).copy()
    return {"epoch": header["epoch"], "seed": header["seed"],
            "config_hash": header["config_hash"], "adam_step": header["adam_step"],
            "arrays": arrays}


def restore(model: Model, state: AdamState, ckpt: dict) -> None:
    arrays = ckpt["arrays"]
    for k, p in model.params.items():
        p.data[...] = arrays[("param", k)]
    for k in model.buffers:
        model.buffers[k][...] = arrays[("buffer", k)]
    for k in state.m:
        state.m[k][...] = arrays[("adam_m", k)]
        state.v[k][...] = arrays[("adam_v", k)]
    state.step = ckpt["adam_step"]


def latest_checkpoint(run_dir: str) -> str | None:
    cdir = os.path.join(run_dir, "checkpoints")
    if not os.path.isdir(cdir):
        return None
    best = None
    for f in os.listdir(cdir):
        m = re.fullmatch(r"epoch_(\d+)\.bin", f)
        if m and (best is None or int(m.group(1)) > best[0]):
            best = (int(m.group(1)), os.path.join(cdir, f))
    return best[1] if best else None


# -- the training loop ---------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_wer: float
    dev_loss: float
    dev_wer: float
    grad_norm: float


@dataclass
class TrainResult:
    rows: list[EpochStats] = field(default_factory=list)
    checkpoint: str = ""

    @property
    def final_dev_wer(self) -> float:
        return self.rows[-1].dev_wer if self.rows else float("nan")

    @property
    def best_dev_wer(self) -> float:
        return min(r.dev_wer for r in self.rows) if self.rows else float("nan")


def _metric_line(epoch: int, split: str, loss: float, wer: float) -> list:
    return [epoch, split, f"{loss:.10g}", f"{wer:.10g}"]


def train_run(model: Model, train_set: list[SyntheticSample],
              dev_set: list[SyntheticSample], tcfg: TrainConfig, acfg: AugmentConfig,
              run_dir: str, seed: int, config_hash: str = "",
              stop_after: int | None = None, resume: bool = False,
              log=None) -> TrainResult:
    """Train for tcfg.epochs (or until stop_after), checkpointing per epoch.

    resume=True picks up from the newest checkpoint in run_dir; the model must
    have been built with the same configuration and seed.
    """
    tcfg.validate()
    acfg.validate()
    if not train_set:
        raise ConfigError("training set is empty")
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    metrics_path = os.path.join(run_dir, "metrics.csv")

    state = AdamState(model.params)
    start_epoch = 0
    if resume:
        path = latest_checkpoint(run_dir)
        if path is None:
            raise ConfigError(f"resume requested but {run_dir} has no checkpoints")
        ckpt = load_checkpoint(path)
        if config_hash and ckpt["config_hash"] and ckpt["config_hash"] != config_hash:
            raise ConfigError(
                f"checkpoint config hash {ckpt['config_hash']} does not match {config_hash}")
        if ckpt["seed"] != seed:
            raise ConfigError(
                f"checkpoint was trained with seed {ckpt['seed']}, resume asked for {seed}")
        restore(model, state, ckpt)
        start_epoch = ckpt["epoch"] + 1
    elif os.path.exists(metrics_path):
        os.remove(metrics_path)

    if not os.path.exists(metrics_path):
        with open(metrics_path, "w", newline="") as fh:
            csv.writer(fh).writerow(["epoch", "split", "loss", "wer"])

    result = TrainResult()
    last_ckpt = latest_checkpoint(run_dir) or ""
    end_epoch = tcfg.epochs if stop_after is None else min(stop_after, tcfg.epochs)

    for epoch in range(start_epoch, end_epoch):
        lr = apply_schedule(epoch, tcfg)
        order = np.random.default_rng([seed, _TAG_ORDER, epoch]).permutation(len(train_set))
        model.train_mode()
        losses, grad_norms = [], []
        pairs = []

        for b0 in range(0, len(order), tcfg.batch_size):
            batch_ids = order[b0 : b0 + tcfg.batch_size]
            model.zero_grad()
            batch_losses = []
            for idx in batch_ids:
                s = augment(train_set[idx], acfg, [seed, _TAG_AUGMENT, epoch, int(idx)])
                lattice = model.forward_clip(s.frames)
                loss = ctc_loss(lattice, s.labels, lattice.shape[0])
                backward(tt.scale(loss, 1.0 / len(batch_ids)))
                batch_losses.append(loss.item())
                with tt.no_grad():
                    pairs.append((greedy_decode(lattice.data, lattice.shape[0]), s.labels))
            mean_loss = float(np.mean(batch_losses))
            if not np.isfinite(mean_loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}; last good checkpoint: "
                    f"{last_ckpt or 'none'}")
            sq = 0.0
            for p in model.params.values():
                if p.grad is not None:
                    sq += float(np.sum(np.square(p.grad, dtype=np.float64)))
            grad_norms.append(np.sqrt(sq))
            adam_step(model.params, state, lr, tcfg)
            losses.append(mean_loss)

        train_loss = float(np.mean(losses))
        train_wer = _corpus_wer(pairs)
        dev = evaluate(model, dev_set, acfg)
        row = EpochStats(epoch, lr, train_loss, train_wer, dev.loss, dev.wer,
                         float(np.mean(grad_norms)))
        result.rows.append(row)
        if log:
            log(f"epoch {epoch:3d} lr {lr:.2e} train loss {train_loss:8.4f} "
                f"wer {train_wer:6.2f} | dev loss {dev.loss:8.4f} wer {dev.wer:6.2f}")

        with open(metrics_path, "a", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_metric_line(epoch, "train", train_loss, train_wer))
            w.writerow(_metric_line(epoch, "dev", dev.loss, dev.wer))

        ckpt_path = os.path.join(run_dir, "checkpoints", f"epoch_{epoch}.bin")
        save_checkpoint(ckpt_path, model, state, epoch, seed, config_hash)
        last_ckpt = ckpt_path
        _prune_checkpoints(os.path.join(run_dir, "checkpoints"), tcfg.keep_checkpoints)

    result.checkpoint = last_ckpt
    return result


def _prune_checkpoints(cdir: str, keep: int) -> None:
    found = []
    for f in os.listdir(cdir):
        m = re.fullmatch(r"epoch_(\d+)\.bin", f)
        if m:
            found.append((int(m.group(1)), f))
    for _, f in sorted(found)[:-keep]:
        os.remove(os.path.join(cdir, f))


def _corpus_wer(pairs) -> float:
    sub = ins = dele = ref = 0
    for hyp, want in pairs:
        s, i, d = edit_alignment(hyp, want)
        sub, ins, dele, ref = sub + s, ins + i, dele + d, ref + len(want)
    return 100.0 * (sub + ins + dele) / ref if ref else float("nan")


# -- evaluation -----------------------------------------------------------------


@dataclass
class EvalReport:
    wer: float
    loss: float
    rows: list[dict]
    # attention statistics pooled over clips, keyed by attention-site name
    spatial: dict[str, tuple[float, float]] = field(default_factory=dict)
    temporal_wins: dict[str, int] = field(default_factory=dict)
    # clips whose motion frames outgate idle frames, pooled over every
    # temporal site, and how many clips had both kinds of frame at all
    temporal_pooled_wins: int = 0
    temporal_eligible: int = 0
    clips: int = 0


def _downscale_mask(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    """Per-cell coverage fraction of a boolean (H, W) mask on an (h, w) grid."""
    big_h, big_w = mask.shape
    if big_h % h == 0 and big_w % w == 0:
        return mask.reshape(h, big_h // h, w, big_w // w).mean(axis=(1, 3))
    iy = np.minimum((np.arange(h) * big_h) // h, big_h - 1)
    ix = np.minimum((np.arange(w) * big_w) // w, big_w - 1)
    return mask[iy[:, None], ix[None, :]].astype(np.float64)


def evaluate(model: Model, samples: list[SyntheticSample], acfg: AugmentConfig,
             collect_attention: bool = False, out_dir: str | None = None) -> EvalReport:
    """Deterministic center-crop evaluation; never mutates parameters."""
    model.eval_mode()
    rows = []
    losses = []
    pairs = []
    spatial_acc: dict[str, np.ndarray] = {}
    temporal_wins: dict[str, int] = {}
    report_pooled = [0, 0]  # wins, eligible clips
    attn_dir = os.path.join(out_dir, "attn") if out_dir else None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        os.makedirs(attn_dir, exist_ok=True)

    with tt.no_grad():
        for i, raw in enumerate(samples):
            s = center_crop(raw, acfg)
            attn: dict | None = {} if (collect_attention or out_dir) else None
            lattice = model.forward_clip(s.frames, attn)
            hyp = greedy_decode(lattice.data, lattice.shape[0])
            losses.append(ctc_loss(Tensor(lattice.data), s.labels, lattice.shape[0]).item()
                          if lattice.shape[0] >= min_frames(s.labels) else float("inf"))
            sub, ins, dele = edit_alignment(hyp, s.labels)
            pairs.append((hyp, s.labels))
            rows.append({"sample_id": i, "ref_len": len(s.labels), "sub": sub,
                         "ins": ins, "del": dele,
                         "wer": 100.0 * (sub + ins + dele) / len(s.labels)})
            if attn:
                pooled = _pool_attention(attn, s, spatial_acc, temporal_wins)
                if pooled is not None:
                    report_pooled[0] += int(pooled)
                    report_pooled[1] += 1
                if attn_dir:
                    _dump_attention(attn_dir, i, attn)

    report = EvalReport(wer=_corpus_wer(pairs), loss=float(np.mean(losses)),
                        rows=rows, clips=len(samples))
    for key, acc in spatial_acc.items():
        inside = acc[0] / acc[1] if acc[1] else float("nan")
        outside = acc[2] / acc[3] if acc[3] else float("nan")
        report.spatial[key] = (float(inside), float(outside))
    report.temporal_wins = dict(temporal_wins)
    report.temporal_pooled_wins, report.temporal_eligible = report_pooled
    if out_dir:
        with open(os.path.join(out_dir, "eval.csv"), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["sample_id", "ref_len", "sub", "ins",
                                               "del", "wer"])
            w.writeheader()
            for r in rows:
                w.writerow(r)
    return report


def _pool_attention(attn: dict, s: SyntheticSample, spatial_acc: dict,
                    temporal_wins: dict) -> bool | None:
    """Accumulate per-site statistics; returns this clip's pooled temporal
    verdict (motion frames outgating idle ones across all sites), or None
    when the clip cannot vote."""
    motion_sum = idle_sum = 0.0
    sites = 0
    for key, gate in attn.items():
        if key.endswith(".ssem"):
            maps = gate.mean(axis=1)  # (T, h, w) channel-mean
            acc = spatial_acc.setdefault(key, np.zeros(4))
            for t in range(maps.shape[0]):
                mask = s.region_masks[t]
                if not mask.any():
                    continue
                wgt = _downscale_mask(mask, maps.shape[1], maps.shape[2])
                acc[0] += float((maps[t] * wgt).sum())
                acc[1] += float(wgt.sum())
                acc[2] += float((maps[t] * (1.0 - wgt)).sum())
                acc[3] += float((1.0 - wgt).sum())
        elif key.endswith(".tsem"):
            trace = gate.mean(axis=1)  # (T,) channel-mean
            move, idle = s.motion_flags, ~s.motion_flags
            if move.any() and idle.any():
                m, q = float(trace[move].mean()), float(trace[idle].mean())
                temporal_wins[key] = temporal_wins.get(key, 0) + int(m > q)
                motion_sum += m
                idle_sum += q
                sites += 1
    if sites == 0:
        return None
    return motion_sum > idle_sum


def _dump_attention(out_dir: str, clip_id: int, attn: dict) -> None:
    for key, gate in attn.items():
        stem = os.path.join(out_dir, f"clip{clip_id:04d}_{key}")
        if key.endswith(".ssem"):
            mid = gate.shape[0] // 2
            img = np.round(gate[mid].mean(axis=0) * 255.0).astype(np.int64)
            h, w = img.shape
            lines = [f"P2\n{w} {h}\n255"]
            lines += [" ".join(str(v) for v in row) for row in img]
            with open(stem + ".pgm", "w") as fh:
                fh.write("\n".join(lines) + "\n")
        else:
            with open(stem + ".csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow([f"c{j}" for j in range(gate.shape[1])])
                for row in gate:
                    w.writerow([f"{v:.6f}" for v in row])
