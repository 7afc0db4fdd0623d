"""Recognition network: 2-d residual backbone with attention insertion
sites, a strided 1-d temporal head, a bidirectional recurrent encoder, and
a per-frame gloss classifier emitting a log-probability lattice.

A clip is processed alone as a (T, C, H, W) stack, frames acting as the
batch of the 2-d convolutions, so per-channel batch norm draws its
statistics from that clip's frames only; padded frames of a longer batch
can never leak into a sample's lattice.

Every parameter is initialized from an rng seeded by (run seed, name
hash), so two models built from the same seed agree bitwise on every
parameter they share, regardless of which attention modules exist.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .attention import (SSEMConfig, TSEMConfig, ssem_attention, ssem_forward,
                        ssem_init, tsem_attention, tsem_forward, tsem_init)
from .convops import (batch_norm_eval, batch_norm_train, conv1d, conv2d, lstm,
                      global_avg_pool_spatial, maxpool1d, maxpool2d, same_padding)
from .errors import ConfigError, ShapeError
from .tensor import Tensor

COMBINE_MODES = ("ssem", "tsem", "ssem_then_tsem", "tsem_then_ssem", "parallel")

_BN_MOMENTUM = 0.1
_BN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults are the desk-scale geometry."""

    in_channels: int = 3
    stage_channels: tuple[int, ...] = (16, 32)
    blocks_per_stage: tuple[int, ...] = (1, 1)
    input_size: int = 28
    stem_kernel: int = 3
    stem_stride: int = 2
    stem_pool: bool = False
    combine: str = "parallel"
    insertion: tuple[bool, ...] = ()  # per block; empty means every block
    hidden_recurrent: int = 64
    vocab_size: int = 12

    def total_blocks(self) -> int:
        return int(sum(self.blocks_per_stage))

    def insertion_flags(self) -> tuple[bool, ...]:
        if not self.insertion:
            return (True,) * self.total_blocks()
        return self.insertion

    def validate(self) -> None:
        if len(self.stage_channels) != len(self.blocks_per_stage) or not self.stage_channels:
            raise ConfigError(
                f"stage_channels {self.stage_channels} and blocks_per_stage "
                f"{self.blocks_per_stage} must align and be non-empty")
        if any(c < 1 for c in self.stage_channels) or any(b < 1 for b in self.blocks_per_stage):
            raise ConfigError("stage widths and block counts must be positive")
        if self.combine not in COMBINE_MODES:
            raise ConfigError(f"combine must be one of {COMBINE_MODES}, got {self.combine!r}")
        if self.insertion and len(self.insertion) != self.total_blocks():
            raise ConfigError(
                f"insertion needs one flag per block ({self.total_blocks()}), got {len(self.insertion)}")
        if self.stem_kernel % 2 == 0 or self.stem_kernel < 1:
            raise ConfigError(f"stem kernel must be odd and positive, got {self.stem_kernel}")
        if self.vocab_size < 1:
            raise ConfigError(f"vocab_size must be positive, got {self.vocab_size}")
        if self.hidden_recurrent < 1:
            raise ConfigError(f"hidden_recurrent must be positive, got {self.hidden_recurrent}")


def full_scale_model() -> ModelConfig:
    """Full-scale geometry used by the arithmetic-cost audit."""
    return ModelConfig(stage_channels=(64, 128, 256, 512), blocks_per_stage=(2, 2, 2, 2),
                       input_size=224, stem_kernel=7, stem_stride=2, stem_pool=True,
                       hidden_recurrent=1024, vocab_size=1000)


@dataclass(frozen=True)
class BlockSpec:
    """Static geometry of one residual block."""

    name: str
    cin: int
    cout: int
    stride: int
    modules_on: bool


def block_layout(cfg: ModelConfig) -> list[BlockSpec]:
    flags = cfg.insertion_flags()
    specs: list[BlockSpec] = []
    cin = cfg.stage_channels[0]
    idx = 0
    for s, (cout, nblocks) in enumerate(zip(cfg.stage_channels, cfg.blocks_per_stage)):
        for b in range(nblocks):
            stride = 2 if (b == 0 and s > 0) else 1
            specs.append(BlockSpec(f"stage{s}.block{b}", cin, cout, stride, flags[idx]))
            cin = cout
            idx += 1
    return specs


def _param_rng(seed: int, name: str):
    digest = hashlib.sha256(name.encode()).digest()
    return np.random.default_rng([int(seed), int.from_bytes(digest[:8], "little")])


class Model:
    """Parameter container plus the forward graph builders."""

    def __init__(self, mcfg: ModelConfig, scfg: SSEMConfig, tcfg: TSEMConfig,
                 seed: int, dtype=np.float32):
        mcfg.validate()
        scfg.validate()
        tcfg.validate()
        self.mcfg, self.scfg, self.tcfg = mcfg, scfg, tcfg
        self.seed = int(seed)
        self.dtype = np.dtype(dtype).type
        self.training = True
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.blocks = block_layout(mcfg)
        self._build()

    # -- construction ------------------------------------------------------

    def _conv_param(self, name: str, shape: tuple[int, ...], fan_in: int) -> None:
        rng = _param_rng(self.seed, name)
        w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        self.params[name] = Tensor(w.astype(self.dtype), requires_grad=True)

    def _bias_param(self, name: str, n: int) -> None:
        self.params[name] = Tensor(np.zeros(n, dtype=self.dtype), requires_grad=True)

    def _bn_params(self, name: str, n: int) -> None:
        self.params[f"{name}.gamma"] = Tensor(np.ones(n, dtype=self.dtype), requires_grad=True)
        self.params[f"{name}.beta"] = Tensor(np.zeros(n, dtype=self.dtype), requires_grad=True)
        self.buffers[f"{name}.mean"] = np.zeros(n, dtype=self.dtype)
        self.buffers[f"{name}.var"] = np.ones(n, dtype=self.dtype)

    def _lstm_params(self, name: str, d_in: int, hidden: int) -> None:
        bound = 1.0 / np.sqrt(hidden)
        for suffix, shape in (("w_ih", (4 * hidden, d_in)), ("w_hh", (4 * hidden, hidden)),
                              ("b", (4 * hidden,))):
            rng = _param_rng(self.seed, f"{name}.{suffix}")
            w = rng.uniform(-bound, bound, shape)
            self.params[f"{name}.{suffix}"] = Tensor(w.astype(self.dtype), requires_grad=True)

    def _build(self) -> None:
        m = self.mcfg
        c0 = m.stage_channels[0]
        k = m.stem_kernel
        self._conv_param("stem.conv.w", (c0, m.in_channels, k, k), m.in_channels * k * k)
        self._bn_params("stem.bn", c0)

        uses_ssem = m.combine in ("ssem", "ssem_then_tsem", "tsem_then_ssem", "parallel")
        uses_tsem = m.combine in ("tsem", "ssem_then_tsem", "tsem_then_ssem", "parallel")
        for spec in self.blocks:
            n = spec.name
            self._conv_param(f"{n}.conv1.w", (spec.cout, spec.cin, 3, 3), spec.cin * 9)
            self._bn_params(f"{n}.bn1", spec.cout)
            self._conv_param(f"{n}.conv2.w", (spec.cout, spec.cout, 3, 3), spec.cout * 9)
            self._bn_params(f"{n}.bn2", spec.cout)
            if spec.stride != 1 or spec.cin != spec.cout:
                self._conv_param(f"{n}.down.w", (spec.cout, spec.cin, 1, 1), spec.cin)
                self._bn_params(f"{n}.down_bn", spec.cout)
            if spec.modules_on and uses_ssem:
                sub = ssem_init(spec.cout, self.scfg, _param_rng(self.seed, f"{n}.ssem"), self.dtype)
                for key, p in sub.items():
                    self.params[f"{n}.ssem.{key}"] = p
            if spec.modules_on and uses_tsem:
                sub = tsem_init(spec.cout, self.tcfg, _param_rng(self.seed, f"{n}.tsem"), self.dtype)
                for key, p in sub.items():
                    self.params[f"{n}.tsem.{key}"] = p

        d = m.stage_channels[-1]
        self._conv_param("head.conv1.w", (d, d, 5), d * 5)
        self._bias_param("head.conv1.b", d)
        self._conv_param("head.conv2.w", (d, d, 5), d * 5)
        self._bias_param("head.conv2.b", d)

        h = m.hidden_recurrent
        self._lstm_params("rnn.l0.fw", d, h)
        self._lstm_params("rnn.l0.bw", d, h)
        self._lstm_params("rnn.l1.fw", 2 * h, h)
        self._lstm_params("rnn.l1.bw", 2 * h, h)
        self._conv_param("fc.w", (m.vocab_size + 1, 2 * h), 2 * h)
        self._bias_param("fc.b", m.vocab_size + 1)

    # -- mode and bookkeeping ------------------------------------------------

    def train_mode(self, flag: bool = True) -> None:
        self.training = flag

    def eval_mode(self) -> None:
        self.training = False

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def param_bytes(self) -> bytes:
        chunks = [self.params[k].data.tobytes() for k in sorted(self.params)]
        chunks += [self.buffers[k].tobytes() for k in sorted(self.buffers)]
        return b"".join(chunks)

    # -- forward pieces --------------------------------------------------------

    def _bn(self, x: Tensor, name: str) -> Tensor:
        gamma, beta = self.params[f"{name}.gamma"], self.params[f"{name}.beta"]
        if self.training:
            out, mu, var = batch_norm_train(x, gamma, beta, _BN_EPS)
            bm, bv = self.buffers[f"{name}.mean"], self.buffers[f"{name}.var"]
            bm *= 1.0 - _BN_MOMENTUM
            bm += _BN_MOMENTUM * mu
            bv *= 1.0 - _BN_MOMENTUM
            bv += _BN_MOMENTUM * var
            return out
        return batch_norm_eval(x, gamma, beta, self.buffers[f"{name}.mean"],
                               self.buffers[f"{name}.var"], _BN_EPS)

    def _emphasis_site(self, x: Tensor, name: str, attn: dict | None) -> Tensor:
        mode = self.mcfg.combine
        if mode == "ssem":
            out, gate = ssem_forward(x, self.scfg, self._sub(name, "ssem"))
            self._note(attn, f"{name}.ssem", gate)
            return out
        if mode == "tsem":
            out, gate = tsem_forward(x, self.tcfg, self._sub(name, "tsem"))
            self._note(attn, f"{name}.tsem", gate)
            return out
        if mode == "ssem_then_tsem":
            mid, s_gate = ssem_forward(x, self.scfg, self._sub(name, "ssem"))
            out, t_gate = tsem_forward(mid, self.tcfg, self._sub(name, "tsem"))
            self._note(attn, f"{name}.ssem", s_gate)
            self._note(attn, f"{name}.tsem", t_gate)
            return out
        if mode == "tsem_then_ssem":
            mid, t_gate = tsem_forward(x, self.tcfg, self._sub(name, "tsem"))
            out, s_gate = ssem_forward(mid, self.scfg, self._sub(name, "ssem"))
            self._note(attn, f"{name}.ssem", s_gate)
            self._note(attn, f"{name}.tsem", t_gate)
            return out
        # parallel: both gates come from the same input and both residual
        # corrections add to it
        s_gate = ssem_attention(x, self.scfg, self._sub(name, "ssem"))
        t_gate = tsem_attention(x, self.tcfg, self._sub(name, "tsem"))
        self._note(attn, f"{name}.ssem", s_gate)
        self._note(attn, f"{name}.tsem", t_gate)
        t4 = tt.reshape(t_gate, t_gate.shape + (1, 1))
        out = tt.add(x, tt.mul(tt.scalar_shift(s_gate, -0.5), x))
        return tt.add(out, tt.mul(tt.scalar_shift(t4, -0.5), x))

    def _sub(self, block: str, which: str) -> dict[str, Tensor]:
        prefix = f"{block}.{which}."
        return {k[len(prefix):]: p for k, p in self.params.items() if k.startswith(prefix)}

    @staticmethod
    def _note(attn: dict | None, key: str, gate: Tensor) -> None:
        if attn is not None:
            attn[key] = gate.data.copy()

    def _block(self, x: Tensor, spec: BlockSpec, attn: dict | None) -> Tensor:
        n = spec.name
        y = conv2d(x, self.params[f"{n}.conv1.w"], None, stride=spec.stride, padding=1)
        y = tt.relu(self._bn(y, f"{n}.bn1"))
        if spec.modules_on:
            y = self._emphasis_site(y, n, attn)
        y = self._bn(conv2d(y, self.params[f"{n}.conv2.w"], None, padding=1), f"{n}.bn2")
        if f"{n}.down.w" in self.params:
            shortcut = self._bn(conv2d(x, self.params[f"{n}.down.w"], None, stride=spec.stride),
                                f"{n}.down_bn")
        else:
            shortcut = x
        return tt.relu(tt.add(y, shortcut))

    def feature_extractor(self, frames: Tensor, attn: dict | None = None) -> Tensor:
        """(T, C, H, W) frames -> (T, d) pooled per-frame descriptors."""
        if frames.ndim != 4:
            raise ShapeError(f"feature extractor input must be 4-d, got {frames.ndim}-d")
        m = self.mcfg
        try:
            x = conv2d(frames, self.params["stem.conv.w"], None,
                       stride=m.stem_stride, padding=m.stem_kernel // 2)
            x = tt.relu(self._bn(x, "stem.bn"))
            if m.stem_pool:
                x = maxpool2d(x, 3, 2, padding=1)
        except ShapeError as e:
            raise ShapeError(f"stem: {e}") from None
        for spec in self.blocks:
            try:
                x = self._block(x, spec, attn)
            except ShapeError as e:
                raise ShapeError(f"{spec.name}: {e}") from None
        return global_avg_pool_spatial(x)

    def temporal_head(self, v: Tensor) -> Tensor:
        """(T, d) -> (T//4, d) via two conv/pool pairs over time."""
        t, d = v.shape
        if t < 4:
            raise ShapeError(f"temporal head needs at least 4 frames, got {t}")
        sig = tt.reshape(tt.transpose(v, (1, 0)), (1, d, t))
        sig = conv1d(sig, self.params["head.conv1.w"], self.params["head.conv1.b"],
                     padding=same_padding(5))
        sig = maxpool1d(sig, 2, 2)
        sig = conv1d(sig, self.params["head.conv2.w"], self.params["head.conv2.b"],
                     padding=same_padding(5))
        sig = maxpool1d(sig, 2, 2)
        t_out = sig.shape[2]
        return tt.transpose(tt.reshape(sig, (d, t_out)), (1, 0))

    def birnn(self, v: Tensor) -> Tensor:
        """Two stacked bidirectional recurrent layers; output (T', 2H)."""
        h = v
        for layer in (0, 1):
            fw = lstm(h, self.params[f"rnn.l{layer}.fw.w_ih"],
                      self.params[f"rnn.l{layer}.fw.w_hh"], self.params[f"rnn.l{layer}.fw.b"])
            bw = lstm(h, self.params[f"rnn.l{layer}.bw.w_ih"],
                      self.params[f"rnn.l{layer}.bw.w_hh"], self.params[f"rnn.l{layer}.bw.b"],
                      reverse=True)
            h = tt.concat([fw, bw], axis=1)
        return h

    def forward_clip(self, frames: np.ndarray, attn: dict | None = None) -> Tensor:
        """Full pipeline on one clip: (T, 3, H, W) -> (T', vocab+1) log probs."""
        x = Tensor(np.asarray(frames, dtype=self.dtype))
        feats = self.feature_extractor(x, attn)
        compressed = self.temporal_head(feats)
        encoded = self.birnn(compressed)
        logits = tt.linear(encoded, self.params["fc.w"], self.params["fc.b"])
        return tt.log_softmax(logits, axis=1)

    @staticmethod
    def lattice_len(t: int) -> int:
        """Frames surviving the temporal head's two halvings."""
        return (t // 2) // 2


def model_forward(model: Model, frames_batch: np.ndarray, lengths: list[int],
                  collect_attention: bool = False):
    """Per-sample lattices for a padded (B, T, 3, H, W) batch.

    Each sample is sliced to its valid length before any computation, so
    padding frames cannot influence its lattice.  Returns a list of
    (lattice Tensor, attention dict or None).
    """
    out = []
    for i, t_len in enumerate(lengths):
        if not 1 <= t_len <= frames_batch.shape[1]:
            raise ShapeError(f"sample {i}: valid length {t_len} outside [1, {frames_batch.shape[1]}]")
        attn: dict | None = {} if collect_attention else None
        lattice = model.forward_clip(frames_batch[i, :t_len], attn)
        out.append((lattice, attn))
    return out
