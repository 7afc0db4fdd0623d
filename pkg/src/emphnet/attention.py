"""Self-emphasizing attention: spatial (SSEM) and temporal (TSEM) modules.

Both modules squeeze channels by a reduction factor, derive a gating map
in [0, 1], and re-emphasize the input as x + (gate - 0.5) * x (other
gating variants are kept behind a switch for ablations).  Their final
projections initialize to zero, so a freshly built module is an exact
identity: sigmoid(0) = 0.5 makes the residual term vanish bitwise.

Feature tensors are (T, C, H, W): frames lead, matching the per-sample
processing of the backbone.  SSEM treats the frame axis as the depth axis
of a 3-d convolution; TSEM works on spatially pooled (T, C) descriptors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .convops import conv1d, conv3d, global_avg_pool_spatial, same_padding
from .errors import ConfigError
from .tensor import Tensor


EMPHASIS_VARIANTS = ("mul", "mul_residual", "centered", "centered_residual")


@dataclass(frozen=True)
class SSEMConfig:
    """Spatial module hyperparameters.

    branch_count parallel depthwise branches share one temporal kernel
    extent and widen their spatial receptive field through dilation i for
    branch i; learned scalars blend the branches.
    """

    reduction: int = 16
    kernel_t: int = 9
    kernel_s: int = 3
    branch_count: int = 3
    variant: str = "centered_residual"

    def validate(self) -> None:
        if self.reduction < 1:
            raise ConfigError(f"ssem reduction must be >= 1, got {self.reduction}")
        if self.branch_count < 0:
            raise ConfigError(f"ssem branch_count must be >= 0, got {self.branch_count}")
        if self.kernel_t % 2 == 0 or self.kernel_s % 2 == 0:
            raise ConfigError(
                f"ssem kernels must be odd for same padding, got ({self.kernel_t}, {self.kernel_s})"
            )
        if self.variant not in EMPHASIS_VARIANTS:
            raise ConfigError(f"unknown emphasis variant {self.variant!r}")


@dataclass(frozen=True)
class TSEMConfig:
    """Temporal module hyperparameters; kernel_t is the mixing kernel P_t."""

    reduction: int = 16
    kernel_t: int = 9
    motion_concat: bool = True
    variant: str = "centered_residual"

    def validate(self) -> None:
        if self.reduction < 1:
            raise ConfigError(f"tsem reduction must be >= 1, got {self.reduction}")
        if self.kernel_t % 2 == 0:
            raise ConfigError(f"tsem kernel must be odd for same padding, got {self.kernel_t}")
        if self.variant not in EMPHASIS_VARIANTS:
            raise ConfigError(f"unknown emphasis variant {self.variant!r}")


def _reduced_channels(channels: int, reduction: int, who: str) -> int:
    if channels % reduction:
        raise ConfigError(
            f"{who} reduction {reduction} does not divide the channel count {channels}"
        )
    return channels // reduction


def _kaiming(rng, shape, fan_in, dtype):
    return Tensor((rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype),
                  requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ssem_init(channels: int, cfg: SSEMConfig, rng, dtype=np.float64) -> dict[str, Tensor]:
    """Parameter dict for one SSEM instance on `channels`-wide features."""
    cfg.validate()
    cr = _reduced_channels(channels, cfg.reduction, "ssem")
    taps = cfg.kernel_t * cfg.kernel_s * cfg.kernel_s
    params: dict[str, Tensor] = {}
    params["reduce.w"] = _kaiming(rng, (cr, channels, 1, 1, 1), channels, dtype)
    params["reduce.b"] = _zeros((cr,), dtype)
    for i in range(cfg.branch_count):
        params[f"branch{i}.w"] = _kaiming(
            rng, (cr, 1, cfg.kernel_t, cfg.kernel_s, cfg.kernel_s), taps, dtype)
    n = cfg.branch_count
    sigma = np.full((n,), 1.0 / n, dtype=dtype) if n else np.zeros((0,), dtype=dtype)
    params["sigma"] = Tensor(sigma, requires_grad=True)  # equal blend at start
    params["project.w"] = _zeros((channels, cr, 1, 1, 1), dtype)  # identity at start
    params["project.b"] = _zeros((channels,), dtype)
    return params


def tsem_init(channels: int, cfg: TSEMConfig, rng, dtype=np.float64) -> dict[str, Tensor]:
    """Parameter dict for one TSEM instance on `channels`-wide features."""
    cfg.validate()
    cr = _reduced_channels(channels, cfg.reduction, "tsem")
    mix_in = 2 * cr if cfg.motion_concat else cr
    params: dict[str, Tensor] = {}
    params["reduce.w"] = _kaiming(rng, (cr, channels, 1), channels, dtype)
    params["reduce.b"] = _zeros((cr,), dtype)
    params["mix.w"] = _kaiming(rng, (cr, mix_in, cfg.kernel_t), mix_in * cfg.kernel_t, dtype)
    params["mix.b"] = _zeros((cr,), dtype)
    params["project.w"] = _zeros((channels, cr, 1), dtype)  # identity at start
    params["project.b"] = _zeros((channels,), dtype)
    return params


def _frames_to_volume(x: Tensor) -> Tensor:
    """(T, C, H, W) -> (1, C, T, H, W) so conv3d sees frames as depth."""
    t, c, h, w = x.shape
    return tt.reshape(tt.transpose(x, (1, 0, 2, 3)), (1, c, t, h, w))


def _volume_to_frames(x: Tensor) -> Tensor:
    _, c, t, h, w = x.shape
    return tt.transpose(tt.reshape(x, (c, t, h, w)), (1, 0, 2, 3))


def multi_scale_aggregate(reduced: Tensor, cfg: SSEMConfig,
                          params: dict[str, Tensor]) -> Tensor:
    """Blend depthwise branches of growing spatial dilation with learned scalars.

    reduced is (T, C/r, H, W); branch i (1-based) uses dilation (1, i, i)
    with padding chosen so every branch preserves the extent.
    """
    vol = _frames_to_volume(reduced)
    cr = reduced.shape[1]
    pad_t = same_padding(cfg.kernel_t)
    total: Tensor | None = None
    for i in range(cfg.branch_count):
        dil = i + 1
        branch = conv3d(vol, params[f"branch{i}.w"], None,
                        padding=(pad_t, same_padding(cfg.kernel_s, dil), same_padding(cfg.kernel_s, dil)),
                        dilation=(1, dil, dil), groups=cr)
        scaled = tt.mul(branch, tt.narrow(params["sigma"], 0, i, 1))
        total = scaled if total is None else tt.add(total, scaled)
    if total is None:  # zero branches degenerate to a zero map
        total = tt.scale(vol, 0.0)
    return _volume_to_frames(total)


def emphasize_residual(x: Tensor, gate: Tensor, variant: str) -> Tensor:
    """Apply a [0, 1] gate to features under the selected ablation variant."""
    if variant == "mul":
        return tt.mul(gate, x)
    if variant == "mul_residual":
        return tt.add(tt.mul(gate, x), x)
    if variant == "centered":
        return tt.mul(tt.scalar_shift(gate, -0.5), x)
    if variant == "centered_residual":
        return tt.add(tt.mul(tt.scalar_shift(gate, -0.5), x), x)
    raise ConfigError(f"unknown emphasis variant {variant!r}")


def ssem_attention(x: Tensor, cfg: SSEMConfig, params: dict[str, Tensor]) -> Tensor:
    """Spatial gate in [0, 1] with the input's full (T, C, H, W) shape."""
    vol = _frames_to_volume(x)
    reduced = _volume_to_frames(conv3d(vol, params["reduce.w"], params["reduce.b"]))
    mixed = multi_scale_aggregate(reduced, cfg, params)
    logits = conv3d(_frames_to_volume(mixed), params["project.w"], params["project.b"])
    return _volume_to_frames(tt.sigmoid(logits))


def ssem_forward(x: Tensor, cfg: SSEMConfig, params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Emphasized features plus the spatial gate that produced them."""
    gate = ssem_attention(x, cfg, params)
    return emphasize_residual(x, gate, cfg.variant), gate


def temporal_difference(u: Tensor) -> Tensor:
    """Forward difference along axis 0 with a zero terminal row."""
    t = u.shape[0]
    if t == 1:
        return tt.scale(u, 0.0)
    head = tt.sub(tt.narrow(u, 0, 1, t - 1), tt.narrow(u, 0, 0, t - 1))
    tail = Tensor(np.zeros((1,) + u.shape[1:], dtype=u.dtype))
    return tt.concat([head, tail], axis=0)


def _rows_to_signal(x: Tensor) -> Tensor:
    """(T, C) -> (1, C, T) for 1-d convolution over time."""
    t, c = x.shape
    return tt.reshape(tt.transpose(x, (1, 0)), (1, c, t))


def _signal_to_rows(x: Tensor) -> Tensor:
    _, c, t = x.shape
    return tt.transpose(tt.reshape(x, (c, t)), (1, 0))


def tsem_attention(x: Tensor, cfg: TSEMConfig, params: dict[str, Tensor]) -> Tensor:
    """Temporal gate of shape (T, C) from spatially pooled descriptors."""
    pooled = global_avg_pool_spatial(x)  # (T, C)
    reduced = _signal_to_rows(conv1d(_rows_to_signal(pooled), params["reduce.w"], params["reduce.b"]))
    if cfg.motion_concat:
        mixed_in = tt.concat([reduced, temporal_difference(reduced)], axis=1)
    else:
        mixed_in = reduced
    mixed = conv1d(_rows_to_signal(mixed_in), params["mix.w"], params["mix.b"],
                   padding=same_padding(cfg.kernel_t))
    logits = conv1d(mixed, params["project.w"], params["project.b"])
    return _signal_to_rows(tt.sigmoid(logits))


def tsem_forward(x: Tensor, cfg: TSEMConfig, params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Emphasized features plus the (T, C) temporal gate."""
    gate = tsem_attention(x, cfg, params)
    t, c = gate.shape
    gate4 = tt.reshape(gate, (t, c, 1, 1))
    return emphasize_residual(x, gate4, cfg.variant), gate
