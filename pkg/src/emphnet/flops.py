"""Analytic multiply-add audit of the recognition network.

Counts are pure shape arithmetic: convolution, linear, and recurrent
matrix products only, biases and activations excluded, 1 multiply-add
= 2 FLOPs.  Every count mirrors the layer geometry that `Model` builds,
so a report row exists exactly when the corresponding parameter does.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .attention import SSEMConfig, TSEMConfig
from .errors import ConfigError
from .network import ModelConfig, block_layout

FLOPS_PER_MAC = 2

GROUPS = ("backbone", "ssem", "tsem", "head")


@dataclass(frozen=True)
class LayerCost:
    """One counted layer: multiply-add total and its accounting group."""

    name: str
    group: str
    macs: int

    @property
    def flops(self) -> int:
        return FLOPS_PER_MAC * self.macs


@dataclass
class FlopsReport:
    frames: int
    rows: list[LayerCost] = field(default_factory=list)

    def group_macs(self, group: str) -> int:
        if group not in GROUPS:
            raise ConfigError(f"unknown cost group {group!r}")
        return sum(r.macs for r in self.rows if r.group == group)

    @property
    def backbone_macs(self) -> int:
        return self.group_macs("backbone")

    @property
    def ssem_macs(self) -> int:
        return self.group_macs("ssem")

    @property
    def tsem_macs(self) -> int:
        return self.group_macs("tsem")

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def overhead_ratio(self) -> float:
        """(SSEM + TSEM) multiply-adds over the convolutional backbone's."""
        return (self.ssem_macs + self.tsem_macs) / self.backbone_macs


def conv_extent(extent: int, kernel: int, stride: int = 1, padding: int = 0,
                dilation: int = 1) -> int:
    eff = dilation * (kernel - 1) + 1
    out = (extent + 2 * padding - eff) // stride + 1
    if out < 1:
        raise ConfigError(
            f"kernel {kernel} (dilation {dilation}) does not fit extent {extent}")
    return out


def _conv_macs(positions: int, cout: int, cin: int, taps: int, groups: int = 1) -> int:
    return positions * cout * (cin // groups) * taps


def _ssem_rows(name: str, channels: int, t: int, h: int, w: int,
               scfg: SSEMConfig) -> list[LayerCost]:
    cr = channels // scfg.reduction
    pos = t * h * w
    rows = [LayerCost(f"{name}.ssem.reduce", "ssem", _conv_macs(pos, cr, channels, 1))]
    taps = scfg.kernel_t * scfg.kernel_s * scfg.kernel_s
    for i in range(scfg.branch_count):
        rows.append(LayerCost(f"{name}.ssem.branch{i}", "ssem",
                              _conv_macs(pos, cr, cr, taps, groups=cr)))
    rows.append(LayerCost(f"{name}.ssem.project", "ssem", _conv_macs(pos, channels, cr, 1)))
    return rows


def _tsem_rows(name: str, channels: int, t: int, tcfg: TSEMConfig) -> list[LayerCost]:
    cr = channels // tcfg.reduction
    mix_in = 2 * cr if tcfg.motion_concat else cr
    return [
        LayerCost(f"{name}.tsem.reduce", "tsem", _conv_macs(t, cr, channels, 1)),
        LayerCost(f"{name}.tsem.mix", "tsem", _conv_macs(t, cr, mix_in, tcfg.kernel_t)),
        LayerCost(f"{name}.tsem.project", "tsem", _conv_macs(t, channels, cr, 1)),
    ]


def count_model(mcfg: ModelConfig, scfg: SSEMConfig, tcfg: TSEMConfig,
                frames: int = 16) -> FlopsReport:
    """Multiply-add audit for a `frames`-long clip through the full network."""
    mcfg.validate()
    scfg.validate()
    tcfg.validate()
    if frames < 4:
        raise ConfigError(f"audit needs at least 4 frames, got {frames}")

    report = FlopsReport(frames=frames)
    rows = report.rows
    m = mcfg
    t = frames

    size = conv_extent(m.input_size, m.stem_kernel, m.stem_stride, m.stem_kernel // 2)
    rows.append(LayerCost("stem.conv", "backbone", _conv_macs(
        t * size * size, m.stage_channels[0], m.in_channels, m.stem_kernel ** 2)))
    if m.stem_pool:
        size = conv_extent(size, 3, 2, 1)

    uses_ssem = m.combine in ("ssem", "ssem_then_tsem", "tsem_then_ssem", "parallel")
    uses_tsem = m.combine in ("tsem", "ssem_then_tsem", "tsem_then_ssem", "parallel")
    for spec in block_layout(m):
        size = conv_extent(size, 3, spec.stride, 1)
        pos = t * size * size
        rows.append(LayerCost(f"{spec.name}.conv1", "backbone",
                              _conv_macs(pos, spec.cout, spec.cin, 9)))
        rows.append(LayerCost(f"{spec.name}.conv2", "backbone",
                              _conv_macs(pos, spec.cout, spec.cout, 9)))
        if spec.stride != 1 or spec.cin != spec.cout:
            rows.append(LayerCost(f"{spec.name}.down", "backbone",
                                  _conv_macs(pos, spec.cout, spec.cin, 1)))
        if spec.modules_on and uses_ssem:
            rows.extend(_ssem_rows(spec.name, spec.cout, t, size, size, scfg))
        if spec.modules_on and uses_tsem:
            rows.extend(_tsem_rows(spec.name, spec.cout, t, tcfg))

    d = m.stage_channels[-1]
    rows.append(LayerCost("head.conv1", "head", _conv_macs(t, d, d, 5)))
    t = conv_extent(t, 2, 2)
    rows.append(LayerCost("head.conv2", "head", _conv_macs(t, d, d, 5)))
    t = conv_extent(t, 2, 2)

    h = m.hidden_recurrent
    for layer, d_in in ((0, d), (1, 2 * h)):
        for direction in ("fw", "bw"):
            rows.append(LayerCost(f"rnn.l{layer}.{direction}", "head",
                                  t * 4 * h * (d_in + h)))
    rows.append(LayerCost("fc", "head", t * (m.vocab_size + 1) * 2 * h))
    return report


def branch_sweep(mcfg: ModelConfig, scfg: SSEMConfig, tcfg: TSEMConfig,
                 counts=(1, 2, 3, 4), frames: int = 16) -> list[tuple[int, int]]:
    """SSEM multiply-add total per candidate branch count."""
    out = []
    for n in counts:
        swept = SSEMConfig(reduction=scfg.reduction, kernel_t=scfg.kernel_t,
                           kernel_s=scfg.kernel_s, branch_count=n, variant=scfg.variant)
        out.append((n, count_model(mcfg, swept, tcfg, frames).ssem_macs))
    return out


def report_lines(report: FlopsReport) -> list[str]:
    """flops.csv rows: per-layer counts then per-group totals and the ratio."""
    lines = ["name,group,macs,flops"]
    for r in report.rows:
        lines.append(f"{r.name},{r.group},{r.macs},{r.flops}")
    for g in GROUPS:
        macs = report.group_macs(g)
        lines.append(f"total_{g},{g},{macs},{FLOPS_PER_MAC * macs}")
    lines.append(f"total,all,{report.total_macs},{FLOPS_PER_MAC * report.total_macs}")
    lines.append(f"overhead_ratio,,{report.overhead_ratio:.6f},")
    return lines
