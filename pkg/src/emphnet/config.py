"""Run configuration: a line-oriented key=value format with [section] headers.

Grammar, one construct per line:

    [section]        starts a section
    key = value      assigns a field of the current section
    # or ; comment   ignored, as are blank lines

Values are typed by the target dataclass field: int, float, bool
(true/false), str, or a comma-separated tuple.  Unknown sections or keys
are rejected with the offending line number; serialize/parse round-trips
exactly.  The default configuration IS the reference setup: reduction 16,
temporal kernel 9, spatial kernel 3, three branches, mixing kernel 9,
parallel combination.
"""

from __future__ import annotations

import hashlib
import typing
from dataclasses import dataclass, field, fields, replace

from .attention import SSEMConfig, TSEMConfig
from .errors import ConfigError
from .network import Model, ModelConfig
from .synth import AugmentConfig, DataConfig, SyntheticSample, generate_dataset
from .train import TrainConfig

VARIANTS = ("sen", "baseline", "ssem-only", "tsem-only")


@dataclass(frozen=True)
class RunSettings:
    """Identity of one run: rng seed and where artifacts land."""

    seed: int = 0
    output_dir: str = "runs/default"

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class CorpusConfig:
    """Synthetic corpus sizes; its seed is split from the run seed so every
    training seed sees the identical dataset."""

    train_sentences: int = 600
    dev_sentences: int = 60
    seed: int = 77

    def validate(self) -> None:
        if self.train_sentences < 1 or self.dev_sentences < 1:
            raise ConfigError("corpus needs at least one sentence per split")


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    model: ModelConfig = field(default_factory=ModelConfig)
    ssem: SSEMConfig = field(default_factory=SSEMConfig)
    tsem: TSEMConfig = field(default_factory=TSEMConfig)
    data: DataConfig = field(default_factory=DataConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        for f in fields(self):
            getattr(self, f.name).validate()
        if self.augment.crop_to != self.model.input_size:
            raise ConfigError(
                f"augment crop {self.augment.crop_to} must match model input "
                f"size {self.model.input_size}")
        if self.model.vocab_size != self.data.vocab_size:
            raise ConfigError(
                f"model vocab {self.model.vocab_size} must match data vocab "
                f"{self.data.vocab_size}")


_SECTIONS: dict[str, type] = {
    "run": RunSettings, "model": ModelConfig, "ssem": SSEMConfig,
    "tsem": TSEMConfig, "data": DataConfig, "corpus": CorpusConfig,
    "augment": AugmentConfig, "train": TrainConfig,
}


def _field_types(cls) -> dict[str, type]:
    return typing.get_type_hints(cls)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_scalar(token: str, kind: type, where: str):
    token = token.strip()
    if kind is bool:
        low = token.lower()
        if low in ("true", "false"):
            return low == "true"
        raise ConfigError(f"{where} expects true or false, got {token!r}")
    if kind is int:
        try:
            return int(token)
        except ValueError:
            raise ConfigError(f"{where} expects an integer, got {token!r}") from None
    if kind is float:
        try:
            return float(token)
        except ValueError:
            raise ConfigError(f"{where} expects a number, got {token!r}") from None
    return token


def _parse_value(raw: str, kind: type, where: str):
    if typing.get_origin(kind) is tuple:
        elem = typing.get_args(kind)[0]
        raw = raw.strip()
        if not raw:
            return ()
        return tuple(_parse_scalar(part, elem, where) for part in raw.split(","))
    return _parse_scalar(raw, kind, where)


def serialize_config(cfg: RunConfig, only: tuple[str, ...] = ()) -> str:
    lines = []
    for section, cls in _SECTIONS.items():
        if only and section not in only:
            continue
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in fields(cls):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text: str) -> RunConfig:
    """Parse and validate; errors carry the 1-based offending line number."""
    staged: dict[str, dict] = {name: {} for name in _SECTIONS}
    section: str | None = None
    types: dict[str, type] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {line!r}")
            name = line[1:-1].strip()
            if name not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{name}]")
            section = name
            types = _field_types(_SECTIONS[name])
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in section [{section}]")
        if key in staged[section]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in section [{section}]")
        staged[section][key] = _parse_value(raw_value, types[key], f"line {lineno}: {section}.{key}")
    cfg = RunConfig(**{name: cls(**staged[name]) for name, cls in _SECTIONS.items()})
    cfg.validate()
    return cfg


def parse_config_file(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None


def config_hash(cfg: RunConfig) -> str:
    """Digest of everything that shapes results except run identity."""
    sections = tuple(name for name in _SECTIONS if name != "run")
    return hashlib.sha256(serialize_config(cfg, only=sections).encode()).hexdigest()[:16]


def apply_variant(cfg: RunConfig, variant: str) -> RunConfig:
    """Module wiring presets used for the controlled comparisons."""
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if variant == "sen":
        return cfg
    if variant == "baseline":
        off = (False,) * cfg.model.total_blocks()
        return replace(cfg, model=replace(cfg.model, insertion=off))
    mode = "ssem" if variant == "ssem-only" else "tsem"
    return replace(cfg, model=replace(cfg.model, combine=mode))


def build_model(cfg: RunConfig) -> Model:
    return Model(cfg.model, cfg.ssem, cfg.tsem, seed=cfg.run.seed)


def build_corpus(cfg: RunConfig) -> tuple[list[SyntheticSample], list[SyntheticSample]]:
    """Train/dev splits; disjoint because sample i is rendered from (seed, i)."""
    total = cfg.corpus.train_sentences + cfg.corpus.dev_sentences
    samples = generate_dataset(cfg.data, total, seed=cfg.corpus.seed)
    return samples[: cfg.corpus.train_sentences], samples[cfg.corpus.train_sentences:]
