"""Configuration schema, validation, flat config files and seeded randomness."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import torch

VARIANTS = ("msgdd", "pix2pix", "unet")
AUGMENT_POLICIES = ("none", "flips", "flips+affine")
INIT_MODES = ("default", "paper-literal")


class ConfigError(ValueError):
    """Raised with every violated constraint of a configuration."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class ModelConfig:
    scales: int = 4
    base_channels: int = 64
    input_channels: int = 1
    output_channels: int = 1
    max_channel_mult: int = 8
    init_std: float = 0.02
    init: str = "default"
    tap_norm: bool = True

    def channels(self, level: int) -> int:
        """Feature width at encoder level ``level`` (1-based): base * min(2**(level-1), cap)."""
        return self.base_channels * min(2 ** (level - 1), self.max_channel_mult)


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 8
    epochs: int = 30
    clip: float = 0.0  # 0 disables gradient clipping


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    image_size: int = 256
    variant: str = "msgdd"
    kl1: int = 4
    lambda_l1: float = 100.0
    seed: int = 0
    # dataset: an on-disk root wins; otherwise a synthetic ellipse set is generated
    data_root: str = ""
    split_train: int = 699
    split_val: int = 100
    split_test: int = 200
    data_seed: int = 1
    augment: str = "flips"
    output_dir: str = "runs/default"
    tap_grid_every: int = 0

    def replace(self, **changes) -> "RunConfig":
        """Return a copy with flat keys (any section) replaced."""
        return from_flat({**to_flat(self), **changes})


def desk_config(**overrides) -> RunConfig:
    """Desk-scale preset: synthetic 64x64 ellipses, 250/50/50 split, batch 16."""
    base = RunConfig(
        model=ModelConfig(base_channels=16),
        optim=OptimizerConfig(batch_size=16, epochs=30),
        image_size=64,
        split_train=250,
        split_val=50,
        split_test=50,
        output_dir="runs/desk",
    )
    return base.replace(**overrides) if overrides else base


# -- flat key/value serialization ------------------------------------------

_SECTIONS = {"model": ModelConfig, "optim": OptimizerConfig}


def _flat_fields():
    out = {}
    for f in fields(RunConfig):
        if f.name in _SECTIONS:
            for sub in fields(_SECTIONS[f.name]):
                out[sub.name] = (f.name, sub)
        else:
            out[f.name] = (None, f)
    return out


FLAT_KEYS = tuple(_flat_fields())


def to_flat(config: RunConfig) -> dict[str, Any]:
    flat = {}
    for name, (section, _) in _flat_fields().items():
        owner = getattr(config, section) if section else config
        flat[name] = getattr(owner, name)
    return flat


def _coerce(f: dataclasses.Field, value: Any) -> Any:
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if not isinstance(value, str):
        return value
    text = value.strip()
    if kind == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError([f"{f.name}: expected a boolean, got {value!r}"])
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError([f"{f.name}: expected {kind}, got {value!r}"]) from None
    return text


def from_flat(flat: dict[str, Any]) -> RunConfig:
    known = _flat_fields()
    unknown = sorted(set(flat) - set(known))
    if unknown:
        raise ConfigError([f"unknown key {k!r}" for k in unknown])
    parts: dict[str, dict[str, Any]] = {s: {} for s in _SECTIONS}
    top: dict[str, Any] = {}
    for key, value in flat.items():
        section, f = known[key]
        (parts[section] if section else top)[key] = _coerce(f, value)
    return RunConfig(
        model=ModelConfig(**parts["model"]),
        optim=OptimizerConfig(**parts["optim"]),
        **top,
    )


def dumps_config(config: RunConfig) -> str:
    lines = [f"{k} = {v}" for k, v in to_flat(config).items()]
    return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    flat = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([f"line {lineno}: expected 'key = value', got {raw!r}"])
        key, value = (part.strip() for part in line.split("=", 1))
        flat[key] = value
    return flat


def loads_config(text: str) -> RunConfig:
    return from_flat(parse_config_text(text))


def load_config(path) -> RunConfig:
    return loads_config(Path(path).read_text())


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(dumps_config(config))


# -- validation ---------------------------------------------------------------

def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def validate_config(config: RunConfig) -> RunConfig:
    """Check every constraint and return the config, or raise ConfigError listing them all."""
    m, o = config.model, config.optim
    problems = []
    if m.scales < 1:
        problems.append("scales must be ≥ 1")
    if m.base_channels < 1:
        problems.append("base_channels must be ≥ 1")
    if m.input_channels < 1 or m.output_channels < 1:
        problems.append("input_channels and output_channels must be ≥ 1")
    if m.max_channel_mult < 1:
        problems.append("max_channel_mult must be ≥ 1")
    if m.init_std <= 0:
        problems.append("init_std must be > 0")
    if m.init not in INIT_MODES:
        problems.append(f"init must be one of {INIT_MODES}, got {m.init!r}")
    if m.scales >= 1:
        size, scales = config.image_size, m.scales
        if size % 2 ** scales:
            problems.append(f"image_size {size} not divisible by 2^{scales}")
        elif not _is_pow2(size):
            problems.append(f"image_size {size} is not a power of two")
        elif size < 2 ** (scales + 1):
            # the discriminator score map lives at size / 2^(scales+1)
            problems.append(f"image_size {size} must be ≥ 2^{scales + 1} for {scales} scales")
    if not o.learning_rate > 0:
        problems.append(f"learning_rate must be > 0, got {o.learning_rate}")
    for name in ("beta1", "beta2"):
        if not 0 <= getattr(o, name) < 1:
            problems.append(f"{name} must lie in [0, 1)")
    if o.batch_size < 1:
        problems.append("batch_size must be ≥ 1")
    if o.epochs < 1:
        problems.append("epochs must be ≥ 1")
    if o.clip < 0:
        problems.append("clip must be ≥ 0")
    if config.variant not in VARIANTS:
        problems.append(f"variant must be one of {VARIANTS}, got {config.variant!r}")
    if config.kl1 not in (1, 2, 4):
        problems.append(f"kl1 must be one of {{1, 2, 4}}, got {config.kl1}")
    if not config.lambda_l1 > 0:
        problems.append("lambda_l1 must be > 0")
    if config.seed < 0 or config.data_seed < 0:
        problems.append("seeds must be ≥ 0")
    if min(config.split_train, config.split_val, config.split_test) < 0 or config.split_train < 1:
        problems.append("split sizes must be ≥ 0 with at least one training sample")
    if config.augment not in AUGMENT_POLICIES:
        problems.append(f"augment must be one of {AUGMENT_POLICIES}, got {config.augment!r}")
    if config.tap_grid_every < 0:
        problems.append("tap_grid_every must be ≥ 0")
    if problems:
        raise ConfigError(problems)
    return config


# -- randomness ---------------------------------------------------------------

def seeded_rng(seed, *stream) -> np.random.Generator:
    """Deterministic numpy stream for ``seed``; extra ints select independent substreams."""
    if isinstance(seed, int) and seed < 0:
        raise ValueError("seed must be ≥ 0")
    return np.random.default_rng([seed, *stream])


def torch_generator(seed: int, *stream: int) -> torch.Generator:
    """Torch generator seeded from the same (seed, stream) key as seeded_rng."""
    g = torch.Generator()
    g.manual_seed(int(seeded_rng(seed, *stream).integers(2**63 - 1)))
    return g
