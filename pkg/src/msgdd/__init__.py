"""Dual-discriminator multi-scale-gradient conditional GAN for mask segmentation."""

from .core import ModelConfig, OptimizerConfig, RunConfig, desk_config, seeded_rng, validate_config
from .generator import Generator, GeneratorOutput, build_generator
from .discriminator import DisD, DisE, build_discriminators

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "OptimizerConfig", "RunConfig", "desk_config", "seeded_rng", "validate_config",
    "Generator", "GeneratorOutput", "build_generator", "DisD", "DisE", "build_discriminators",
]
