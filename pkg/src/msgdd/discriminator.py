"""Multi-input least-squares discriminators.

Both discriminators downsample with blocks of two 4x4 convolutions (stride 1, then
stride 2) and splice a side input into the feature stream by channel concatenation
at every resolution H/2..H/2**L. Scores come out as an unbounded 1-channel patch map
at H / 2**(L+1).
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .core import ModelConfig
from .generator import init_weights


def _width(cfg: ModelConfig, block: int) -> int:
    return cfg.base_channels * min(2**block, cfg.max_channel_mult)


class DownBlock(nn.Module):
    """conv4x4/1 -> BN -> ReLU -> conv4x4/2 -> BN -> ReLU."""

    def __init__(self, cin, cout, first_norm=True):
        super().__init__()
        self.body = nn.Sequential(
            nn.ZeroPad2d((1, 2, 1, 2)),  # even kernel: keep resolution at stride 1
            nn.Conv2d(cin, cout, 4, stride=1, bias=not first_norm),
            nn.BatchNorm2d(cout) if first_norm else nn.Identity(),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 4, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.body(x)


def _check_side(side, expected_res, level, channels):
    if side.shape[-2:] != expected_res:
        raise ValueError(
            f"side input {level} has resolution {tuple(side.shape[-2:])}, expected {tuple(expected_res)}"
        )
    if side.shape[1] != channels:
        raise ValueError(f"side input {level} has {side.shape[1]} channels, expected {channels}")


class _MultiInputDisc(nn.Module):
    def __init__(self, cfg: ModelConfig, n_side: int, first_cin: int | None):
        super().__init__()
        self.cfg = cfg
        c = cfg.output_channels
        blocks = []
        prev = 0
        if first_cin is not None:
            # block 0 on the full-resolution first input; no norm on the very first conv
            blocks.append(DownBlock(first_cin, _width(cfg, 0), first_norm=False))
            prev = _width(cfg, 0)
        for s in range(1, n_side + 1):
            blocks.append(DownBlock(prev + c, _width(cfg, s), first_norm=prev > 0))
            prev = _width(cfg, s)
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(prev, 1, 3, padding=1)

    def _run(self, x, sides):
        blocks = iter(self.blocks)
        if x is not None:
            x = next(blocks)(x)
        for s, (block, side) in enumerate(zip(blocks, sides), 1):
            if x is None:
                x = side
            else:
                _check_side(side, x.shape[-2:], s, self.cfg.output_channels)
                x = torch.cat([x, side], dim=1)
            x = block(x)
        return self.head(x)


class DisD(_MultiInputDisc):
    """Judges (output, DO_1..DO_L) against (ground truth, Gtds_1..Gtds_L)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg, cfg.scales, first_cin=cfg.output_channels)

    def forward(self, first_input, side_inputs):
        L = self.cfg.scales
        if len(side_inputs) != L:
            raise ValueError(f"Dis-D expects {L} side inputs, got {len(side_inputs)}")
        if first_input.shape[1] != self.cfg.output_channels:
            raise ValueError(
                f"first input has {first_input.shape[1]} channels, expected {self.cfg.output_channels}"
            )
        return self._run(first_input, side_inputs)


class DisE(_MultiInputDisc):
    """Judges EO_1..EO_L against the input pyramid Ids_1..Ids_L; Dis-D minus its first block."""

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg, cfg.scales, first_cin=None)

    def forward(self, side_inputs):
        L = self.cfg.scales
        if len(side_inputs) != L:
            raise ValueError(f"Dis-E expects {L} side inputs, got {len(side_inputs)}")
        _check_side(side_inputs[0], side_inputs[0].shape[-2:], 1, self.cfg.output_channels)
        return self._run(None, side_inputs)


class PairDisc(nn.Module):
    """Single full-resolution discriminator on (input, output) pairs; the pix2pix-style baseline."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        cin = cfg.input_channels + cfg.output_channels
        widths = [_width(cfg, b) for b in range(cfg.scales + 1)]
        blocks = [DownBlock(cin, widths[0], first_norm=False)]
        blocks += [DownBlock(a, b) for a, b in zip(widths, widths[1:])]
        self.body = nn.Sequential(*blocks)
        self.head = nn.Conv2d(widths[-1], 1, 3, padding=1)

    def forward(self, condition, image):
        return self.head(self.body(torch.cat([condition, image], dim=1)))


def score_dis_d(first_input, side_inputs, disc: DisD):
    return disc(first_input, side_inputs)


def score_dis_e(side_inputs, disc: DisE):
    return disc(side_inputs)


def build_discriminators(cfg: ModelConfig, seed: int = 0):
    """Fresh (Dis-E, Dis-D) pair with independent seeded initializations."""
    return init_weights(DisE(cfg), cfg, seed, stream=1), init_weights(DisD(cfg), cfg, seed, stream=2)


def build_pair_discriminator(cfg: ModelConfig, seed: int = 0) -> PairDisc:
    return init_weights(PairDisc(cfg), cfg, seed, stream=3)
