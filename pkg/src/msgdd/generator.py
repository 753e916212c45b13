"""U-Net generator with per-level encoder and decoder side outputs."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ModelConfig, torch_generator


@dataclass
class GeneratorOutput:
    output: torch.Tensor          # (N, out_ch, H, W)
    encoder_taps: list            # EO_1..EO_L, EO_s at H / 2**s
    decoder_taps: list            # DO_1..DO_L, DO_L is EO_L
    latent: torch.Tensor          # Z at H / 2**L


def _conv_in_relu(cin, cout, stride):
    return [
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.InstanceNorm2d(cout, affine=True),
        nn.ReLU(inplace=True),
    ]


class EncoderBlock(nn.Module):
    """conv3x3/1 -> IN -> ReLU -> conv3x3/2 -> IN -> ReLU.

    The stride-1 features are kept as the U-Net skip at the block's input resolution.
    """

    def __init__(self, cin, cout):
        super().__init__()
        self.keep = nn.Sequential(*_conv_in_relu(cin, cout, 1))
        self.down = nn.Sequential(*_conv_in_relu(cout, cout, 2))

    def forward(self, x):
        skip = self.keep(x)
        return self.down(skip), skip


class DecoderBlock(nn.Module):
    """Nearest 2x upsample, concat skip, then two conv3x3/1 -> IN -> ReLU."""

    def __init__(self, cin, cskip, cout):
        super().__init__()
        self.body = nn.Sequential(
            *_conv_in_relu(cin + cskip, cout, 1),
            *_conv_in_relu(cout, cout, 1),
        )

    def forward(self, x, skip):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return self.body(torch.cat([x, skip], dim=1))


class TapLayer(nn.Module):
    """1x1 projection to image space, optional instance norm, tanh."""

    def __init__(self, cin, cout, norm=True):
        super().__init__()
        # a bias ahead of instance norm is cancelled by the mean subtraction
        self.proj = nn.Conv2d(cin, cout, 1, bias=not norm)
        self.norm = nn.InstanceNorm2d(cout, affine=True) if norm else nn.Identity()

    def forward(self, x):
        return torch.tanh(self.norm(self.proj(x)))


class Generator(nn.Module):
    """Encoder blocks CB_1..CB_L, decoder blocks UCB_L..UCB_1 and their tap layers.

    ``dec_taps[s-1]`` projects decoder features at H / 2**s for s < L; the level-L
    decoder tap reuses the level-L encoder tap layer on Z, so EO_L and DO_L coincide.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        L = cfg.scales
        widths = [cfg.channels(s) for s in range(1, L + 1)]
        ins = [cfg.input_channels] + widths[:-1]
        self.encoder = nn.ModuleList(EncoderBlock(i, w) for i, w in zip(ins, widths))
        # decoder[s-1] is UCB_s: lifts H/2**s -> H/2**(s-1), fuses skip of CB_s
        self.decoder = nn.ModuleList(
            DecoderBlock(widths[i + 1] if i + 1 < L else widths[L - 1], widths[i], widths[i])
            for i in range(L)
        )
        self.enc_taps = nn.ModuleList(TapLayer(w, cfg.output_channels, cfg.tap_norm) for w in widths)
        # DO_s (s < L) reads UCB_{s+1}'s output, which has width widths[s]
        self.dec_taps = nn.ModuleList(
            TapLayer(widths[s], cfg.output_channels, cfg.tap_norm) for s in range(1, L)
        )
        self.head = TapLayer(widths[0], cfg.output_channels, cfg.tap_norm)

    def encode(self, x):
        """Return (Z, [EO_1..EO_L], skips) where skips[s-1] is CB_s's stride-1 features."""
        L = self.cfg.scales
        if x.dim() != 4 or x.shape[1] != self.cfg.input_channels:
            raise ValueError(
                f"expected input of shape (N, {self.cfg.input_channels}, H, W), got {tuple(x.shape)}"
            )
        h, w = x.shape[-2:]
        if h % 2 ** L or w % 2 ** L:
            raise ValueError(f"input resolution {h}x{w} not divisible by 2^{L}")
        taps, skips = [], []
        for block, tap in zip(self.encoder, self.enc_taps):
            x, skip = block(x)
            skips.append(skip)
            taps.append(tap(x))
        return x, taps, skips

    def decode(self, z, skips, bottleneck_tap=None):
        """Return (output, [DO_1..DO_L]).

        ``bottleneck_tap`` is EO_L when called from generate(); otherwise it is
        recomputed from ``z`` with the shared level-L tap layer.
        """
        L = self.cfg.scales
        if len(skips) != L:
            raise ValueError(f"expected {L} skip tensors, got {len(skips)}")
        if bottleneck_tap is None:
            bottleneck_tap = self.enc_taps[L - 1](z)
        taps = [None] * L
        taps[L - 1] = bottleneck_tap
        x = z
        for s in range(L, 0, -1):
            skip = skips[s - 1]
            if skip.shape[-2:] != tuple(2 * d for d in x.shape[-2:]):
                raise ValueError(
                    f"skip at level {s} has resolution {tuple(skip.shape[-2:])}, "
                    f"decoder path expects {tuple(2 * d for d in x.shape[-2:])}"
                )
            x = self.decoder[s - 1](x, skip)
            if s > 1:
                taps[s - 2] = self.dec_taps[s - 2](x)
        return self.head(x), taps

    def forward(self, x) -> GeneratorOutput:
        z, enc, skips = self.encode(x)
        out, dec = self.decode(z, skips, bottleneck_tap=enc[-1])
        return GeneratorOutput(out, enc, dec, z)

    def blocks(self):
        """Named parameter blocks used by the gradient diagnostics."""
        L = self.cfg.scales
        named = {f"CB_{s}": self.encoder[s - 1] for s in range(1, L + 1)}
        named.update({f"UCB_{s}": self.decoder[s - 1] for s in range(L, 0, -1)})
        named["EOL"] = self.enc_taps
        named["DOL"] = nn.ModuleList([*self.dec_taps, self.head])
        return named


def init_weights(module: nn.Module, cfg: ModelConfig, seed: int, stream: int = 0) -> nn.Module:
    """Conv weights ~ N(0, std) (std=1 in paper-literal mode), biases 0, norm affine = (1, 0)."""
    g = torch_generator(seed, 100 + stream)
    std = 1.0 if cfg.init == "paper-literal" else cfg.init_std
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.normal_(m.weight, 0.0, std, generator=g)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.InstanceNorm2d, nn.BatchNorm2d)) and m.affine:
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    return module


def build_generator(cfg: ModelConfig, seed: int = 0) -> Generator:
    return init_weights(Generator(cfg), cfg, seed, stream=0)


def expected_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count from the kernel and channel schedule."""
    L, out = cfg.scales, cfg.output_channels
    w = [cfg.channels(s) for s in range(1, L + 1)]

    def conv(cin, cout, k, bias=False):
        return cin * cout * k * k + (cout if bias else 0)

    def norm(c):
        return 2 * c  # affine scale and shift

    def tap(c):
        return conv(c, out, 1) + norm(out) if cfg.tap_norm else conv(c, out, 1, bias=True)

    total = 0
    cin = cfg.input_channels
    for s in range(L):
        total += conv(cin, w[s], 3) + norm(w[s]) + conv(w[s], w[s], 3) + norm(w[s])
        cin = w[s]
    for s in range(L):
        below = w[s + 1] if s + 1 < L else w[L - 1]
        total += conv(below + w[s], w[s], 3) + norm(w[s]) + conv(w[s], w[s], 3) + norm(w[s])
    total += sum(tap(c) for c in w)            # EOL_1..EOL_L (EOL_L doubles as DOL_L)
    total += sum(tap(w[s]) for s in range(1, L))   # DOL_1..DOL_{L-1}
    total += tap(w[0])                         # full-resolution head
    return total
