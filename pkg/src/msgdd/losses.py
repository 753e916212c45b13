"""Least-squares adversarial losses and the multi-scale L1 loss.

Expectations are means over batch and score-map positions. Every function takes
and returns torch tensors so the same code serves training and the loss-arithmetic
checks.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass

import torch


@dataclass
class LossBundle:
    l_dis_e: float
    l_dis_d: float
    l_dis: float
    l_g_dis: float
    l_g_l1: float
    l_g_total: float

    FIELDS = ("l_dis_e", "l_dis_d", "l_dis", "l_g_dis", "l_g_l1", "l_g_total")

    def as_tuple(self):
        return astuple(self)


def _nonempty(*scores):
    for s in scores:
        if s.numel() == 0 or s.shape[0] == 0:
            raise ValueError("empty score batch")


def lsgan_disc(real, fake):
    """½·E[(real − 1)²] + ½·E[fake²]."""
    _nonempty(real, fake)
    if real.shape[1:] != fake.shape[1:]:
        raise ValueError(f"score maps differ in shape: {tuple(real.shape)} vs {tuple(fake.shape)}")
    return 0.5 * ((real - 1) ** 2).mean() + 0.5 * (fake ** 2).mean()


def loss_dis_e(real_scores, fake_scores):
    return lsgan_disc(real_scores, fake_scores)


def loss_dis_d(real_scores, fake_scores):
    return lsgan_disc(real_scores, fake_scores)


def loss_dis_total(l_dis_e, l_dis_d):
    return 0.5 * (l_dis_e + l_dis_d)


def loss_gen_adv(fake_scores_e, fake_scores_d):
    """½·(E[(Dis_E(G) − 1)²] + E[(Dis_D(G) − 1)²])."""
    _nonempty(fake_scores_e, fake_scores_d)
    return 0.5 * (((fake_scores_e - 1) ** 2).mean() + ((fake_scores_d - 1) ** 2).mean())


def l1_scale_set(kl1: int, levels: int) -> list[int]:
    """Decoder levels scored by the L1 term besides the full-resolution pair.

    1 -> none, 2 -> [1], 4 -> [1..levels] (the bottleneck tap included).
    """
    if kl1 == 1:
        return []
    if kl1 == 2:
        return [1]
    if kl1 == 4:
        return list(range(1, levels + 1))
    raise ValueError(f"unknown kL1 selector {kl1!r}; expected 1, 2 or 4")


def loss_gen_l1(output, decoder_taps, gt, gt_pyramid, kl1: int = 4):
    """Sum of per-scale mean absolute errors over the full-resolution pair and selected taps."""
    levels = l1_scale_set(kl1, len(decoder_taps))
    pairs = [(output, gt)] + [(decoder_taps[s - 1], gt_pyramid[s - 1]) for s in levels]
    total = output.new_zeros(())
    for pred, target in pairs:
        if pred.shape != target.shape:
            raise ValueError(f"L1 pair shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
        total = total + (pred - target).abs().mean()
    return total


def loss_gen_total(l_g_dis, l_g_l1, lambda_l1: float = 100.0):
    return lambda_l1 * l_g_l1 + l_g_dis
