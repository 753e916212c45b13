from __future__ import annotations

import numpy as np
import torch


def _as_array(x):
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def f1_score(pred, gt, threshold: float = 0.0) -> float:
    """Pixel F1 (Dice) of ``pred > threshold`` against ``gt > threshold``.

    Two empty masks score 1; exactly one empty mask scores 0.
    """
    p, g = _as_array(pred), _as_array(gt)
    if p.shape != g.shape:
        raise ValueError(f"resolution mismatch: {p.shape} vs {g.shape}")
    p, g = p > threshold, g > threshold
    tp = np.count_nonzero(p & g)
    fp = np.count_nonzero(p & ~g)
    fn = np.count_nonzero(~p & g)
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


@torch.no_grad()
def predict(generator, samples, batch_size: int = 32):
    """Full-resolution outputs for ``samples`` with the generator in evaluation mode."""
    was_training = generator.training
    generator.eval()
    try:
        outs = []
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            x = torch.from_numpy(np.stack([s.input for s in chunk]))
            outs.extend(generator(x).output.numpy())
        return outs
    finally:
        generator.train(was_training)


def per_image_f1(generator, samples, threshold: float = 0.0) -> list[float]:
    preds = predict(generator, samples)
    return [f1_score(p, s.target, threshold) for p, s in zip(preds, samples)]
