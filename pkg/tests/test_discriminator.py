import pytest
import torch

from msgdd.core import ModelConfig
from msgdd.data import build_pyramid
from msgdd.discriminator import build_discriminators, score_dis_d, score_dis_e
from msgdd.generator import build_generator


@pytest.fixture
def nets():
    cfg = ModelConfig(base_channels=4)
    return cfg, build_generator(cfg), *build_discriminators(cfg)


def test_dis_d_real_and_fake_shapes(nets):
    cfg, gen, dis_e, dis_d = nets
    gt = torch.sign(torch.randn(2, 1, 256, 256))
    real = score_dis_d(gt, build_pyramid(gt, 4), dis_d)
    assert real.shape == (2, 1, 8, 8)
    g = gen(torch.randn(2, 1, 256, 256))
    fake = score_dis_d(g.output, g.decoder_taps, dis_d)
    assert fake.shape == real.shape


def test_dis_e_real_and_fake_shapes(nets):
    cfg, gen, dis_e, dis_d = nets
    x = torch.randn(2, 1, 256, 256)
    real = score_dis_e(build_pyramid(x, 4), dis_e)
    assert real.shape == (2, 1, 8, 8)
    assert score_dis_e(gen(x).encoder_taps, dis_e).shape == real.shape


def test_dis_e_single_scale():
    cfg = ModelConfig(scales=1, base_channels=2)
    dis_e, _ = build_discriminators(cfg)
    assert score_dis_e([torch.randn(2, 1, 16, 16)], dis_e).shape == (2, 1, 8, 8)  # H/2 -> H/4 for H = 32


def test_resolution_mismatch_rejected(nets):
    cfg, gen, dis_e, dis_d = nets
    gt = torch.randn(1, 1, 256, 256)
    pyr = build_pyramid(gt, 4)
    swapped = [pyr[0], pyr[1], pyr[1], pyr[3]]  # a 64 map where 32 is expected
    with pytest.raises(ValueError, match="resolution"):
        score_dis_d(gt, swapped, dis_d)
    with pytest.raises(ValueError, match="resolution"):
        score_dis_e(swapped, dis_e)
    with pytest.raises(ValueError, match="side inputs"):
        score_dis_e(pyr[:3], dis_e)


def test_gradient_reaches_every_side_input():
    cfg = ModelConfig(scales=3, base_channels=4)
    dis_e, dis_d = build_discriminators(cfg)
    gt = torch.randn(2, 1, 32, 32, requires_grad=True)
    sides = [t.detach().requires_grad_() for t in build_pyramid(torch.randn(2, 1, 32, 32), 3)]
    score_dis_d(gt, sides, dis_d).mean().backward()
    for s in [gt, *sides]:
        assert s.grad is not None and s.grad.abs().sum() > 0
    sides_e = [t.detach().clone().requires_grad_() for t in sides]
    score_dis_e(sides_e, dis_e).mean().backward()
    for s in sides_e:
        assert s.grad.abs().sum() > 0


def test_batch_permutation_in_eval_mode():
    cfg = ModelConfig(scales=2, base_channels=4)
    dis_e, dis_d = build_discriminators(cfg)
    dis_d.eval()
    gt = torch.randn(5, 1, 16, 16)
    pyr = build_pyramid(gt, 2)
    perm = torch.tensor([3, 0, 4, 1, 2])
    a = dis_d(gt, pyr)[perm]
    b = dis_d(gt[perm], [p[perm] for p in pyr])
    assert torch.allclose(a, b, atol=1e-6)
