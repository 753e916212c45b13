import hashlib

import numpy as np
import pytest
import torch

from msgdd import checkpoint as ckpt
from msgdd.core import ModelConfig
from msgdd.data import batches, load_splits, synth_shapes
from msgdd.evaluation import parameter_hash
from msgdd.trainer import (
    NonFiniteError, init_state, load_checkpoint, read_metrics, save_checkpoint, train, train_step,
)


def _batch(cfg, n=4, seed=0):
    samples = synth_shapes(n, cfg.image_size, seed=seed)
    return next(batches(samples, n))


@pytest.mark.parametrize("variant", ["msgdd", "pix2pix", "unet"])
def test_step_deterministic(tiny_config, variant):
    cfg = tiny_config.replace(variant=variant, kl1=4 if variant == "msgdd" else 1)
    x, y = _batch(cfg)
    a = train_step(init_state(cfg), x, y)
    b = train_step(init_state(cfg), x, y)
    assert a.as_tuple() == b.as_tuple()
    assert all(np.isfinite(v) and v >= 0 for v in a.as_tuple())
    if variant == "unet":
        assert a.l_g_dis == 0 and a.l_dis == 0


def test_discriminator_phases_leave_generator_untouched(tiny_config, monkeypatch):
    from msgdd import trainer

    state = init_state(tiny_config)
    x, y = _batch(tiny_config)
    seen = {}
    real_update = trainer._update

    def spy(st, name, loss):
        if name in ("dis_e", "dis_d"):
            before = parameter_hash(st.generator)
            real_update(st, name, loss)
            seen[name] = before == parameter_hash(st.generator)
        else:
            before = parameter_hash(st.discs["dis_d"])
            real_update(st, name, loss)
            seen[name] = before == parameter_hash(st.discs["dis_d"])

    monkeypatch.setattr(trainer, "_update", spy)
    gen_before = parameter_hash(state.generator)
    train_step(state, x, y)
    assert seen == {"dis_e": True, "dis_d": True, "gen": True}
    assert parameter_hash(state.generator) != gen_before


def test_generator_phase_gets_adversarial_gradient(tiny_config):
    # with the L1 weight at zero the generator can only move through the discriminators
    cfg = tiny_config.replace(lambda_l1=1e-12)
    state = init_state(cfg)
    before = parameter_hash(state.generator)
    train_step(state, *_batch(cfg))
    assert parameter_hash(state.generator) != before


def test_overfit_small_set():
    from msgdd.core import OptimizerConfig, RunConfig

    cfg = RunConfig(model=ModelConfig(scales=2, base_channels=8), optim=OptimizerConfig(batch_size=10),
                    image_size=32, split_train=10, split_val=0, split_test=0)
    x, y = _batch(cfg, n=10, seed=11)
    state = init_state(cfg)
    first = train_step(state, x, y).l_g_l1
    for _ in range(199):
        last = train_step(state, x, y).l_g_l1
    assert last <= 0.5 * first, (first, last)


def test_empty_batch(tiny_config):
    with pytest.raises(ValueError, match="empty"):
        train_step(init_state(tiny_config), torch.zeros(0, 1, 32, 32), torch.zeros(0, 1, 32, 32))


def test_nan_input_aborts_with_term(tiny_config):
    state = init_state(tiny_config)
    x, y = _batch(tiny_config)
    train_step(state, x, y)
    x[0, 0, 0, 0] = float("nan")
    with pytest.raises(NonFiniteError) as err:
        train_step(state, x, y)
    assert err.value.step == 1 and err.value.term == "l_dis_e"
    assert "step 1" in str(err.value)


def _forward(state, x):
    state.generator.eval()
    with torch.no_grad():
        return state.generator(x).output


def test_checkpoint_round_trip(tiny_config, tmp_path):
    state = init_state(tiny_config)
    x, y = _batch(tiny_config)
    train_step(state, x, y)
    path = tmp_path / "a.ckpt"
    save_checkpoint(state, path)
    back = load_checkpoint(path)
    assert back.config == tiny_config and back.step == 1
    for name, module in state.modules().items():
        for (k, a), (_, b) in zip(module.state_dict().items(), back.modules()[name].state_dict().items()):
            assert a.shape == b.shape and torch.equal(a, b), k
    assert torch.equal(_forward(state, x), _forward(back, x))
    # optimizer moments survive too, so the next step matches
    state.generator.train()
    assert train_step(state, x, y).as_tuple() == train_step(back, x, y).as_tuple()


def test_truncated_checkpoint(tiny_config, tmp_path):
    path = tmp_path / "a.ckpt"
    save_checkpoint(init_state(tiny_config), path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ckpt.ChecksumError):
        load_checkpoint(path)
    flipped = bytearray(data)
    flipped[100] ^= 1
    path.write_bytes(bytes(flipped))
    with pytest.raises(ckpt.ChecksumError):
        load_checkpoint(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "v.ckpt"
    ckpt.write_container(path, {"w": np.zeros(3)}, "", {})
    body = bytearray(path.read_bytes()[:-32])
    body[8:12] = (ckpt.VERSION + 1).to_bytes(4, "little")
    path.write_bytes(bytes(body) + hashlib.sha256(body).digest())
    with pytest.raises(ckpt.CheckpointError, match="version"):
        ckpt.read_container(path)


def test_container_keeps_scalar_shapes(tmp_path):
    arrays = {"s": np.array(3, dtype=np.int64), "m": np.arange(6.0).reshape(2, 3).T}
    ckpt.write_container(tmp_path / "c", arrays, "x = 1", {"k": [1]})
    back, text, meta = ckpt.read_container(tmp_path / "c")
    assert back["s"].shape == () and np.array_equal(back["m"], arrays["m"])
    assert text == "x = 1" and meta == {"k": [1]}


def test_depth_mismatch_names_tensor(tmp_path):
    from msgdd.core import RunConfig

    deep = RunConfig(model=ModelConfig(scales=4, base_channels=2), image_size=32)
    path = tmp_path / "deep.ckpt"
    save_checkpoint(init_state(deep), path)
    shallow = deep.replace(scales=2)
    with pytest.raises(ckpt.CheckpointError, match=r"shape mismatch for tensor 'gen/[\w.]+'"):
        load_checkpoint(path, shallow)


def test_single_epoch_writes_one_pair(tiny_config):
    cfg = tiny_config.replace(epochs=1, tap_grid_every=1)
    result = train(cfg)
    from pathlib import Path

    out = Path(cfg.output_dir)
    assert sorted(p.name for p in out.glob("*.ckpt")) == ["checkpoint_best.ckpt", "checkpoint_final.ckpt"]
    assert (out / "taps_epoch_001.png").is_file()
    rows = read_metrics(result.metrics_path)
    assert len(rows) == 1 and rows[0]["epoch"] == 1
    assert all(np.isfinite(v) for v in rows[0].values())


def test_epoch_means_are_exact(tiny_config, monkeypatch):
    from msgdd import trainer

    seen = []
    real = trainer.train_step

    def spy(state, x, y):
        b = real(state, x, y)
        seen.append(b)
        return b

    monkeypatch.setattr(trainer, "train_step", spy)
    result = train(tiny_config.replace(epochs=1))
    assert result.history[0]["l_g_l1"] == pytest.approx(np.mean([b.l_g_l1 for b in seen]), rel=1e-12)


def test_resume_matches_straight_run(tiny_config, tmp_path):
    splits = load_splits(tiny_config)
    straight = train(tiny_config.replace(epochs=3, output_dir=str(tmp_path / "a")), splits=splits)
    part = train(tiny_config.replace(epochs=2, output_dir=str(tmp_path / "b")), splits=splits)
    resumed = train(tiny_config.replace(epochs=3, output_dir=str(tmp_path / "b")),
                    resume=part.final_path, splits=splits)
    assert abs(straight.final_val_f1 - resumed.final_val_f1) <= 1e-6
    assert straight.history == resumed.history
