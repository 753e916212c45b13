"""Alternating minimax training: Dis-E, then Dis-D, then the generator, once per step."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import checkpoint as ckpt
from .core import RunConfig, dumps_config, loads_config, seeded_rng, validate_config
from .data import batches, build_pyramid, load_splits, match_channels
from .discriminator import build_discriminators, build_pair_discriminator
from .generator import build_generator
from .losses import (
    LossBundle,
    loss_dis_d,
    loss_dis_e,
    loss_dis_total,
    loss_gen_adv,
    loss_gen_l1,
    loss_gen_total,
    lsgan_disc,
)
from .metrics import per_image_f1

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "l_dis_e", "l_dis_d", "l_g_dis", "l_g_l1", "l_g_total", "val_f1")


class NonFiniteError(RuntimeError):
    def __init__(self, step, term, epoch=None):
        self.step, self.term, self.epoch = step, term, epoch
        where = f"step {step}" if epoch is None else f"epoch {epoch}, step {step}"
        super().__init__(f"non-finite {term} at {where}; run aborted")


@dataclass
class TrainState:
    config: RunConfig
    generator: nn.Module
    discs: dict                 # "dis_e"/"dis_d" (msgdd), "dis_p" (pix2pix), empty (unet)
    optimizers: dict            # keyed like discs plus "gen"
    epoch: int = 0
    step: int = 0
    best_val_f1: float = -1.0
    best_epoch: int = -1
    history: list = field(default_factory=list)

    def modules(self):
        return {"gen": self.generator, **self.discs}


def _adam(module, config: RunConfig):
    o = config.optim
    return torch.optim.Adam(module.parameters(), lr=o.learning_rate, betas=(o.beta1, o.beta2))


def init_state(config: RunConfig) -> TrainState:
    validate_config(config)
    gen = build_generator(config.model, config.seed)
    if config.variant == "msgdd":
        dis_e, dis_d = build_discriminators(config.model, config.seed)
        discs = {"dis_e": dis_e, "dis_d": dis_d}
    elif config.variant == "pix2pix":
        discs = {"dis_p": build_pair_discriminator(config.model, config.seed)}
    else:
        discs = {}
    state = TrainState(config, gen, discs, {})
    state.optimizers = {name: _adam(m, config) for name, m in state.modules().items()}
    return state


# -- one step -----------------------------------------------------------------

def _check(value, term, state):
    if not math.isfinite(value):
        raise NonFiniteError(state.step, term, state.epoch)
    return value


def _update(state, name, loss):
    opt = state.optimizers[name]
    opt.zero_grad(set_to_none=True)
    loss.backward()
    clip = state.config.optim.clip
    if clip > 0:
        nn.utils.clip_grad_norm_(state.modules()[name].parameters(), clip)
    opt.step()


def _requires_grad(module, flag):
    for p in module.parameters():
        p.requires_grad_(flag)


def train_step(state: TrainState, x: torch.Tensor, y: torch.Tensor) -> LossBundle:
    """One alternating update on a batch; returns the six loss scalars."""
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    cfg = state.config
    L, out_ch = cfg.model.scales, cfg.model.output_channels
    gen = state.generator
    for m in state.modules().values():
        m.train()

    g = gen(x)
    gt_pyr = build_pyramid(y, L)
    zero = torch.zeros(())
    l_dis_e = l_dis_d = zero
    l_g_dis = zero

    if cfg.variant == "msgdd":
        dis_e, dis_d = state.discs["dis_e"], state.discs["dis_d"]
        ids = match_channels(build_pyramid(x, L), out_ch)
        l_dis_e = loss_dis_e(dis_e(ids), dis_e([t.detach() for t in g.encoder_taps]))
        _check(l_dis_e.item(), "l_dis_e", state)
        _update(state, "dis_e", l_dis_e)

        l_dis_d = loss_dis_d(
            dis_d(y, gt_pyr),
            dis_d(g.output.detach(), [t.detach() for t in g.decoder_taps]),
        )
        _check(l_dis_d.item(), "l_dis_d", state)
        _update(state, "dis_d", l_dis_d)

        _requires_grad(dis_e, False)
        _requires_grad(dis_d, False)
        try:
            l_g_dis = loss_gen_adv(dis_e(g.encoder_taps), dis_d(g.output, g.decoder_taps))
        finally:
            _requires_grad(dis_e, True)
            _requires_grad(dis_d, True)
        kl1 = cfg.kl1
    elif cfg.variant == "pix2pix":
        dis_p = state.discs["dis_p"]
        l_dis_d = lsgan_disc(dis_p(x, y), dis_p(x, g.output.detach()))
        _check(l_dis_d.item(), "l_dis_d", state)
        _update(state, "dis_p", l_dis_d)
        _requires_grad(dis_p, False)
        try:
            l_g_dis = ((dis_p(x, g.output) - 1) ** 2).mean()
        finally:
            _requires_grad(dis_p, True)
        kl1 = 1
    else:
        kl1 = 1

    l_g_l1 = loss_gen_l1(g.output, g.decoder_taps, y, gt_pyr, kl1)
    l_g_total = loss_gen_total(l_g_dis, l_g_l1, cfg.lambda_l1)
    for term, value in (("l_g_dis", l_g_dis), ("l_g_l1", l_g_l1), ("l_g_total", l_g_total)):
        _check(value.item(), term, state)
    _update(state, "gen", l_g_total)

    for name, m in state.modules().items():
        if not all(torch.isfinite(p).all() for p in m.parameters()):
            raise NonFiniteError(state.step, f"{name} parameters", state.epoch)
    state.step += 1

    l_dis = loss_dis_total(l_dis_e, l_dis_d)
    return LossBundle(*(t.item() for t in (l_dis_e, l_dis_d, l_dis, l_g_dis, l_g_l1, l_g_total)))


# -- checkpoints ----------------------------------------------------------------

def _state_arrays(state: TrainState) -> tuple[dict, dict]:
    arrays, groups = {}, {}
    for name, module in state.modules().items():
        for key, t in module.state_dict().items():
            arrays[f"{name}/{key}"] = t.detach().cpu().numpy()
    for name, opt in state.optimizers.items():
        sd = opt.state_dict()
        groups[name] = sd["param_groups"]
        for idx, slots in sd["state"].items():
            for slot, t in slots.items():
                arrays[f"opt/{name}/{idx}/{slot}"] = torch.as_tensor(t).detach().cpu().numpy()
    return arrays, groups


def save_checkpoint(state: TrainState, path) -> None:
    arrays, groups = _state_arrays(state)
    meta = {
        "epoch": state.epoch,
        "step": state.step,
        "best_val_f1": state.best_val_f1,
        "best_epoch": state.best_epoch,
        "history": state.history,
        "param_groups": groups,
    }
    ckpt.write_container(path, arrays, dumps_config(state.config), meta)


def load_checkpoint(path, config: RunConfig | None = None) -> TrainState:
    """Rebuild a TrainState from ``path``.

    With ``config`` given, the stored tensors are loaded into networks built from it
    and any shape disagreement names the first offending tensor.
    """
    arrays, config_text, meta = ckpt.read_container(path)
    config = config if config is not None else loads_config(config_text)
    state = init_state(config)
    for name, module in state.modules().items():
        target = module.state_dict()
        loaded = {}
        for key, t in target.items():
            full = f"{name}/{key}"
            if full not in arrays:
                raise ckpt.CheckpointError(f"checkpoint lacks tensor {full!r}")
            arr = arrays[full]
            if tuple(arr.shape) != tuple(t.shape):
                raise ckpt.CheckpointError(
                    f"shape mismatch for tensor {full!r}: checkpoint {tuple(arr.shape)}, "
                    f"model {tuple(t.shape)}"
                )
            loaded[key] = torch.from_numpy(arr)
        module.load_state_dict(loaded)
    for name, opt in state.optimizers.items():
        groups = meta["param_groups"].get(name)
        if groups is None:
            continue
        for g in groups:
            g["betas"] = tuple(g["betas"])
        slots = {}
        prefix = f"opt/{name}/"
        for key, arr in arrays.items():
            if key.startswith(prefix):
                idx, slot = key[len(prefix):].split("/")
                slots.setdefault(int(idx), {})[slot] = torch.from_numpy(arr)
        opt.load_state_dict({"state": slots, "param_groups": groups})
    state.epoch = meta["epoch"]
    state.step = meta["step"]
    state.best_val_f1 = meta["best_val_f1"]
    state.best_epoch = meta["best_epoch"]
    state.history = meta["history"]
    return state


# -- metrics log ------------------------------------------------------------------

def fmt(value: float) -> str:
    return format(value, ".10g")


def metrics_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for row in history:
        w.writerow([row["epoch"]] + [fmt(row[c]) for c in METRIC_COLUMNS[1:]])
    return buf.getvalue()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


# -- tap grid -----------------------------------------------------------------------

@torch.no_grad()
def tap_grid(generator, samples, path, n: int = 4) -> None:
    """Rows of (input, EO_1..EO_L, DO_1..DO_L, output, gt), upsampled to full size."""
    from PIL import Image

    chunk = samples[:n]
    x = torch.from_numpy(np.stack([s.input for s in chunk]))
    generator.eval()
    g = generator(x)
    generator.train()
    size = x.shape[-1]
    rows = []
    for i, s in enumerate(chunk):
        tiles = [s.input[0]]
        for t in [*g.encoder_taps, *g.decoder_taps]:
            k = size // t.shape[-1]
            tiles.append(np.kron(t[i, 0].numpy(), np.ones((k, k))))
        tiles += [g.output[i, 0].numpy(), s.target[0]]
        rows.append(np.concatenate(tiles, axis=1))
    grid = np.concatenate(rows, axis=0)
    pixels = np.clip(np.rint((grid + 1) * 127.5), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode="L").save(path)


# -- training loop ----------------------------------------------------------------

@dataclass
class TrainResult:
    config: RunConfig
    history: list
    best_val_f1: float
    best_epoch: int
    final_val_f1: float
    best_path: Path
    final_path: Path
    metrics_path: Path
    state: TrainState


def train(config: RunConfig, resume=None, splits=None) -> TrainResult:
    """Run (or resume) training; writes metrics.csv and best/final checkpoints under output_dir."""
    validate_config(config)
    if resume is not None:
        state = load_checkpoint(resume)
        # the resumed run may extend the epoch budget or relocate outputs
        state.config = config
    else:
        state = init_state(config)
    splits = splits if splits is not None else load_splits(config)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    best_path, final_path = out / "checkpoint_best.ckpt", out / "checkpoint_final.ckpt"
    metrics_path = out / "metrics.csv"
    o = config.optim

    for epoch in range(state.epoch, o.epochs):
        state.epoch = epoch
        rng = seeded_rng(config.seed, 1, epoch)
        sums = np.zeros(len(LossBundle.FIELDS))
        count = 0
        for x, y in batches(splits["train"], o.batch_size, rng, config.augment):
            sums += train_step(state, x, y).as_tuple()
            count += 1
        means = dict(zip(LossBundle.FIELDS, sums / count))
        val_f1 = float(np.mean(per_image_f1(state.generator, splits["val"]))) if splits["val"] else float("nan")
        row = {"epoch": epoch + 1, **{k: float(means[k]) for k in METRIC_COLUMNS[1:-1]}, "val_f1": val_f1}
        state.history.append(row)
        state.epoch = epoch + 1
        log.info("epoch %d: l_g_dis=%.4f l_g_l1=%.4f val_f1=%.4f", epoch + 1, row["l_g_dis"], row["l_g_l1"], val_f1)

        if config.tap_grid_every and (epoch + 1) % config.tap_grid_every == 0:
            tap_grid(state.generator, splits["val"] or splits["train"], out / f"taps_epoch_{epoch + 1:03d}.png")
        metrics_path.write_text(metrics_csv(state.history))
        if val_f1 > state.best_val_f1 or not math.isfinite(val_f1):
            state.best_val_f1, state.best_epoch = val_f1, epoch + 1
            save_checkpoint(state, best_path)

    save_checkpoint(state, final_path)
    if not metrics_path.exists():
        metrics_path.write_text(metrics_csv(state.history))
    final_f1 = state.history[-1]["val_f1"] if state.history else float("nan")
    return TrainResult(config, state.history, state.best_val_f1, state.best_epoch, final_f1,
                       best_path, final_path, metrics_path, state)
