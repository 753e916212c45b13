"""F1 reports, baseline/ablation protocol and gradient diagnostics."""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .core import ModelConfig, RunConfig, seeded_rng, validate_config
from .data import build_pyramid, load_splits, match_channels
from .discriminator import build_discriminators
from .generator import build_generator
from .losses import (
    l1_scale_set,
    loss_dis_d,
    loss_dis_e,
    loss_dis_total,
    loss_gen_adv,
    loss_gen_l1,
    loss_gen_total,
)
from .metrics import f1_score, per_image_f1
from .trainer import TrainState, fmt, load_checkpoint, train

__all__ = [
    "f1_score", "MetricReport", "evaluate", "parameter_hash", "AblationSpec", "VARIANT_SPECS",
    "resolve_variants", "run_ablation", "GradProbeReport", "grad_probe", "FiniteDiffReport",
    "finite_diff_check",
]


@dataclass
class MetricReport:
    per_image: list
    mean_f1: float
    threshold: float
    split: str
    checkpoint_id: str
    ids: list

    def per_image_csv(self) -> str:
        lines = ["id,f1"] + [f"{i},{fmt(v)}" for i, v in zip(self.ids, self.per_image)]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        return (
            f"split={self.split} images={len(self.per_image)} threshold={self.threshold:g}\n"
            f"checkpoint={self.checkpoint_id}\n"
            f"mean_f1={fmt(self.mean_f1)}\n"
        )


def parameter_hash(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for key, t in module.state_dict().items():
        h.update(key.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def evaluate(source, split: str = "test", splits=None, threshold: float = 0.0) -> MetricReport:
    """Per-image F1 of a checkpoint (path or TrainState) on one split."""
    if isinstance(source, TrainState):
        state, ckpt_id = source, "in-memory"
    else:
        state = load_checkpoint(source)
        ckpt_id = f"{Path(source).name}:{hashlib.sha256(Path(source).read_bytes()).hexdigest()[:16]}"
    splits = splits if splits is not None else load_splits(state.config)
    samples = splits[split]
    if not samples:
        raise ValueError(f"split {split!r} is empty")
    size = samples[0].input.shape[-1]
    if size != state.config.image_size or samples[0].input.shape[0] != state.config.model.input_channels:
        raise ValueError(
            f"checkpoint expects {state.config.model.input_channels}x{state.config.image_size}² inputs, "
            f"dataset has {samples[0].input.shape[0]}x{size}²"
        )
    scores = per_image_f1(state.generator, samples, threshold)
    return MetricReport(scores, float(np.mean(scores)), threshold, split, ckpt_id, [s.id for s in samples])


# -- ablations -------------------------------------------------------------------

@dataclass(frozen=True)
class AblationSpec:
    name: str
    deltas: dict
    reference_f1: float  # published full-scale HC18 figure, percent


VARIANT_SPECS = {
    "msgdd_4l1": AblationSpec("msgdd_4l1", {"variant": "msgdd", "kl1": 4}, 95.04),
    "msgdd_2l1": AblationSpec("msgdd_2l1", {"variant": "msgdd", "kl1": 2}, 93.19),
    "msgdd_1l1": AblationSpec("msgdd_1l1", {"variant": "msgdd", "kl1": 1}, 94.48),
    "pix2pix_like": AblationSpec("pix2pix_like", {"variant": "pix2pix", "kl1": 1}, 91.86),
    "unet_only": AblationSpec("unet_only", {"variant": "unet", "kl1": 1}, 86.06),
}
_ALIASES = {"1l1": "msgdd_1l1", "2l1": "msgdd_2l1", "4l1": "msgdd_4l1"}
ABLATION_COLUMNS = ("variant", "test_f1", "best_val_f1", "epochs", "reference_f1")


def resolve_variants(names) -> list[AblationSpec]:
    if isinstance(names, str):
        names = [n for n in names.split(",") if n.strip()]
    specs = []
    for n in names:
        key = _ALIASES.get(n.strip().lower(), n.strip())
        if key not in VARIANT_SPECS:
            raise ValueError(f"unknown variant {n!r}; choose from {sorted(VARIANT_SPECS)} or 1L1/2L1/4L1")
        specs.append(VARIANT_SPECS[key])
    return specs


def ablation_csv(rows) -> str:
    lines = [",".join(ABLATION_COLUMNS)]
    for r in rows:
        lines.append(f"{r['variant']},{fmt(r['test_f1'])},{fmt(r['best_val_f1'])},{r['epochs']},{r['reference_f1']}")
    return "\n".join(lines) + "\n"


def ablation_table(rows) -> str:
    lines = [f"{'Model':<16}{'F1 score %':>12}{'full-scale ref.':>18}"]
    for r in rows:
        lines.append(f"{r['variant']:<16}{100 * r['test_f1']:>12.2f}{r['reference_f1']:>18.2f}")
    return "\n".join(lines) + "\n"


def run_ablation(base: RunConfig, variants, splits=None) -> list[dict]:
    """Train every variant with the same seed, data and epoch budget; score best-val checkpoints on test.

    Writes ``ablation.csv`` and ``ablation.txt`` under ``base.output_dir``.
    """
    validate_config(base)
    specs = resolve_variants(variants)
    splits = splits if splits is not None else load_splits(base)
    root = Path(base.output_dir)
    rows = []
    for spec in specs:
        cfg = base.replace(**spec.deltas, output_dir=str(root / spec.name))
        result = train(cfg, splits=splits)
        report = evaluate(result.best_path, "test", splits=splits)
        rows.append({
            "variant": spec.name, "test_f1": report.mean_f1, "best_val_f1": result.best_val_f1,
            "epochs": cfg.optim.epochs, "reference_f1": spec.reference_f1,
        })
    root.mkdir(parents=True, exist_ok=True)
    (root / "ablation.csv").write_text(ablation_csv(rows))
    (root / "ablation.txt").write_text(ablation_table(rows))
    return rows


# -- gradient probe ----------------------------------------------------------------

@dataclass
class GradProbeReport:
    norms: dict           # block name -> gradient L2 norm
    loss: float
    adversarial_only: bool
    ablated_taps: bool

    def csv(self) -> str:
        return "block,grad_norm\n" + "".join(f"{k},{fmt(v)}\n" for k, v in self.norms.items())


def _gen_objective(gen, dis_e, dis_d, x, y, cfg: RunConfig, adversarial_only=False, ablate_taps=False):
    L, out_ch = cfg.model.scales, cfg.model.output_channels
    g = gen(x)
    enc, dec = g.encoder_taps, g.decoder_taps
    if ablate_taps:
        enc = [torch.zeros_like(t) for t in enc]
        dec = [torch.zeros_like(t) for t in dec]
    l_g_dis = loss_gen_adv(dis_e(enc), dis_d(g.output, dec))
    if adversarial_only:
        return l_g_dis
    gt_pyr = build_pyramid(y, L)
    return loss_gen_total(l_g_dis, loss_gen_l1(g.output, g.decoder_taps, y, gt_pyr, cfg.kl1), cfg.lambda_l1)


def grad_probe(source, x, y, adversarial_only: bool = False, ablate_taps: bool = False) -> GradProbeReport:
    """Per-block generator gradient norms of one backward pass; never mutates ``source``.

    ``source`` is a TrainState, a checkpoint path, or a RunConfig (fresh init).
    ``ablate_taps`` feeds constant zeros to the discriminators in place of every tap.
    """
    if isinstance(source, RunConfig):
        cfg = validate_config(source)
        gen = build_generator(cfg.model, cfg.seed)
        dis_e, dis_d = build_discriminators(cfg.model, cfg.seed)
    else:
        state = source if isinstance(source, TrainState) else load_checkpoint(source)
        cfg = state.config
        if cfg.variant != "msgdd":
            raise ValueError("grad_probe needs the dual-discriminator variant")
        gen = copy.deepcopy(state.generator)
        dis_e, dis_d = (copy.deepcopy(state.discs[k]) for k in ("dis_e", "dis_d"))
    for m in (gen, dis_e, dis_d):
        m.train()
    loss = _gen_objective(gen, dis_e, dis_d, x, y, cfg, adversarial_only, ablate_taps)
    blocks = gen.blocks()
    params = [list(b.parameters()) for b in blocks.values()]
    flat = [p for ps in params for p in ps]
    grads = torch.autograd.grad(loss, flat, allow_unused=True)
    norms, i = {}, 0
    for name, ps in zip(blocks, params):
        sq = 0.0
        for p, gr in zip(ps, grads[i:i + len(ps)]):
            if gr is not None:
                sq += float((gr.double() ** 2).sum())
        norms[name] = sq ** 0.5
        i += len(ps)
    return GradProbeReport(norms, loss.item(), adversarial_only, ablate_taps)


# -- finite differences ---------------------------------------------------------------

# Unit-variance weights: norm layers make the loss scale-invariant in conv weights, so
# curvature grows like 1/|w|^2 and a 1e-3 stencil needs |w| well above 1e-3.
MICRO_MODEL = ModelConfig(scales=2, base_channels=2, init="paper-literal")


def micro_config(**overrides) -> RunConfig:
    return RunConfig(model=MICRO_MODEL, image_size=8).replace(**overrides)


def micro_batch(cfg: RunConfig, n: int = 4, seed: int = 0, dtype=torch.float64):
    """Random inputs in [-1, 1] and blob-like binary masks."""
    rng = seeded_rng(seed, 11)
    size, cin, cout = cfg.image_size, cfg.model.input_channels, cfg.model.output_channels
    x = rng.uniform(-1, 1, size=(n, cin, size, size))
    blob = rng.standard_normal((n, cout, size, size))
    blob = blob + np.roll(blob, 1, -1) + np.roll(blob, 1, -2)
    y = np.where(blob > 0, 1.0, -1.0)
    return torch.tensor(x, dtype=dtype), torch.tensor(y, dtype=dtype)


@dataclass
class FiniteDiffReport:
    generator_error: float
    discriminator_error: float
    n_params: int
    step: float
    excluded: int = 0  # coordinates whose stencil crossed a ReLU or L1 kink
    checked: int = 0   # smooth coordinates compared, per side (the smaller of the two)

    @property
    def max_error(self) -> float:
        return max(self.generator_error, self.discriminator_error)


class KinkTracker:
    """Sign patterns of every non-smooth argument seen during one forward pass.

    Covers the inputs of all ReLU modules and, when ``l1_pairs`` is given, the
    residuals of the L1 term. Two passes with equal signatures lie on the same
    smooth piece of the loss.
    """

    def __init__(self, modules, l1_pairs=None):
        self.signs = []
        self.handles = []
        for module in modules:
            for m in module.modules():
                if isinstance(m, torch.nn.ReLU):
                    self.handles.append(m.register_forward_pre_hook(self._relu))
        self.l1_pairs = l1_pairs

    def _relu(self, module, inputs):
        self.signs.append(torch.sign(inputs[0].detach()))

    def evaluate(self, fn):
        """Return (fn(), sign signature of that pass)."""
        self.signs = []
        value = float(fn())
        if self.l1_pairs is not None:
            self.signs.extend(torch.sign(p - t) for p, t in self.l1_pairs())
        return value, [s.clone() for s in self.signs]

    def close(self):
        for h in self.handles:
            h.remove()


def _same(a, b):
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def _max_rel_error(loss_fn, params, n, step, rng, tracker):
    """Largest relative error over up to ``n`` smooth coordinates; returns (error, excluded, checked)."""
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    order = [(k, i) for k, p in enumerate(params) for i in range(p.numel())]
    order = [order[j] for j in rng.permutation(len(order))]
    worst, checked, excluded = 0.0, 0, 0
    with torch.no_grad():
        _, base = tracker.evaluate(loss_fn)
        for k, idx in order:
            if checked == n:
                break
            p = params[k].view(-1)
            orig = float(p[idx])
            p[idx] = orig + step
            plus, sig_plus = tracker.evaluate(loss_fn)
            p[idx] = orig - step
            minus, sig_minus = tracker.evaluate(loss_fn)
            p[idx] = orig
            if not (_same(base, sig_plus) and _same(base, sig_minus)):
                excluded += 1
                continue
            analytic = 0.0 if grads[k] is None else float(grads[k].reshape(-1)[idx])
            numeric = (plus - minus) / (2 * step)
            worst = max(worst, abs(numeric - analytic) / max(abs(analytic), 1e-8))
            checked += 1
    return worst, excluded, checked


def finite_diff_check(cfg: RunConfig | None = None, n_params: int = 50, step: float = 1e-3,
                      seed: int = 0, batch_size: int = 4) -> FiniteDiffReport:
    """Central differences vs autograd for the generator total and discriminator total losses.

    Runs in float64 on ``n_params`` randomly drawn parameters per side. A coordinate
    whose ±step stencil flips the sign of any ReLU input or L1 residual straddles a
    kink, where central differences do not estimate the (sub)gradient autograd
    reports (torch takes sign(0) = 0 for |x| and 0 for ReLU at 0); such coordinates
    are skipped and replaced by fresh draws, and counted in ``excluded``. If the
    network runs out of smooth coordinates, ``checked`` falls short of ``n_params``.
    """
    cfg = validate_config(cfg or micro_config())
    gen = build_generator(cfg.model, cfg.seed).double()
    dis_e, dis_d = (d.double() for d in build_discriminators(cfg.model, cfg.seed))
    for m in (gen, dis_e, dis_d):
        m.train()
    x, y = micro_batch(cfg, batch_size, seed)
    rng = seeded_rng(seed, 12)
    L, out_ch = cfg.model.scales, cfg.model.output_channels
    gt_pyr = build_pyramid(y, L)
    latest = {}
    hook = gen.register_forward_hook(lambda m, i, out: latest.__setitem__("g", out))

    def l1_pairs():
        g = latest["g"]
        levels = l1_scale_set(cfg.kl1, L)
        return [(g.output, y)] + [(g.decoder_taps[s - 1], gt_pyr[s - 1]) for s in levels]

    def gen_loss():
        return _gen_objective(gen, dis_e, dis_d, x, y, cfg)

    tracker = KinkTracker([gen, dis_e, dis_d], l1_pairs)
    try:
        gen_err, gen_skip, gen_n = _max_rel_error(gen_loss, list(gen.parameters()), n_params, step, rng, tracker)
    finally:
        tracker.close()
        hook.remove()

    with torch.no_grad():
        g = gen(x)
    ids = match_channels(build_pyramid(x, L), out_ch)

    def disc_loss():
        le = loss_dis_e(dis_e(ids), dis_e(g.encoder_taps))
        ld = loss_dis_d(dis_d(y, gt_pyr), dis_d(g.output, g.decoder_taps))
        return loss_dis_total(le, ld)

    tracker = KinkTracker([dis_e, dis_d])
    try:
        disc_params = list(dis_e.parameters()) + list(dis_d.parameters())
        disc_err, disc_skip, disc_n = _max_rel_error(disc_loss, disc_params, n_params, step, rng, tracker)
    finally:
        tracker.close()
    return FiniteDiffReport(gen_err, disc_err, n_params, step, gen_skip + disc_skip, min(gen_n, disc_n))
