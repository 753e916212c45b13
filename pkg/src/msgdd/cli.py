"""Command-line entry point: ``msgdd {train,eval,ablate,synth,probe,plot}``."""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from pathlib import Path

import numpy as np
import torch

from .core import FLAT_KEYS, RunConfig, ConfigError, desk_config, from_flat, load_config, to_flat, validate_config
from .trainer import NonFiniteError, TrainResult, fmt

log = logging.getLogger("msgdd")

PRESETS = {"paper": RunConfig, "desk": desk_config}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a built-in config instead of a file")
    group = p.add_argument_group("config overrides (one flag per config key)")
    for key in FLAT_KEYS:
        group.add_argument(f"--{key}", dest=f"cfg_{key}", metavar="VALUE")
    group.add_argument("--no-tap-norm", dest="cfg_tap_norm", action="store_const", const="false",
                       help="drop instance norm from the 1x1 tap layers")


def resolve_config(args, parser) -> RunConfig:
    if args.config:
        if not Path(args.config).is_file():
            parser.error(f"config file not found: {args.config}")
        base = load_config(args.config)
    elif args.preset:
        base = PRESETS[args.preset]()
    else:
        parser.error("a --config file (or --preset) is required")
    overrides = {k: getattr(args, f"cfg_{k}") for k in FLAT_KEYS if getattr(args, f"cfg_{k}") is not None}
    return validate_config(from_flat({**to_flat(base), **overrides}))


def print_run_summary(config: RunConfig, result) -> str:
    """Human-readable run summary; ``result`` is a TrainResult or the NonFiniteError that ended the run."""
    lines = [
        f"variant={config.variant} kl1={config.kl1}",
        f"seed={config.seed}",
        f"epochs={config.optim.epochs}",
    ]
    if isinstance(result, NonFiniteError):
        lines += [
            "status=aborted",
            f"abort_epoch={result.epoch + 1 if result.epoch is not None else 'n/a'}",
            f"abort_step={result.step}",
            f"offending_term={result.term}",
        ]
    else:
        lines += [
            "status=completed",
            f"best_val_f1={fmt(result.best_val_f1)}",
            f"best_epoch={result.best_epoch}",
            f"final_val_f1={fmt(result.final_val_f1)}",
            f"best_checkpoint={result.best_path}",
            f"final_checkpoint={result.final_path}",
            f"metrics={result.metrics_path}",
        ]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    return text


# -- verbs ----------------------------------------------------------------------------

def cmd_train(args, parser):
    from .trainer import train

    config = resolve_config(args, parser)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result: TrainResult = train(config, resume=args.resume)
    except NonFiniteError as exc:
        (out / "summary.txt").write_text(print_run_summary(config, exc))
        return 3
    (out / "summary.txt").write_text(print_run_summary(config, result))
    return 0


def cmd_eval(args, parser):
    from .evaluation import evaluate

    report = evaluate(args.checkpoint, args.split, threshold=args.threshold)
    if args.output_dir:
        out = Path(args.output_dir)
    else:
        from .trainer import load_checkpoint
        out = Path(load_checkpoint(args.checkpoint).config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"eval_{args.split}.csv").write_text(report.per_image_csv())
    (out / f"eval_{args.split}.txt").write_text(report.summary())
    print(report.summary(), end="")
    return 0


def cmd_ablate(args, parser):
    from .evaluation import ablation_table, run_ablation

    config = resolve_config(args, parser)
    rows = run_ablation(config, args.variants)
    print(ablation_table(rows), end="")
    print(f"table written to {Path(config.output_dir) / 'ablation.csv'}")
    return 0


def cmd_synth(args, parser):
    from .data import save_dataset, synth_shapes

    samples = synth_shapes(args.n, args.resolution, args.seed)
    save_dataset(samples, args.out)
    print(f"wrote {len(samples)} pairs to {args.out}")
    return 0


def cmd_probe(args, parser):
    from .data import load_splits
    from .evaluation import grad_probe

    config = resolve_config(args, parser)
    source = args.checkpoint or config
    train_split = load_splits(config)["train"][: args.batch]
    x = torch.from_numpy(np.stack([s.input for s in train_split]))
    y = torch.from_numpy(np.stack([s.target for s in train_split]))
    full = grad_probe(source, x, y, adversarial_only=args.adversarial_only)
    ablated = grad_probe(source, x, y, adversarial_only=args.adversarial_only, ablate_taps=True)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["block,grad_norm,grad_norm_taps_ablated"]
    lines += [f"{k},{fmt(v)},{fmt(ablated.norms[k])}" for k, v in full.norms.items()]
    (out / "probe.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_plot(args, parser):
    from .plots import plot_losses

    out = Path(args.out) if args.out else Path(args.metrics).with_name("loss_curves.png")
    plot_losses(args.metrics, out, smooth=args.smooth)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msgdd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train one model")
    _add_config_flags(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-image F1 of a checkpoint on a split")
    p.add_argument("checkpoint")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--output_dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare variants (baselines, kL1 ablation)")
    _add_config_flags(p)
    p.add_argument("--variants", default="msgdd_4l1,pix2pix_like,unet_only",
                   help="comma list from msgdd_4l1, msgdd_2l1, msgdd_1l1 (or 4L1/2L1/1L1), pix2pix_like, unet_only")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="write a synthetic ellipse dataset in the images/masks layout")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=350)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("probe", help="per-block generator gradient norms, with and without tap injection")
    _add_config_flags(p)
    p.add_argument("--checkpoint", help="probe trained weights instead of a fresh init")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--adversarial-only", action="store_true", help="drop the L1 term from the probed loss")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("plot", help="generator loss curves from a metrics CSV")
    p.add_argument("metrics")
    p.add_argument("--out")
    p.add_argument("--smooth", type=int, default=1, help="moving-average window in epochs")
    p.set_defaults(func=cmd_plot)
    return parser


def _origin(exc: BaseException) -> str:
    """Package module where ``exc`` was raised, for module-qualified messages."""
    name = "msgdd"
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("msgdd"):
            name = mod
        tb = tb.tb_next
    return name


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args, parser)
    except ConfigError as exc:
        print(f"error [msgdd.core]: invalid config: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surfaced as a nonzero exit
        print(f"error [{_origin(exc)}]: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
