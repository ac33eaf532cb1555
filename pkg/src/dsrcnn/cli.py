"""Command-line entry point: ``dsrcnn {train,infer,eval,selftest}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import reports, selftest
from .config import RunConfig, resolve
from .data import list_images, load_dataset, read_image, read_mask, read_saliency, write_saliency
from .metrics import evaluate_dataset
from .model import MIN_SIDE, WeightFileError, build_model, forward, load_weights, save_weights
from .training import TrainingAborted, train

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2
EXIT_ABORTED = 3

ABORT_FLAG = "ABORTED.txt"


class InputError(Exception):
    """Bad user input; reported on stderr with exit code 2."""


def _channels(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected five comma-separated integers, got {text!r}") from None
    if len(values) != 5 or min(values) < 1:
        raise argparse.ArgumentTypeError(f"expected five positive integers, got {text!r}")
    return values


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration; flags override its values")
    p.add_argument("--seed", type=int, help="seed for initialization, shuffling and dropout")
    p.add_argument("--out", help="output directory (default: ./out; selftest writes nothing without it)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsrcnn", description="Deeply supervised recurrent CNN saliency detector")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a directory with images/ and masks/")
    p.add_argument("dataset", help="dataset root containing images/ and masks/")
    _shared(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--momentum", type=float)
    p.add_argument("--rcl-t", type=int, dest="rcl_t", help="RCL unfolding depth T")
    p.add_argument("--channels", type=_channels, help="per-block channels, e.g. 8,16,32,64,64")

    p = sub.add_parser("infer", help="write saliency maps for an image or a directory of images")
    p.add_argument("weights", help="weight file written by train")
    p.add_argument("images", help="image file or directory")
    _shared(p)
    p.add_argument("--side-maps", action="store_true", help="also write the five side-output maps under OUT/sides/")

    p = sub.add_parser("eval", help="score saliency maps against ground-truth masks")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir", help="mask directory, or a dataset root containing masks/")
    _shared(p)
    p.add_argument("--beta-sq", type=float, dest="beta_sq", help="F-measure beta squared (default 0.3)")
    p.add_argument("--thresholds", type=int, help="number of PR thresholds (default 256)")

    p = sub.add_parser("selftest", help="reduced-size gradient checks and oracle comparisons")
    _shared(p)
    p.add_argument("--inject-fault", choices=selftest.FAULTS, help="test hook: corrupt a kernel so checks fail")
    return parser


def _out_dir(args) -> Path:
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve(args) -> RunConfig:
    try:
        return resolve(
            args.config,
            seed=args.seed,
            iterations=getattr(args, "iterations", None),
            lr=getattr(args, "lr", None),
            momentum=getattr(args, "momentum", None),
            rcl_t=getattr(args, "rcl_t", None),
            channels=getattr(args, "channels", None),
            beta_sq=getattr(args, "beta_sq", None),
            thresholds=getattr(args, "thresholds", None),
        )
    except (OSError, ValueError, TypeError) as exc:
        raise InputError(f"bad configuration: {exc}") from None


def _report_skipped(skipped) -> None:
    for name, why in skipped:
        print(f"skipped {name}: {why}", file=sys.stderr)


def cmd_train(args) -> int:
    cfg = _resolve(args)
    try:
        ds = load_dataset(args.dataset, channels=cfg.model.in_channels, min_side=MIN_SIDE)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None
    _report_skipped(ds.skipped)
    if not len(ds):
        raise InputError(f"no usable image/mask pairs under {args.dataset}")
    out = _out_dir(args)
    cfg.save(out / "config.json")
    model = build_model(cfg.model)
    n = len(ds)
    epoch_totals: list[float] = []

    def on_step(it: int, breakdown) -> None:
        epoch_totals.append(breakdown.total)
        if len(epoch_totals) == n or it == cfg.sgd.iterations - 1:
            print(f"epoch {it // n + 1}: mean total loss {sum(epoch_totals) / len(epoch_totals):.6f}")
            epoch_totals.clear()

    try:
        model, history = train(model, ds.pairs(), cfg.sgd, callback=on_step)
    except TrainingAborted as exc:
        save_weights(model, out / "weights.bin")
        reports.write_loss_csv(out / "loss.csv", exc.history)
        (out / ABORT_FLAG).write_text(f"training aborted: {exc}\nweights.bin and loss.csv are partial\n")
        print(f"training aborted: {exc}; partial artifacts flagged in {out / ABORT_FLAG}", file=sys.stderr)
        return EXIT_ABORTED
    save_weights(model, out / "weights.bin")
    reports.write_loss_csv(out / "loss.csv", history)
    print(f"wrote {out / 'weights.bin'} and {out / 'loss.csv'}")
    return EXIT_OK


def _infer_inputs(target: Path) -> list[Path]:
    if target.is_dir():
        return list(list_images(target).values())
    if target.is_file():
        return [target]
    raise InputError(f"{target} does not exist")


def cmd_infer(args) -> int:
    cfg = _resolve(args)
    try:
        model = load_weights(args.weights)
    except (OSError, WeightFileError) as exc:
        raise InputError(f"cannot load weights: {exc}") from None
    cfg.model = model.config
    inputs = _infer_inputs(Path(args.images))
    out = _out_dir(args)
    cfg.save(out / "config.json")
    skipped = []
    written = 0
    for path in inputs:
        try:
            image = read_image(path, model.config.in_channels)
        except (OSError, ValueError) as exc:
            skipped.append((path.name, f"unreadable: {exc}"))
            continue
        if min(image.shape[2:]) < MIN_SIDE:
            skipped.append((path.name, f"{image.shape[2]}x{image.shape[3]} is smaller than {MIN_SIDE}x{MIN_SIDE}"))
            continue
        result = forward(model, image)
        write_saliency(out / f"{path.stem}.png", result.fused_map.data[0, 0])
        if args.side_maps:
            # kept apart so ``eval`` on ``out`` sees fused maps only
            (out / "sides").mkdir(exist_ok=True)
            for m, side in enumerate(result.side_maps, start=1):
                write_saliency(out / "sides" / f"{path.stem}_side{m}.png", side.data[0, 0])
        written += 1
    _report_skipped(skipped)
    print(f"wrote {written} saliency map(s) to {out}, skipped {len(skipped)}")
    return EXIT_OK if written or not inputs else EXIT_FAILED


def _mask_dir(gt: Path) -> Path:
    return gt / "masks" if (gt / "masks").is_dir() else gt


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    try:
        preds = list_images(args.pred_dir)
        masks = list_images(_mask_dir(Path(args.gt_dir)))
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None
    skipped = []
    pairs = []
    for name in sorted(set(preds) | set(masks)):
        if name not in masks:
            skipped.append((name, "no matching ground truth"))
        elif name not in preds:
            skipped.append((name, "no matching prediction"))
        else:
            try:
                pairs.append((name, read_saliency(preds[name]), read_mask(masks[name])))
            except (OSError, ValueError) as exc:
                skipped.append((name, f"unreadable: {exc}"))
    _report_skipped(skipped)
    if not pairs:
        raise InputError("no prediction/ground-truth pairs to evaluate")
    try:
        report = evaluate_dataset(pairs, beta_sq=cfg.metrics.beta_sq, n_thresholds=cfg.metrics.thresholds)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _report_skipped(report.rejected)
    out = _out_dir(args)
    cfg.save(out / "config.json")
    reports.write_metrics_csv(out / "metrics.csv", report)
    reports.write_metrics_json(out / "metrics.json", report)
    reports.write_pr_csv(out / "pr_curve.csv", report)
    reports.write_pr_svg(out / "pr_curve.svg", report)
    wf = "n/a" if report.weighted_f is None else f"{report.weighted_f:.4f}"
    print(f"{len(report.images)} image(s): mean F {report.mean_f:.4f}, adaptive F {report.adaptive_f:.4f}, "
          f"wF {wf}, MAE {report.mae:.4f}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    lines: list[str] = []

    def echo(line: str) -> None:
        lines.append(line)
        print(line, flush=True)

    ok = selftest.run(fault=args.inject_fault, seed=args.seed or 0, echo=echo)
    if args.out:
        out = _out_dir(args)
        (out / "selftest.txt").write_text("\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_FAILED


COMMANDS = {"train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "selftest": cmd_selftest}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"dsrcnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
