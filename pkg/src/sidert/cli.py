"""``sidert`` command line: gen-data, train, eval, gradcheck, ablate, visualize-attention.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
Errors are reported as one ``error[<kind>]: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checks, config, imageio
from .data import SCENE_MAX_DEPTH, read_dataset, write_dataset
from .decoder import CsaParams, DegenerateFeatureError, receptive_field_map
from .imageio import FormatError
from .loss import EmptyMaskError
from .metrics import PROTOCOLS, EmptyEvalError, MetricReport, aggregate, eval_protocol
from .model import SideRT
from .nn import ConfigError, to_map, to_tokens
from .tensor import DomainError, Tensor, backward, linear
from .train import CheckpointError, NonFiniteGradientError, batch_loss, load_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _size(s: str) -> tuple:
    try:
        h, w = s.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {s!r}") from None


def _pair(s: str) -> tuple:
    try:
        r, c = s.split(",")
        return int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected R,C, got {s!r}") from None


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="log progress to stderr")
    defaults = config.RunConfig()
    g = p.add_argument_group("config keys (override the --config file)")
    for key, k in config.KEYS.items():
        g.add_argument(
            config.flag(key),
            dest=f"cfg_{key}",
            metavar="V",
            default=argparse.SUPPRESS,
            help=f"{k.help} (default: {k.fmt(defaults.get(key))})",
        )


def _run_config(args) -> config.RunConfig:
    overrides = {
        key: config.parse_value(key, getattr(args, f"cfg_{key}"))
        for key in config.KEYS
        if getattr(args, f"cfg_{key}", None) is not None
    }
    path = getattr(args, "config", None)
    if path is not None and not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    return config.load(path, overrides)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="sidert", description="Toy-scale monocular depth estimation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="write a synthetic dataset", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=16, help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--size", type=_size, default="64x128", metavar="HxW", help="image size, multiples of 32")
    p.add_argument("--max-depth", type=float, default=SCENE_MAX_DEPTH, help="scene depth scale, metres")
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")

    p = sub.add_parser("train", help="train a model", formatter_class=fmt)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory for config, checkpoints and loss.txt")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--dataset-kind", choices=sorted(PROTOCOLS), default="synthetic", help="depth cap and crop policy")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks", formatter_class=fmt)
    p.add_argument("--scope", choices=checks.SCOPES, default="op", help="which suite to run")
    p.add_argument("--points", type=int, default=10, help="random probes per check")
    p.add_argument("--seed", type=int, default=0, help="probe seed")

    p = sub.add_parser("ablate", help="train and compare the component matrix", formatter_class=fmt)
    p.add_argument("--config", default=None, help="base key = value config file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for ablation.txt")
    _add_config_flags(p)

    p = sub.add_parser("visualize-attention", help="similarity heatmaps before and after cross-scale attention", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--image", required=True, help="PPM image")
    p.add_argument("--ref", type=_pair, required=True, metavar="R,C", help="reference pixel, row,col")
    p.add_argument("--out", required=True, help="output prefix; writes <out>_before.pgm and <out>_after.pgm")
    return parser


# --- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> None:
    h, w = args.size
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    try:
        write_dataset(args.out, args.count, args.seed, h, w, args.max_depth, force=args.force)
    except FileExistsError as exc:
        raise DataError(f"{exc}; pass --force to overwrite") from None
    print(f"wrote {args.count} samples to {args.out}")


def _load_data(path) -> list:
    try:
        samples = read_dataset(path)
    except (OSError, FormatError) as exc:
        raise DataError(str(exc)) from None
    if not samples:
        raise DataError(f"{path}: dataset is empty")
    return samples


def cmd_train(args) -> None:
    cfg = _run_config(args)
    data = _load_data(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    state = None
    if args.resume:
        model, state = load_checkpoint(args.resume, expect=cfg.model)
        if state is None:
            raise DataError(f"{args.resume}: checkpoint has no training state")
    else:
        model = SideRT.init(cfg.model, seed=cfg.train.seed)

    def progress(step, loss):
        logging.getLogger("sidert").info("step %d loss %.6f", step, loss)

    state = train(
        model, data, cfg.train, cfg.augment_cfg if cfg.augment else None, cfg.loss, out, state, on_step=progress
    )
    last = state.loss_history[-1] if state.loss_history else float("nan")
    print(f"trained {state.step} steps, final batch loss {last:.6f}; checkpoint {out / 'final.srtc'}")


def evaluate(model: SideRT, samples, dataset_kind: str) -> MetricReport:
    reports = [eval_protocol(model.predict(s.image), s.depth[0], dataset_kind, s.mask[0]) for s in samples]
    return aggregate(reports)


def cmd_eval(args) -> None:
    model, _ = load_checkpoint(args.checkpoint)
    report = evaluate(model, _load_data(args.data), args.dataset_kind)
    print(report.to_table())
    print(report.to_lines())


def cmd_gradcheck(args) -> None:
    worst = 0.0
    failed = []
    for name, err in checks.run(args.scope, args.points, args.seed):
        ok = err <= checks.TOLERANCE
        print(f"{name:<40s} {err:.3e} {'ok' if ok else 'FAIL'}", flush=True)
        worst = max(worst, err)
        if not ok:
            failed.append(name)
    print(f"max relative error {worst:.3e} (tolerance {checks.TOLERANCE:g})")
    if failed:
        raise NumericError(f"{len(failed)} check(s) exceed tolerance: {', '.join(failed)}")


MSS_OFF = (0.0, 0.0, 0.0, 0.0, 1.0)
ABLATION_ROWS = (
    # label, use_csa, use_msr, multi-stage supervision
    ("Encoder", False, False, False),
    ("+CSA", True, False, False),
    ("+CSA+MSS", True, False, True),
    ("+MSR+MSS", False, True, True),
    ("+CSA+MSR+MSS", True, True, True),
)


def used_parameters(model: SideRT, sample, loss_cfg) -> int:
    """Number of scalar parameters that receive a nonzero gradient."""
    model.zero_grad()
    backward(batch_loss(model, [sample], loss_cfg))
    n = sum(p.data.size for p in model.params.values() if p.grad is not None and np.any(p.grad != 0))
    model.zero_grad()
    return int(n)


def _split(samples: list) -> tuple:
    if len(samples) < 4:
        return samples, samples
    k = max(1, len(samples) // 4)
    return samples[:-k], samples[-k:]


def ablation_table(base: config.RunConfig, samples: list, steps: Optional[int] = None, log=None) -> str:
    train_set, test_set = _split(samples)
    lines = [
        f"{'Components':<14s} {'Params':>7s} {'AbsRel':>8s} {'SqRel':>8s} {'RMSE':>8s} {'RMSElog':>8s}"
        f" {'d1':>6s} {'d2':>6s} {'d3':>6s}"
    ]
    for label, csa, msr, mss in ABLATION_ROWS:
        values = {"use_csa": csa, "use_msr": msr}
        if not mss:
            values["stage_weights"] = MSS_OFF
        if steps is not None:
            values["steps"] = steps
        cfg = base.with_values(values)
        model = SideRT.init(cfg.model, seed=cfg.train.seed)
        used = used_parameters(model, train_set[0], cfg.loss)
        train(model, train_set, cfg.train, cfg.augment_cfg if cfg.augment else None, cfg.loss)
        r = evaluate(model, test_set, "synthetic")
        row = (
            f"{label:<14s} {used:>7d} {r.abs_rel:>8.4f} {r.sq_rel:>8.4f} {r.rmse:>8.4f} {r.rmse_log:>8.4f}"
            f" {r.delta1:>6.2f} {r.delta2:>6.2f} {r.delta3:>6.2f}"
        )
        if log is not None:
            log(row)
        lines.append(row)
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> None:
    base = _run_config(args)
    samples = _load_data(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = ablation_table(base, samples, log=logging.getLogger("sidert").info)
    (out / "ablation.txt").write_text(table)
    print(table, end="")


def attention_maps(model: SideRT, image: np.ndarray, ref: tuple) -> tuple:
    """Heatmaps at image resolution for the stage-1 features before and after fusion.

    "Before" is the fine projection alone; "after" is the cross-scale attention
    output. ``ref`` is a pixel; its H/4 cell is the reference position.
    """
    _, h, w = image.shape
    r, c = ref
    if not (0 <= r < h and 0 <= c < w):
        raise UsageError(f"--ref {r},{c} outside the {h}x{w} image")
    pred = model.forward(image)
    fine = model.encode(image).f1
    p = CsaParams.from_dict(model.params, "dec.csa1")
    _, fh, fw = fine.shape
    before = to_map(linear(to_tokens(fine), p.fine_w, p.fine_b), fh, fw)
    after = pred.aux["fused"][1]
    sy, sx = h // fh, w // fw
    maps = receptive_field_map(before, after, (r // sy, c // sx))
    return tuple(np.repeat(np.repeat(m, sy, axis=0), sx, axis=1) for m in maps)


def cmd_visualize(args) -> None:
    model, _ = load_checkpoint(args.checkpoint)
    try:
        image = imageio.read_ppm(args.image)
    except (OSError, FormatError) as exc:
        raise DataError(str(exc)) from None
    before, after = attention_maps(model, image, args.ref)
    for tag, m in (("before", before), ("after", after)):
        path = f"{args.out}_{tag}.pgm"
        imageio.write_pgm(path, m)
        print(f"wrote {path}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "visualize-attention": cmd_visualize,
}


def _fail(kind: str, message, code: int) -> int:
    print(f"error[{kind}]: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail("usage", exc, EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except (DataError, CheckpointError, FormatError, EmptyMaskError, EmptyEvalError, OSError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except (NumericError, NonFiniteGradientError, DomainError, DegenerateFeatureError, FloatingPointError) as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    except ValueError as exc:
        # shape and divisibility violations in user-supplied data
        return _fail("data", exc, EXIT_DATA)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
