"""``ebsr`` command line: train, sr, eval, cost, stats, selftest."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as runconfig
from .cost import PUBLISHED_TARGETS, compare_to_published, count_model
from .evaluation import EmptyDatasetError, MetricConfig, activation_stats, evaluate_dataset
from .imageio import ImageFormatError, list_images, read_image, write_image
from .network import CheckpointError, ConfigError, Model, load_checkpoint, save_checkpoint
from .selftest import run_selftest
from .synthetic import synthetic_set
from .training import PairedDataset, TrainingDivergedError, train_loop

EXIT_OK = 0
EXIT_CONFIG_MISSING = 2
EXIT_CONFIG_INVALID = 3
EXIT_CHECKPOINT = 4
EXIT_INPUT = 5
EXIT_DIVERGED = 6
EXIT_SELFTEST = 7
EXIT_OUTPUT = 8
EXIT_USAGE = 64


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(path) -> runconfig.RunConfig:
    try:
        return runconfig.load(path)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}", EXIT_CONFIG_MISSING)
    except (ConfigError, ValueError, TypeError) as exc:
        raise CliError(f"invalid config {path}: {exc}", EXIT_CONFIG_INVALID)


def _load_model(path) -> Model:
    if not Path(path).is_file():
        raise CliError(f"checkpoint not found: {path}", EXIT_CHECKPOINT)
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise CliError(f"cannot load checkpoint {path}: {exc}", EXIT_CHECKPOINT)


def _read(path) -> np.ndarray:
    try:
        return read_image(path)
    except (OSError, ImageFormatError, ValueError) as exc:
        raise CliError(f"cannot read image {path}: {exc}", EXIT_INPUT)


def _geometry(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    if h <= 0 or w <= 0:
        raise argparse.ArgumentTypeError("geometry must be positive")
    return h, w


def _training_images(rc: runconfig.RunConfig) -> list[np.ndarray]:
    p = rc.paths
    if p.train_dir:
        root = Path(p.train_dir)
        hr_dir = root / "HR" if (root / "HR").is_dir() else root
        if not hr_dir.is_dir():
            raise CliError(f"training directory not found: {hr_dir}", EXIT_INPUT)
        files = list_images(hr_dir)
        if not files:
            raise CliError(f"no PNG/PPM images in training directory {hr_dir}", EXIT_INPUT)
        return [_read(f) for f in files]
    if p.synthetic_images > 0:
        return synthetic_set(p.synthetic_images, p.synthetic_size, p.synthetic_size, p.synthetic_seed)
    raise CliError("config sets neither paths.train_dir nor paths.synthetic_images", EXIT_CONFIG_INVALID)


def cmd_train(args) -> int:
    rc = _load_config(args.config)
    if args.resume and not Path(args.resume).is_file():
        raise CliError(f"resume checkpoint not found: {args.resume}", EXIT_CHECKPOINT)
    dataset = PairedDataset.from_hr(_training_images(rc), rc.model.scale)
    out = Path(args.out_dir or rc.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tc = rc.train
    tc.checkpoint_dir = str(out / "checkpoints")
    model = Model(rc.model, seed=rc.seed)
    try:
        result = train_loop(model, dataset, tc, resume=args.resume, trace_path=out / "loss.csv")
    except TrainingDivergedError as exc:
        dump = out / "diverged.txt"
        dump.write_text(str(exc) + "\n")
        raise CliError(f"{str(exc).splitlines()[0]}; layer statistics in {dump}", EXIT_DIVERGED)
    except CheckpointError as exc:
        raise CliError(f"cannot resume from {args.resume}: {exc}", EXIT_CHECKPOINT)
    except ValueError as exc:
        raise CliError(f"training data rejected: {exc}", EXIT_INPUT)
    final = out / "final.ebsr"
    save_checkpoint(result.model, final)
    if result.trace:
        first, last = result.trace[0], result.trace[-1]
        print(f"steps {first[0]}..{last[0]}: loss {first[2]:.5f} -> {last[2]:.5f} "
              f"(ratio {last[2] / first[2]:.4f})")
    else:
        print("no training steps run")
    print(f"wrote {out / 'loss.csv'} and {final}")
    return EXIT_OK


def cmd_sr(args) -> int:
    model = _load_model(args.model)
    img = _read(args.inp)
    sr = model.forward(img[None], kernel=args.kernel)[0]
    try:
        write_image(args.out, sr)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot write {args.out}: {exc}", EXIT_OUTPUT)
    print(f"{args.inp} {img.shape[2]}x{img.shape[1]} -> {args.out} {sr.shape[2]}x{sr.shape[1]}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(args.model)
    cfg = MetricConfig.for_scale(model.scale) if args.shave is None else MetricConfig(shave=args.shave)
    try:
        report = evaluate_dataset(model, args.dataset, cfg)
    except (FileNotFoundError, EmptyDatasetError) as exc:
        raise CliError(str(exc), EXIT_INPUT)
    print(report.format())
    if args.csv:
        report.write_csv(args.csv)
    return EXIT_OK


def _default_target(rc: runconfig.RunConfig) -> str | None:
    m = rc.model
    if m.variant == "fp":
        return "srresnet_fp"
    if m.variant == "ebsr_sq":
        return f"ebsr_sq_w{m.sq_bits[0]}a{m.sq_bits[1]}"
    if m.variant == "ebsr":
        return "ebsr" if m.channels == 256 else "ebsr_light"
    return m.variant if m.variant in PUBLISHED_TARGETS else None


def cmd_cost(args) -> int:
    rc = _load_config(args.config) if args.config else runconfig.RunConfig()
    report = count_model(Model(rc.model, seed=rc.seed), args.input)
    print(report.format())
    if args.csv:
        report.write_csv(args.csv)
    target = args.target or _default_target(rc)
    if target and target != "none":
        print()
        print(compare_to_published(report, target).format())
    return EXIT_OK


def cmd_stats(args) -> int:
    model = _load_model(args.model)
    d = Path(args.images)
    if not d.is_dir():
        raise CliError(f"image directory not found: {d}", EXIT_INPUT)
    files = list_images(d)
    if not files:
        raise CliError(f"no PNG/PPM images in {d}", EXIT_INPUT)
    try:
        rep = activation_stats(model, [_read(f) for f in files], args.layer, args.pixels, args.channels,
                               standardize=args.standardize)
    except KeyError as exc:
        raise CliError(str(exc.args[0]), EXIT_INPUT)
    paths = rep.write_csv(args.out, prefix=f"stats_{args.layer}")
    print(f"layer {args.layer}: pixel std spread {rep.pixel_std_spread:.4f}, "
          f"channel mean spread {rep.channel_mean_spread:.4f}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = run_selftest(args.seed)
    for name, ok in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if all(ok for _, ok in results) else EXIT_SELFTEST


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ebsr", description="Binary super-resolution networks with XNOR inference.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="training checkpoint to continue from")
    t.add_argument("--out-dir", help="override paths.out_dir")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sr", help="super-resolve one image")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--kernel", choices=("xnor", "float"), default="xnor")
    s.set_defaults(func=cmd_sr)

    e = sub.add_parser("eval", help="PSNR/SSIM table against bicubic")
    e.add_argument("--model", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--shave", type=int)
    e.add_argument("--csv")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cost", help="operation/parameter ledger and deviation table")
    c.add_argument("--config")
    c.add_argument("--input", type=_geometry, default=(128, 128), help="LR geometry HxW (default 128x128)")
    c.add_argument("--target", choices=sorted(PUBLISHED_TARGETS) + ["none"])
    c.add_argument("--csv")
    c.set_defaults(func=cmd_cost)

    st = sub.add_parser("stats", help="activation distribution CSVs for one layer")
    st.add_argument("--model", required=True)
    st.add_argument("--images", required=True)
    st.add_argument("--layer", required=True)
    st.add_argument("--out", default="stats")
    st.add_argument("--pixels", type=int, default=24)
    st.add_argument("--channels", type=int, default=24)
    st.add_argument("--standardize", action="store_true")
    st.set_defaults(func=cmd_stats)

    sf = sub.add_parser("selftest", help="run the embedded oracle suite")
    sf.add_argument("--seed", type=int, default=0)
    sf.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"ebsr {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
