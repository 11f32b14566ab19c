"""``multihop`` command line: synth, train, translate, eval.

Exit codes: 0 success, 1 runtime failure (e.g. diverged training, corrupt
checkpoint), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import (
    ConfigurationError,
    ContractViolation,
    MultihopError,
)

log = logging.getLogger("multihop")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
DIRECTION_ALIASES = {"X->Y": "X->Y", "x2y": "X->Y", "XY": "X->Y", "Y->X": "Y->X", "y2x": "Y->X", "YX": "Y->X"}
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}


class UsageError(ConfigurationError):
    pass


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _echo_config(kind, doc):
    log.info("effective %s config: %s", kind, json.dumps(doc, sort_keys=True))


# ------------------------------------------------------------------ synth


def cmd_synth(args):
    from .domains import SyntheticFamily, save_dataset, synth_generate

    family = SyntheticFamily(family_id=args.family, image_size=args.size)
    _echo_config("synth", {"family": family.to_dict(), "count": args.count, "seed": args.seed})
    out = Path(args.out)
    for label in ("X", "Y"):
        ds = synth_generate(family, label, args.count, args.seed)
        save_dataset(ds, out / label)
    family.save(out / "family.yaml")
    log.info("wrote %d images per domain to %s", args.count, out)
    return EXIT_OK


# ------------------------------------------------------------------ train


def cmd_train(args, overrides):
    from .config import dump_run_config, load_run_config
    from .domains import load_unpaired_dataset
    from .training import train

    cfg = load_run_config(args.config, overrides)
    _echo_config("train", cfg.to_dict())
    if not cfg.data.x_dir or not cfg.data.y_dir:
        raise ConfigurationError("data.x_dir and data.y_dir must both be set")
    size = cfg.generator.input_size
    dx = load_unpaired_dataset(cfg.data.x_dir, "X", size)
    dy = load_unpaired_dataset(cfg.data.y_dir, "Y", size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_run_config(cfg, out / "config.yaml")
    path = train(
        cfg.training, dx, dy, out, cfg.generator, cfg.discriminator, resume_from=args.resume
    )
    log.info("final checkpoint: %s", path)
    return EXIT_OK


# ------------------------------------------------------------------ translate


def _input_paths(spec):
    p = Path(spec)
    if p.is_file():
        return [p]
    if p.is_dir():
        paths = sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES)
        if not paths:
            raise ConfigurationError(f"no images found in {p}")
        return paths
    raise ConfigurationError(f"input not found: {p}")


def _require_file(path, what):
    if not Path(path).is_file():
        raise ConfigurationError(f"{what} not found: {path}")


def cmd_translate(args):
    import numpy as np

    from .checkpoint import load_bundle
    from .domains import load_image
    from .inference import TranslationRequest, translate_with_bundle, write_sequences

    _require_file(args.checkpoint, "checkpoint")
    direction = DIRECTION_ALIASES.get(args.direction)
    if direction is None:
        raise UsageError(f"unknown direction {args.direction!r}")
    bundle = load_bundle(args.checkpoint)
    request = TranslationRequest(direction, args.hops, emit_intermediates=not args.final_only)
    _echo_config(
        "translate",
        {"checkpoint": str(args.checkpoint), "direction": direction, "hops": request.hops,
         "trained_hop_count": bundle.trained_hop_count},
    )
    paths = _input_paths(args.input)
    loaded = [load_image(p) for p in paths]
    if len({im.shape for im in loaded}) != 1:
        raise ContractViolation("input images differ in size")
    seqs = translate_with_bundle(bundle, np.stack(loaded), request)
    manifest = write_sequences(seqs, [p.stem for p in paths], args.out, direction, paths)
    log.info("wrote %d sequences; manifest %s", len(seqs), manifest)
    return EXIT_OK


# ------------------------------------------------------------------ eval


def cmd_eval(args):
    from .checkpoint import load_bundle
    from .domains import SyntheticFamily, load_unpaired_dataset
    from .evaluation import evaluate

    _require_file(args.checkpoint, "checkpoint")
    family = SyntheticFamily.load(args.family)
    bundle = load_bundle(args.checkpoint)
    datasets = []
    if args.x_dir:
        datasets.append(load_unpaired_dataset(args.x_dir, "X", family.image_size))
    if args.y_dir:
        datasets.append(load_unpaired_dataset(args.y_dir, "Y", family.image_size))
    if not datasets:
        raise UsageError("give at least one of --x-dir / --y-dir")
    _echo_config(
        "eval",
        {"checkpoint": str(args.checkpoint), "family": family.to_dict(), "hops": args.hops},
    )
    report = evaluate(
        bundle, datasets, family, n_hops=args.hops,
        provenance={"checkpoint": str(args.checkpoint), "family_descriptor": str(args.family)},
    )
    path = report.save(args.out)
    for d, c in report.curves.items():
        monotone = "monotone" if c.is_monotone() else "NOT monotone"
        log.info("%s curve %s (%s within 0.05)", d, [round(s, 3) for s in c.scores], monotone)
    log.info("report: %s", path)
    return EXIT_OK


# ------------------------------------------------------------------ entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="multihop", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    sub_kw = {"allow_abbrev": False}

    p = sub.add_parser("synth", help="write a synthetic two-domain dataset as PNGs", **sub_kw)
    p.add_argument("--family", choices=("hue-shift", "disc-square"), default="hue-shift")
    p.add_argument("--count", type=_positive_int, required=True, help="images per domain")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model; extra --dotted.key=value flags override the config", **sub_kw)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("translate", help="write hop sequences for images", **sub_kw)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--direction", default="X->Y", help="X->Y (x2y) or Y->X (y2x)")
    p.add_argument("--hops", type=_non_negative_int, default=None)
    p.add_argument("--final-only", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="hop curves and preservation on synthetic data", **sub_kw)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--family", required=True, help="family descriptor YAML")
    p.add_argument("--x-dir")
    p.add_argument("--y-dir")
    p.add_argument("--hops", type=_non_negative_int, default=None)
    p.add_argument("--out", required=True)
    return parser


def _setup_logging(verbosity):
    """Send ``multihop`` log records to stderr without touching the root logger."""
    level = max(logging.WARNING - 10 * (verbosity + 1), logging.DEBUG)
    for handler in [h for h in log.handlers if getattr(h, "multihop_cli", False)]:
        log.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler.multihop_cli = True
    log.addHandler(handler)
    log.setLevel(level)


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and args.command != "train":
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    _setup_logging(args.verbose)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "train":
            return cmd_train(args, extra)
        if args.command == "translate":
            return cmd_translate(args)
        return cmd_eval(args)
    except (ConfigurationError, ContractViolation) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except MultihopError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
