"""Command-line entry point.

    mmfusion gen-data --classes 20 --n 10000 --p-text 0.7 --p-image 0.55 --seed 7
    mmfusion train text|image|policy|fusion-e2e|fusion-multistep
    mmfusion eval
    mmfusion report [CSV]
    mmfusion export-activations --tower text --split test

Exit codes: 0 ok, 2 usage or invalid configuration, 3 missing prerequisite,
4 non-finite loss, 5 checkpoint fingerprint mismatch.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import config as configmod
from . import datagen, pipeline
from . import evalkit as ek
from .checkpoint import FingerprintMismatch
from .optim import DivergenceError
from .tensor import ConfigError

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_NAN, EXIT_FINGERPRINT = 0, 2, 3, 4, 5

TRAIN_PHASES = {
    "text": pipeline.train_text_phase,
    "image": pipeline.train_image_phase,
    "policy": pipeline.train_policy_phase,
    "fusion-e2e": pipeline.train_fusion_e2e_phase,
    "fusion-multistep": pipeline.train_fusion_multistep_phase,
}


def _int_list(s: str) -> tuple:
    return tuple(int(x) for x in s.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="run directory for checkpoints and reports")
    common.add_argument("--data", default=argparse.SUPPRESS, help="dataset directory")
    common.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="mmfusion", parents=[common], description="Decision-level fusion of text and image classifiers.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic product dataset")
    defaults = datagen.GenSpec()
    g.add_argument("--classes", type=int, default=defaults.classes)
    g.add_argument("--n", type=int, default=defaults.n)
    g.add_argument("--p-text", type=float, default=defaults.p_text)
    g.add_argument("--p-image", type=float, default=defaults.p_image)
    g.add_argument("--labels-per-product", type=_int_list, default=defaults.labels_per_product,
                   help="comma-separated shelf counts drawn uniformly, e.g. 1,2,3")
    g.add_argument("--group-size", type=int, default=defaults.group_size)
    g.add_argument("--vocab-noise-size", type=int, default=defaults.vocab_noise_size)
    g.add_argument("--image-size", type=int, default=defaults.image_size)
    g.add_argument("--patch-size", type=int, default=defaults.patch_size)
    g.add_argument("--image-decoy", type=float, default=defaults.image_decoy)
    g.add_argument("--class-skew", type=float, default=defaults.class_skew)

    t = sub.add_parser("train", parents=[common], help="train one stage")
    t.add_argument("which", choices=sorted(TRAIN_PHASES))

    sub.add_parser("eval", parents=[common], help="evaluate on the test split and write report.csv")

    r = sub.add_parser("report", parents=[common], help="print a report CSV as a table")
    r.add_argument("csv", nargs="?", help="defaults to <out>/report.csv")

    e = sub.add_parser("export-activations", parents=[common], help="dump tower hidden vectors")
    e.add_argument("--tower", choices=("text", "image"), required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    return p


def _run_config(args) -> configmod.RunConfig:
    overrides = {"seed": getattr(args, "seed", None), "out": getattr(args, "out", None),
                 "data.dir": getattr(args, "data", None)}
    return configmod.load(getattr(args, "config", None), overrides)


def cmd_gen_data(args, cfg: configmod.RunConfig) -> int:
    spec = datagen.GenSpec(
        classes=args.classes, n=args.n, p_text=args.p_text, p_image=args.p_image,
        labels_per_product=args.labels_per_product, group_size=args.group_size,
        vocab_noise_size=args.vocab_noise_size, image_size=args.image_size,
        patch_size=args.patch_size, image_decoy=args.image_decoy, class_skew=args.class_skew,
        seed=cfg.seed,
    )
    ds = datagen.gen_synthetic(spec)
    out = datagen.save_dataset(ds, cfg.data_path, spec)
    rates = datagen.informative_rates(ds)
    print(f"wrote {out}")
    print(f"N={len(ds)} C={ds.num_classes}")
    print(f"informative text={rates['text']:.4f} (p_text={spec.p_text}) "
          f"image={rates['image']:.4f} (p_image={spec.p_image})")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    result = TRAIN_PHASES[args.which](cfg)
    for path in result if isinstance(result, list) else [result]:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    ev = pipeline.evaluate(cfg)
    print(ek.render_table(ev.rows))
    print()
    print("\n".join(ev.quadrants.lines()))
    print(f"wrote {cfg.out_path / 'report.csv'}")
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    path = args.csv or cfg.out_path / "report.csv"
    try:
        rows = ek.read_report(path)
    except FileNotFoundError as exc:
        raise pipeline.MissingArtifact(f"missing report: {path}") from exc
    print(ek.render_table(rows))
    return EXIT_OK


def cmd_export(args, cfg) -> int:
    path = pipeline.export_activations_phase(cfg, args.tower, args.split)
    print(f"wrote {path} and {path.name}.ids")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
    "export-activations": cmd_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _run_config(args)
    except FileNotFoundError as exc:
        print(f"error: config file not found: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args, cfg)
    except pipeline.MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN
    except FingerprintMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
