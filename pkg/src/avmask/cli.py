"""Command-line entry point: ``avmask prepare | oracle | train | enhance | evaluate``.

Exit status is 0 on full success, 2 when some per-entry work failed and 1
on configuration or input errors.
"""

import argparse
import json
import logging
import os
import sys

from avmask import commands
from avmask.config import ConfigError, load_config
from avmask.fixtures import write_fixture_corpus
from avmask.nn.graph import KINDS

log = logging.getLogger("avmask")


def _common(p):
    p.add_argument("--config", help="JSON pipeline config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel per-entry workers")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="avmask", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="split speakers, render mixtures, cache statistics")
    _common(p)

    p = sub.add_parser("oracle", help="score oracle TBM/IAM masks against the mixture")
    _common(p)
    p.add_argument("--manifest", help="manifest to score (default: prepared test set)")
    p.add_argument("--out-dir")

    p = sub.add_parser("train", help="train a mask estimator")
    _common(p)
    p.add_argument("--kind", choices=KINDS, help="architecture (default: config model.kind)")
    p.add_argument("--vl2m-checkpoint", help="trained VL2M for the refinement models")
    p.add_argument("--epochs", type=int, help="override train.max_epochs")

    p = sub.add_parser("enhance", help="enhance one mixture or a whole manifest")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mixture", help="mixture WAV")
    p.add_argument("--landmarks", help="target speaker landmark CSV")
    p.add_argument("--speaker", help="use this speaker's cached statistics")
    p.add_argument("--out", help="output WAV (single-file mode)")
    p.add_argument("--manifest", help="enhance every entry of this manifest")
    p.add_argument("--out-dir", help="output directory (manifest mode)")
    p.add_argument("--png", metavar="DIR", help="also write spectrogram PNGs here")

    p = sub.add_parser("evaluate", help="SDR tables for enhanced outputs")
    _common(p)
    p.add_argument("--manifest", nargs="+", help="manifests (default: test and test3)")
    p.add_argument("--enhanced-dir", required=True)
    p.add_argument("--out-dir")

    p = sub.add_parser("make-fixture", help="write a synthetic audio-visual corpus")
    p.add_argument("out_dir")
    p.add_argument("--speakers", type=int, default=3)
    p.add_argument("--utts", type=int, default=10)
    p.add_argument("--duration", type=float, nargs=2, default=(0.8, 0.8), metavar=("MIN", "MAX"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _default_manifests(cfg, names):
    paths = [commands.manifest_path(cfg, n) for n in names]
    return [p for p in paths if os.path.exists(p)]


def run(args):
    if args.command == "make-fixture":
        write_fixture_corpus(args.out_dir, args.speakers, args.utts, tuple(args.duration), args.seed)
        print(args.out_dir)
        return 0

    cfg = load_config(args.config, {"seed": args.seed})
    cfg.validate(need_corpus=args.command == "prepare")

    if args.command == "prepare":
        out = commands.cmd_prepare(cfg, args.jobs)
        print(json.dumps(out.outputs, sort_keys=True))
    elif args.command == "oracle":
        manifest = args.manifest or commands.manifest_path(cfg, "test")
        out = commands.cmd_oracle(cfg, manifest, args.out_dir, args.jobs)
        keys = ("noisy", "tbm", "iam")
        print(commands.format_table("oracle SDR (dB)", out.outputs["summary"], keys), end="")
    elif args.command == "train":
        out = commands.cmd_train(cfg, args.kind, args.vl2m_checkpoint, args.epochs, args.jobs)
        print(json.dumps(out.outputs, sort_keys=True))
    elif args.command == "enhance":
        if args.manifest:
            if not args.out_dir:
                raise ConfigError("--manifest requires --out-dir")
            out = commands.cmd_enhance_manifest(
                cfg, args.checkpoint, args.manifest, args.out_dir, args.png, args.jobs
            )
        else:
            if not (args.mixture and args.landmarks and args.out):
                raise ConfigError("single-file mode needs --mixture, --landmarks and --out")
            out = commands.cmd_enhance(
                cfg, args.checkpoint, args.mixture, args.landmarks, args.out,
                args.speaker, args.png,
            )
        print(json.dumps(out.outputs, sort_keys=True))
    else:
        manifests = args.manifest or _default_manifests(cfg, ("test", "test3"))
        if not manifests:
            raise ConfigError("no manifests to evaluate; pass --manifest")
        out = commands.cmd_evaluate(cfg, manifests, args.enhanced_dir, args.out_dir, args.jobs)
        print(out.outputs["table"], end="")
    for failure in out.failures:
        log.warning("%s", failure)
    return out.exit_code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
