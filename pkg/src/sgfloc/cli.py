"""Command line entry point: ``sgfloc simulate | run | eval | version``.

Exit codes: 0 success, 2 invalid input, 3 pipeline failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, ManifestError, NoOverlap, SgfError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FAILURE = 3

log = logging.getLogger("sgfloc")


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    from .pipeline import PipelineConfig

    g = p.add_argument_group("pipeline overrides (take precedence over --config)")
    for f in dataclasses.fields(PipelineConfig):
        kind = {"bool": _bool, "int": int, "float": float}[str(f.type)]
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", type=kind, default=None,
                       metavar=str(f.type).upper(), help=f"default {f.default}")


def build_parser() -> argparse.ArgumentParser:
    from .sim import KINDS

    ap = argparse.ArgumentParser(prog="sgfloc", description="Ground-marking localization pipeline")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-frame warnings")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic dataset directory")
    s.add_argument("--kind", choices=KINDS, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)

    r = sub.add_parser("run", help="run the pipeline on a dataset directory")
    r.add_argument("--dataset", type=Path, required=True)
    r.add_argument("--config", type=Path, default=None, help="YAML file of key: value overrides")
    r.add_argument("--out", type=Path, required=True)
    _add_config_flags(r)

    e = sub.add_parser("eval", help="ATE of a TUM trajectory against ground truth")
    e.add_argument("--est", type=Path, required=True)
    e.add_argument("--gt", type=Path, required=True)
    e.add_argument("--no-align", action="store_true")
    e.add_argument("--scale", action="store_true", help="allow a similarity alignment")

    sub.add_parser("version", help="print the package version")
    return ap


def _config(args):
    from .pipeline import PipelineConfig

    base = PipelineConfig.load(args.config).to_dict() if args.config else {}
    for k, v in vars(args).items():
        if k.startswith("cfg_") and v is not None:
            base[k[4:]] = v
    return PipelineConfig.from_dict(base)


def cmd_simulate(args) -> int:
    from .pipeline import run_simulate

    m = run_simulate(args.kind, args.seed, args.out)
    print(f"wrote {m.frame_count} frames to {m.root}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .dataset import load_manifest
    from .pipeline import run_pipeline

    cfg = _config(args)
    manifest = load_manifest(args.dataset)
    res = run_pipeline(manifest, cfg, args.out)
    print(f"{manifest.frame_count} frames, {len(res.instances)} SGFs, {len(res.groups)} groups, "
          f"{len(res.constraints)} loop constraints, {len(res.frame_errors)} frame errors")
    print(f"outputs in {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .dataset import read_tum
    from .evaluation import ate

    rep = ate(read_tum(args.est), read_tum(args.gt), align=not args.no_align, with_scale=args.scale)
    print(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "eval": cmd_eval}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ManifestError, NoOverlap, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SgfError, ValueError, OSError) as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
