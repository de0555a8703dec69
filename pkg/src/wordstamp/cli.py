"""Command-line entry point: ``wordstamp <command> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import errors
from .evaluation import render_table
from .experiment import (COMBINED_ROW, MATRIX_ROWS, ExperimentSpec, format_histogram_summary, gen_data,
                         inspect_embeddings, run_evaluate, run_matrix, run_train)

EXIT_CODES = {
    OSError: 3,
    errors.RangeError: 10,
    errors.VocabError: 11,
    errors.OrderError: 12,
    errors.ShapeError: 13,
    errors.NumericsError: 14,
    errors.UsageError: 15,
    errors.ContractError: 16,
    errors.DomainError: 17,
    errors.VersionError: 18,
    errors.WordstampError: 19,
    KeyError: 20,
    ValueError: 20,
}


def exit_code_for(exc: BaseException) -> int:
    for cls, code in EXIT_CODES.items():
        if isinstance(exc, cls):
            return code
    return 1


def _load_spec(args) -> ExperimentSpec:
    spec = ExperimentSpec.from_file(args.spec) if args.spec else ExperimentSpec()
    aug = None if args.length_aug is None else args.length_aug == "on"
    return spec.with_overrides(seed=args.seed, out_dir=args.out, w_reg=args.w_reg, p=args.p, length_aug=aug)


def cmd_gen_data(args):
    spec = _load_spec(args)
    try:
        summary = gen_data(spec)
    except OSError as exc:
        raise OSError(f"cannot write corpus under {spec.data_dir}: {exc}") from exc
    sys.stdout.write(format_histogram_summary(summary))


def cmd_train(args):
    spec = _load_spec(args)
    ckpt = run_train(spec)
    print(f"checkpoint: {ckpt}")


def cmd_evaluate(args):
    spec = _load_spec(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else spec.out / "model.ckpt"
    reports = run_evaluate(spec, ckpt, spec.out if args.out else None)
    sys.stdout.write(render_table(reports))


def cmd_inspect_embeddings(args):
    if not args.checkpoint:
        raise errors.UsageError("--checkpoint is required")
    out = Path(args.out) if args.out else None
    summary = inspect_embeddings(Path(args.checkpoint), out)
    print(json.dumps(summary, sort_keys=True))


def cmd_run_matrix(args):
    spec = _load_spec(args)
    rows = {**MATRIX_ROWS, **COMBINED_ROW} if args.combined else MATRIX_ROWS
    run_matrix(spec, rows, jobs=args.jobs)
    sys.stdout.write((spec.out / "matrix.txt").read_text())


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate train/test/long corpora and a timestamp histogram"),
    "train": (cmd_train, "train a model on the generated corpus"),
    "evaluate": (cmd_evaluate, "report WER / AAS / MAL and the error-propagation probe"),
    "inspect-embeddings": (cmd_inspect_embeddings, "dump timestamp embedding similarity against the Gaussian target"),
    "run-matrix": (cmd_run_matrix, "run the four-row ablation and write a comparison table"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wordstamp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--spec", help="experiment spec file (key = value)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--checkpoint")
        p.add_argument("--w-reg", dest="w_reg", type=float)
        p.add_argument("--p", type=float, help="timestamp corruption probability")
        p.add_argument("--length-aug", dest="length_aug", choices=("on", "off"))
        if name == "run-matrix":
            p.add_argument("--jobs", type=int, default=1, help="rows to train in parallel (default: serial)")
            p.add_argument("--combined", action="store_true", help="also run reg + reduced TF together")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001
        code = exit_code_for(exc)
        if code == 1:
            raise
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
