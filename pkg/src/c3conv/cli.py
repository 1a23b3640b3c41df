"""Command-line front end.

Exit status: 0 success, 1 verification failure, 2 usage or parse error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analyzer
from .bench import BLOCKS, run_bench
from .config import ConfigError, load_config
from .graph import GraphError
from .toy import DEFAULT_LR, DEFAULT_STEPS, train_toy
from .verification import SUITES, impulse_support, run_suites

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _hw(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().replace("×", "x").split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"extents must be >= 1, got {text!r}")
    return h, w


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    return values


def _load(path):
    try:
        return load_config(path)
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror or exc}") from None
    except ConfigError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_analyze(args) -> int:
    cfg = _load(args.config)
    hw = args.input_size or (cfg.input_shape.h, cfg.input_shape.w)
    try:
        report = analyzer.count_flops(cfg.graph, hw, args.convention)
    except GraphError as exc:
        raise UsageError(str(exc)) from None
    if args.format == "machine":
        for rec in report.records():
            print(json.dumps(rec))
        print(
            json.dumps(
                {
                    "id": "total",
                    "kind": "total",
                    "params": report.total_params,
                    "flops_exact": report.total_flops,
                    "flops_formatted": analyzer.format_mflops(report.total_flops, 2),
                }
            )
        )
    else:
        title = f"{args.config}  input {hw[0]}x{hw[1]}  convention={args.convention}"
        print(analyzer.format_table(report, title))
    return EXIT_OK


def cmd_rf(args) -> int:
    cfg = _load(args.config)
    try:
        full = analyzer.receptive_field(cfg.graph)
        partial = analyzer.receptive_field(cfg.graph, exclude_stage="concentration")
    except GraphError as exc:
        raise UsageError(str(exc)) from None
    print(f"receptive field: {full}")
    print(f"without concentration stage: {partial}")
    if args.check:
        measured = impulse_support(cfg.graph)
        ok = (measured.rf_h, measured.rf_w) == (full.rf_h, full.rf_w)
        print(f"impulse-support oracle: {measured} ({'agrees' if ok else 'DISAGREES'})")
        return EXIT_OK if ok else EXIT_FAIL
    return EXIT_OK


def cmd_coverage(args) -> int:
    if not args.dilations:
        raise UsageError("--dilations must list at least one rate")
    try:
        cmap = analyzer.coverage_map(args.dilations, args.kernel)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = cmap.to_text()
    record = {
        "dilations": list(cmap.dilations),
        "kernel": cmap.kernel,
        "extent": cmap.extent,
        "cells": cmap.counts.size,
        "hole_count": len(cmap.holes),
        "holes": [list(h) for h in cmap.holes],
    }
    if args.out:
        out = Path(args.out)
        out.write_text(text + "\n", encoding="utf-8")
        out.with_name(out.name + ".json").write_text(json.dumps(record) + "\n", encoding="utf-8")
    else:
        print(text)
    print(f"holes: {len(cmap.holes)} / {cmap.counts.size}")
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = run_suites(args.suite, seed=args.seed)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_bench(args) -> int:
    try:
        result = run_bench(args.block, args.channels, args.hw, args.reps, args.dilation, args.seed, args.precision)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(result.line())
    print(f"analyzer FLOPs: {analyzer.format_mflops(result.flops)}M")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    def show(step, loss):
        print(f"step {step:4d}  loss {loss:.6f}")

    try:
        result = train_toy(args.steps, args.seed, args.lr, args.precision, callback=show)
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"initial {result.initial:.6f}  final {result.final:.6f}  ratio {result.final / result.initial:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="c3conv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="parameter and FLOPs report for a model config")
    p.add_argument("config")
    p.add_argument("--input-size", type=_hw, help="HxW; defaults to the config's input_shape")
    p.add_argument("--convention", choices=analyzer.CONVENTIONS, default="paper")
    p.add_argument("--format", choices=("table", "machine"), default="table")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("rf", help="receptive field of a model config")
    p.add_argument("config")
    p.add_argument("--check", action="store_true", help="confirm with the impulse-support oracle")
    p.set_defaults(func=cmd_rf)

    p = sub.add_parser("coverage", help="tap coverage of stacked 3x3 dilated convolutions")
    p.add_argument("--dilations", type=_int_list, required=True, help="comma-separated rates, e.g. 2,3,7,13")
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--out", help="write the grid here and the hole list to <out>.json")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("verify", help="run self-check suites")
    p.add_argument("--suite", choices=(*SUITES, "all"), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time a block's forward pass")
    p.add_argument("--block", choices=BLOCKS, default="c3")
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--hw", type=_hw, default=(64, 64))
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--dilation", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=("single", "double"), default="single")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train-toy", help="train a tiny C3 network on synthetic rectangles")
    p.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    p.add_argument("--precision", choices=("single", "double"), default="single")
    p.set_defaults(func=cmd_train_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def run():
    sys.exit(main())
