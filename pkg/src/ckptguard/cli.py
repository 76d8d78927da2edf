"""Command-line entry point.

One subcommand per capability: the group writer (which honors the
CKPT_CRASH_POINT environment variable so a parent harness can make the
process kill itself mid-write), validation, recovery, fault injection,
the three experiment runners, report and timeline generation, the disk
sampler, and orphan sweeping.

Exit codes: 0 success or valid; 1 validation failed or nothing to
recover; 2 usage error; 3 I/O or input-file error.
"""
from __future__ import annotations

import argparse
import os
import sys

from .faults import FAULT_KINDS, inject
from .group import CRASH_POINTS, canonical_json, write_group
from .guard import NoValidCheckpoint, recover_latest, sweep_orphans, validate_group
from .harness import (
    ChildSpawnError,
    ExperimentConfig,
    run_bench,
    run_corruption_trials,
    run_crash_trials,
    synthetic_parts,
    writer_content_seed,
)
from .protocols import RealFs, WriteMode
from .stats import (
    SamplerParseError,
    SchemaMismatch,
    UnsortedInput,
    UnsupportedPlatform,
    make_report,
    merge_timeline,
    sample_disk_activity,
)

MODE_CHOICES = tuple(m.value for m in WriteMode)


def _parse_plan(text: str):
    """unsafe@after_model=400,atomic_dirsync@none=400 -> plan tuples."""
    entries = []
    for chunk in text.split(","):
        head, eq, count = chunk.partition("=")
        mode_s, at, point = head.partition("@")
        if not eq or not at:
            raise argparse.ArgumentTypeError(
                f"bad plan entry {chunk!r}, want mode@point=count"
            )
        try:
            mode = WriteMode.parse(mode_s)
            entries.append((mode, None if point == "none" else point, int(count)))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return tuple(entries)


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc


def _parse_modes(text: str) -> tuple[WriteMode, ...]:
    try:
        return tuple(WriteMode.parse(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _parse_kinds(text: str) -> tuple[str, ...]:
    kinds = tuple(text.split(","))
    for kind in kinds:
        if kind not in FAULT_KINDS:
            raise argparse.ArgumentTypeError(f"unknown fault kind {kind!r}")
    return kinds


def _cmd_write_group(args) -> int:
    crash_point = os.environ.get("CKPT_CRASH_POINT")
    if crash_point is not None and crash_point not in CRASH_POINTS:
        print(
            f"error: CKPT_CRASH_POINT must be one of {', '.join(CRASH_POINTS)}",
            file=sys.stderr,
        )
        return 2
    fs = RealFs()
    parts = synthetic_parts(
        writer_content_seed(args.seed, args.epoch),
        args.model_bytes,
        args.optimizer_bytes,
        args.rng_bytes,
    )
    receipt = write_group(
        fs,
        args.dir,
        parts,
        WriteMode.parse(args.mode),
        epoch=args.epoch,
        seed=args.seed,
        crash_point=crash_point,
    )
    print(
        f"wrote {args.dir}: {receipt.bytes_written} bytes in "
        f"{receipt.latency_ns / 1e6:.2f} ms ({args.mode})"
    )
    return 0


def _cmd_validate(args) -> int:
    fs = RealFs()
    if not fs.is_dir(args.dir):
        print(f"error: no such group directory: {args.dir}", file=sys.stderr)
        return 3
    report = validate_group(fs, args.dir)
    if args.json:
        print(canonical_json(report.to_obj()).decode("utf-8"))
    elif report.valid:
        print(f"valid {args.dir}")
    else:
        reason = report.primary_reason.value
        part = next((p.name for p in report.parts if p.failures), None)
        where = f" {part}" if not report.structural_failures and part else ""
        print(f"invalid {args.dir}: {reason}{where}")
    return 0 if report.valid else 1


def _cmd_recover(args) -> int:
    fs = RealFs()
    try:
        chosen = recover_latest(fs, args.root)
    except NoValidCheckpoint:
        if args.json:
            print(canonical_json({"chosen": None}).decode("utf-8"))
        print(f"no valid checkpoint under {args.root}", file=sys.stderr)
        return 1
    if args.json:
        print(canonical_json({"chosen": chosen}).decode("utf-8"))
    else:
        print(f"recovered {chosen}")
    return 0


def _cmd_inject(args) -> int:
    fs = RealFs()
    if not fs.exists(args.file):
        print(f"error: no such file: {args.file}", file=sys.stderr)
        return 3
    if fs.file_size(args.file) == 0:
        print(f"error: cannot corrupt empty file: {args.file}", file=sys.stderr)
        return 3
    record = inject(fs, args.file, args.kind, seed=args.seed, verify_changed=args.verify_changed)
    if record is None:
        print(f"none {args.file}: unchanged")
        return 0
    extra = f" bit={record.bit}" if record.bit is not None else ""
    print(
        f"{record.kind} {args.file}: offset={record.offset} length={record.length}"
        f"{extra} changed={int(record.bytes_actually_changed)}"
    )
    return 0


def _config_from(args, **overrides) -> ExperimentConfig:
    kwargs = {"root": args.root, "backend": args.backend}
    for flag in (
        "modes",
        "seeds",
        "epochs",
        "ckpt_every",
        "model_bytes",
        "optimizer_bytes",
        "rng_bytes",
        "crash_plan",
        "fault_kinds",
        "fault_trials",
        "verify_changed",
    ):
        value = overrides.get(flag, getattr(args, flag, None))
        if value is not None:
            kwargs[flag] = value
    return ExperimentConfig(**kwargs)


def _cmd_bench(args) -> int:
    path = run_bench(_config_from(args))
    print(path)
    return 0


def _cmd_crash_trials(args) -> int:
    path = run_crash_trials(_config_from(args))
    print(path)
    return 0


def _cmd_corrupt_trials(args) -> int:
    path = run_corruption_trials(_config_from(args))
    print(path)
    return 0


def _cmd_report(args) -> int:
    paths = make_report(
        args.bench, args.crash, args.corrupt, out_dir=args.out, ci_method=args.ci_method
    )
    for name in sorted(paths):
        print(f"{name}: {paths[name]}")
    return 0


def _cmd_timeline(args) -> int:
    svg = os.path.splitext(args.out)[0] + ".svg"
    path = merge_timeline(args.sampler, args.events, out_csv=args.out, out_svg=svg)
    print(path)
    print(svg)
    return 0


def _cmd_sample_io(args) -> int:
    path = sample_disk_activity(args.seconds, out_csv=args.out, interval=args.interval)
    print(path)
    return 0


def _cmd_sweep(args) -> int:
    removed = sweep_orphans(RealFs(), args.root, min_age_s=args.min_age)
    for path in removed:
        print(f"removed {path}")
    print(f"swept {len(removed)} orphan temp file(s)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ckpt",
        description="Crash-safe group checkpointing with end-to-end integrity checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("write-group", help="write one synthetic checkpoint group")
    p.add_argument("--dir", required=True)
    p.add_argument("--mode", required=True, choices=MODE_CHOICES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--model-bytes", type=int, default=131072)
    p.add_argument("--optimizer-bytes", type=int, default=65536)
    p.add_argument("--rng-bytes", type=int, default=256)
    p.set_defaults(func=_cmd_write_group)

    p = sub.add_parser("validate", help="check one group directory")
    p.add_argument("--dir", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("recover", help="pick the newest valid group and write LATEST_OK")
    p.add_argument("--root", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("inject", help="corrupt a file deterministically")
    p.add_argument("--file", required=True)
    p.add_argument("--kind", required=True, choices=FAULT_KINDS)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--verify-changed", action="store_true")
    p.set_defaults(func=_cmd_inject)

    p = sub.add_parser("bench", help="latency benchmark across write modes")
    p.add_argument("--root", required=True)
    p.add_argument("--backend", choices=("sim", "real"), default="sim")
    p.add_argument("--modes", type=_parse_modes)
    p.add_argument("--seeds", type=_parse_ints)
    p.add_argument("--epochs", type=int)
    p.add_argument("--every", dest="ckpt_every", type=int)
    p.add_argument("--model-bytes", type=int)
    p.add_argument("--optimizer-bytes", type=int)
    p.add_argument("--rng-bytes", type=int)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("crash-trials", help="run the crash-point schedule")
    p.add_argument("--root", required=True)
    p.add_argument("--backend", choices=("sim", "real"), default="sim")
    p.add_argument("--plan", dest="crash_plan", type=_parse_plan)
    p.add_argument("--model-bytes", type=int)
    p.add_argument("--optimizer-bytes", type=int)
    p.add_argument("--rng-bytes", type=int)
    p.set_defaults(func=_cmd_crash_trials)

    p = sub.add_parser("corrupt-trials", help="inject faults into fresh groups")
    p.add_argument("--root", required=True)
    p.add_argument("--backend", choices=("sim", "real"), default="sim")
    p.add_argument("--faults", dest="fault_kinds", type=_parse_kinds)
    p.add_argument("--trials", dest="fault_trials", type=int)
    p.add_argument("--verify-changed", dest="verify_changed", action="store_true", default=None)
    p.add_argument("--model-bytes", type=int)
    p.add_argument("--optimizer-bytes", type=int)
    p.add_argument("--rng-bytes", type=int)
    p.set_defaults(func=_cmd_corrupt_trials)

    p = sub.add_parser("report", help="regenerate result tables and plots from CSVs")
    p.add_argument("--bench")
    p.add_argument("--crash")
    p.add_argument("--corrupt")
    p.add_argument("--out", required=True)
    p.add_argument("--ci-method", choices=("exact", "wilson"), default="exact")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("timeline", help="merge disk samples with checkpoint events")
    p.add_argument("--sampler", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_timeline)

    p = sub.add_parser("sample-io", help="capture device transactions per second")
    p.add_argument("--seconds", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--interval", type=float, default=1.0)
    p.set_defaults(func=_cmd_sample_io)

    p = sub.add_parser("sweep", help="delete leftover temp files under a root")
    p.add_argument("--root", required=True)
    p.add_argument("--min-age", type=float, default=0.0)
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SchemaMismatch, UnsortedInput, SamplerParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ChildSpawnError, UnsupportedPlatform) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
