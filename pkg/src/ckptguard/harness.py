"""Experiment orchestration: latency benchmarks, crash trials, and
corruption trials, each emitting one CSV.

Checkpoint data lives in the configured backend (in-memory simulation
or the real filesystem); CSV logs always go to real files under
``config.root``. Real-backend crash trials spawn one child process per
trial so the kill is a genuine process death; the parent appends rows
only after the child has exited, so a crashing child can never tear
the log itself.
"""
from __future__ import annotations

import csv
import os
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

from .detrng import DrawStream, derive_seed
from .faults import DEFAULT_CRASH_PLAN, FAULT_KINDS, crash_point_schedule, inject
from .group import PART_NAMES, write_group
from .guard import DetectionMechanism, validate_group
from .payload import Dtype, TensorBlob, generate_synthetic
from .protocols import RealFs, SimFs, SimulatedCrash, WriteMode

BENCH_HEADER = ("experiment", "mode", "seed", "epoch", "latency_ns", "ok")
CRASH_HEADER = ("experiment", "mode", "crash_point", "trial", "ok", "reason")
CORRUPT_HEADER = (
    "experiment",
    "fault",
    "trial",
    "detected",
    "reason",
    "mech_load",
    "mech_digest",
    "mech_file_sha",
    "mech_structural",
)
EVENTS_HEADER = ("unix_ns", "event", "group_path")

DEFAULT_MODES = (WriteMode.UNSAFE, WriteMode.ATOMIC_NODIRSYNC, WriteMode.ATOMIC_DIRSYNC)


class ChildSpawnError(RuntimeError):
    """A real-backend writer child could not be started."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Run settings shared by the three experiment categories.

    Default shape: 10 seeds, 120 epochs with a checkpoint every 3, so
    40 checkpoints per mode and seed (400 per mode). Part payloads are
    128 KiB model, 64 KiB optimizer, 256 B RNG state.
    """

    root: str
    backend: str = "sim"
    modes: tuple[WriteMode, ...] = DEFAULT_MODES
    seeds: tuple[int, ...] = tuple(range(1, 11))
    epochs: int = 120
    ckpt_every: int = 3
    model_bytes: int = 131072
    optimizer_bytes: int = 65536
    rng_bytes: int = 256
    crash_plan: tuple[tuple[WriteMode, str | None, int], ...] = DEFAULT_CRASH_PLAN
    crash_base_seed: int = 1000
    fault_kinds: tuple[str, ...] = FAULT_KINDS
    fault_trials: int = 400
    verify_changed: bool = False

    def __post_init__(self) -> None:
        if self.backend not in ("sim", "real"):
            raise ValueError(f"backend must be sim or real, got {self.backend!r}")
        if self.epochs <= 0 or self.ckpt_every <= 0 or self.epochs % self.ckpt_every:
            raise ValueError("epochs must be a positive multiple of ckpt_every")
        for label, nbytes in (
            ("model_bytes", self.model_bytes),
            ("optimizer_bytes", self.optimizer_bytes),
            ("rng_bytes", self.rng_bytes),
        ):
            if nbytes <= 0 or nbytes % 4:
                raise ValueError(f"{label} must be a positive multiple of 4")
        for kind in self.fault_kinds:
            if kind not in FAULT_KINDS:
                raise ValueError(f"unknown fault kind: {kind!r}")

    @property
    def checkpoint_epochs(self) -> tuple[int, ...]:
        return tuple(e for e in range(1, self.epochs + 1) if e % self.ckpt_every == 0)

    def part_sizes(self) -> tuple[tuple[str, int], ...]:
        return (
            ("model.ckt", self.model_bytes),
            ("optimizer.ckt", self.optimizer_bytes),
            ("rng.ckt", self.rng_bytes),
        )


def synthetic_parts(
    content_seed: int,
    model_bytes: int = 131072,
    optimizer_bytes: int = 65536,
    rng_bytes: int = 256,
) -> list[tuple[str, TensorBlob]]:
    """Build the three-part group payload for one checkpoint.

    Per-part seeds are derived from the content seed and part name, so
    parts differ from each other but the whole group is reproducible
    from one integer.
    """
    parts = []
    for name, nbytes in (
        ("model.ckt", model_bytes),
        ("optimizer.ckt", optimizer_bytes),
        ("rng.ckt", rng_bytes),
    ):
        seed = derive_seed("part", name, content_seed)
        parts.append((name, generate_synthetic(seed, nbytes, Dtype.F32)))
    return parts


def writer_content_seed(seed: int, epoch: int) -> int:
    """Content seed used by the CLI writer and by crash trials, so an
    in-process trial and a child-process trial write identical bytes."""
    return derive_seed("write-group", seed, epoch)


def _write_csv(path: Path, header, rows) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return str(path)


class EventLog:
    """Checkpoint completion events for timeline correlation.

    Timestamps come from the backend clock (wall time on the real
    backend, the seeded deterministic clock in simulation) and are
    forced strictly increasing so a log spanning several simulated
    filesystems never goes backwards.
    """

    def __init__(self) -> None:
        self.rows: list[tuple[int, str, str]] = []
        self._last_ns = 0

    def append(self, backend, event: str, group_path: str) -> None:
        ts = backend.now_ns()
        if ts <= self._last_ns:
            ts = self._last_ns + 1
        self._last_ns = ts
        self.rows.append((ts, event, group_path))

    def write(self, path) -> str:
        return _write_csv(Path(path), EVENTS_HEADER, self.rows)


def _fresh_sim(*names) -> SimFs:
    return SimFs(seed=derive_seed("simfs", *names))


def run_bench(config: ExperimentConfig) -> str:
    """Write mode x seed x epoch groups, log one latency row each.

    Returns the bench.csv path; events.csv is written next to it.
    Refuses to overwrite an existing bench.csv: benchmark runs are
    append-never, rerun-in-a-fresh-root.
    """
    out = Path(config.root)
    bench_path = out / "bench.csv"
    if bench_path.exists():
        raise FileExistsError(f"{bench_path} already exists; use a fresh root")

    events = EventLog()
    rows = []
    real = RealFs() if config.backend == "real" else None
    for mode in config.modes:
        for seed in config.seeds:
            if real is not None:
                backend = real
                base = str(out / "bench" / mode.value / f"seed-{seed:02d}")
            else:
                backend = _fresh_sim("bench", mode.value, seed)
                base = f"bench/{mode.value}/seed-{seed:02d}"
            for epoch in config.checkpoint_epochs:
                content = derive_seed("bench", mode.value, seed, epoch)
                parts = synthetic_parts(
                    content, config.model_bytes, config.optimizer_bytes, config.rng_bytes
                )
                gdir = f"{base}/ckpt-{epoch:06d}"
                receipt = write_group(backend, gdir, parts, mode, epoch=epoch, seed=seed)
                ok = validate_group(backend, gdir).valid
                rows.append(("bench", mode.value, seed, epoch, receipt.latency_ns, int(ok)))
                events.append(backend, "checkpoint_committed", gdir)
    _write_csv(bench_path, BENCH_HEADER, rows)
    events.write(out / "events.csv")
    return str(bench_path)


def _sim_crash_trial(config: ExperimentConfig, spec) -> tuple[bool, str]:
    fs = SimFs(seed=spec.seed)
    gdir = "trial"
    if spec.crash_point is not None:
        # crashed trials overwrite a previously committed slot, the way
        # a periodic checkpointer refreshes its newest directory
        pre = synthetic_parts(
            derive_seed("crash-preseed", spec.seed),
            config.model_bytes,
            config.optimizer_bytes,
            config.rng_bytes,
        )
        write_group(fs, gdir, pre, WriteMode.ATOMIC_DIRSYNC, epoch=0, seed=spec.seed)
    parts = synthetic_parts(
        writer_content_seed(spec.seed, 1),
        config.model_bytes,
        config.optimizer_bytes,
        config.rng_bytes,
    )
    crashed = False
    try:
        write_group(
            fs, gdir, parts, spec.mode, epoch=1, seed=spec.seed, crash_point=spec.crash_point
        )
    except SimulatedCrash:
        crashed = True
    if spec.crash_point is not None and not crashed:
        return False, "harness_anomaly"
    report = validate_group(fs, gdir)
    return report.valid, "" if report.valid else report.primary_reason.value


def _real_crash_trial(config: ExperimentConfig, spec, trial_dir: Path) -> tuple[bool, str]:
    fs = RealFs()
    gdir = str(trial_dir / "group")
    if spec.crash_point is not None:
        pre = synthetic_parts(
            derive_seed("crash-preseed", spec.seed),
            config.model_bytes,
            config.optimizer_bytes,
            config.rng_bytes,
        )
        write_group(fs, gdir, pre, WriteMode.ATOMIC_DIRSYNC, epoch=0, seed=spec.seed)
    argv = [
        sys.executable,
        "-m",
        "ckptguard",
        "write-group",
        "--dir",
        gdir,
        "--mode",
        spec.mode.value,
        "--seed",
        str(spec.seed),
        "--epoch",
        "1",
        "--model-bytes",
        str(config.model_bytes),
        "--optimizer-bytes",
        str(config.optimizer_bytes),
        "--rng-bytes",
        str(config.rng_bytes),
    ]
    env = dict(os.environ)
    env.pop("CKPT_CRASH_POINT", None)
    if spec.crash_point is not None:
        env["CKPT_CRASH_POINT"] = spec.crash_point
    try:
        proc = subprocess.run(argv, env=env, capture_output=True)
    except OSError as exc:
        raise ChildSpawnError(f"could not spawn writer child: {exc}") from exc
    if spec.crash_point is not None and proc.returncode == 0:
        return False, "harness_anomaly"
    report = validate_group(fs, gdir)
    return report.valid, "" if report.valid else report.primary_reason.value


def run_crash_trials(config: ExperimentConfig) -> str:
    """Execute the crash-point schedule, one row per trial.

    Simulated trials run in-process and are bit-deterministic; real
    trials spawn a CLI writer child with CKPT_CRASH_POINT set and let
    it kill itself mid-write. Either way the group is validated after
    the (simulated or real) death and the verdict recorded.
    """
    out = Path(config.root)
    schedule = crash_point_schedule(config.crash_plan, config.crash_base_seed)
    rows = []
    for index, spec in enumerate(schedule):
        if config.backend == "sim":
            ok, reason = _sim_crash_trial(config, spec)
        else:
            ok, reason = _real_crash_trial(config, spec, out / "crash" / f"trial-{index:04d}")
        rows.append(("crash", spec.mode.value, spec.crash_point or "none", index, int(ok), reason))
    return _write_csv(out / "crash.csv", CRASH_HEADER, rows)


def _corruption_trial(config: ExperimentConfig, kind: str, trial: int):
    if config.backend == "real":
        backend = RealFs()
        gdir = str(Path(config.root) / "corrupt" / kind / f"trial-{trial:04d}")
    else:
        backend = _fresh_sim("corrupt", kind, trial)
        gdir = "trial"
    parts = synthetic_parts(
        derive_seed("corrupt-content", kind, trial),
        config.model_bytes,
        config.optimizer_bytes,
        config.rng_bytes,
    )
    write_group(backend, gdir, parts, WriteMode.ATOMIC_NODIRSYNC, epoch=trial, seed=trial)
    if kind != "none":
        picker = DrawStream(derive_seed("corrupt-target", kind, trial))
        target = PART_NAMES[picker.below(len(PART_NAMES))]
        inject(
            backend,
            f"{gdir}/{target}",
            kind,
            seed=derive_seed("corrupt-inject", kind, trial),
            verify_changed=config.verify_changed,
        )
    report = validate_group(backend, gdir)
    detected = not report.valid
    reason = "" if report.valid else report.primary_reason.value
    return detected, reason, report.mechanisms


def run_corruption_trials(config: ExperimentConfig) -> str:
    """Inject one fault per freshly committed group and record whether
    validation catches it, with the full mechanism breakdown."""
    out = Path(config.root)
    rows = []
    for kind in config.fault_kinds:
        for trial in range(config.fault_trials):
            detected, reason, mechs = _corruption_trial(config, kind, trial)
            rows.append(
                (
                    "corrupt",
                    kind,
                    trial,
                    int(detected),
                    reason,
                    int(DetectionMechanism.LOAD in mechs),
                    int(DetectionMechanism.DIGEST in mechs),
                    int(DetectionMechanism.FILE_SHA in mechs),
                    int(DetectionMechanism.STRUCTURAL in mechs),
                )
            )
    return _write_csv(out / "corrupt.csv", CORRUPT_HEADER, rows)
