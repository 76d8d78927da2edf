"""Deterministic storage fault injection and crash-trial scheduling.

Each injector derives every random choice (offset, bit index, range
length) from the SHA-256 counter stream for its seed, so a (file bytes,
seed) pair fully determines the damage. Injectors mutate stored bytes
out of band, the way latent media corruption would, without going
through the write protocols.
"""
from __future__ import annotations

from dataclasses import dataclass

from .detrng import DrawStream
from .protocols import WriteMode

FAULT_KINDS = ("bitflip", "zerorange", "truncate", "none")
MAX_ZERO_RANGE = 4096
ZERO_RANGE_REDRAWS = 64

CRASH_POINT_NAMES = ("after_model", "before_manifest", "manifest_partial", "before_commit")

DEFAULT_CRASH_PLAN: tuple[tuple[WriteMode, str | None, int], ...] = (
    (WriteMode.UNSAFE, "after_model", 400),
    (WriteMode.UNSAFE, "before_manifest", 10),
    (WriteMode.UNSAFE, "manifest_partial", 10),
    (WriteMode.UNSAFE, "before_commit", 10),
    (WriteMode.ATOMIC_DIRSYNC, None, 400),
)


@dataclass(frozen=True)
class InjectionRecord:
    """What a single injection did.

    offset is the start of the mutated range; for truncate it is the
    new file length. length is the number of bytes affected (removed,
    for truncate). bit is the flipped bit index for bitflip only.
    bytes_actually_changed is False only when a zerorange gave up after
    redrawing onto already-zero bytes every time.
    """

    path: str
    kind: str
    offset: int
    length: int
    bit: int | None
    bytes_actually_changed: bool


def _read_nonempty(backend, path) -> bytearray:
    data = bytearray(backend.read_bytes(path))
    if not data:
        raise ValueError(f"cannot corrupt empty file: {path}")
    return data


def inject_bitflip(backend, path, seed: int) -> InjectionRecord:
    """Flip one uniformly chosen bit of the file."""
    data = _read_nonempty(backend, path)
    draws = DrawStream(seed)
    offset = draws.below(len(data))
    bit = draws.below(8)
    data[offset] ^= 1 << bit
    backend.overwrite_bytes(path, bytes(data))
    return InjectionRecord(str(path), "bitflip", offset, 1, bit, True)


def inject_zerorange(backend, path, seed: int, verify_changed: bool = False) -> InjectionRecord:
    """Zero a uniformly chosen range of up to 4 KiB.

    With verify_changed, ranges that are already all zero are redrawn
    (fresh offset and length) up to 64 times; if every draw lands on
    zeros the record reports bytes_actually_changed=False.
    """
    data = _read_nonempty(backend, path)
    draws = DrawStream(seed)
    attempts = 1 + (ZERO_RANGE_REDRAWS if verify_changed else 0)
    offset = length = 0
    changed = False
    for _ in range(attempts):
        offset = draws.below(len(data))
        length = 1 + draws.below(min(MAX_ZERO_RANGE, len(data) - offset))
        changed = any(data[offset : offset + length])
        if changed or not verify_changed:
            break
    data[offset : offset + length] = bytes(length)
    backend.overwrite_bytes(path, bytes(data))
    return InjectionRecord(str(path), "zerorange", offset, length, None, changed)


def inject_truncate(backend, path, seed: int) -> InjectionRecord:
    """Cut the file to a uniformly chosen strictly shorter length."""
    data = _read_nonempty(backend, path)
    new_length = DrawStream(seed).below(len(data))
    backend.overwrite_bytes(path, bytes(data[:new_length]))
    return InjectionRecord(str(path), "truncate", new_length, len(data) - new_length, None, True)


def inject(backend, path, kind: str, seed: int, verify_changed: bool = False) -> InjectionRecord | None:
    """Dispatch by fault kind; 'none' injects nothing and returns None."""
    if kind == "bitflip":
        return inject_bitflip(backend, path, seed)
    if kind == "zerorange":
        return inject_zerorange(backend, path, seed, verify_changed)
    if kind == "truncate":
        return inject_truncate(backend, path, seed)
    if kind == "none":
        return None
    raise ValueError(f"unknown fault kind: {kind!r}")


@dataclass(frozen=True)
class CrashTrialSpec:
    """One crash trial: which mode, where to die, and the trial seed."""

    mode: WriteMode
    crash_point: str | None
    seed: int


def crash_point_schedule(
    plan=DEFAULT_CRASH_PLAN, base_seed: int = 1000
) -> list[CrashTrialSpec]:
    """Expand a (mode, crash_point, count) plan into per-trial specs.

    Seeds are base_seed plus the running trial index, so they are
    strictly increasing and unique across the whole schedule.
    """
    specs: list[CrashTrialSpec] = []
    index = 0
    for mode, point, count in plan:
        if point is not None and point not in CRASH_POINT_NAMES:
            raise ValueError(f"unknown crash point: {point!r}")
        if count < 0:
            raise ValueError("trial count must be non-negative")
        for _ in range(count):
            specs.append(CrashTrialSpec(mode, point, base_seed + index))
            index += 1
    return specs
