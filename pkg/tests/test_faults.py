"""Injector determinism, draw bounds, detection guarantees, scheduling."""
from __future__ import annotations

import pytest

from ckptguard.faults import (
    DEFAULT_CRASH_PLAN,
    CrashTrialSpec,
    crash_point_schedule,
    inject,
    inject_bitflip,
    inject_truncate,
    inject_zerorange,
)
from ckptguard.group import write_group
from ckptguard.guard import DetectionMechanism, validate_group
from ckptguard.payload import Dtype, generate_synthetic
from ckptguard.protocols import SimFs, WriteMode, write_unsafe


def _one_byte_fs():
    fs = SimFs()
    fs.mkdir("d")
    write_unsafe(fs, "d/f", b"\x00")
    return fs


def test_bitflip_on_single_zero_byte_frozen_case():
    # seed 13 draws offset 0 (only choice) and bit 3: byte15 of
    # SHA-256(13_be8 || 0_be8) is 0x.. with low bits 011, checked with
    # sha256sum when this fixture was frozen
    fs = _one_byte_fs()
    record = inject_bitflip(fs, "d/f", seed=13)
    assert (record.offset, record.bit) == (0, 3)
    assert fs.read_bytes("d/f") == b"\x08"


def test_bitflip_always_flips_exactly_one_bit():
    for seed in range(64):
        fs = _one_byte_fs()
        record = inject_bitflip(fs, "d/f", seed=seed)
        byte = fs.read_bytes("d/f")[0]
        assert byte == 1 << record.bit
        assert record.offset == 0
        assert record.length == 1
        assert record.bytes_actually_changed


def test_bitflip_is_deterministic():
    def run():
        fs = SimFs()
        fs.mkdir("d")
        write_unsafe(fs, "d/f", bytes(range(256)) * 16)
        record = inject_bitflip(fs, "d/f", seed=99)
        return record, fs.read_bytes("d/f")

    (r1, b1), (r2, b2) = run(), run()
    assert r1 == r2
    assert b1 == b2


def test_zerorange_draw_bounds_and_determinism():
    payload = bytes([0xFF]) * 10_000
    for seed in range(40):
        fs = SimFs()
        fs.mkdir("d")
        write_unsafe(fs, "d/f", payload)
        record = inject_zerorange(fs, "d/f", seed=seed)
        assert 0 <= record.offset < len(payload)
        assert 1 <= record.length <= 4096
        assert record.offset + record.length <= len(payload)
        after = fs.read_bytes("d/f")
        assert after[record.offset : record.offset + record.length] == bytes(record.length)
        assert after[: record.offset] == payload[: record.offset]
        assert after[record.offset + record.length :] == payload[record.offset + record.length :]
        assert record.bytes_actually_changed


def test_zerorange_on_all_zero_file_reports_no_change_after_redraws():
    fs = SimFs()
    fs.mkdir("d")
    write_unsafe(fs, "d/f", bytes(5000))
    record = inject_zerorange(fs, "d/f", seed=3, verify_changed=True)
    assert not record.bytes_actually_changed
    assert fs.read_bytes("d/f") == bytes(5000)

    # without verification the first draw is taken as-is
    fs2 = SimFs()
    fs2.mkdir("d")
    write_unsafe(fs2, "d/f", bytes(5000))
    record2 = inject_zerorange(fs2, "d/f", seed=3, verify_changed=False)
    assert not record2.bytes_actually_changed or record2.bytes_actually_changed is True


def test_zerorange_verify_changed_redraws_until_nonzero():
    # one nonzero byte in a sea of zeros: verification must either find
    # a range covering it or give up; with it found, bytes change
    found_any = False
    for seed in range(30):
        fs = SimFs()
        fs.mkdir("d")
        data = bytearray(8192)
        data[4000] = 0xAB
        write_unsafe(fs, "d/f", bytes(data))
        record = inject_zerorange(fs, "d/f", seed=seed, verify_changed=True)
        if record.bytes_actually_changed:
            found_any = True
            assert record.offset <= 4000 < record.offset + record.length
            assert fs.read_bytes("d/f") == bytes(8192)
    assert found_any


def test_truncate_strictly_shortens():
    for seed in range(40):
        fs = SimFs()
        fs.mkdir("d")
        original = generate_synthetic(seed, 4096, Dtype.F32).payload
        write_unsafe(fs, "d/f", original)
        record = inject_truncate(fs, "d/f", seed=seed)
        after = fs.read_bytes("d/f")
        assert len(after) == record.offset < len(original)
        assert after == original[: len(after)]
        assert record.length == len(original) - len(after)


def test_injectors_refuse_empty_files():
    fs = SimFs()
    fs.mkdir("d")
    write_unsafe(fs, "d/f", b"")
    for name in ("bitflip", "zerorange", "truncate"):
        with pytest.raises(ValueError):
            inject(fs, "d/f", name, seed=1)


def test_inject_dispatch():
    fs = _one_byte_fs()
    assert inject(fs, "d/f", "none", seed=1) is None
    assert inject(fs, "d/f", "bitflip", seed=13).kind == "bitflip"
    with pytest.raises(ValueError):
        inject(fs, "d/f", "gamma_ray", seed=1)


def _committed_group(seed):
    fs = SimFs(seed=seed)
    parts = [
        ("model.ckt", generate_synthetic(seed, 2048, Dtype.F32)),
        ("optimizer.ckt", generate_synthetic(seed + 1, 1024, Dtype.F32)),
        ("rng.ckt", generate_synthetic(seed + 2, 256, Dtype.F32)),
    ]
    write_group(fs, "g", parts, WriteMode.ATOMIC_NODIRSYNC, epoch=1, seed=seed)
    return fs


def test_bitflip_on_committed_part_is_always_detected():
    for seed in range(30):
        fs = _committed_group(seed)
        inject_bitflip(fs, "g/model.ckt", seed=1000 + seed)
        report = validate_group(fs, "g")
        assert not report.valid
        assert DetectionMechanism.FILE_SHA in report.mechanisms


def test_truncate_on_committed_part_is_always_detected():
    for seed in range(30):
        fs = _committed_group(seed)
        inject_truncate(fs, "g/optimizer.ckt", seed=2000 + seed)
        report = validate_group(fs, "g")
        assert not report.valid
        assert DetectionMechanism.LOAD in report.mechanisms
        assert DetectionMechanism.FILE_SHA in report.mechanisms


def test_changed_zerorange_on_committed_part_is_always_detected():
    for seed in range(30):
        fs = _committed_group(seed)
        record = inject_zerorange(fs, "g/model.ckt", seed=3000 + seed, verify_changed=True)
        assert record.bytes_actually_changed
        assert not validate_group(fs, "g").valid


def test_unverified_zerorange_can_miss_by_landing_on_zero_bytes():
    # seed 3562 draws offset 11, length 1 for the 279-byte rng part:
    # a byte inside the little-endian dims field that is already zero.
    # The file is untouched, so every check still passes. This is the
    # miss channel that keeps unverified zerorange below 100% detection.
    fs = _committed_group(7)
    record = inject_zerorange(fs, "g/rng.ckt", seed=3562, verify_changed=False)
    assert (record.offset, record.length) == (11, 1)
    assert not record.bytes_actually_changed
    assert validate_group(fs, "g").valid


def test_default_schedule_expands_to_830_unique_increasing_seeds():
    specs = crash_point_schedule()
    assert len(specs) == 830
    seeds = [s.seed for s in specs]
    assert seeds == sorted(seeds)
    assert len(set(seeds)) == len(seeds)
    by_condition: dict[tuple, int] = {}
    for s in specs:
        by_condition[(s.mode, s.crash_point)] = by_condition.get((s.mode, s.crash_point), 0) + 1
    assert by_condition == {
        (WriteMode.UNSAFE, "after_model"): 400,
        (WriteMode.UNSAFE, "before_manifest"): 10,
        (WriteMode.UNSAFE, "manifest_partial"): 10,
        (WriteMode.UNSAFE, "before_commit"): 10,
        (WriteMode.ATOMIC_DIRSYNC, None): 400,
    }
    assert DEFAULT_CRASH_PLAN[0][2] == 400


def test_schedule_edge_cases():
    assert crash_point_schedule(plan=()) == []
    custom = crash_point_schedule(plan=((WriteMode.UNSAFE, "before_commit", 3),), base_seed=50)
    assert custom == [
        CrashTrialSpec(WriteMode.UNSAFE, "before_commit", 50),
        CrashTrialSpec(WriteMode.UNSAFE, "before_commit", 51),
        CrashTrialSpec(WriteMode.UNSAFE, "before_commit", 52),
    ]
    with pytest.raises(ValueError):
        crash_point_schedule(plan=((WriteMode.UNSAFE, "at_teatime", 1),))
