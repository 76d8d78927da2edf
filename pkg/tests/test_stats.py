"""Percentile/CI math against oracles, report generation, timeline merge."""
from __future__ import annotations

import csv
import math
import random
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

import ckptguard.stats as stats
from ckptguard.stats import (
    SchemaMismatch,
    UnsortedInput,
    UnsupportedPlatform,
    binomial_ci,
    make_report,
    merge_timeline,
    overhead,
    percentile,
    sample_disk_activity,
)


def test_percentile_fixed_points():
    assert percentile([1, 2, 3, 4], 0.5) == 2.5
    assert abs(percentile(range(1, 11), 0.99) - 9.91) < 1e-12
    data = [9.0, 1.0, 5.0]
    assert percentile(data, 0.0) == 1.0
    assert percentile(data, 1.0) == 9.0
    with pytest.raises(ValueError):
        percentile([], 0.5)
    with pytest.raises(ValueError):
        percentile([1.0], 1.5)


def test_percentile_matches_numpy_on_random_lists():
    rng = random.Random(42)
    for _ in range(1000):
        n = rng.randint(1, 50)
        values = [rng.uniform(-1e6, 1e6) for _ in range(n)]
        q = rng.random()
        mine = percentile(values, q)
        ref = float(np.percentile(values, q * 100))
        assert math.isclose(mine, ref, rel_tol=1e-12, abs_tol=1e-9)


def test_exact_ci_reproduces_frozen_digits():
    assert f"{binomial_ci(0, 400).hi * 100:.1f}" == "0.9"
    assert f"{binomial_ci(400, 400).lo * 100:.1f}" == "99.1"
    assert f"{binomial_ci(0, 10).hi * 100:.1f}" == "30.8"


def test_wilson_ci_uses_z_196():
    ci = binomial_ci(0, 400, "wilson")
    z = 1.96
    assert abs(ci.hi - z * z / (400 + z * z)) < 1e-12
    assert abs(ci.hi - 0.00951264) < 1e-8
    assert ci.lo == 0.0


def test_ci_endpoint_forcing_and_bounds():
    for method in ("exact", "wilson"):
        assert binomial_ci(0, 17, method).lo == 0.0
        assert binomial_ci(17, 17, method).hi == 1.0
        for k in range(0, 18):
            ci = binomial_ci(k, 17, method)
            assert 0.0 <= ci.lo <= ci.rate <= ci.hi <= 1.0


def test_ci_upper_bound_monotone_in_k():
    for method in ("exact", "wilson"):
        his = [binomial_ci(k, 30, method).hi for k in range(31)]
        assert his == sorted(his)


def _cp_bounds(k, n, alpha=0.05):
    """Clopper-Pearson by bisecting binomial tail probabilities."""

    def solve(pred):
        lo, hi = 0.0, 1.0
        for _ in range(200):
            mid = (lo + hi) / 2
            if pred(mid):
                lo = mid
            else:
                hi = mid
        return (lo + hi) / 2

    lower = 0.0
    if k > 0:
        lower = solve(
            lambda p: sum(math.comb(n, i) * p**i * (1 - p) ** (n - i) for i in range(k, n + 1))
            < alpha / 2
        )
    upper = 1.0
    if k < n:
        upper = solve(
            lambda p: sum(math.comb(n, i) * p**i * (1 - p) ** (n - i) for i in range(k + 1))
            > alpha / 2
        )
    return lower, upper


def test_exact_ci_agrees_with_tail_bisection():
    for k, n in [(0, 10), (3, 10), (7, 23), (399, 400), (400, 400)]:
        lo, hi = _cp_bounds(k, n)
        ci = binomial_ci(k, n)
        assert abs(ci.lo - lo) < 1e-9
        assert abs(ci.hi - hi) < 1e-9


def test_ci_rejects_bad_input():
    with pytest.raises(ValueError):
        binomial_ci(5, 0)
    with pytest.raises(ValueError):
        binomial_ci(11, 10)
    with pytest.raises(ValueError):
        binomial_ci(1, 10, "bayes")


def test_overhead():
    assert abs(overhead(3.87, 2.47) - 56.68) < 0.01
    assert abs(overhead(20.27, 3.02) - 571.19) < 0.01
    assert overhead(7.7, 7.7) == 0.0
    with pytest.raises(ValueError):
        overhead(1.0, 0.0)


def test_three_significant_digits_formatting():
    cases = {
        3.8712: "3.87",
        20.27: "20.3",
        123.4: "123",
        0.0045678: "0.00457",
        0.0: "0.00",
        1234.0: "1230",
    }
    for value, text in cases.items():
        assert stats._sig3(value) == text


# ------------------------------------------------------------ reporting


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return str(path)


def _fixture_csvs(root: Path):
    bench = _write(
        root / "bench.csv",
        ("experiment", "mode", "seed", "epoch", "latency_ns", "ok"),
        [("bench", "unsafe", 1, e, ms * 1_000_000, 1) for e, ms in enumerate([1, 2, 3, 4])]
        + [("bench", "atomic_dirsync", 1, e, ms * 1_000_000, 1) for e, ms in enumerate([2, 4, 6, 8])],
    )
    crash = _write(
        root / "crash.csv",
        ("experiment", "mode", "crash_point", "trial", "ok", "reason"),
        [("crash", "unsafe", "after_model", t, 0, "size_mismatch") for t in range(400)]
        + [("crash", "atomic_dirsync", "none", t, 1, "") for t in range(10)],
    )
    corrupt = _write(
        root / "corrupt.csv",
        (
            "experiment",
            "fault",
            "trial",
            "detected",
            "reason",
            "mech_load",
            "mech_digest",
            "mech_file_sha",
            "mech_structural",
        ),
        [("corrupt", "bitflip", t, 1, "digest_mismatch", 0, 1, 1, 0) for t in range(3)]
        + [("corrupt", "none", t, 0, "", 0, 0, 0, 0) for t in range(3)],
    )
    return bench, crash, corrupt


def test_make_report_tables_and_plots(tmp_path):
    bench, crash, corrupt = _fixture_csvs(tmp_path)
    paths = make_report(bench, crash, corrupt, out_dir=tmp_path / "out")

    table2 = Path(paths["table2"]).read_text().splitlines()
    assert table2[0] == "condition,ok,total,ok_rate_pct,ci_lo_pct,ci_hi_pct"
    assert table2[1] == "atomic@none,10,10,100.0,69.2,100.0"
    assert table2[2] == "unsafe@after_model,0,400,0.0,0.0,0.9"

    table1 = Path(paths["table1"]).read_text().splitlines()
    assert table1[1].startswith("unsafe,2.50,")
    assert table1[1].endswith(",0.0,0.0")
    assert table1[2].startswith("atomic_dirsync,5.00,")
    assert table1[2].endswith(",100.0,100.0")

    table3 = Path(paths["table3"]).read_text().splitlines()
    assert table3[1] == "bitflip,3,3,100.0,0,3,3"
    assert table3[2] == "none,3,0,0.0,0,0,0"

    report = Path(paths["report"]).read_text()
    assert "Clopper-Pearson" in report
    assert "unsafe@after_model" in report

    for key in ("latency_plot", "crash_plot", "detection_plot"):
        svg = Path(paths[key]).read_text()
        root = ET.fromstring(svg)
        assert root.tag.endswith("svg")


def test_make_report_is_byte_deterministic(tmp_path):
    bench, crash, corrupt = _fixture_csvs(tmp_path)
    first = make_report(bench, crash, corrupt, out_dir=tmp_path / "a")
    second = make_report(bench, crash, corrupt, out_dir=tmp_path / "b")
    for key in first:
        assert Path(first[key]).read_bytes() == Path(second[key]).read_bytes()


def test_make_report_tolerates_missing_inputs(tmp_path):
    bench, crash, _ = _fixture_csvs(tmp_path)
    paths = make_report(bench, crash, None, out_dir=tmp_path / "out")
    assert Path(paths["table3"]).read_text().splitlines() == [
        "fault,total,detected,rate_pct,mech_load,mech_digest,mech_file_sha"
    ]
    assert "no corruption trials" in Path(paths["report"]).read_text()
    assert "detection_plot" not in paths


def test_make_report_rejects_wrong_schema(tmp_path):
    bad = _write(tmp_path / "bench.csv", ("mode", "latency_ns"), [("unsafe", 5)])
    with pytest.raises(SchemaMismatch):
        make_report(bad, None, None, out_dir=tmp_path / "out")


def test_condition_names_keep_mode_when_family_is_ambiguous(tmp_path):
    crash = _write(
        tmp_path / "crash.csv",
        ("experiment", "mode", "crash_point", "trial", "ok", "reason"),
        [
            ("crash", "atomic_dirsync", "none", 0, 1, ""),
            ("crash", "atomic_nodirsync", "none", 1, 1, ""),
        ],
    )
    paths = make_report(None, crash, None, out_dir=tmp_path / "out")
    lines = Path(paths["table2"]).read_text().splitlines()
    conditions = {line.split(",")[0] for line in lines[1:]}
    assert conditions == {"atomic_dirsync@none", "atomic_nodirsync@none"}


# ------------------------------------------------------------- timeline


def _timeline_inputs(root: Path, ns_offsets, base_s=1_700_000_000, seconds=60):
    sampler = _write(
        root / "sampler.csv",
        ("unix_s", "tps"),
        [(base_s + i, 10 + (i % 7)) for i in range(seconds)],
    )
    events = _write(
        root / "events.csv",
        ("unix_ns", "event", "group_path"),
        [
            (int((base_s + off) * 1e9) + 500, "checkpoint_committed", f"g/ckpt-{i:06d}")
            for i, off in enumerate(ns_offsets)
        ],
    )
    return sampler, events


def test_merge_timeline_conserves_events(tmp_path):
    sampler, events = _timeline_inputs(tmp_path, [3, 10, 10, 30, 59])
    out = merge_timeline(sampler, events, out_csv=tmp_path / "timeline.csv", out_svg=tmp_path / "t.svg")
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 60
    assert sum(int(r["events"]) for r in rows) == 5
    by_s = {int(r["unix_s"]): int(r["events"]) for r in rows}
    assert by_s[1_700_000_010] == 2
    root = ET.fromstring((tmp_path / "t.svg").read_text())
    assert root.tag.endswith("svg")


def test_merge_timeline_synthesizes_missing_seconds(tmp_path):
    sampler, events = _timeline_inputs(tmp_path, [3, 70])  # 70 is past the capture
    with pytest.warns(UserWarning, match="synthesized"):
        out = merge_timeline(sampler, events, out_csv=tmp_path / "timeline.csv")
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 61
    synthetic = [r for r in rows if int(r["unix_s"]) == 1_700_000_070]
    assert synthetic and synthetic[0]["tps"] == "0" and synthetic[0]["events"] == "1"


def test_merge_timeline_rejects_unsorted(tmp_path):
    sampler = _write(tmp_path / "s.csv", ("unix_s", "tps"), [(10, 1), (9, 1)])
    events = _write(tmp_path / "e.csv", ("unix_ns", "event", "group_path"), [])
    with pytest.raises(UnsortedInput):
        merge_timeline(sampler, events, out_csv=tmp_path / "t.csv")
    sampler2 = _write(tmp_path / "s2.csv", ("unix_s", "tps"), [(10, 1)])
    events2 = _write(
        tmp_path / "e2.csv",
        ("unix_ns", "event", "group_path"),
        [(2_000_000_000, "a", "p"), (1_000_000_000, "b", "p")],
    )
    with pytest.raises(UnsortedInput):
        merge_timeline(sampler2, events2, out_csv=tmp_path / "t.csv")


# -------------------------------------------------------------- sampler


DISKSTATS_FIXTURE = """\
 252       0 vda 100 0 800 50 200 0 1600 70 0 120 90 0 0 0 0 0 0
 252       1 vda1 90 0 700 45 150 0 1200 60 0 100 80 0 0 0 0 0 0
 259       0 nvme0n1 10 0 80 5 20 0 160 7 0 12 9 0 0 0 0 0 0
 259       1 nvme0n1p1 5 0 40 2 10 0 80 3 0 6 4 0 0 0 0 0 0
   7       0 loop0 1000 0 8000 1 1000 0 8000 1 0 1 1 0 0 0 0 0 0
   1       0 ram0 50 0 400 1 50 0 400 1 0 1 1 0 0 0 0 0 0
 253       0 dm-0 60 0 480 1 60 0 480 1 0 1 1 0 0 0 0 0 0
"""


def test_device_counter_parsing_excludes_virtual_and_partitions():
    # vda 100+200 plus nvme0n1 10+20; partitions and virtual devices skipped
    assert stats._device_completed_ios(DISKSTATS_FIXTURE) == 330
    with pytest.raises(stats.SamplerParseError):
        stats._device_completed_ios("8 0 sda 1 2\n")


def test_sample_disk_activity_smoke(tmp_path):
    if not Path("/proc/diskstats").exists():
        pytest.skip("no /proc/diskstats on this platform")
    out = sample_disk_activity(0.3, out_csv=tmp_path / "io.csv", interval=0.1)
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert 2 <= len(rows) <= 4
    assert all(float(r["tps"]) >= 0 for r in rows)


def test_sample_disk_activity_unsupported(tmp_path, monkeypatch):
    monkeypatch.setattr(stats, "_DISKSTATS", str(tmp_path / "absent"))
    with pytest.raises(UnsupportedPlatform):
        sample_disk_activity(0.2, out_csv=tmp_path / "io.csv", interval=0.1)
