"""Percentiles, binomial confidence intervals, and report generation.

Reports regenerate three tables from the harness CSVs: latency
percentiles with overhead versus the unsafe baseline, crash-trial OK
rates with 95% intervals, and corruption detection rates broken down
by the mechanism that caught each fault. Plots are plain hand-written
SVG so the output diffs cleanly and needs no plotting stack.

Interval methods: Clopper-Pearson (exact, the default) and Wilson
score with z = 1.96. The exact method is the default because its
rounded endpoints are the ones the replication targets expect; the
report footnote names the method used.
"""
from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

from scipy.stats import beta

from .faults import CRASH_POINT_NAMES, FAULT_KINDS

WILSON_Z = 1.96

MODE_ORDER = ("unsafe", "atomic_nodirsync", "atomic_dirsync")

TABLE1_HEADER = ("mode", "p50_ms", "p90_ms", "p99_ms", "p50_ovh_pct", "p99_ovh_pct")
TABLE2_HEADER = ("condition", "ok", "total", "ok_rate_pct", "ci_lo_pct", "ci_hi_pct")
TABLE3_HEADER = ("fault", "total", "detected", "rate_pct", "mech_load", "mech_digest", "mech_file_sha")
TIMELINE_HEADER = ("unix_s", "tps", "events")
SAMPLER_HEADER = ("unix_s", "tps")


class SchemaMismatch(ValueError):
    """An input CSV does not carry the expected header."""


class UnsortedInput(ValueError):
    """Timestamps in a timeline input went backwards."""


class UnsupportedPlatform(RuntimeError):
    """No readable disk-statistics source on this system."""


class SamplerParseError(ValueError):
    """The platform disk-statistics source had an unreadable line."""


def percentile(values, q: float) -> float:
    """Linear-interpolation percentile at fraction q.

    Sorts ascending and evaluates rank r = q * (n - 1): the value at
    floor(r), plus the fractional part times the step to the next
    value.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0, 1], got {q}")
    data = sorted(values)
    if not data:
        raise ValueError("empty input")
    r = q * (len(data) - 1)
    lo = math.floor(r)
    frac = r - lo
    if lo + 1 < len(data):
        return data[lo] + frac * (data[lo + 1] - data[lo])
    return data[-1]


@dataclass(frozen=True)
class ProportionCI:
    k: int
    n: int
    rate: float
    lo: float
    hi: float
    method: str


def binomial_ci(k: int, n: int, method: str = "exact") -> ProportionCI:
    """95% confidence interval for a binomial proportion.

    exact: Clopper-Pearson through the Beta-quantile relation.
    wilson: Wilson score interval with z = 1.96.
    k = 0 forces lo = 0 and k = n forces hi = 1 in both methods.
    """
    if n < 1 or not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n with n >= 1, got k={k} n={n}")
    p = k / n
    if method == "exact":
        lo = float(beta.ppf(0.025, k, n - k + 1)) if k > 0 else 0.0
        hi = float(beta.ppf(0.975, k + 1, n - k)) if k < n else 1.0
    elif method == "wilson":
        z = WILSON_Z
        denom = 1.0 + z * z / n
        center = (p + z * z / (2 * n)) / denom
        half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom
        lo = 0.0 if k == 0 else max(0.0, center - half)
        hi = 1.0 if k == n else min(1.0, center + half)
    else:
        raise ValueError(f"unknown CI method: {method!r}")
    return ProportionCI(k, n, p, lo, hi, method)


def overhead(mode_ms: float, baseline_ms: float) -> float:
    """Relative slowdown versus the baseline, in percent."""
    if baseline_ms <= 0:
        raise ValueError("baseline latency must be positive")
    return (mode_ms - baseline_ms) / baseline_ms * 100.0


def _sig3(x: float) -> str:
    """Three significant digits, plain decimal notation."""
    if x == 0:
        return "0.00"
    exp = math.floor(math.log10(abs(x)))
    ndigits = 2 - exp
    y = round(x, ndigits)
    if y != 0:
        exp2 = math.floor(math.log10(abs(y)))
        if exp2 != exp:
            ndigits = 2 - exp2
            y = round(x, ndigits)
    return f"{y:.{max(0, ndigits)}f}"


def _pct1(fraction_or_pct: float) -> str:
    return f"{fraction_or_pct:.1f}"


def _read_rows(path, expected_header) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file, expected header {expected_header}")
        if header != tuple(expected_header):
            raise SchemaMismatch(f"{path}: header {header} != expected {expected_header}")
        return [dict(zip(header, row)) for row in reader]


def _write_csv(path: Path, header, rows) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return str(path)


# --------------------------------------------------------------- tables


def _latency_table(bench_rows) -> list[tuple[str, ...]]:
    by_mode: dict[str, list[float]] = {}
    for row in bench_rows:
        by_mode.setdefault(row["mode"], []).append(int(row["latency_ns"]) / 1e6)
    if not by_mode:
        return []
    order = [m for m in MODE_ORDER if m in by_mode]
    order += sorted(m for m in by_mode if m not in MODE_ORDER)
    pcts = {m: tuple(percentile(v, q) for q in (0.50, 0.90, 0.99)) for m, v in by_mode.items()}
    baseline = pcts.get("unsafe")
    out = []
    for mode in order:
        p50, p90, p99 = pcts[mode]
        if baseline is not None:
            ovh50 = _pct1(overhead(p50, baseline[0]))
            ovh99 = _pct1(overhead(p99, baseline[2]))
        else:
            ovh50 = ovh99 = ""
        out.append((mode, _sig3(p50), _sig3(p90), _sig3(p99), ovh50, ovh99))
    return out


def _condition_name(mode: str, point: str, ambiguous: set[str]) -> str:
    family = mode.split("_")[0]
    return f"{mode}@{point}" if family in ambiguous else f"{family}@{point}"


def _crash_table(crash_rows, ci_method: str) -> list[tuple[str, ...]]:
    counts: dict[tuple[str, str], list[int]] = {}
    for row in crash_rows:
        key = (row["mode"], row["crash_point"])
        tally = counts.setdefault(key, [0, 0])
        tally[0] += int(row["ok"])
        tally[1] += 1
    families: dict[str, set[str]] = {}
    for mode, _ in counts:
        families.setdefault(mode.split("_")[0], set()).add(mode)
    ambiguous = {fam for fam, modes in families.items() if len(modes) > 1}

    def sort_key(item):
        (mode, point), _ = item
        family_rank = 0 if mode.split("_")[0] == "atomic" else 1
        point_rank = CRASH_POINT_NAMES.index(point) if point in CRASH_POINT_NAMES else -1
        return (family_rank, point_rank, mode, point)

    out = []
    for (mode, point), (ok, total) in sorted(counts.items(), key=sort_key):
        ci = binomial_ci(ok, total, ci_method)
        out.append(
            (
                _condition_name(mode, point, ambiguous),
                str(ok),
                str(total),
                _pct1(ci.rate * 100),
                _pct1(ci.lo * 100),
                _pct1(ci.hi * 100),
            )
        )
    return out


def _detection_table(corrupt_rows) -> list[tuple[str, ...]]:
    agg: dict[str, list[int]] = {}
    for row in corrupt_rows:
        tally = agg.setdefault(row["fault"], [0, 0, 0, 0, 0])
        tally[0] += 1
        tally[1] += int(row["detected"])
        tally[2] += int(row["mech_load"])
        tally[3] += int(row["mech_digest"])
        tally[4] += int(row["mech_file_sha"])
    order = [k for k in FAULT_KINDS if k in agg] + sorted(k for k in agg if k not in FAULT_KINDS)
    out = []
    for fault in order:
        total, detected, load, digest, file_sha = agg[fault]
        out.append(
            (
                fault,
                str(total),
                str(detected),
                _pct1(detected / total * 100),
                str(load),
                str(digest),
                str(file_sha),
            )
        )
    return out


def _render_text_table(title: str, header, rows, empty_note: str) -> str:
    lines = [title, "-" * len(title)]
    if not rows:
        lines.append(empty_note)
        lines.append("")
        return "\n".join(lines)
    cells = [tuple(header)] + [tuple(r) for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------- plots


def _svg_document(width: int, height: int, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    style = (
        "<style>text{font-family:monospace;font-size:11px;fill:#222}"
        ".axis{stroke:#222;stroke-width:1}.grid{stroke:#ddd;stroke-width:1}</style>"
    )
    return "\n".join([head, style, *body, "</svg>"]) + "\n"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _bar_chart(path: Path, title: str, labels, series, series_names, whiskers=None) -> str:
    """Grouped vertical bars; series is a list per series of values by
    label. Optional whiskers: (lo, hi) pairs aligned with the first
    series, drawn as error bars."""
    width, height = 640, 360
    left, right, top, bottom = 60, 20, 40, 70
    plot_w, plot_h = width - left - right, height - top - bottom
    peak = max((v for vals in series for v in vals), default=0.0)
    if whiskers:
        peak = max(peak, max(hi for _, hi in whiskers))
    peak = peak or 1.0
    fills = ("#4878a8", "#e49444", "#67a868")

    body = [f'<text x="{left}" y="20">{_esc(title)}</text>']
    for i in range(5):
        frac = i / 4
        y = top + plot_h * (1 - frac)
        body.append(f'<line class="grid" x1="{left}" y1="{y:.1f}" x2="{width - right}" y2="{y:.1f}"/>')
        body.append(f'<text x="4" y="{y + 4:.1f}">{_sig3(peak * frac)}</text>')
    slot = plot_w / max(1, len(labels))
    bar_w = slot * 0.8 / max(1, len(series))
    for li, label in enumerate(labels):
        for si, vals in enumerate(series):
            v = vals[li]
            h = plot_h * v / peak
            x = left + li * slot + slot * 0.1 + si * bar_w
            y = top + plot_h - h
            body.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" height="{h:.1f}" '
                f'fill="{fills[si % len(fills)]}"/>'
            )
        if whiskers:
            lo, hi = whiskers[li]
            cx = left + li * slot + slot * 0.1 + bar_w / 2
            y_lo = top + plot_h * (1 - lo / peak)
            y_hi = top + plot_h * (1 - hi / peak)
            body.append(f'<line class="axis" x1="{cx:.1f}" y1="{y_lo:.1f}" x2="{cx:.1f}" y2="{y_hi:.1f}"/>')
            for yy in (y_lo, y_hi):
                body.append(f'<line class="axis" x1="{cx - 4:.1f}" y1="{yy:.1f}" x2="{cx + 4:.1f}" y2="{yy:.1f}"/>')
        lx = left + li * slot + slot / 2
        body.append(
            f'<text x="{lx:.1f}" y="{height - bottom + 16}" '
            f'transform="rotate(30 {lx:.1f} {height - bottom + 16})">{_esc(label)}</text>'
        )
    for si, name in enumerate(series_names):
        x = left + si * 140
        y = height - 14
        body.append(f'<rect x="{x}" y="{y - 10}" width="10" height="10" fill="{fills[si % len(fills)]}"/>')
        body.append(f'<text x="{x + 14}" y="{y}">{_esc(name)}</text>')
    body.append(
        f'<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}"/>'
    )
    body.append(
        f'<line class="axis" x1="{left}" y1="{top + plot_h}" x2="{width - right}" y2="{top + plot_h}"/>'
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_svg_document(width, height, body), encoding="utf-8")
    return str(path)


def make_report(
    bench_csv=None,
    crash_csv=None,
    corrupt_csv=None,
    *,
    out_dir,
    ci_method: str = "exact",
) -> dict[str, str]:
    """Regenerate the three result tables plus plots from harness CSVs.

    Any input may be None or empty; the matching table is emitted with
    a header only and the text report notes the gap. Identical inputs
    produce byte-identical outputs.
    """
    out = Path(out_dir)
    bench_rows = _read_rows(bench_csv, ("experiment", "mode", "seed", "epoch", "latency_ns", "ok")) if bench_csv else []
    crash_rows = _read_rows(crash_csv, ("experiment", "mode", "crash_point", "trial", "ok", "reason")) if crash_csv else []
    corrupt_rows = (
        _read_rows(
            corrupt_csv,
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
        )
        if corrupt_csv
        else []
    )

    t1 = _latency_table(bench_rows)
    t2 = _crash_table(crash_rows, ci_method)
    t3 = _detection_table(corrupt_rows)

    paths = {
        "table1": _write_csv(out / "table1.csv", TABLE1_HEADER, t1),
        "table2": _write_csv(out / "table2.csv", TABLE2_HEADER, t2),
        "table3": _write_csv(out / "table3.csv", TABLE3_HEADER, t3),
    }

    method_note = (
        "95% intervals: Clopper-Pearson (exact)."
        if ci_method == "exact"
        else "95% intervals: Wilson score, z = 1.96."
    )
    text = [
        "Checkpoint experiment report",
        "============================",
        "",
        _render_text_table(
            "Latency percentiles (ms) and overhead vs unsafe",
            TABLE1_HEADER,
            t1,
            "no benchmark rows",
        ),
        _render_text_table(
            "Crash-trial outcomes", TABLE2_HEADER, t2, "no crash trials"
        ),
        _render_text_table(
            "Corruption detection by fault", TABLE3_HEADER, t3, "no corruption trials"
        ),
        method_note,
        "Both methods are implemented; select with ci_method=exact|wilson.",
        "",
    ]
    report_path = out / "report.txt"
    report_path.write_text("\n".join(text), encoding="utf-8")
    paths["report"] = str(report_path)

    if t1:
        paths["latency_plot"] = _bar_chart(
            out / "latency_bars.svg",
            "Group checkpoint latency (ms)",
            [r[0] for r in t1],
            [[float(r[1]) for r in t1], [float(r[2]) for r in t1], [float(r[3]) for r in t1]],
            ["p50", "p90", "p99"],
        )
    if t2:
        paths["crash_plot"] = _bar_chart(
            out / "crash_bars.svg",
            "Crash-trial OK rate (%) with 95% CI",
            [r[0] for r in t2],
            [[float(r[3]) for r in t2]],
            ["ok rate"],
            whiskers=[(float(r[4]), float(r[5])) for r in t2],
        )
    if t3:
        whisk = []
        for r in t3:
            ci = binomial_ci(int(r[2]), int(r[1]), ci_method)
            whisk.append((ci.lo * 100, ci.hi * 100))
        paths["detection_plot"] = _bar_chart(
            out / "detection_bars.svg",
            "Corruption detection rate (%) with 95% CI",
            [r[0] for r in t3],
            [[float(r[3]) for r in t3]],
            ["detected"],
            whiskers=whisk,
        )
    return paths


# -------------------------------------------------------------- timeline


def merge_timeline(sampler_csv, events_csv, *, out_csv, out_svg=None) -> str:
    """Bucket checkpoint events into sampler seconds.

    Emits one row per second with the sampled device transactions per
    second and the number of events in that second. Seconds that have
    events but no sample get synthesized rows with tps = 0 plus a
    warning. Duplicate sampler seconds are averaged. Event counts are
    conserved: the events column sums to the number of input events.
    """
    sampler_rows = _read_rows(sampler_csv, SAMPLER_HEADER)
    event_rows = _read_rows(events_csv, ("unix_ns", "event", "group_path"))

    tps_sum: dict[int, list[float]] = {}
    prev = None
    for row in sampler_rows:
        s = int(row["unix_s"])
        if prev is not None and s < prev:
            raise UnsortedInput(f"sampler goes backwards at unix_s={s}")
        prev = s
        tps_sum.setdefault(s, []).append(float(row["tps"]))

    prev = None
    event_counts: dict[int, int] = {}
    for row in event_rows:
        ns = int(row["unix_ns"])
        if prev is not None and ns < prev:
            raise UnsortedInput(f"events go backwards at unix_ns={ns}")
        prev = ns
        s = ns // 1_000_000_000
        event_counts[s] = event_counts.get(s, 0) + 1

    synthesized = sorted(set(event_counts) - set(tps_sum))
    if synthesized:
        warnings.warn(
            f"{len(synthesized)} event second(s) had no sampler row; synthesized tps=0",
            stacklevel=2,
        )

    rows = []
    for s in sorted(set(tps_sum) | set(event_counts)):
        samples = tps_sum.get(s)
        tps = sum(samples) / len(samples) if samples else 0.0
        rows.append((s, f"{tps:g}", event_counts.get(s, 0)))
    path = _write_csv(Path(out_csv), TIMELINE_HEADER, rows)

    if out_svg is not None:
        _timeline_svg(Path(out_svg), rows)
    return path


def _timeline_svg(path: Path, rows) -> str:
    width, height = 720, 280
    left, right, top, bottom = 60, 20, 30, 40
    plot_w, plot_h = width - left - right, height - top - bottom
    seconds = [int(r[0]) for r in rows]
    tps = [float(r[1]) for r in rows]
    span = max(1, (seconds[-1] - seconds[0])) if seconds else 1
    peak = max(tps, default=0.0) or 1.0

    def x_of(s):
        return left + plot_w * (s - seconds[0]) / span

    def y_of(v):
        return top + plot_h * (1 - v / peak)

    body = [f'<text x="{left}" y="18">Disk transactions per second with checkpoint events</text>']
    for s, v, count in ((int(r[0]), float(r[1]), int(r[2])) for r in rows):
        if count:
            body.append(
                f'<line x1="{x_of(s):.1f}" y1="{top}" x2="{x_of(s):.1f}" y2="{top + plot_h}" '
                f'stroke="#c0504d" stroke-width="1" stroke-dasharray="3,2"/>'
            )
    if rows:
        points = " ".join(f"{x_of(s):.1f},{y_of(v):.1f}" for s, v in zip(seconds, tps))
        body.append(f'<polyline points="{points}" fill="none" stroke="#4878a8" stroke-width="1.5"/>')
    body.append(f'<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}"/>')
    body.append(
        f'<line class="axis" x1="{left}" y1="{top + plot_h}" x2="{width - right}" y2="{top + plot_h}"/>'
    )
    body.append(f'<text x="4" y="{top + 4}">{_sig3(peak)}</text>')
    body.append(f'<text x="4" y="{top + plot_h}">0</text>')
    path.write_text(_svg_document(width, height, body), encoding="utf-8")
    return str(path)


# --------------------------------------------------------------- sampler


_DISKSTATS = "/proc/diskstats"


def _device_completed_ios(diskstats_text: str) -> int:
    """Sum completed reads and writes across physical devices.

    Skips loop, ram, zram, and dm virtual devices, and partitions
    (a name that extends another device name by p-digits or digits).
    """
    per_dev: dict[str, int] = {}
    for line in diskstats_text.splitlines():
        fields = line.split()
        if len(fields) < 10:
            raise SamplerParseError(f"short diskstats line: {line!r}")
        name = fields[2]
        try:
            reads, writes = int(fields[3]), int(fields[7])
        except ValueError as exc:
            raise SamplerParseError(f"bad counters in line: {line!r}") from exc
        per_dev[name] = reads + writes
    total = 0
    names = set(per_dev)
    for name, ios in per_dev.items():
        if name.startswith(("loop", "ram", "zram", "dm-")):
            continue
        is_partition = any(
            other != name
            and name.startswith(other)
            and name[len(other) :].lstrip("p").isdigit()
            for other in names
        )
        if is_partition:
            continue
        total += ios
    return total


def sample_disk_activity(seconds: float, *, out_csv, interval: float = 1.0) -> str:
    """Sample device transactions per second from the kernel counters.

    Takes floor(seconds / interval) samples; each row is the mean
    completed-I/O rate over one interval. Raises UnsupportedPlatform
    where the counters are not readable.
    """
    if seconds <= 0 or interval <= 0:
        raise ValueError("seconds and interval must be positive")
    stats_path = Path(_DISKSTATS)
    try:
        prev = _device_completed_ios(stats_path.read_text())
    except OSError as exc:
        raise UnsupportedPlatform(f"cannot read {stats_path}: {exc}") from exc
    rows = []
    for _ in range(max(1, int(seconds / interval))):
        time.sleep(interval)
        curr = _device_completed_ios(stats_path.read_text())
        rows.append((int(time.time()), f"{(curr - prev) / interval:g}"))
        prev = curr
    return _write_csv(Path(out_csv), SAMPLER_HEADER, rows)
