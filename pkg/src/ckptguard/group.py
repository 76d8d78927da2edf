"""Checkpoint groups: a multi-file transaction with manifest and commit.

A group directory holds three part files (model.ckt, optimizer.ckt,
rng.ckt), a MANIFEST.json listing each part's size, file hash and
content digest, and a COMMIT.json whose manifest_sha256 seals the exact
manifest bytes on disk. A group counts as committed only when that seal
matches; everything before the commit record lands is provisional.

Write order is parts, then manifest, then commit. When a writer reuses
a directory that already holds a committed group (unsafe in-place
refresh, as the crash trials do), the stale COMMIT.json is deleted
right before the new manifest is written: a crash earlier than that
leaves the old, still-consistent metadata pair in place, and a crash
after it can only look like a missing or mismatched commit, never like
a committed group with wrong contents.
"""
from __future__ import annotations

import hashlib
import json
import posixpath
import re
import time
from dataclasses import dataclass

from . import protocols
from .payload import TensorBlob, encode_container, tensor_digest
from .protocols import WriteMode, WriteReceipt, install_bytes

MANIFEST_NAME = "MANIFEST.json"
COMMIT_NAME = "COMMIT.json"
PART_NAMES = ("model.ckt", "optimizer.ckt", "rng.ckt")
MANIFEST_VERSION = 1
CRASH_POINTS = ("after_model", "before_manifest", "manifest_partial", "before_commit")

_EPOCH_DIR = re.compile(r"^ckpt-(\d{6})$")


def canonical_json(value) -> bytes:
    """UTF-8 JSON with bytewise-sorted keys, compact separators, one line.

    Only str, int, bool, None, list and dict are allowed; floats would
    not round-trip to stable bytes and are rejected.
    """
    _check_canonical(value)
    return json.dumps(
        value, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def _check_canonical(value) -> None:
    if isinstance(value, bool) or value is None or isinstance(value, (str, int)):
        return
    if isinstance(value, float):
        raise TypeError("floats are not canonical-JSON serializable")
    if isinstance(value, list):
        for item in value:
            _check_canonical(item)
        return
    if isinstance(value, dict):
        for k, v in value.items():
            if not isinstance(k, str):
                raise TypeError(f"object keys must be str, got {type(k).__name__}")
            _check_canonical(v)
        return
    raise TypeError(f"{type(value).__name__} is not canonical-JSON serializable")


class RecordFormatError(ValueError):
    """A manifest or commit object does not match the expected schema."""


def _field(obj: dict, name: str, kind: type):
    if not isinstance(obj, dict):
        raise RecordFormatError(f"expected object, got {type(obj).__name__}")
    if name not in obj:
        raise RecordFormatError(f"missing field {name!r}")
    value = obj[name]
    if not isinstance(value, kind) or isinstance(value, bool):
        raise RecordFormatError(f"field {name!r} is not {kind.__name__}")
    return value


@dataclass(frozen=True)
class PartEntry:
    name: str
    size: int
    file_sha256: str
    content_digest: str

    def to_obj(self) -> dict:
        return {
            "name": self.name,
            "size": self.size,
            "file_sha256": self.file_sha256,
            "content_digest": self.content_digest,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "PartEntry":
        return cls(
            name=_field(obj, "name", str),
            size=_field(obj, "size", int),
            file_sha256=_field(obj, "file_sha256", str),
            content_digest=_field(obj, "content_digest", str),
        )


@dataclass(frozen=True)
class Manifest:
    group_id: str
    epoch: int
    seed: int
    created_unix_ns: int
    parts: tuple[PartEntry, ...]
    format_version: int = MANIFEST_VERSION

    def to_obj(self) -> dict:
        return {
            "format_version": self.format_version,
            "group_id": self.group_id,
            "epoch": self.epoch,
            "seed": self.seed,
            "created_unix_ns": self.created_unix_ns,
            "parts": [p.to_obj() for p in self.parts],
        }

    def canonical_bytes(self) -> bytes:
        return canonical_json(self.to_obj())

    @classmethod
    def from_obj(cls, obj: dict) -> "Manifest":
        version = _field(obj, "format_version", int)
        if version != MANIFEST_VERSION:
            raise RecordFormatError(f"unsupported manifest version {version}")
        parts_obj = _field(obj, "parts", list)
        return cls(
            group_id=_field(obj, "group_id", str),
            epoch=_field(obj, "epoch", int),
            seed=_field(obj, "seed", int),
            created_unix_ns=_field(obj, "created_unix_ns", int),
            parts=tuple(PartEntry.from_obj(p) for p in parts_obj),
            format_version=version,
        )


@dataclass(frozen=True)
class CommitRecord:
    group_id: str
    manifest_sha256: str
    committed_unix_ns: int

    def to_obj(self) -> dict:
        return {
            "group_id": self.group_id,
            "manifest_sha256": self.manifest_sha256,
            "committed_unix_ns": self.committed_unix_ns,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "CommitRecord":
        return cls(
            group_id=_field(obj, "group_id", str),
            manifest_sha256=_field(obj, "manifest_sha256", str),
            committed_unix_ns=_field(obj, "committed_unix_ns", int),
        )


@dataclass(frozen=True)
class GroupLayout:
    """Path arithmetic for one group directory."""

    directory: str
    part_names: tuple[str, ...] = PART_NAMES

    def part_path(self, name: str) -> str:
        return f"{self.directory}/{name}"

    @property
    def manifest_path(self) -> str:
        return f"{self.directory}/{MANIFEST_NAME}"

    @property
    def commit_path(self) -> str:
        return f"{self.directory}/{COMMIT_NAME}"

    @property
    def group_id(self) -> str:
        return posixpath.basename(str(self.directory).rstrip("/"))

    @staticmethod
    def epoch_dirname(epoch: int) -> str:
        if not 0 <= epoch <= 999_999:
            raise ValueError(f"epoch {epoch} out of range for 6-digit names")
        return f"ckpt-{epoch:06d}"

    @staticmethod
    def parse_epoch(dirname: str) -> int | None:
        m = _EPOCH_DIR.match(dirname)
        return int(m.group(1)) if m else None


def write_group(
    backend,
    directory,
    parts: list[tuple[str, TensorBlob]],
    mode: WriteMode,
    *,
    epoch: int,
    seed: int,
    crash_point: str | None = None,
) -> WriteReceipt:
    """Write parts, then MANIFEST.json, then COMMIT.json.

    ``crash_point`` names where a simulated trial kills the writer:
    after_model (model bytes queued, not yet flushed), before_manifest,
    manifest_partial (half the manifest flushed), before_commit.
    """
    if crash_point is not None and crash_point not in CRASH_POINTS:
        raise ValueError(f"unknown crash point: {crash_point!r}")
    names = [name for name, _ in parts]
    if names != list(PART_NAMES):
        raise ValueError(f"parts must be exactly {list(PART_NAMES)}, got {names}")

    layout = GroupLayout(str(directory))
    backend.mkdir(layout.directory)

    def maybe_crash(point: str) -> None:
        if crash_point == point:
            protocols.crash_now(backend)

    start = time.perf_counter_ns()
    entries = []
    total = 0
    for index, (name, blob) in enumerate(parts):
        data = encode_container(blob)
        entries.append(
            PartEntry(
                name=name,
                size=len(data),
                file_sha256=hashlib.sha256(data).hexdigest(),
                content_digest=tensor_digest(blob),
            )
        )
        hook = (lambda: maybe_crash("after_model")) if index == 0 else None
        install_bytes(backend, layout.part_path(name), data, mode, on_queued=hook)
        total += len(data)

    maybe_crash("before_manifest")

    manifest = Manifest(
        group_id=layout.group_id,
        epoch=epoch,
        seed=seed,
        created_unix_ns=backend.now_ns(),
        parts=tuple(entries),
    )
    manifest_bytes = manifest.canonical_bytes()

    # invalidate-before-metadata-swap: an in-place refresh must not leave
    # a stale commit sealing a manifest we are about to replace
    if backend.exists(layout.commit_path):
        backend.remove(layout.commit_path)

    if crash_point == "manifest_partial":
        handle = backend.create(layout.manifest_path)
        handle.write(manifest_bytes[: len(manifest_bytes) // 2])
        handle.flush()
        protocols.crash_now(backend)

    install_bytes(backend, layout.manifest_path, manifest_bytes, mode)
    total += len(manifest_bytes)

    maybe_crash("before_commit")

    commit = CommitRecord(
        group_id=layout.group_id,
        manifest_sha256=hashlib.sha256(manifest_bytes).hexdigest(),
        committed_unix_ns=backend.now_ns(),
    )
    commit_bytes = canonical_json(commit.to_obj())
    install_bytes(backend, layout.commit_path, commit_bytes, mode)
    total += len(commit_bytes)

    latency = max(1, time.perf_counter_ns() - start)
    return WriteReceipt(layout.directory, total, latency, mode)
