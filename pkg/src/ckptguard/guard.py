"""Layered integrity validation and recovery for checkpoint groups.

Validation runs a fixed ladder of checks. The first failing check names
the primary failure reason, but every check that can still run does
run, so a report also carries the full set of detection mechanisms that
fired (a truncated file trips the structural size check, the container
loader, and the file hash all at once).

Order per group: manifest present, manifest parses, commit present,
commit seals the manifest bytes. Order per part: present, size, decode,
shape, content digest, file hash, finiteness. Digest and finiteness
need a decoded blob and are skipped when decode fails; the file hash
never is.
"""
from __future__ import annotations

import enum
import fnmatch
import hashlib
import json
import math
import posixpath
from dataclasses import dataclass

from .group import (
    COMMIT_NAME,
    MANIFEST_NAME,
    CommitRecord,
    GroupLayout,
    Manifest,
    RecordFormatError,
)
from .payload import LoadError, decode_container, has_non_finite, tensor_digest
from .protocols import write_atomic

LATEST_OK_NAME = "LATEST_OK"
QUARANTINE_SUFFIX = ".corrupt"


class FailureReason(enum.Enum):
    MISSING_PART = "missing_part"
    SIZE_MISMATCH = "size_mismatch"
    LOAD_ERROR = "load_error"
    SHAPE_MISMATCH = "shape_mismatch"
    DIGEST_MISMATCH = "digest_mismatch"
    FILE_SHA_MISMATCH = "file_sha_mismatch"
    NON_FINITE = "non_finite"
    MISSING_MANIFEST = "missing_manifest"
    MANIFEST_PARSE_ERROR = "manifest_parse_error"
    MISSING_COMMIT = "missing_commit"
    COMMIT_MISMATCH = "commit_mismatch"


class DetectionMechanism(enum.Enum):
    LOAD = "load"
    DIGEST = "digest"
    FILE_SHA = "file_sha"
    STRUCTURAL = "structural"
    NONE = "none"


_MECHANISM_OF = {
    FailureReason.LOAD_ERROR: DetectionMechanism.LOAD,
    FailureReason.DIGEST_MISMATCH: DetectionMechanism.DIGEST,
    FailureReason.FILE_SHA_MISMATCH: DetectionMechanism.FILE_SHA,
}


def mechanism_of(reason: FailureReason) -> DetectionMechanism:
    """Which detector a failure reason belongs to; everything that is
    not a load, digest, or file-hash failure counts as structural."""
    return _MECHANISM_OF.get(reason, DetectionMechanism.STRUCTURAL)


class NoValidCheckpoint(Exception):
    """Recovery scanned every candidate group and none validated."""


@dataclass(frozen=True)
class PartCheck:
    name: str
    failures: tuple[FailureReason, ...]

    @property
    def primary(self) -> FailureReason | None:
        return self.failures[0] if self.failures else None


@dataclass(frozen=True)
class ValidationReport:
    group_path: str
    valid: bool
    structural_failures: tuple[FailureReason, ...]
    parts: tuple[PartCheck, ...]

    @property
    def primary_reason(self) -> FailureReason | None:
        if self.structural_failures:
            return self.structural_failures[0]
        for part in self.parts:
            if part.failures:
                return part.failures[0]
        return None

    @property
    def mechanisms(self) -> frozenset[DetectionMechanism]:
        fired = {mechanism_of(r) for r in self.structural_failures}
        for part in self.parts:
            fired.update(mechanism_of(r) for r in part.failures)
        return frozenset(fired)

    def to_obj(self) -> dict:
        return {
            "group_path": self.group_path,
            "valid": self.valid,
            "primary_reason": self.primary_reason.value if self.primary_reason else None,
            "structural_failures": [r.value for r in self.structural_failures],
            "parts": [
                {"name": p.name, "failures": [r.value for r in p.failures]}
                for p in self.parts
            ],
            "mechanisms": sorted(m.value for m in self.mechanisms),
        }


def _check_part(backend, layout: GroupLayout, entry) -> PartCheck:
    path = layout.part_path(entry.name)
    if not backend.exists(path):
        return PartCheck(entry.name, (FailureReason.MISSING_PART,))
    data = backend.read_bytes(path)
    failures: list[FailureReason] = []
    if len(data) != entry.size:
        failures.append(FailureReason.SIZE_MISMATCH)
    blob = None
    try:
        blob = decode_container(data)
    except LoadError:
        failures.append(FailureReason.LOAD_ERROR)
    if blob is not None:
        declared = math.prod(blob.shape) * blob.dtype.elem_size
        if declared != len(blob.payload):
            # unreachable after a clean decode; kept as a belt-and-braces check
            failures.append(FailureReason.SHAPE_MISMATCH)
        if tensor_digest(blob) != entry.content_digest:
            failures.append(FailureReason.DIGEST_MISMATCH)
    if hashlib.sha256(data).hexdigest() != entry.file_sha256:
        failures.append(FailureReason.FILE_SHA_MISMATCH)
    if blob is not None and has_non_finite(blob):
        failures.append(FailureReason.NON_FINITE)
    return PartCheck(entry.name, tuple(failures))


def validate_group(backend, group_path) -> ValidationReport:
    """Run every integrity layer over one group directory."""
    layout = GroupLayout(str(group_path))
    structural: list[FailureReason] = []
    manifest = None
    manifest_bytes = b""

    if not backend.exists(layout.manifest_path):
        structural.append(FailureReason.MISSING_MANIFEST)
    else:
        manifest_bytes = backend.read_bytes(layout.manifest_path)
        try:
            manifest = Manifest.from_obj(json.loads(manifest_bytes.decode("utf-8")))
        except (ValueError, UnicodeDecodeError, RecordFormatError):
            structural.append(FailureReason.MANIFEST_PARSE_ERROR)

    if not backend.exists(layout.commit_path):
        structural.append(FailureReason.MISSING_COMMIT)
    else:
        try:
            commit = CommitRecord.from_obj(
                json.loads(backend.read_bytes(layout.commit_path).decode("utf-8"))
            )
        except (ValueError, UnicodeDecodeError, RecordFormatError):
            # an unreadable commit cannot seal anything
            structural.append(FailureReason.COMMIT_MISMATCH)
        else:
            if (
                manifest is not None
                and commit.manifest_sha256 != hashlib.sha256(manifest_bytes).hexdigest()
            ):
                structural.append(FailureReason.COMMIT_MISMATCH)

    parts: tuple[PartCheck, ...] = ()
    if manifest is not None:
        parts = tuple(_check_part(backend, layout, e) for e in manifest.parts)

    valid = not structural and all(not p.failures for p in parts)
    return ValidationReport(layout.directory, valid, tuple(structural), parts)


def _quarantine(backend, path: str) -> str:
    target = path + QUARANTINE_SUFFIX
    n = 1
    while backend.exists(target):
        target = f"{path}{QUARANTINE_SUFFIX}.{n}"
        n += 1
    backend.rename(path, target)
    return target


def recover_latest(backend, root) -> str:
    """Find the newest valid group under root, quarantine broken ones.

    Scans ckpt-NNNNNN directories newest first. Invalid groups are
    renamed with a .corrupt suffix, never deleted. On success the
    LATEST_OK pointer (relative directory name, one LF-terminated
    line) is atomically rewritten with a directory sync; on total
    failure it is left untouched and NoValidCheckpoint is raised.
    Running it twice in a row is a no-op the second time.
    """
    root = str(root)
    with backend.lock_exclusive(root):
        candidates = []
        for name in backend.listdir(root):
            epoch = GroupLayout.parse_epoch(name)
            if epoch is not None and backend.is_dir(f"{root}/{name}"):
                candidates.append((epoch, name))
        for epoch, name in sorted(candidates, reverse=True):
            path = f"{root}/{name}"
            if validate_group(backend, path).valid:
                pointer = f"{root}/{LATEST_OK_NAME}"
                write_atomic(backend, pointer, f"{name}\n".encode("utf-8"), dirsync=True)
                return path
            _quarantine(backend, path)
        raise NoValidCheckpoint(f"no valid checkpoint group under {root}")


def read_latest_pointer(backend, root) -> str | None:
    """The relative directory name LATEST_OK names, or None."""
    pointer = f"{root}/{LATEST_OK_NAME}"
    if not backend.exists(pointer):
        return None
    return backend.read_bytes(pointer).decode("utf-8").strip()


def sweep_orphans(backend, root, min_age_s: float = 0.0) -> list[str]:
    """Delete temp-file droppings (*.tmp.*) under root, recursively.

    Only files older than min_age_s (by backend mtime) are removed, so
    a live writer's in-flight temp file can be spared; the default
    removes everything. Returns the deleted paths, sorted.
    """
    now = backend.now_ns()
    deleted: list[str] = []
    stack = [str(root)]
    while stack:
        directory = stack.pop()
        for name in backend.listdir(directory):
            path = f"{directory}/{name}"
            if backend.is_dir(path):
                stack.append(path)
            elif fnmatch.fnmatch(name, "*.tmp.*"):
                age_ns = now - backend.mtime_ns(path)
                if age_ns >= min_age_s * 1e9:
                    backend.remove(path)
                    deleted.append(posixpath.normpath(path))
    return sorted(deleted)
