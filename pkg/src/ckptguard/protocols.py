"""Write disciplines over real and simulated filesystem backends.

Three installation modes with increasing durability:

    unsafe            buffered write straight to the final path, never synced
    atomic_nodirsync  write to a same-directory temp file, fsync it, rename
    atomic_dirsync    same, then open the parent directory and fsync it too

The simulated backend models the layers a crash tears through: an
application buffer (lost on process crash), the OS page cache (survives
a process crash), and the device (filled by sync, survives power loss;
process-crash trials never consult it). Writes spill one 64 KiB chunk
from the application buffer to the page cache per write call once the
buffer holds more than a chunk; the rest stays in user space until
flush or close. The real backend applies the same spill policy over an
unbuffered descriptor so both backends agree byte for byte on crash-free
results and on which bytes a mid-write crash can lose.

Crashes are driven two ways: writers check named crash points and call
``crash_now``, and the simulated backend can count state-changing calls
and crash itself after the Nth one (used to step a crash through every
instrumentable point of a protocol).
"""
from __future__ import annotations

import abc
import enum
import hashlib
import os
import posixpath
import random
import signal
import time
from dataclasses import dataclass
from pathlib import Path

APP_BUFFER_CHUNK = 64 * 1024


class WriteMode(enum.Enum):
    UNSAFE = "unsafe"
    ATOMIC_NODIRSYNC = "atomic_nodirsync"
    ATOMIC_DIRSYNC = "atomic_dirsync"

    @classmethod
    def parse(cls, text: str) -> "WriteMode":
        for mode in cls:
            if mode.value == text:
                return mode
        raise ValueError(f"unknown write mode: {text!r}")

    @property
    def atomic(self) -> bool:
        return self is not WriteMode.UNSAFE

    @property
    def dirsync(self) -> bool:
        return self is WriteMode.ATOMIC_DIRSYNC


class SimulatedCrash(BaseException):
    """Process death in the simulated backend.

    Derives from BaseException so ``except Exception`` cleanup in write
    paths does not run, mirroring a real abort where no handlers fire.
    Trial drivers catch it explicitly.
    """


@dataclass(frozen=True)
class WriteReceipt:
    path: str
    bytes_written: int
    latency_ns: int
    mode: WriteMode


class FileHandle(abc.ABC):
    """A writable file: write queues, flush drains to the page cache,
    sync pushes the page cache to the device, close implies flush."""

    @abc.abstractmethod
    def write(self, data: bytes) -> None: ...

    @abc.abstractmethod
    def flush(self) -> None: ...

    @abc.abstractmethod
    def sync(self) -> None: ...

    @abc.abstractmethod
    def close(self) -> None: ...


class FsBackend(abc.ABC):
    """Filesystem operations the write protocols are expressed against.

    ``trace`` records every state-changing call as (op, path, aux)
    tuples so tests can assert ordering properties such as "the temp
    file is synced before the rename".
    """

    name: str

    def __init__(self) -> None:
        self.trace: list[tuple[str, str, str]] = []

    @abc.abstractmethod
    def mkdir(self, path: str | Path) -> None: ...

    @abc.abstractmethod
    def create(self, path: str | Path) -> FileHandle: ...

    @abc.abstractmethod
    def read_bytes(self, path: str | Path) -> bytes: ...

    @abc.abstractmethod
    def overwrite_bytes(self, path: str | Path, data: bytes) -> None:
        """Out-of-band replacement of stored bytes (fault injection)."""

    @abc.abstractmethod
    def exists(self, path: str | Path) -> bool: ...

    @abc.abstractmethod
    def is_dir(self, path: str | Path) -> bool: ...

    @abc.abstractmethod
    def file_size(self, path: str | Path) -> int: ...

    @abc.abstractmethod
    def mtime_ns(self, path: str | Path) -> int: ...

    @abc.abstractmethod
    def listdir(self, path: str | Path) -> list[str]: ...

    @abc.abstractmethod
    def remove(self, path: str | Path) -> None: ...

    @abc.abstractmethod
    def rename(self, src: str | Path, dst: str | Path) -> None: ...

    @abc.abstractmethod
    def sync_dir(self, path: str | Path) -> None: ...

    @abc.abstractmethod
    def now_ns(self) -> int: ...

    @abc.abstractmethod
    def tmp_suffix(self) -> str: ...

    @abc.abstractmethod
    def crash_now(self) -> None: ...

    @abc.abstractmethod
    def lock_exclusive(self, path: str | Path):
        """Context manager holding an advisory writer lock near path."""


# ---------------------------------------------------------------- real backend


class _RealHandle(FileHandle):
    def __init__(self, backend: "RealFs", path: str) -> None:
        self._backend = backend
        self._path = path
        self._fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
        self._buf = bytearray()
        self._open = True

    def _spill(self, n: int) -> None:
        chunk = bytes(self._buf[:n])
        done = 0
        while done < n:
            done += os.write(self._fd, chunk[done:])
        del self._buf[:n]

    def write(self, data: bytes) -> None:
        self._require_open()
        self._buf += data
        if len(self._buf) > APP_BUFFER_CHUNK:
            self._spill(APP_BUFFER_CHUNK)
        self._backend._record("write", self._path)

    def flush(self) -> None:
        self._require_open()
        if self._buf:
            self._spill(len(self._buf))
        self._backend._record("flush", self._path)

    def sync(self) -> None:
        self._require_open()
        os.fsync(self._fd)
        self._backend._record("sync", self._path)

    def close(self) -> None:
        if not self._open:
            return
        if self._buf:
            self._spill(len(self._buf))
        os.close(self._fd)
        self._open = False
        self._backend._record("close", self._path)

    def _require_open(self) -> None:
        if not self._open:
            raise ValueError("handle is closed")


class RealFs(FsBackend):
    """The host filesystem. Crash here means killing the process."""

    name = "real"

    def __init__(self, seed: int | None = None) -> None:
        super().__init__()
        self._rng = random.Random(seed)

    def _record(self, op: str, path: str, aux: str = "") -> None:
        self.trace.append((op, path, aux))

    def mkdir(self, path: str | Path) -> None:
        os.makedirs(path, exist_ok=True)
        self._record("mkdir", str(path))

    def create(self, path: str | Path) -> FileHandle:
        handle = _RealHandle(self, str(path))
        self._record("create", str(path))
        return handle

    def read_bytes(self, path: str | Path) -> bytes:
        return Path(path).read_bytes()

    def overwrite_bytes(self, path: str | Path, data: bytes) -> None:
        if not os.path.isfile(path):
            raise FileNotFoundError(str(path))
        with open(path, "wb") as fh:
            fh.write(data)
        self._record("overwrite", str(path))

    def exists(self, path: str | Path) -> bool:
        return os.path.exists(path)

    def is_dir(self, path: str | Path) -> bool:
        return os.path.isdir(path)

    def file_size(self, path: str | Path) -> int:
        return os.stat(path).st_size

    def mtime_ns(self, path: str | Path) -> int:
        return os.stat(path).st_mtime_ns

    def listdir(self, path: str | Path) -> list[str]:
        return sorted(os.listdir(path))

    def remove(self, path: str | Path) -> None:
        os.unlink(path)
        self._record("remove", str(path))

    def rename(self, src: str | Path, dst: str | Path) -> None:
        os.replace(src, dst)
        self._record("rename", str(dst), str(src))

    def sync_dir(self, path: str | Path) -> None:
        fd = os.open(path, os.O_RDONLY)
        try:
            os.fsync(fd)
        finally:
            os.close(fd)
        self._record("sync_dir", str(path))

    def now_ns(self) -> int:
        return time.time_ns()

    def tmp_suffix(self) -> str:
        return f"{self._rng.getrandbits(32):08x}"

    def crash_now(self) -> None:
        # no flushing, no atexit, no cleanup: the process just dies
        os.kill(os.getpid(), signal.SIGKILL)

    def lock_exclusive(self, path: str | Path):
        import fcntl
        from contextlib import contextmanager

        @contextmanager
        def _lock():
            fd = os.open(os.path.join(str(path), ".writer.lock"), os.O_CREAT | os.O_RDWR, 0o644)
            try:
                fcntl.flock(fd, fcntl.LOCK_EX)
                yield
            finally:
                fcntl.flock(fd, fcntl.LOCK_UN)
                os.close(fd)

        return _lock()


# ----------------------------------------------------------- simulated backend


class _SimFile:
    __slots__ = ("page_cache", "device", "mtime_ns", "entry_persisted")

    def __init__(self, mtime_ns: int) -> None:
        self.page_cache = bytearray()
        self.device = b""
        self.mtime_ns = mtime_ns
        self.entry_persisted = False


class _SimHandle(FileHandle):
    def __init__(self, fs: "SimFs", path: str) -> None:
        self._fs = fs
        self.path = path
        self.buf = bytearray()
        self.open = True

    def _spill(self, n: int) -> None:
        f = self._fs._files[self.path]
        f.page_cache += self.buf[:n]
        f.mtime_ns = self._fs.now_ns()
        del self.buf[:n]

    def write(self, data: bytes) -> None:
        self._require_open()
        self.buf += data
        if len(self.buf) > APP_BUFFER_CHUNK:
            self._spill(APP_BUFFER_CHUNK)
        self._fs._record("write", self.path)

    def flush(self) -> None:
        self._require_open()
        if self.buf:
            self._spill(len(self.buf))
        self._fs._record("flush", self.path)

    def sync(self) -> None:
        self._require_open()
        f = self._fs._files[self.path]
        f.device = bytes(f.page_cache)
        self._fs._record("sync", self.path)

    def close(self) -> None:
        if not self.open:
            return
        if self.buf:
            self._spill(len(self.buf))
        self.open = False
        self._fs._handles.remove(self)
        self._fs._record("close", self.path)

    def _require_open(self) -> None:
        if not self.open:
            raise ValueError("handle is closed")


class SimFs(FsBackend):
    """Deterministic in-memory filesystem with crash semantics.

    A process crash discards application buffers and open handles but
    keeps the page cache and all directory entries, including renames
    that have not been followed by a directory sync. Rename is atomic
    at the name level. Temp-name randomness and the clock are seeded,
    so identical call sequences produce byte-identical states.

    ``crash_after_ops=N`` makes the Nth state-changing call apply the
    crash transition and raise SimulatedCrash right after completing.
    """

    name = "sim"

    def __init__(self, seed: int = 0, crash_after_ops: int | None = None) -> None:
        super().__init__()
        self._files: dict[str, _SimFile] = {}
        self._dirs: set[str] = {"."}
        self._handles: list[_SimHandle] = []
        self._rng = random.Random(seed)
        self._clock_ns = 1_600_000_000_000_000_000
        self.op_count = 0
        self.crash_after_ops = crash_after_ops
        self.crashed = False

    @staticmethod
    def _norm(path: str | Path) -> str:
        s = posixpath.normpath(str(path))
        if s.startswith("/"):
            s = s.lstrip("/") or "."
        return s

    @staticmethod
    def _parent(p: str) -> str:
        return posixpath.dirname(p) or "."

    def _record(self, op: str, path: str, aux: str = "") -> None:
        self.trace.append((op, path, aux))
        self.op_count += 1
        if (
            self.crash_after_ops is not None
            and not self.crashed
            and self.op_count == self.crash_after_ops
        ):
            self._apply_process_crash()
            raise SimulatedCrash(f"after op {self.op_count}: {op} {path}")

    def _apply_process_crash(self) -> None:
        for h in self._handles:
            h.buf.clear()
            h.open = False
        self._handles.clear()
        self.crashed = True

    # state-changing operations

    def mkdir(self, path: str | Path) -> None:
        p = self._norm(path)
        if p in self._files:
            raise NotADirectoryError(p)
        parts = p.split("/") if p != "." else []
        cur = ""
        for piece in parts:
            cur = f"{cur}/{piece}".lstrip("/") if cur else piece
            if cur in self._files:
                raise NotADirectoryError(cur)
            self._dirs.add(cur)
        self._record("mkdir", p)

    def create(self, path: str | Path) -> FileHandle:
        p = self._norm(path)
        if p in self._dirs:
            raise IsADirectoryError(p)
        if self._parent(p) not in self._dirs:
            raise FileNotFoundError(f"parent of {p} does not exist")
        f = self._files.get(p)
        if f is None:
            f = _SimFile(self.now_ns())
            self._files[p] = f
        else:
            f.page_cache = bytearray()
            f.mtime_ns = self.now_ns()
        handle = _SimHandle(self, p)
        self._handles.append(handle)
        self._record("create", p)
        return handle

    def overwrite_bytes(self, path: str | Path, data: bytes) -> None:
        p = self._norm(path)
        f = self._files.get(p)
        if f is None:
            raise FileNotFoundError(p)
        f.page_cache = bytearray(data)
        f.device = bytes(data)
        f.mtime_ns = self.now_ns()
        self._record("overwrite", p)

    def remove(self, path: str | Path) -> None:
        p = self._norm(path)
        if p not in self._files:
            raise FileNotFoundError(p)
        del self._files[p]
        self._record("remove", p)

    def rename(self, src: str | Path, dst: str | Path) -> None:
        s, d = self._norm(src), self._norm(dst)
        if self._parent(d) not in self._dirs:
            raise FileNotFoundError(f"parent of {d} does not exist")
        if s in self._files:
            if d in self._dirs:
                raise IsADirectoryError(d)
            f = self._files.pop(s)
            f.entry_persisted = False
            f.mtime_ns = self.now_ns()
            self._files[d] = f
        elif s in self._dirs:
            if d in self._files:
                raise NotADirectoryError(d)
            if d in self._dirs:
                raise OSError(f"directory exists: {d}")
            prefix = s + "/"
            for p in sorted(self._dirs):
                if p == s:
                    self._dirs.remove(p)
                    self._dirs.add(d)
                elif p.startswith(prefix):
                    self._dirs.remove(p)
                    self._dirs.add(d + "/" + p[len(prefix):])
            for p in sorted(self._files):
                if p.startswith(prefix):
                    self._files[d + "/" + p[len(prefix):]] = self._files.pop(p)
        else:
            raise FileNotFoundError(s)
        self._record("rename", d, s)

    def sync_dir(self, path: str | Path) -> None:
        p = self._norm(path)
        if p not in self._dirs:
            raise FileNotFoundError(p)
        for fp, f in self._files.items():
            if self._parent(fp) == p:
                f.entry_persisted = True
        self._record("sync_dir", p)

    # read-only operations (not crash-steppable, not traced)

    def read_bytes(self, path: str | Path) -> bytes:
        p = self._norm(path)
        f = self._files.get(p)
        if f is None:
            raise FileNotFoundError(p)
        return bytes(f.page_cache)

    def exists(self, path: str | Path) -> bool:
        p = self._norm(path)
        return p in self._files or p in self._dirs

    def is_dir(self, path: str | Path) -> bool:
        return self._norm(path) in self._dirs

    def file_size(self, path: str | Path) -> int:
        p = self._norm(path)
        if p not in self._files:
            raise FileNotFoundError(p)
        return len(self._files[p].page_cache)

    def mtime_ns(self, path: str | Path) -> int:
        p = self._norm(path)
        if p not in self._files:
            raise FileNotFoundError(p)
        return self._files[p].mtime_ns

    def listdir(self, path: str | Path) -> list[str]:
        p = self._norm(path)
        if p not in self._dirs:
            raise FileNotFoundError(p)
        names = set()
        for other in list(self._files) + list(self._dirs):
            if other != p and self._parent(other) == p:
                names.add(posixpath.basename(other))
        return sorted(names)

    def now_ns(self) -> int:
        self._clock_ns += 1_000_000
        return self._clock_ns

    def tmp_suffix(self) -> str:
        return f"{self._rng.getrandbits(32):08x}"

    def crash_now(self) -> None:
        self.trace.append(("crash", "", ""))
        self._apply_process_crash()
        raise SimulatedCrash("explicit crash point")

    def lock_exclusive(self, path: str | Path):
        from contextlib import nullcontext

        return nullcontext()

    def state_fingerprint(self) -> str:
        """Hash of all modeled state; equal fingerprints mean
        byte-identical filesystems."""
        h = hashlib.sha256()
        for d in sorted(self._dirs):
            h.update(b"D" + d.encode() + b"\x00")
        for p in sorted(self._files):
            f = self._files[p]
            h.update(b"F" + p.encode() + b"\x00")
            h.update(f.mtime_ns.to_bytes(8, "big"))
            h.update(b"\x01" if f.entry_persisted else b"\x00")
            h.update(hashlib.sha256(bytes(f.page_cache)).digest())
            h.update(hashlib.sha256(f.device).digest())
        return h.hexdigest()


# ------------------------------------------------------------ write disciplines


def _parent_dir(path: str) -> str:
    parent = posixpath.dirname(str(path).rstrip("/"))
    return parent or "."


def install_bytes(backend, path, data, mode, on_queued=None) -> WriteReceipt:
    """Install data at path under the given write discipline.

    ``on_queued`` runs after the payload is queued and before any
    flush/close/sync; group crash trials hook named crash points there.
    Atomic modes delete their temp file on any error path, but nothing
    runs on a crash (SimulatedCrash is not an Exception, and a real
    crash kills the process outright).
    """
    path = str(path)
    start = time.perf_counter_ns()
    if mode is WriteMode.UNSAFE:
        handle = backend.create(path)
        handle.write(data)
        if on_queued is not None:
            on_queued()
        handle.close()
    else:
        tmp = f"{path}.tmp.{backend.tmp_suffix()}"
        try:
            handle = backend.create(tmp)
            handle.write(data)
            if on_queued is not None:
                on_queued()
            handle.flush()
            handle.sync()
            handle.close()
            backend.rename(tmp, path)
            if mode.dirsync:
                backend.sync_dir(_parent_dir(path))
        except Exception:
            try:
                if backend.exists(tmp):
                    backend.remove(tmp)
            except OSError:
                pass
            raise
    latency = max(1, time.perf_counter_ns() - start)
    return WriteReceipt(path, len(data), latency, mode)


def write_unsafe(backend, path, data) -> WriteReceipt:
    """Buffered write to the final path; a crash can tear it."""
    return install_bytes(backend, path, data, WriteMode.UNSAFE)


def write_atomic(backend, path, data, dirsync: bool) -> WriteReceipt:
    """Temp file, flush, fsync, rename onto the target; optionally
    fsync the parent directory so the new entry itself is durable."""
    mode = WriteMode.ATOMIC_DIRSYNC if dirsync else WriteMode.ATOMIC_NODIRSYNC
    return install_bytes(backend, path, data, mode)


def crash_now(backend) -> None:
    """Crash the writing process at the call site."""
    backend.crash_now()
