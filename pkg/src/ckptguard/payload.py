"""Tensor payloads: the CKT1 container format, digests, synthetic data.

A part file is a single tensor serialized into a small self-describing
binary container. The layout is fixed and byte-exact:

    magic "CKT1" (4 bytes)
    format version, u8 (currently 1)
    dtype code, u8 (F32=1, F64=2)
    ndim, u8 (0..8)
    ndim dimensions, u64 little-endian each
    payload length, u64 little-endian
    payload bytes

No padding, no alignment, no trailing bytes. All integers little-endian.
"""
from __future__ import annotations

import enum
import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .detrng import keystream

MAGIC = b"CKT1"
CONTAINER_VERSION = 1
MAX_NDIM = 8


class Dtype(enum.Enum):
    """Element types the container can carry."""

    F32 = 1
    F64 = 2

    @property
    def canonical_name(self) -> str:
        return "float32" if self is Dtype.F32 else "float64"

    @property
    def elem_size(self) -> int:
        return 4 if self is Dtype.F32 else 8

    @classmethod
    def from_name(cls, name: str) -> "Dtype":
        for d in cls:
            if d.canonical_name == name:
                return d
        raise ValueError(f"unknown dtype name: {name!r}")


class LoadError(Exception):
    """Container bytes could not be decoded.

    reason is one of: bad_magic, bad_version, bad_dtype, truncated,
    length_mismatch, trailing_bytes.
    """

    def __init__(self, reason: str, detail: str = "") -> None:
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


@dataclass(frozen=True)
class TensorBlob:
    """A decoded tensor: dtype, shape, and raw little-endian payload."""

    dtype: Dtype
    shape: tuple[int, ...]
    payload: bytes

    def __post_init__(self) -> None:
        if len(self.shape) > MAX_NDIM:
            raise ValueError(f"ndim {len(self.shape)} exceeds limit {MAX_NDIM}")
        if any(d < 0 for d in self.shape):
            raise ValueError("dimensions must be non-negative")
        expected = math.prod(self.shape) * self.dtype.elem_size
        if len(self.payload) != expected:
            raise ValueError(
                f"payload holds {len(self.payload)} bytes, "
                f"shape {self.shape} needs {expected}"
            )

    @property
    def elem_count(self) -> int:
        return math.prod(self.shape)


def encode_container(blob: TensorBlob) -> bytes:
    head = struct.pack("<4sBBB", MAGIC, CONTAINER_VERSION, blob.dtype.value, len(blob.shape))
    dims = struct.pack(f"<{len(blob.shape)}Q", *blob.shape)
    length = struct.pack("<Q", len(blob.payload))
    return head + dims + length + blob.payload


def decode_container(data: bytes) -> TensorBlob:
    """Parse container bytes; raises LoadError (and nothing else) on any defect."""
    if len(data) < 4:
        raise LoadError("truncated", "ends inside magic")
    if data[:4] != MAGIC:
        raise LoadError("bad_magic", repr(bytes(data[:4])))
    if len(data) < 5:
        raise LoadError("truncated", "ends before version")
    if data[4] != CONTAINER_VERSION:
        raise LoadError("bad_version", str(data[4]))
    if len(data) < 6:
        raise LoadError("truncated", "ends before dtype")
    try:
        dtype = Dtype(data[5])
    except ValueError:
        raise LoadError("bad_dtype", str(data[5])) from None
    if len(data) < 7:
        raise LoadError("truncated", "ends before ndim")
    ndim = data[6]
    if ndim > MAX_NDIM:
        # the header can express 0..255 but the format allows 0..8
        raise LoadError("length_mismatch", f"ndim {ndim} exceeds {MAX_NDIM}")
    header_len = 7 + 8 * ndim + 8
    if len(data) < header_len:
        raise LoadError("truncated", "ends inside dims or length field")
    dims = struct.unpack_from(f"<{ndim}Q", data, 7)
    declared = struct.unpack_from("<Q", data, 7 + 8 * ndim)[0]
    if math.prod(dims) * dtype.elem_size != declared:
        raise LoadError(
            "length_mismatch",
            f"dims {dims} x {dtype.elem_size} bytes != declared {declared}",
        )
    actual = len(data) - header_len
    if actual < declared:
        raise LoadError("truncated", f"payload holds {actual} of {declared} bytes")
    if actual > declared:
        raise LoadError("trailing_bytes", f"{actual - declared} bytes past payload")
    return TensorBlob(dtype, tuple(dims), bytes(data[header_len:]))


def tensor_digest(blob: TensorBlob) -> str:
    """Content digest: SHA-256 over dtype name, dims, and payload bytes.

    The hashed byte string is canonical_name ";" dims-joined-by-comma ";"
    payload, so reshapes of identical bytes get distinct digests.
    """
    h = hashlib.sha256()
    h.update(blob.dtype.canonical_name.encode("ascii"))
    h.update(b";")
    h.update(",".join(str(d) for d in blob.shape).encode("ascii"))
    h.update(b";")
    h.update(blob.payload)
    return h.hexdigest()


def has_non_finite(blob: TensorBlob) -> bool:
    """True if any element is NaN or +/-Inf. Empty payloads are finite."""
    if not blob.payload:
        return False
    arr = np.frombuffer(blob.payload, dtype="<f4" if blob.dtype is Dtype.F32 else "<f8")
    return not bool(np.isfinite(arr).all())


def generate_synthetic(seed: int, byte_size: int, dtype: Dtype) -> TensorBlob:
    """Deterministic pseudorandom 1-D tensor of byte_size bytes.

    The payload is the SHA-256 counter-mode keystream for the seed; any
    element whose exponent bits come out all-ones has its top exponent
    bit cleared, which forces finiteness without disturbing the rest of
    the bit pattern.
    """
    if byte_size % dtype.elem_size != 0:
        raise ValueError(
            f"byte_size {byte_size} is not a multiple of element size {dtype.elem_size}"
        )
    raw = keystream(seed, byte_size)
    if dtype is Dtype.F32:
        bits = np.frombuffer(raw, dtype="<u4").copy()
        exp_mask = np.uint32(0xFF << 23)
        top_exp_bit = np.uint32(1 << 30)
    else:
        bits = np.frombuffer(raw, dtype="<u8").copy()
        exp_mask = np.uint64(0x7FF) << np.uint64(52)
        top_exp_bit = np.uint64(1) << np.uint64(62)
    saturated = (bits & exp_mask) == exp_mask
    bits[saturated] &= ~top_exp_bit
    return TensorBlob(dtype, (byte_size // dtype.elem_size,), bits.tobytes())
