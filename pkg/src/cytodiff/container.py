"""Self-describing binary containers with CRC32 trailers.

Two formats share the same conventions (little-endian header, explicit
offset table, row-major float32 payload, trailing CRC32 over everything
before it):

* adapter container — magic ``LORA``: format version, rank, scale, a target
  table of (name, d_out, d_in, offset_down, offset_up), then the matrices.
* tensor container — magic ``CYTK``: format version, a JSON metadata block,
  a named-tensor table, then the tensors. Used for classifier checkpoints.

Round-trips are bit-exact for the stored float32 data.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    ChecksumError,
    ContainerFormatError,
    ContainerVersionError,
    DataError,
    ShapeConsistencyError,
    TruncatedContainerError,
)

ADAPTER_MAGIC = b"LORA"
ADAPTER_VERSION = 1
TENSOR_MAGIC = b"CYTK"
TENSOR_VERSION = 1


class _Reader:
    """Bounds-checked cursor over container bytes."""

    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedContainerError(
                f"{self.path}: truncated container (needed {n} bytes at offset {self.pos})"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


def _read_file(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read container {path}: {exc}") from exc


def _verify_crc(blob: bytes, path: str) -> bytes:
    """Check the trailing CRC32; return the body without it."""
    if len(blob) < 4:
        raise TruncatedContainerError(f"{path}: truncated container (no room for CRC32)")
    body, stored = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    actual = zlib.crc32(body) & 0xFFFFFFFF
    if actual != stored:
        raise ChecksumError(f"{path}: CRC32 mismatch (stored {stored:#010x}, computed {actual:#010x})")
    return body


def _finish(path: str | Path, body: bytearray) -> None:
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(body))


# ---------------------------------------------------------------------------
# Adapter container


def write_adapter_container(
    path: str | Path,
    rank: int,
    scale: float,
    targets: dict[str, tuple[np.ndarray, np.ndarray]],
) -> None:
    """``targets`` maps projection name -> (down (r, d_in), up (d_out, r))."""
    names = sorted(targets)
    header = bytearray()
    header += ADAPTER_MAGIC
    header += struct.pack("<IIdI", ADAPTER_VERSION, rank, float(scale), len(names))

    entry_fmt = "<HIIQQ"
    table_size = sum(struct.calcsize(entry_fmt) + len(n.encode()) for n in names)
    offset = len(header) + table_size

    payload = bytearray()
    table = bytearray()
    for name in names:
        down, up = targets[name]
        down32 = np.ascontiguousarray(down, dtype=np.float32)
        up32 = np.ascontiguousarray(up, dtype=np.float32)
        d_out, d_in = up32.shape[0], down32.shape[1]
        if down32.shape != (rank, d_in) or up32.shape != (d_out, rank):
            raise ShapeConsistencyError(
                f"target {name!r}: matrices {down32.shape}/{up32.shape} do not match rank {rank}"
            )
        nb = name.encode()
        off_down = offset + len(payload)
        payload += down32.tobytes()
        off_up = offset + len(payload)
        payload += up32.tobytes()
        table += struct.pack(entry_fmt, len(nb), d_out, d_in, off_down, off_up)
        table += nb
    _finish(path, header + table + payload)


def read_adapter_container(path: str | Path) -> tuple[int, float, dict[str, tuple[np.ndarray, np.ndarray]]]:
    """Load and fully validate an adapter container."""
    p = str(path)
    body = _verify_crc(_read_file(path), p)
    r = _Reader(body, p)
    magic = r.take(4)
    if magic != ADAPTER_MAGIC:
        raise ContainerFormatError(f"{p}: not an adapter container (magic {magic!r})")
    version, rank, scale, n_targets = r.unpack("IIdI")
    if version != ADAPTER_VERSION:
        raise ContainerVersionError(f"{p}: unsupported adapter container version {version}")

    entries = []
    for _ in range(n_targets):
        name_len, d_out, d_in, off_down, off_up = r.unpack("HIIQQ")
        name = r.take(name_len).decode()
        entries.append((name, d_out, d_in, off_down, off_up))

    # Offsets must tile the payload contiguously and agree with the declared
    # rank/shapes; this catches headers edited independently of the matrices.
    expected = r.pos
    for name, d_out, d_in, off_down, off_up in entries:
        if rank < 1 or rank > min(d_out, d_in):
            raise ShapeConsistencyError(f"{p}: target {name!r} rank {rank} exceeds min({d_out}, {d_in})")
        if off_down != expected:
            raise ShapeConsistencyError(
                f"{p}: target {name!r} down-matrix offset {off_down} != expected {expected} "
                "(table inconsistent with payload)"
            )
        expected = off_down + rank * d_in * 4
        if off_up != expected:
            raise ShapeConsistencyError(
                f"{p}: target {name!r} up-matrix offset {off_up} != expected {expected} "
                "(table inconsistent with payload)"
            )
        expected = off_up + d_out * rank * 4
    if expected > len(body):
        raise TruncatedContainerError(
            f"{p}: table implies {expected} bytes but payload ends at {len(body)}"
        )
    if expected != len(body):
        raise ShapeConsistencyError(
            f"{p}: payload ends at {len(body)}, table implies {expected} "
            "(rank/shape fields inconsistent with stored matrices)"
        )

    targets = {}
    for name, d_out, d_in, off_down, off_up in entries:
        down = np.frombuffer(body, dtype="<f4", count=rank * d_in, offset=off_down)
        up = np.frombuffer(body, dtype="<f4", count=d_out * rank, offset=off_up)
        targets[name] = (
            down.reshape(rank, d_in).copy(),
            up.reshape(d_out, rank).copy(),
        )
    return rank, float(scale), targets


# ---------------------------------------------------------------------------
# Named-tensor container (checkpoints)


def write_tensor_container(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    names = sorted(tensors)

    header = bytearray()
    header += TENSOR_MAGIC
    header += struct.pack("<II", TENSOR_VERSION, len(meta_blob))
    header += meta_blob
    header += struct.pack("<I", len(names))

    arrays = [np.ascontiguousarray(tensors[n], dtype=np.float32) for n in names]
    table_size = sum(
        struct.calcsize("<HB") + len(n.encode()) + 4 * a.ndim + struct.calcsize("<Q")
        for n, a in zip(names, arrays)
    )
    table = bytearray()
    payload = bytearray()
    running = len(header) + table_size
    for name, arr in zip(names, arrays):
        nb = name.encode()
        table += struct.pack("<HB", len(nb), arr.ndim)
        table += nb
        table += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
        table += struct.pack("<Q", running)
        running += arr.nbytes
        payload += arr.tobytes()
    _finish(path, header + table + payload)


def read_tensor_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    p = str(path)
    body = _verify_crc(_read_file(path), p)
    r = _Reader(body, p)
    if r.take(4) != TENSOR_MAGIC:
        raise ContainerFormatError(f"{p}: not a tensor container")
    version, meta_len = r.unpack("II")
    if version != TENSOR_VERSION:
        raise ContainerVersionError(f"{p}: unsupported tensor container version {version}")
    meta = json.loads(r.take(meta_len).decode())
    (n_tensors,) = r.unpack("I")
    entries = []
    for _ in range(n_tensors):
        name_len, ndim = r.unpack("HB")
        name = r.take(name_len).decode()
        shape = r.unpack(f"{ndim}I") if ndim else ()
        (offset,) = r.unpack("Q")
        entries.append((name, shape, offset))

    tensors = {}
    expected = r.pos
    for name, shape, offset in entries:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if offset != expected:
            raise ShapeConsistencyError(f"{p}: tensor {name!r} offset {offset} != expected {expected}")
        expected = offset + count * 4
        if expected > len(body):
            raise TruncatedContainerError(f"{p}: tensor {name!r} extends past end of container")
        tensors[name] = np.frombuffer(body, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
    if expected != len(body):
        raise ShapeConsistencyError(f"{p}: container has {len(body) - expected} unaccounted payload bytes")
    return meta, tensors
