"""Self-describing little-endian binary formats.

Array file ("DDPA"): magic, u16 version, u8 dtype code, u8 rank, rank u64
dims, then the row-major payload. Container file ("DDPC"): magic, u16
version, length-prefixed JSON manifest (sorted keys), then named embedded
arrays. Both round-trip bitwise, so checkpoints support full-fidelity
resume and save -> load -> save is byte-identical.

Datasets live in a directory: images/NNNN.ddpa, targets/NNNN.ddpa, and a
`manifest` text file.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import FormatError

ARRAY_MAGIC = b"DDPA"
CONTAINER_MAGIC = b"DDPC"
VERSION = 1
MAX_RANK = 4

_DTYPE_CODES = {np.dtype(np.uint8): 0, np.dtype(np.float32): 1,
                np.dtype(np.float64): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def array_bytes(array) -> bytes:
    # not ascontiguousarray: that would silently promote rank-0 to rank-1;
    # tobytes(order="C") below handles any memory layout
    arr = np.asarray(array)
    if arr.dtype not in _DTYPE_CODES:
        raise FormatError(f"unsupported dtype {arr.dtype}; cast to u8/f32/f64 first")
    if arr.ndim > MAX_RANK:
        raise FormatError(f"rank {arr.ndim} exceeds {MAX_RANK}")
    header = ARRAY_MAGIC + struct.pack(
        "<HBB", VERSION, _DTYPE_CODES[arr.dtype], arr.ndim
    )
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return header + arr.tobytes(order="C")


def parse_array(data: bytes) -> np.ndarray:
    if len(data) < 8 or data[:4] != ARRAY_MAGIC:
        raise FormatError("bad array magic")
    version, code, rank = struct.unpack("<HBB", data[4:8])
    if version != VERSION:
        raise FormatError(f"unsupported array version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if rank > MAX_RANK:
        raise FormatError(f"rank {rank} exceeds {MAX_RANK}")
    header_end = 8 + 8 * rank
    if len(data) < header_end:
        raise FormatError("truncated array header")
    shape = struct.unpack(f"<{rank}Q", data[8:header_end])
    dtype = _CODE_DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = data[header_end:]
    if len(payload) != expected:
        raise FormatError(
            f"payload size {len(payload)} != expected {expected} for shape {shape}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def write_array(path, array):
    with open(path, "wb") as fh:
        fh.write(array_bytes(array))


def read_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_array(fh.read())


def write_container(path, manifest: dict, arrays: dict):
    """Manifest (JSON-serializable) plus named arrays, deterministically
    ordered by name."""
    man = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC + struct.pack("<H", VERSION))
        fh.write(struct.pack("<Q", len(man)) + man)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            blob = array_bytes(arrays[name])
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)) + encoded)
            fh.write(struct.pack("<Q", len(blob)) + blob)


def read_container(path):
    with open(path, "rb") as fh:
        data = fh.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(data):
            raise FormatError(f"truncated container {path}")
        chunk = data[off : off + n]
        off += n
        return chunk

    if take(4) != CONTAINER_MAGIC:
        raise FormatError(f"bad container magic in {path}")
    (version,) = struct.unpack("<H", take(2))
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    (man_len,) = struct.unpack("<Q", take(8))
    try:
        manifest = json.loads(take(man_len).decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"bad container manifest: {exc}") from None
    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (blob_len,) = struct.unpack("<Q", take(8))
        arrays[name] = parse_array(take(blob_len))
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes in {path}")
    return manifest, arrays


def write_dataset(dirpath, dataset):
    """images/NNNN.ddpa + targets/NNNN.ddpa + manifest text file."""
    os.makedirs(os.path.join(dirpath, "images"), exist_ok=True)
    os.makedirs(os.path.join(dirpath, "targets"), exist_ok=True)
    for i in range(len(dataset.images)):
        write_array(os.path.join(dirpath, "images", f"{i:04d}.ddpa"),
                    dataset.images[i])
        write_array(os.path.join(dirpath, "targets", f"{i:04d}.ddpa"),
                    dataset.targets[i])
    with open(os.path.join(dirpath, "manifest"), "w", encoding="utf-8") as fh:
        fh.write(f"kind = {dataset.kind}\ncount = {len(dataset.images)}\n")


def read_dataset(dirpath):
    from .synth import Dataset  # local import to keep formats torch-free

    manifest_path = os.path.join(dirpath, "manifest")
    if not os.path.isfile(manifest_path):
        raise FormatError(f"no dataset manifest in {dirpath}")
    meta = {}
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if "=" in line:
                key, _, value = line.partition("=")
                meta[key.strip()] = value.strip()
    kind = meta.get("kind")
    if kind not in ("segmentation", "depth"):
        raise FormatError(f"dataset manifest has bad kind {kind!r}")
    try:
        count = int(meta.get("count", ""))
    except ValueError:
        raise FormatError("dataset manifest has bad count") from None
    images, targets = [], []
    for i in range(count):
        images.append(read_array(os.path.join(dirpath, "images", f"{i:04d}.ddpa")))
        targets.append(read_array(os.path.join(dirpath, "targets", f"{i:04d}.ddpa")))
    return Dataset(images=np.stack(images), targets=np.stack(targets), kind=kind)
