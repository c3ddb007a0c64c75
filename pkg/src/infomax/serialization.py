"""DIMT tensor files, checkpoint directories and labelled datasets.

DIMT layout (all little-endian)::

    b"DIMT" | version u8 (=1) | dtype u8 (1=float32, 2=float64) | ndim u8
    | ndim x u32 extents | row-major scalars
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DIMT"
VERSION = 1
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_DTYPES = {v: k for k, v in _CODES.items()}


class FormatError(ValueError):
    pass


def encode_dimt(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in _CODES:
        raise FormatError(f"DIMT stores float32/float64 only, got {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    head = MAGIC + struct.pack("<BBB", VERSION, _CODES[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()


def decode_dimt(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise FormatError("not a DIMT file (bad magic)")
    version, code, ndim = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported DIMT version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown DIMT dtype code {code}")
    off = 7 + 4 * ndim
    if len(buf) < off:
        raise FormatError("truncated DIMT header")
    shape = struct.unpack_from(f"<{ndim}I", buf, 7)
    dtype = _DTYPES[code].newbyteorder("<")
    n = int(np.prod(shape)) if ndim else 1
    if len(buf) != off + n * dtype.itemsize:
        raise FormatError("DIMT payload size does not match header")
    arr = np.frombuffer(buf, dtype=dtype, count=n, offset=off).reshape(shape)
    return arr.astype(_DTYPES[code], copy=True)


def save_tensor(path, array) -> None:
    Path(path).write_bytes(encode_dimt(array))


def load_tensor(path) -> np.ndarray:
    return decode_dimt(Path(path).read_bytes())


MANIFEST = "manifest.txt"


def save_checkpoint(directory, state: dict) -> Path:
    """Write ``{name: array}`` as one DIMT file each plus a plain-text manifest.

    Manifest lines are ``name<TAB>shape<TAB>dtype<TAB>file`` with the shape
    written as comma-separated extents (empty for scalars).
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (name, arr) in enumerate(state.items()):
        arr = np.asarray(arr)
        fname = f"t{i:04d}.dimt"
        save_tensor(d / fname, arr)
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"{name}\t{shape}\t{arr.dtype.name}\t{fname}")
    (d / MANIFEST).write_text("\n".join(lines) + "\n")
    return d


def load_checkpoint(directory) -> dict:
    d = Path(directory)
    state = {}
    for line in (d / MANIFEST).read_text().splitlines():
        if not line.strip():
            continue
        name, shape, dtype, fname = line.split("\t")
        arr = load_tensor(d / fname)
        expect = tuple(int(s) for s in shape.split(",")) if shape else ()
        if arr.shape != expect or arr.dtype.name != dtype:
            raise FormatError(f"checkpoint entry {name!r} disagrees with its manifest line")
        state[name] = arr
    return state


def save_dataset(directory, images, labels, stem: str = "data") -> tuple[Path, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tpath, lpath = d / f"{stem}.dimt", d / f"{stem}_labels.csv"
    save_tensor(tpath, np.asarray(images))
    with open(lpath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "label"])
        for i, y in enumerate(np.asarray(labels)):
            w.writerow([i, int(y)])
    return tpath, lpath


def load_labels(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([int(r["label"]) for r in rows], dtype=np.int64)


def load_dataset(directory, stem: str = "data") -> tuple[np.ndarray, np.ndarray]:
    d = Path(directory)
    return load_tensor(d / f"{stem}.dimt"), load_labels(d / f"{stem}_labels.csv")
