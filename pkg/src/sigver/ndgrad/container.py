"""Flat binary container for named float tensors.

Used for model checkpoints and preprocessed-image caches.  Layout (all
integers little-endian, data row-major):

    magic     8 bytes  b"NDTENS01"
    count     uint32   number of entries
    entry*:
        name_len  uint16
        name      UTF-8 bytes
        dtype     uint8   0 = float32, 1 = float64
        ndim      uint8
        dims      uint32 * ndim
        data      raw array bytes

Entries are written in sorted name order so equal contents produce
byte-identical files.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"NDTENS01"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}


def save_tensors(path, arrays: dict[str, np.ndarray], dtype: str = "float32") -> None:
    """Write a name->array mapping; values are cast to the given dtype."""
    target = np.dtype("<f4") if dtype == "float32" else np.dtype("<f8")
    code = _CODES[target]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype=target)
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ValueError(f"tensor name too long: {name!r}")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", code, arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read a container written by save_tensors."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ValueError(f"not a tensor container (magic {magic!r})")
        (count,) = struct.unpack("<I", f.read(4))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", f.read(2))
            if code not in _DTYPES:
                raise ValueError(f"unknown dtype code {code} for {name!r}")
            dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim)) if ndim else ()
            dt = _DTYPES[code]
            n_bytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize if ndim else dt.itemsize
            raw = f.read(n_bytes)
            if len(raw) != n_bytes:
                raise ValueError(f"truncated container at entry {name!r}")
            out[name] = np.frombuffer(raw, dtype=dt).reshape(dims).copy()
        return out
