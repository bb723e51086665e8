"""SGRD container: a little-endian binary grid with a JSON header.

Layout::

    b"SGRD" | version:u32le | header_len:u32le | header (UTF-8 JSON) | payload

The header carries ``dtype`` (``u8``, ``u32`` or ``f32``), ``shape``,
``axes`` and ``voxel_config`` (object or null), plus an optional ``meta``
object.  The payload is the row-major array in that axis order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .grid import VoxelConfig

MAGIC = b"SGRD"
VERSION = 1
DTYPES = {"u8": np.dtype("<u1"), "u32": np.dtype("<u4"), "f32": np.dtype("<f4")}
_PREFIX = struct.Struct("<4sII")


class GridFormatError(Exception):
    code = "format"


class BadMagicError(GridFormatError):
    code = "bad_magic"


class VersionMismatchError(GridFormatError):
    code = "version_mismatch"


class LengthMismatchError(GridFormatError):
    code = "length_mismatch"


class MalformedHeaderError(GridFormatError):
    code = "malformed_header"


class UnknownDtypeError(GridFormatError):
    code = "unknown_dtype"


@dataclass(eq=False)
class GridData:
    data: np.ndarray
    axes: List[str]
    voxel_config: Optional[VoxelConfig] = None
    meta: dict = field(default_factory=dict)

    @property
    def dtype_name(self) -> str:
        return dtype_name(self.data.dtype)

    def __eq__(self, other):
        if not isinstance(other, GridData):
            return NotImplemented
        return (self.data.dtype == other.data.dtype and self.axes == other.axes
                and self.voxel_config == other.voxel_config and self.meta == other.meta
                and np.array_equal(self.data, other.data, equal_nan=self.data.dtype.kind == "f"))


def dtype_name(dt) -> str:
    dt = np.dtype(dt)
    if dt == np.bool_ or dt == np.uint8:
        return "u8"
    for name, d in DTYPES.items():
        if dt.kind == d.kind and dt.itemsize == d.itemsize:
            return name
    raise UnknownDtypeError(f"cannot store dtype {dt}")


def _header(grid: GridData) -> bytes:
    h = {
        "dtype": dtype_name(grid.data.dtype),
        "shape": [int(s) for s in grid.data.shape],
        "axes": list(grid.axes),
        "voxel_config": grid.voxel_config.to_dict() if grid.voxel_config else None,
    }
    if grid.meta:
        h["meta"] = grid.meta
    return json.dumps(h, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode(grid: GridData) -> bytes:
    if len(grid.axes) != grid.data.ndim:
        raise ValueError(f"{len(grid.axes)} axis names for a {grid.data.ndim}-d array")
    header = _header(grid)
    payload = np.ascontiguousarray(grid.data, dtype=DTYPES[dtype_name(grid.data.dtype)]).tobytes()
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + payload


def decode(buf: bytes) -> GridData:
    if len(buf) < _PREFIX.size:
        raise LengthMismatchError("file shorter than the fixed prefix")
    magic, version, hlen = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}")
    end = _PREFIX.size + hlen
    if len(buf) < end:
        raise LengthMismatchError("file shorter than declared header")
    try:
        h = json.loads(buf[_PREFIX.size:end].decode("utf-8"))
        shape = [int(s) for s in h["shape"]]
        axes = [str(a) for a in h["axes"]]
        dtype = h["dtype"]
        vc = h["voxel_config"]
        meta = h.get("meta", {})
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
        raise MalformedHeaderError(f"malformed header: {e}") from e
    if dtype not in DTYPES:
        raise UnknownDtypeError(f"unknown dtype {dtype!r}")
    if len(axes) != len(shape) or any(s < 0 for s in shape):
        raise MalformedHeaderError("shape and axes disagree")
    expected = int(np.prod(shape, dtype=np.int64)) * DTYPES[dtype].itemsize
    if len(buf) - end != expected:
        raise LengthMismatchError(f"payload is {len(buf) - end} bytes, header implies {expected}")
    try:
        cfg = VoxelConfig.from_dict(vc) if vc is not None else None
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedHeaderError(f"bad voxel_config: {e}") from e
    data = np.frombuffer(buf, dtype=DTYPES[dtype], offset=end).reshape(shape).copy()
    return GridData(data, axes, cfg, meta)


def write_grid(path, grid: GridData) -> None:
    with open(path, "wb") as f:
        f.write(encode(grid))


def read_grid(path) -> GridData:
    with open(path, "rb") as f:
        return decode(f.read())
