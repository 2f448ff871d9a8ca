"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic   4 bytes  b"TTCK"
    version u32
    width   u8       scalar width in bytes (4 or 8)
    cfg_len u32      UTF-8 JSON blob with the full effective config
    cfg     bytes
    count   u32      number of parameter records
    per record:
        name_len u16, name bytes (UTF-8)
        rank u8, extents u32 * rank
        payload: prod(extents) scalars, little-endian

Writing the same parameters twice yields byte-identical files; nothing
time- or path-dependent is stored.
"""

import json
import struct

import numpy as np

MAGIC = b"TTCK"
VERSION = 1

_WIDTH_DTYPE = {4: "<f4", 8: "<f8"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params, config, width=8):
    """Write name->ndarray params plus a JSON-serializable config dict."""
    if width not in _WIDTH_DTYPE:
        raise CheckpointError(f"scalar width must be 4 or 8, got {width}")
    dtype = _WIDTH_DTYPE[width]
    cfg_blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<B", width))
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        fh.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            arr = np.asarray(arr)
            blob = name.encode("utf-8")
            fh.write(struct.pack("<H", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_exact(fh, n, what):
    blob = fh.read(n)
    if len(blob) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return blob


def load_checkpoint(path):
    """Return (config dict, name->ndarray params, scalar width)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (width,) = struct.unpack("<B", _read_exact(fh, 1, "width"))
        if width not in _WIDTH_DTYPE:
            raise CheckpointError(f"bad scalar width {width}")
        dtype = _WIDTH_DTYPE[width]
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        config = json.loads(_read_exact(fh, cfg_len, "config").decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "record count"))
        params = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4, "extent"))[0] for _ in range(rank))
            n = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = _read_exact(fh, n * width, f"payload of {name}")
            params[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after last record")
    return config, params, width
