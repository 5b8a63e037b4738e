"""Binary checkpoint format for model weights and optimizer state.

Layout, little-endian throughout:

    magic "VCKP" | format version u16 | model version u32 | entry count u32
    per entry: name length u16, UTF-8 name, rank u8, dims u32 x rank,
               float32 payload (row-major)

The optimizer state file uses the same framing with its own entry names
("step", "m.<param>", "v.<param>").
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .nn import Module

MAGIC = b"VCKP"
FORMAT_VERSION = 1


def save_arrays(path, arrays: dict[str, np.ndarray], model_version: int) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HII", FORMAT_VERSION, model_version, len(arrays)))
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        data = np.ascontiguousarray(arr, dtype=np.float32)
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", data.ndim))
        for d in data.shape:
            buf.write(struct.pack("<I", d))
        buf.write(data.tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_arrays(path) -> tuple[int, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()

    def need(offset: int, n: int) -> bytes:
        if offset + n > len(raw):
            raise FormatError(f"checkpoint truncated at offset {offset} (needed {n} bytes)")
        return raw[offset:offset + n]

    if need(0, 4) != MAGIC:
        raise FormatError(f"bad magic at offset 0: {raw[:4]!r}")
    fmt, model_version, count = struct.unpack("<HII", need(4, 10))
    if fmt != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {fmt} at offset 4")
    pos = 14
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", need(pos, 2))
        pos += 2
        name = need(pos, name_len).decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack("<B", need(pos, 1))
        pos += 1
        dims = struct.unpack(f"<{rank}I", need(pos, 4 * rank)) if rank else ()
        pos += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        payload = need(pos, 4 * n)
        pos += 4 * n
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes at offset {pos}")
    return model_version, arrays


def model_arrays(model: Module) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        out[name] = p.data
    for name, b in model.named_buffers():
        out[name] = b
    return out


def save_model(path, model: Module) -> None:
    save_arrays(path, model_arrays(model), getattr(model, "version", 0))


def load_model(path, model: Module) -> int:
    """Load weights into ``model``, returning the stored model version.

    Unknown entry names, missing entries, and dimension mismatches are
    all rejected.
    """
    version, arrays = load_arrays(path)
    expected = model_arrays(model)
    unknown = sorted(set(arrays) - set(expected))
    if unknown:
        raise FormatError(f"checkpoint holds unknown parameter {unknown[0]!r}")
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise FormatError(f"checkpoint is missing parameter {missing[0]!r}")
    for name, target in expected.items():
        src = arrays[name]
        if src.shape != target.shape:
            raise FormatError(f"dim mismatch for {name!r}: file {src.shape}, model {target.shape}")
        target[...] = src.astype(target.dtype)
    if hasattr(model, "version"):
        model.version = version
    return version
