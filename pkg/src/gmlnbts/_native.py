"""Loader for the optional native convolution kernels.

The C source ships with the package and is compiled once with the system
compiler into a per-user cache directory. Everything degrades gracefully:
if no compiler is present, the build fails, or ``GMLNBTS_NO_NATIVE`` is
set, callers get ``None`` and conv_engine falls back to its numpy path.
"""

from __future__ import annotations

import ctypes
import hashlib
import os
import subprocess
import tempfile
import warnings
from pathlib import Path

_SRC = Path(__file__).with_name("_kernels.c")
_CFLAGS = ["-O3", "-march=native", "-fopenmp", "-shared", "-fPIC", "-std=c11"]

_lib: ctypes.CDLL | None = None
_tried = False


def _cache_dir() -> Path:
    base = os.environ.get("XDG_CACHE_HOME") or os.path.join(os.path.expanduser("~"), ".cache")
    d = Path(base) / "gmlnbts"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _build() -> Path | None:
    if not _SRC.exists():
        return None
    tag = hashlib.sha1((_SRC.read_bytes() + " ".join(_CFLAGS).encode())).hexdigest()[:16]
    out = _cache_dir() / f"kernels-{tag}.so"
    if out.exists():
        return out
    for cc in ("cc", "gcc", "clang"):
        try:
            # Build into a temp file first so a crashed compile never leaves
            # a half-written .so behind for the next import to load.
            with tempfile.NamedTemporaryFile(dir=out.parent, suffix=".so", delete=False) as tmp:
                tmp_path = Path(tmp.name)
            res = subprocess.run(
                [cc, *_CFLAGS, "-o", str(tmp_path), str(_SRC)],
                capture_output=True,
                timeout=120,
            )
            if res.returncode == 0:
                tmp_path.replace(out)
                return out
            tmp_path.unlink(missing_ok=True)
        except (OSError, subprocess.TimeoutExpired):
            continue
    return None


def load() -> ctypes.CDLL | None:
    """Compile (if needed) and load the kernel library, or None on failure."""
    global _lib, _tried
    if _tried:
        return _lib
    _tried = True
    if os.environ.get("GMLNBTS_NO_NATIVE"):
        return None
    try:
        path = _build()
        if path is None:
            return None
        lib = ctypes.CDLL(str(path))
    except OSError as exc:
        warnings.warn(f"native kernels unavailable, using numpy path: {exc}", RuntimeWarning)
        return None

    i64 = ctypes.c_int64
    lib.kernels_abi_version.restype = i64
    lib.kernels_abi_version.argtypes = []
    if lib.kernels_abi_version() != 2:
        return None
    n_ints = {"conv_fwd": 18, "convt_fwd": 18, "conv_gradw": 18, "conv_fwd2": 12, "convt_fwd2": 18}
    for name, ptr in (("f32", ctypes.POINTER(ctypes.c_float)), ("f64", ctypes.POINTER(ctypes.c_double))):
        for base, n in n_ints.items():
            f = getattr(lib, f"{base}_{name}")
            f.restype = None
            f.argtypes = [ptr, ptr, ptr] + [i64] * n
    _lib = lib
    return _lib
