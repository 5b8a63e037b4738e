"""On-disk volume format ("VSEG"), study manifests, and ingestion.

VSEG layout, little-endian: magic "VSEG", format version u16, dtype code
u8 (0 = float32, 1 = uint8), channel count u8, dims u32 x 3 (D, H, W),
then the raw payload in (C, D, H, W) order with W fastest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

MODALITIES = ("T1", "T1ce", "T2", "FLAIR")

MAGIC = b"VSEG"
FORMAT_VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.uint8): 1}


@dataclass
class Study:
    """One case: four modality volumes plus optional ground-truth labels."""

    id: str
    modalities: dict[str, np.ndarray]
    gt_labels: np.ndarray | None = None
    provenance: str = "uploaded"

    def __post_init__(self):
        missing = [m for m in MODALITIES if m not in self.modalities]
        if missing:
            raise DataError(f"modality {missing[0]} absent")
        dims = None
        for m in MODALITIES:
            v = self.modalities[m]
            if v.ndim != 3:
                raise DataError(f"modality {m} must be a (D,H,W) volume, got rank {v.ndim}")
            if dims is None:
                dims = v.shape
            elif v.shape != dims:
                raise DataError(f"modality {m} dims {v.shape} disagree with {dims}")
            self.modalities[m] = np.ascontiguousarray(v, dtype=np.float32)
        if self.gt_labels is not None:
            if self.gt_labels.shape != dims:
                raise DataError(f"label dims {self.gt_labels.shape} disagree with volumes {dims}")
            self.gt_labels = np.ascontiguousarray(self.gt_labels, dtype=np.uint8)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.modalities[MODALITIES[0]].shape


def encode_volume(volume: np.ndarray) -> bytes:
    if volume.ndim == 3:
        volume = volume[None]
    if volume.ndim != 4:
        raise FormatError(f"volume must be (C,D,H,W) or (D,H,W), got rank {volume.ndim}")
    dt = np.dtype(volume.dtype)
    if dt not in _CODE_FOR:
        raise FormatError(f"unsupported dtype {dt} (float32 or uint8)")
    c, d, h, w = volume.shape
    if c > 255:
        raise FormatError(f"channel count {c} exceeds format limit 255")
    header = MAGIC + np.uint16(FORMAT_VERSION).tobytes() + bytes([_CODE_FOR[dt], c])
    header += np.asarray([d, h, w], dtype="<u4").tobytes()
    return header + np.ascontiguousarray(volume).astype(dt.newbyteorder("<")).tobytes()


def decode_volume(raw: bytes) -> np.ndarray:
    def need(offset: int, n: int) -> bytes:
        if offset + n > len(raw):
            raise FormatError(f"volume truncated at offset {offset} (needed {n} bytes)")
        return raw[offset:offset + n]

    if need(0, 4) != MAGIC:
        raise FormatError(f"bad magic at offset 0: {raw[:4]!r}")
    version = int(np.frombuffer(need(4, 2), "<u2")[0])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} at offset 4")
    code, channels = need(6, 1)[0], need(7, 1)[0]
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code} at offset 6")
    d, h, w = (int(v) for v in np.frombuffer(need(8, 12), "<u4"))
    dt = _DTYPE_CODES[code]
    n_bytes = channels * d * h * w * dt.itemsize
    payload = need(20, n_bytes)
    if len(raw) != 20 + n_bytes:
        raise FormatError(f"{len(raw) - 20 - n_bytes} trailing bytes at offset {20 + n_bytes}")
    return np.frombuffer(payload, dtype=dt).reshape(channels, d, h, w).copy()


def write_volume(path, volume: np.ndarray) -> None:
    Path(path).write_bytes(encode_volume(volume))


def read_volume(path) -> np.ndarray:
    return decode_volume(Path(path).read_bytes())


def remap_raw_labels(labels: np.ndarray) -> np.ndarray:
    """Map raw label 4 (enhancing tumor in source data) to internal label 3."""
    vals = set(int(v) for v in np.unique(labels))
    if not vals <= {0, 1, 2, 4}:
        raise DataError(f"raw labels outside {{0,1,2,4}}: {sorted(vals)}")
    out = labels.copy()
    out[out == 4] = 3
    return out


def validate_labels(labels: np.ndarray) -> np.ndarray:
    vals = set(int(v) for v in np.unique(labels))
    if not vals <= {0, 1, 2, 3}:
        raise DataError(f"labels outside {{0,1,2,3}}: {sorted(vals)}")
    return labels


def save_study(directory, study: Study) -> Path:
    """Write modality volumes, optional labels, and the manifest; returns manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for m in MODALITIES:
        fname = f"{m.lower()}.vseg"
        write_volume(directory / fname, study.modalities[m])
        files[m] = fname
    manifest = {"id": study.id, "files": files, "labels": None,
                "label_remap": False, "provenance": study.provenance}
    if study.gt_labels is not None:
        write_volume(directory / "labels.vseg", study.gt_labels)
        manifest["labels"] = "labels.vseg"
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_study(manifest_path) -> Study:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from None
    files = manifest.get("files", {})
    missing = [m for m in MODALITIES if m not in files]
    if missing:
        raise DataError(f"modality {missing[0]} absent")
    base = manifest_path.parent
    modalities = {}
    for m in MODALITIES:
        vol = read_volume(base / files[m])
        if vol.shape[0] != 1:
            raise DataError(f"modality {m} must be single-channel, file has {vol.shape[0]}")
        modalities[m] = vol[0]
    labels = None
    if manifest.get("labels"):
        lab = read_volume(base / manifest["labels"])[0]
        labels = remap_raw_labels(lab) if manifest.get("label_remap") else validate_labels(lab)
    return Study(id=manifest["id"], modalities=modalities, gt_labels=labels,
                 provenance=manifest.get("provenance", "uploaded"))
