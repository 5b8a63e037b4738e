"""Phantom generator and the on-disk volume/study formats."""

import numpy as np
import pytest

from gmlnbts.errors import DataError, FormatError
from gmlnbts.phantom import PhantomConfig, generate_dataset, generate_phantom, shifted_config
from gmlnbts.volume_io import (MODALITIES, Study, decode_volume, encode_volume,
                               load_study, read_volume, remap_raw_labels,
                               save_study, write_volume)

CFG = PhantomConfig(size=(16, 16, 16), seed=42)


def test_generator_deterministic():
    a = generate_phantom(CFG, 3)
    b = generate_phantom(CFG, 3)
    for m in MODALITIES:
        assert np.array_equal(a.modalities[m], b.modalities[m])
    assert np.array_equal(a.gt_labels, b.gt_labels)


def test_label_nesting_and_range():
    for i in range(5):
        s = generate_phantom(CFG, i)
        labs = set(np.unique(s.gt_labels))
        assert labs <= {0, 1, 2, 3}
        et = np.isin(s.gt_labels, [3])
        tc = np.isin(s.gt_labels, [1, 3])
        wt = np.isin(s.gt_labels, [1, 2, 3])
        assert not (et & ~tc).any()
        assert not (tc & ~wt).any()
        assert np.isfinite(s.modalities["T1"]).all()


def test_modality_sensitivity_encoded():
    s = generate_phantom(PhantomConfig(size=(32, 32, 32), seed=7), 0)
    brain = (s.gt_labels == 0) & (s.modalities["T1"] > 0.5)
    et = s.gt_labels == 3
    ed = s.gt_labels == 2
    assert s.modalities["T1ce"][et].mean() > s.modalities["T1ce"][brain].mean()
    assert s.modalities["FLAIR"][ed].mean() > s.modalities["FLAIR"][brain].mean()


def test_distinct_indices_distinct_geometry():
    vols = [generate_phantom(CFG, i).gt_labels.tobytes() for i in range(100)]
    assert len(set(vols)) == 100


def test_shifted_config_scales():
    shifted = shifted_config(CFG)
    assert shifted.gain == pytest.approx(CFG.gain * 1.15)
    assert shifted.noise_sigma == pytest.approx(CFG.noise_sigma * 2)
    a = generate_phantom(CFG, 0)
    b = generate_phantom(shifted, 0)
    assert b.modalities["T1"].mean() > a.modalities["T1"].mean()


def test_volume_roundtrip_float_and_labels(rng):
    for _ in range(50):
        c = int(rng.integers(1, 4))
        dims = tuple(int(v) for v in rng.integers(2, 6, 3))
        vol = rng.standard_normal((c, *dims)).astype(np.float32)
        assert np.array_equal(decode_volume(encode_volume(vol)), vol)
        lab = rng.integers(0, 4, size=(1, *dims)).astype(np.uint8)
        assert np.array_equal(decode_volume(encode_volume(lab)), lab)


def test_volume_header_size_example():
    vol = np.zeros((1, 32, 32, 32), dtype=np.float32)
    raw = encode_volume(vol)
    assert len(raw) == 20 + 32 ** 3 * 4  # header + payload


def test_volume_rejects_bad_magic_and_truncation():
    vol = np.zeros((1, 2, 2, 2), dtype=np.float32)
    raw = bytearray(encode_volume(vol))
    with pytest.raises(FormatError, match="offset 0"):
        decode_volume(b"XSEG" + bytes(raw[4:]))
    with pytest.raises(FormatError, match="truncated"):
        decode_volume(bytes(raw[:-5]))
    with pytest.raises(FormatError, match="trailing"):
        decode_volume(bytes(raw) + b"\x00")
    bad_dtype = bytes(raw[:6]) + b"\x07" + bytes(raw[7:])
    with pytest.raises(FormatError, match="dtype"):
        decode_volume(bad_dtype)


def test_study_save_load_roundtrip(tmp_path):
    s = generate_phantom(CFG, 1)
    manifest = save_study(tmp_path / s.id, s)
    back = load_study(manifest)
    assert back.id == s.id
    for m in MODALITIES:
        assert np.array_equal(back.modalities[m], s.modalities[m])
    assert np.array_equal(back.gt_labels, s.gt_labels)


def test_missing_modality_named(tmp_path):
    s = generate_phantom(CFG, 2)
    manifest_path = save_study(tmp_path / s.id, s)
    import json
    manifest = json.loads(manifest_path.read_text())
    del manifest["files"]["T1ce"]
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(DataError, match="T1ce absent"):
        load_study(manifest_path)


def test_study_requires_consistent_dims():
    mods = {m: np.zeros((4, 4, 4), np.float32) for m in MODALITIES}
    mods["T2"] = np.zeros((4, 4, 5), np.float32)
    with pytest.raises(DataError, match="T2"):
        Study(id="x", modalities=mods)


def test_raw_label_remap(tmp_path):
    s = generate_phantom(CFG, 3)
    raw = s.gt_labels.copy()
    raw[raw == 3] = 4  # source convention
    manifest_path = save_study(tmp_path / s.id, Study(
        id=s.id, modalities=dict(s.modalities), gt_labels=None))
    write_volume(tmp_path / s.id / "labels.vseg", raw)
    import json
    manifest = json.loads(manifest_path.read_text())
    manifest["labels"] = "labels.vseg"
    manifest["label_remap"] = True
    manifest_path.write_text(json.dumps(manifest))
    back = load_study(manifest_path)
    assert set(np.unique(back.gt_labels)) <= {0, 1, 2, 3}
    assert np.array_equal(back.gt_labels, s.gt_labels)
    # direct remap checks
    assert np.array_equal(remap_raw_labels(np.array([0, 1, 2, 4])), [0, 1, 2, 3])
    with pytest.raises(DataError):
        remap_raw_labels(np.array([0, 3]))


def test_many_roundtrips_lossless(rng):
    # formatted volumes survive unchanged across dtype and dims
    for _ in range(200):
        dims = tuple(int(v) for v in rng.integers(1, 5, 3))
        vol = rng.standard_normal((1, *dims)).astype(np.float32)
        assert decode_volume(encode_volume(vol)).tobytes() == vol.tobytes()
