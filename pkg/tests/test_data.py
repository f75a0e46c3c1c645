import json

import numpy as np
import pytest
from PIL import Image

from spgen.data import (
    DataError,
    load_dataset,
    load_image,
    load_saliency,
    load_scanpaths,
    read_manifest,
    read_scanpath_file,
    resize_bilinear,
    save_saliency,
    synthetic_dataset,
    write_dataset,
    write_scanpaths,
)
from spgen.model import ModelConfig, init_params
from spgen.scanpath import ScanPath
from spgen.training import probe_accuracy


def _doc(fixations, **extra):
    doc = {"image": "a.png", "width": 640, "height": 480,
           "scanpaths": [{"observer": "o1", "fixations": fixations}]}
    doc.update(extra)
    return doc


def _write(tmp_path, doc, name="sp.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return path


# scanpath JSON ---------------------------------------------------------------------------


def test_single_scanpath_of_three(tmp_path):
    fx = [{"x": 0.1, "y": 0.2}, {"x": 0.5, "y": 0.5}, {"x": 0.9, "y": 0.3}]
    paths = load_scanpaths(_write(tmp_path, _doc(fx)))
    assert len(paths) == 1 and len(paths[0]) == 3
    np.testing.assert_array_equal(paths[0].fixations, [[0.1, 0.2], [0.5, 0.5], [0.9, 0.3]])


def test_out_of_range_names_fixation_index(tmp_path):
    fx = [{"x": 0.1, "y": 0.2}, {"x": 1.2, "y": 0.5}]
    with pytest.raises(DataError, match=r"fixations\[1\].*fixation index 1"):
        load_scanpaths(_write(tmp_path, _doc(fx)))


@pytest.mark.parametrize("doc,msg", [
    ("{not json", "line 1"),
    (_doc([]), "empty scanpath"),
    (_doc([{"x": 0.1}]), r"fixations\[0\]: missing field 'y'"),
    (_doc([{"x": "0.1", "y": 0.2}]), "expected"),
    ({"width": 1, "height": 1}, "scanpaths"),
])
def test_parse_errors_are_descriptive(tmp_path, doc, msg):
    with pytest.raises(DataError, match=msg):
        read_scanpath_file(_write(tmp_path, doc))


def test_scanpath_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    paths = [ScanPath(rng.uniform(0, 1, (n, 2))) for n in (1, 4, 7)]
    write_scanpaths(tmp_path / "rt.json", paths, "x.png", 32, 16, ["a", "b", "c"])
    back = read_scanpath_file(tmp_path / "rt.json")
    assert back.observers == ["a", "b", "c"] and (back.width, back.height) == (32, 16)
    assert all(p == q for p, q in zip(paths, back.scanpaths))


def test_missing_scanpath_file(tmp_path):
    with pytest.raises(DataError, match="cannot read"):
        load_scanpaths(tmp_path / "nope.json")


# images ------------------------------------------------------------------------------------


def test_gray_png_decodes_to_half(tmp_path):
    Image.fromarray(np.full((10, 12, 3), 128, np.uint8)).save(tmp_path / "g.png")
    img = load_image(tmp_path / "g.png", 8, 8)
    assert img.shape == (3, 8, 8) and img.dtype == np.float32
    np.testing.assert_allclose(img, 128 / 255, atol=1e-6)


def test_ppm_and_identity_resize(tmp_path):
    arr = np.random.default_rng(1).integers(0, 256, (64, 64, 3), dtype=np.uint8)
    Image.fromarray(arr).save(tmp_path / "r.ppm")
    img = load_image(tmp_path / "r.ppm", 64, 64)
    np.testing.assert_array_equal(img, arr.transpose(2, 0, 1).astype(np.float32) / 255)


def test_checkerboard_upsample_keeps_corners():
    board = np.array([[[0.0, 1.0], [1.0, 0.0]]], np.float32)
    up = resize_bilinear(board, 4, 4)[0]
    assert (up[0, 0], up[0, -1], up[-1, 0], up[-1, -1]) == (0.0, 1.0, 1.0, 0.0)
    # hand-evaluated weight at (1, 1): source point (1/3, 1/3)
    assert up[1, 1] == pytest.approx(2 * (1 / 3) * (2 / 3))


def test_image_errors(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_image(tmp_path / "missing.png", 8, 8)
    (tmp_path / "bad.png").write_bytes(b"\x89PNG garbage")
    with pytest.raises(DataError):
        load_image(tmp_path / "bad.png", 8, 8)
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(tmp_path / "x.bmp")
    with pytest.raises(DataError, match="unsupported"):
        load_image(tmp_path / "x.bmp", 8, 8)


def test_saliency_8_and_16_bit(tmp_path):
    Image.fromarray(np.array([[0, 255], [51, 102]], np.uint8)).save(tmp_path / "s8.png")
    np.testing.assert_allclose(load_saliency(tmp_path / "s8.png").raw, [[0, 1], [0.2, 0.4]])
    Image.fromarray(np.array([[0, 255]], np.uint8)).save(tmp_path / "s8.pgm")
    np.testing.assert_allclose(load_saliency(tmp_path / "s8.pgm").raw, [[0, 1]])
    sal = np.array([[0.0, 0.25], [0.5, 1.0]])
    save_saliency(tmp_path / "s16.png", sal)
    np.testing.assert_allclose(load_saliency(tmp_path / "s16.png").raw, sal, atol=1 / 65535)


# manifests ---------------------------------------------------------------------------------


def test_dataset_write_read_round_trip(tmp_path):
    samples = synthetic_dataset(3, 4, 32, 32)
    manifest = write_dataset(samples, tmp_path / "ds", split="val")
    loaded = load_dataset(manifest, 32, 32)
    assert [s.id for s in loaded] == [s.id for s in samples]
    for a, b in zip(samples, loaded):
        assert a.scanpaths[0] == b.scanpaths[0]
        np.testing.assert_allclose(a.image, b.image, atol=0.5 / 255 + 1e-6)
    assert load_dataset(manifest, 32, 32, split="train") == []
    again = read_manifest(manifest)
    assert again == read_manifest(manifest)


@pytest.mark.parametrize("doc,msg", [
    ({"image": "x"}, "array"),
    ([{"scanpaths": "a.json"}], "missing field 'image'"),
    ([{"image": "i.png", "domain": "other"}], "domain"),
    ([{"image": "i.png", "split": "dev"}], "split"),
    ([{"image": "nope.png"}], "does not exist"),
])
def test_manifest_errors(tmp_path, doc, msg):
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(tmp_path / "i.png")
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(DataError, match=msg):
        read_manifest(tmp_path / "m.json")


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError, match="not found"):
        read_manifest(tmp_path / "none.json")


# synthetic data ----------------------------------------------------------------------------


def test_synthetic_is_deterministic():
    a, b = synthetic_dataset(5, 6), synthetic_dataset(5, 6)
    for x, y in zip(a, b):
        assert x.image.tobytes() == y.image.tobytes() and x.scanpaths[0] == y.scanpaths[0]
    assert synthetic_dataset(6, 1)[0].image.tobytes() != a[0].image.tobytes()


def test_synthetic_fixations_on_blob_centres():
    for s in synthetic_dataset(7, 20):
        sp = s.scanpaths[0]
        assert 2 <= len(sp) <= 5
        lum = s.image.mean(0)
        for x, y in sp.fixations:
            r, c = int(round(y * 64)), int(round(x * 64))
            patch = lum[r - 1:r + 2, c - 1:c + 2]
            # the local luminance maximum sits within one pixel of the fixation
            win = lum[r - 3:r + 4, c - 3:c + 4]
            assert patch.max() == win.max()
        assert np.all((sp.fixations >= 0) & (sp.fixations <= 1))


def test_synthetic_visits_brightest_first():
    for s in synthetic_dataset(8, 20):
        lum = s.image.mean(0)
        peaks = [lum[int(round(y * 64)), int(round(x * 64))] for x, y in s.scanpaths[0].fixations]
        assert peaks[0] == max(peaks)


def test_target_shift_direction():
    src = synthetic_dataset(9, 3)
    tgt = synthetic_dataset(9, 3, domain="target", domain_shift=0.1)
    for a, b in zip(src, tgt):
        diff = (b.image - a.image).mean(axis=(1, 2))
        assert diff[0] > 0.05 and abs(diff[1]) < 1e-6 and diff[2] < -0.05
        assert b.id.startswith("t") and b.domain == "target"


def test_synthetic_errors():
    with pytest.raises(ValueError):
        synthetic_dataset(0, 0)
    with pytest.raises(ValueError):
        synthetic_dataset(0, 1, domain="other")


def test_unshifted_domains_are_indistinguishable():
    src = synthetic_dataset(10, 100)
    tgt = synthetic_dataset(11, 100, domain="target", domain_shift=0.0)
    acc = probe_accuracy(init_params(ModelConfig(), 0), src, tgt)
    assert 0.4 <= acc <= 0.6
