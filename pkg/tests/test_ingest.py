import logging

import numpy as np
import pytest
from PIL import Image

from veinmt.data import DataError
from veinmt.ingest import ingest_dataset, load_image


def _write(path, arr, fmt):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="L").save(path, format=fmt)


def test_two_by_three_stable_order(tmp_path, rng):
    for c in ("b", "a"):
        for s in ("s2", "s0", "s1"):
            _write(tmp_path / c / f"{s}.png", rng.integers(0, 256, (64, 144), dtype=np.uint8), "PNG")
    ds = ingest_dataset(tmp_path)
    assert len(ds) == 6 and ds.class_ids == ["a", "b"]
    assert ds.names == ["s0", "s1", "s2"] * 2
    assert ds.labels.tolist() == [0, 0, 0, 1, 1, 1]
    again = ingest_dataset(tmp_path)
    assert np.array_equal(ds.images, again.images) and ds.paths == again.paths
    assert ds.images.dtype == np.float32 and ds.images.min() >= 0 and ds.images.max() <= 1


def test_png_and_pgm_decode_identically(tmp_path, rng):
    arr = rng.integers(0, 256, (64, 144), dtype=np.uint8)
    _write(tmp_path / "c" / "x.png", arr, "PNG")
    _write(tmp_path / "c" / "y.pgm", arr, "PPM")
    a, b = load_image(tmp_path / "c" / "x.png"), load_image(tmp_path / "c" / "y.pgm")
    assert np.array_equal(a, b)
    assert np.array_equal(np.round(a * 255).astype(np.uint8), arr)


def test_resize_with_warning(tmp_path, caplog):
    arr = np.tile(np.linspace(0, 255, 288).astype(np.uint8), (128, 1))
    _write(tmp_path / "c" / "big.png", arr, "PNG")
    with caplog.at_level(logging.WARNING, logger="veinmt.ingest"):
        img = load_image(tmp_path / "c" / "big.png")
    assert img.shape == (64, 144)
    assert "resized" in caplog.text
    # a horizontal ramp stays a ramp
    assert np.all(np.diff(img[10]) >= 0)


def test_empty_class_skipped(tmp_path, rng, caplog):
    (tmp_path / "empty").mkdir()
    _write(tmp_path / "full" / "a.png", rng.integers(0, 256, (64, 144), dtype=np.uint8), "PNG")
    with caplog.at_level(logging.WARNING, logger="veinmt.ingest"):
        ds = ingest_dataset(tmp_path)
    assert ds.class_ids == ["full"] and "no images" in caplog.text


def test_unreadable_file_is_data_error(tmp_path):
    (tmp_path / "c").mkdir()
    (tmp_path / "c" / "bad.png").write_bytes(b"not a png")
    with pytest.raises(DataError, match="bad.png"):
        ingest_dataset(tmp_path)


def test_missing_or_empty_root(tmp_path):
    with pytest.raises(DataError):
        ingest_dataset(tmp_path / "nope")
    with pytest.raises(DataError):
        ingest_dataset(tmp_path)
