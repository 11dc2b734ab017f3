import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from spikit.dataset import (
    DatasetManifest,
    checksum,
    ingest,
    load_archive,
    photo_crops,
    resize_bilinear,
    save_archive,
    synth_phantoms,
)


def write_folder(path, count, side=16, seed=0):
    rng = np.random.default_rng(seed)
    for i in range(count):
        arr = rng.integers(0, 256, (side, side), dtype=np.uint8)
        Image.fromarray(arr).save(path / f"img{i:03d}.png")


def test_ingest_nine_to_one_split(tmp_path):
    write_folder(tmp_path, 100)
    train, test, manifest = ingest(tmp_path, N=8, seed=0)
    assert train.shape == (90, 8, 8) and test.shape == (10, 8, 8)
    assert manifest.image_count == 100
    assert not set(manifest.train_files) & set(manifest.test_files)


def test_grayscale_at_target_size_passes_through(tmp_path):
    arr = np.arange(64, dtype=np.uint8).reshape(8, 8) * 3
    Image.fromarray(arr).save(tmp_path / "a.png")
    for i in range(10):
        Image.fromarray(arr[::-1]).save(tmp_path / f"b{i}.png")
    train, test, manifest = ingest(tmp_path, N=8, seed=0)
    everything = dict(zip(manifest.train_files + manifest.test_files, np.concatenate([train, test])))
    np.testing.assert_array_equal(everything["a.png"], arr / 255.0)


def test_ingest_deterministic(tmp_path):
    write_folder(tmp_path, 20)
    _, _, m1 = ingest(tmp_path, N=8, seed=3)
    _, _, m2 = ingest(tmp_path, N=8, seed=3)
    assert m1.to_text() == m2.to_text()
    _, _, m3 = ingest(tmp_path, N=8, seed=4)
    assert m3.train_files != m1.train_files


def test_undecodable_file_skipped(tmp_path, caplog):
    write_folder(tmp_path, 12)
    (tmp_path / "broken.png").write_bytes(b"not a png")
    _, _, manifest = ingest(tmp_path, N=8)
    assert manifest.image_count == 12
    assert "broken.png" in caplog.text


def test_empty_folder_errors(tmp_path):
    with pytest.raises(ValueError):
        ingest(tmp_path)


def test_manifest_text(tmp_path):
    write_folder(tmp_path, 10)
    _, _, manifest = ingest(tmp_path, N=8)
    manifest.write(tmp_path / "manifest.txt")
    text = (tmp_path / "manifest.txt").read_text()
    assert "resampling = bilinear" in text and "ITU-R BT.601" in text
    assert text.count("\ntrain ") + text.count("\ntest ") == 10
    with pytest.raises(ValueError):
        DatasetManifest("x", 1, 8, 1.0, 0)


@settings(max_examples=20)
@given(seed=st.integers(0, 2**31), N=st.integers(2, 20))
def test_resize_idempotent_at_target(seed, N):
    img = np.random.default_rng(seed).random((N, N))
    np.testing.assert_array_equal(resize_bilinear(img, N), img)
    once = resize_bilinear(np.random.default_rng(seed).random((3 * N, 2 * N)), N)
    np.testing.assert_array_equal(resize_bilinear(once, N), once)


def test_resize_preserves_constant_and_linear_ramps():
    assert np.allclose(resize_bilinear(np.full((30, 20), 0.4), 7), 0.4)
    ramp = np.tile(np.arange(8) + 0.5, (8, 1)) / 8
    np.testing.assert_allclose(resize_bilinear(ramp, 4), np.tile(np.arange(4) + 0.5, (4, 1)) / 4)


# --- phantoms -----------------------------------------------------------------------


def test_phantom_checksum_reproducible():
    a = synth_phantoms(1, 32, seed=11)
    assert checksum(a[0]) == checksum(synth_phantoms(1, 32, seed=11)[0])
    assert checksum(a[0]) != checksum(synth_phantoms(1, 32, seed=12)[0])


@settings(max_examples=15)
@given(seed=st.integers(0, 2**31), family=st.sampled_from(["rectangles", "textured", "mixed"]))
def test_phantom_range(seed, family):
    imgs = synth_phantoms(3, 16, seed=seed, family=family)
    assert imgs.min() >= 0 and imgs.max() <= 1


def test_rectangle_gradient_sparsity():
    imgs = synth_phantoms(50, 64, seed=0, family="rectangles")
    dh = np.diff(imgs, axis=2)
    dv = np.diff(imgs, axis=1)
    zero = (np.count_nonzero(dh == 0) + np.count_nonzero(dv == 0)) / (dh.size + dv.size)
    assert zero >= 0.6


def test_phantom_validation():
    with pytest.raises(ValueError):
        synth_phantoms(0, 8)
    with pytest.raises(ValueError):
        synth_phantoms(1, 8, family="clouds")


# --- archive ------------------------------------------------------------------------


def test_archive_round_trip(tmp_path):
    imgs = synth_phantoms(4, 8, seed=1).astype(np.float32).astype(np.float64)
    save_archive(tmp_path / "a.bin", imgs)
    np.testing.assert_array_equal(load_archive(tmp_path / "a.bin"), imgs)
    raw = (tmp_path / "a.bin").read_bytes()
    (tmp_path / "b.bin").write_bytes(raw[:-4])
    with pytest.raises(ValueError):
        load_archive(tmp_path / "b.bin")


# --- photographic crops -------------------------------------------------------------


def test_photo_crops_disjoint_and_deterministic():
    pytest.importorskip("skimage")
    train = photo_crops(12, 16, seed=0, split="train")
    test = photo_crops(12, 16, seed=0, split="test")
    assert train.shape == (12, 16, 16) and train.min() >= 0 and train.max() <= 1
    np.testing.assert_array_equal(test, photo_crops(12, 16, seed=0, split="test"))
    assert not {checksum(x) for x in train} & {checksum(x) for x in test}
    with pytest.raises(ValueError):
        photo_crops(1, 16, split="validation")
