import numpy as np
import pytest

from maskcam.bench import desk_psf
from maskcam.fileio import (
    load_image,
    load_psf,
    read_json,
    save_image,
    save_npy,
    save_psf,
    write_json,
)


def test_png_8bit_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(16, 20))
    path = tmp_path / "img.png"
    save_image(path, img, bit_depth=8)
    back = load_image(path)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_png_16bit_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.uniform(size=(12, 12))
    path = tmp_path / "img16.png"
    save_image(path, img, bit_depth=16)
    back = load_image(path)
    assert np.abs(back - img).max() <= 0.5 / 65535 + 1e-12


def test_png_rgb_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    img = rng.uniform(size=(8, 8, 3))
    path = tmp_path / "rgb.png"
    save_image(path, img, bit_depth=8)
    back = load_image(path)
    assert back.shape == (8, 8, 3)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_save_image_clips(tmp_path):
    img = np.array([[-1.0, 0.5], [2.0, 1.0]])
    path = tmp_path / "clip.png"
    save_image(path, img)
    back = load_image(path)
    assert back[0, 0] == 0.0
    assert back[1, 0] == 1.0


def test_16bit_rgb_rejected(tmp_path):
    with pytest.raises(ValueError):
        save_image(tmp_path / "x.png", np.zeros((4, 4, 3)), bit_depth=16)


def test_bad_bit_depth_rejected(tmp_path):
    with pytest.raises(ValueError):
        save_image(tmp_path / "x.png", np.zeros((4, 4)), bit_depth=12)


def test_npy_round_trip(tmp_path):
    arr = np.random.default_rng(3).normal(size=(6, 7)).astype(np.float32)
    path = tmp_path / "a.npy"
    save_npy(path, arr)
    back = load_image(path)
    assert np.array_equal(back, arr.astype(float))


def test_unknown_format_rejected(tmp_path):
    with pytest.raises(ValueError):
        load_image(tmp_path / "weird.bmp")


def test_json_round_trip_and_determinism(tmp_path):
    obj = {"b": [1, 2], "a": {"z": 0.5, "y": None}}
    p1, p2 = tmp_path / "one.json", tmp_path / "two.json"
    write_json(p1, obj)
    write_json(p2, {"a": {"y": None, "z": 0.5}, "b": [1, 2]})
    assert read_json(p1) == obj
    assert p1.read_bytes() == p2.read_bytes()  # sorted keys -> same bytes


def test_psf_round_trip(tmp_path):
    psf = desk_psf(4)
    path = tmp_path / "psf.npy"
    save_psf(path, psf)
    back = load_psf(path)
    assert back.data.shape == psf.data.shape
    assert np.abs(back.data - psf.data).max() < 1e-6  # float32 storage
    # unit_sum invariant restored exactly after the float32 round trip
    assert np.allclose(back.data.sum(axis=(0, 1)), 1.0, atol=1e-12)
    assert back.wavelengths == psf.wavelengths
    assert back.variant == psf.variant
    assert back.geometry.sim_pitch == psf.geometry.sim_pitch
    assert back.geometry.sensor_crop == psf.geometry.sensor_crop


def test_psf_path_must_be_npy(tmp_path):
    with pytest.raises(ValueError):
        save_psf(tmp_path / "psf.png", desk_psf(0))
