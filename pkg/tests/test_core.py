import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskcam.core import (
    CropSpec,
    crop,
    crop_adjoint,
    fft2,
    ifft2,
    pad_embed,
    with_channel_axis,
)


def dft2_reference(field):
    """Naive O(N^4) unitary DFT, the independent oracle for fft2."""
    h, w = field.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for m in range(h):
                for n in range(w):
                    acc += field[m, n] * np.exp(-2j * np.pi * (u * m / h + v * n / w))
            out[u, v] = acc
    return out / np.sqrt(h * w)


def test_fft2_matches_naive_dft():
    rng = np.random.default_rng(0)
    field = rng.normal(size=(6, 5)) + 1j * rng.normal(size=(6, 5))
    assert np.allclose(fft2(field), dft2_reference(field), atol=1e-12)


def test_fft2_matches_naive_dft_odd_sizes():
    rng = np.random.default_rng(1)
    field = rng.normal(size=(7, 3)) + 1j * rng.normal(size=(7, 3))
    assert np.allclose(fft2(field), dft2_reference(field), atol=1e-12)


def test_centered_delta_has_flat_magnitude():
    field = np.zeros((8, 8))
    field[4, 4] = 1.0
    mag = np.abs(fft2(field))
    assert np.allclose(mag, 1.0 / 8.0, atol=1e-12)


def test_fft2_transforms_channels_independently():
    rng = np.random.default_rng(2)
    img = rng.normal(size=(8, 6, 3))
    spectra = fft2(img)
    for c in range(3):
        assert np.allclose(spectra[:, :, c], fft2(img[:, :, c]))


def test_fft2_rejects_bad_rank():
    with pytest.raises(ValueError):
        fft2(np.zeros(8))


@settings(deadline=None, max_examples=25)
@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 2**31 - 1))
def test_fft_round_trip_and_parseval(h, w, seed):
    rng = np.random.default_rng(seed)
    field = rng.normal(size=(h, w)) + 1j * rng.normal(size=(h, w))
    spectrum = fft2(field)
    assert np.allclose(ifft2(spectrum), field, atol=1e-10)
    assert np.isclose(np.sum(np.abs(spectrum) ** 2), np.sum(np.abs(field) ** 2))


def test_pad_embed_placement():
    field = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = pad_embed(field, (4, 5))
    assert out.shape == (4, 5)
    # centered window starts at ((4-2)//2, (5-2)//2) == (1, 1)
    assert np.array_equal(out[1:3, 1:3], field)
    assert out.sum() == field.sum()


def test_pad_embed_preserves_energy_and_dtype():
    rng = np.random.default_rng(3)
    field = rng.normal(size=(5, 7)) + 1j * rng.normal(size=(5, 7))
    out = pad_embed(field, (11, 11))
    assert out.dtype == field.dtype
    assert np.isclose(np.sum(np.abs(out) ** 2), np.sum(np.abs(field) ** 2))


def test_pad_embed_rejects_shrinking():
    with pytest.raises(ValueError):
        pad_embed(np.zeros((4, 4)), (3, 6))


def test_pad_embed_keeps_channels():
    img = np.ones((2, 2, 3))
    out = pad_embed(img, (6, 6))
    assert out.shape == (6, 6, 3)
    assert np.array_equal(out[2:4, 2:4], img)


def test_crop_undoes_centered_pad():
    rng = np.random.default_rng(4)
    field = rng.normal(size=(3, 6))
    padded = pad_embed(field, (9, 10))
    spec = CropSpec.centered(padded.shape, field.shape)
    assert np.array_equal(crop(padded, spec), field)


def test_crop_rejects_out_of_bounds_window():
    spec = CropSpec(row_start=3, col_start=0, height=4, width=4)
    with pytest.raises(ValueError):
        crop(np.zeros((6, 6)), spec)


def test_crop_adjoint_zero_fills():
    spec = CropSpec(row_start=1, col_start=2, height=2, width=2)
    patch = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = crop_adjoint(patch, spec, (5, 6))
    assert out.shape == (5, 6)
    assert np.array_equal(out[1:3, 2:4], patch)
    assert out.sum() == patch.sum()


@st.composite
def crop_case(draw):
    h = draw(st.integers(2, 10))
    w = draw(st.integers(2, 10))
    ch = draw(st.integers(1, h))
    cw = draw(st.integers(1, w))
    r0 = draw(st.integers(0, h - ch))
    c0 = draw(st.integers(0, w - cw))
    seed = draw(st.integers(0, 2**31 - 1))
    return h, w, CropSpec(r0, c0, ch, cw), seed


@settings(deadline=None, max_examples=50)
@given(crop_case())
def test_crop_and_crop_adjoint_are_adjoint(case):
    h, w, spec, seed = case
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(h, w))
    y = rng.normal(size=(spec.height, spec.width))
    lhs = np.vdot(crop(x, spec), y)
    rhs = np.vdot(x, crop_adjoint(y, spec, (h, w)))
    assert np.isclose(lhs, rhs, atol=1e-12)


def test_crop_adjoint_checks_field_shape():
    spec = CropSpec(0, 0, 2, 2)
    with pytest.raises(ValueError):
        crop_adjoint(np.zeros((3, 3)), spec, (4, 4))


def test_with_channel_axis():
    flat, had = with_channel_axis(np.zeros((4, 5)))
    assert flat.shape == (4, 5, 1) and not had
    img, had = with_channel_axis(np.zeros((4, 5, 2)))
    assert img.shape == (4, 5, 2) and had
    with pytest.raises(ValueError):
        with_channel_axis(np.zeros(4))
