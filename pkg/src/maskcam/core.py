"""Grid primitives shared by the optics, forward-model, and solver code.

The Fourier transforms exposed here are unitary (``norm="ortho"``) so that
Parseval bookkeeping holds without grid-size factors. Padding and cropping
follow one centered-window convention used everywhere in the package: a
window of size ``s`` inside a grid of size ``t`` starts at offset
``(t - s) // 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def fft2(field):
    """Unitary 2D DFT over the first two axes.

    Accepts (H, W) or (H, W, C) arrays; channels are transformed
    independently. A unit impulse at the grid center of an 8x8 array maps
    to a field of constant magnitude 1/8.
    """
    field = np.asarray(field)
    if field.ndim not in (2, 3):
        raise ValueError(f"expected a 2D or 3D array, got shape {field.shape}")
    return np.fft.fft2(field, axes=(0, 1), norm="ortho")


def ifft2(spectrum):
    """Inverse of :func:`fft2` (unitary, first two axes)."""
    spectrum = np.asarray(spectrum)
    if spectrum.ndim not in (2, 3):
        raise ValueError(f"expected a 2D or 3D array, got shape {spectrum.shape}")
    return np.fft.ifft2(spectrum, axes=(0, 1), norm="ortho")


def centered_offset(full, inner):
    """Start index of a centered length-``inner`` window in a length-``full`` axis."""
    if inner > full:
        raise ValueError(f"window ({inner}) larger than grid ({full})")
    return (full - inner) // 2


def pad_embed(field, shape):
    """Zero-pad ``field`` into the center of a larger grid.

    Parameters
    ----------
    field : ndarray, (H, W) or (H, W, C)
    shape : tuple of int
        Target (height, width). Must be >= the field's first two dims.

    Returns
    -------
    ndarray of the same dtype, with ``field`` occupying the centered window
    and zeros elsewhere. Energy (sum |.|^2) is preserved exactly.
    """
    field = np.asarray(field)
    th, tw = shape
    h, w = field.shape[:2]
    r0 = centered_offset(th, h)
    c0 = centered_offset(tw, w)
    out = np.zeros((th, tw) + field.shape[2:], dtype=field.dtype)
    out[r0 : r0 + h, c0 : c0 + w] = field
    return out


@dataclass(frozen=True)
class CropSpec:
    """A fixed rectangular window: start row/col and output size."""

    row_start: int
    col_start: int
    height: int
    width: int

    @classmethod
    def centered(cls, full_shape, out_shape):
        """Window of ``out_shape`` centered in a grid of ``full_shape``."""
        fh, fw = full_shape[:2]
        oh, ow = out_shape[:2]
        return cls(centered_offset(fh, oh), centered_offset(fw, ow), oh, ow)

    def validate_against(self, shape):
        h, w = shape[:2]
        if self.row_start < 0 or self.col_start < 0 or self.height < 1 or self.width < 1:
            raise ValueError(f"degenerate crop window {self}")
        if self.row_start + self.height > h or self.col_start + self.width > w:
            raise ValueError(f"crop window {self} exceeds grid {h}x{w}")


def crop(field, spec):
    """Extract the window described by ``spec`` (copy, not a view)."""
    field = np.asarray(field)
    spec.validate_against(field.shape)
    return field[
        spec.row_start : spec.row_start + spec.height,
        spec.col_start : spec.col_start + spec.width,
    ].copy()


def crop_adjoint(field, spec, full_shape):
    """Adjoint of :func:`crop`: embed into zeros at the window position.

    ``<crop(x), y> == <x, crop_adjoint(y, full_shape=x.shape)>`` holds
    exactly, which the solvers rely on.
    """
    field = np.asarray(field)
    if field.shape[:2] != (spec.height, spec.width):
        raise ValueError(
            f"field shape {field.shape[:2]} does not match window "
            f"{spec.height}x{spec.width}"
        )
    spec.validate_against(full_shape)
    out = np.zeros(tuple(full_shape[:2]) + field.shape[2:], dtype=field.dtype)
    out[
        spec.row_start : spec.row_start + spec.height,
        spec.col_start : spec.col_start + spec.width,
    ] = field
    return out


def with_channel_axis(img):
    """Return (img as (H, W, C), had_channels flag). Accepts 2D or 3D input."""
    img = np.asarray(img)
    if img.ndim == 2:
        return img[:, :, None], False
    if img.ndim == 3:
        return img, True
    raise ValueError(f"expected a 2D or 3D image, got shape {img.shape}")
