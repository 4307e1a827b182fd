"""Image, array, and sidecar I/O.

Conventions: PNG (8- or 16-bit) comes in scaled to [0, 1] floats; arrays
go out as float32 NPY; manifests and sidecars are JSON with sorted keys
so identical content means identical bytes.
"""

import json
from pathlib import Path

import numpy as np
from PIL import Image

from maskcam.core import CropSpec
from maskcam.optics import OpticalGeometry, Psf

__all__ = [
    "load_image",
    "load_psf",
    "read_json",
    "save_image",
    "save_npy",
    "save_psf",
    "write_json",
]

_IMAGE_SUFFIXES = (".png", ".tif", ".tiff")


def load_image(path):
    """Read an image file as a float array.

    PNG/TIFF integer data is scaled by its type maximum into [0, 1];
    float TIFF and ``.npy`` arrays are returned as-is (cast to float64).
    """
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path).astype(float)
    if path.suffix not in _IMAGE_SUFFIXES:
        raise ValueError(f"unsupported image format {path.suffix!r}")
    with Image.open(path) as img:
        if img.mode == "P":
            img = img.convert("RGB")
        arr = np.asarray(img)
    if arr.dtype == np.uint8:
        return arr.astype(float) / 255.0
    if arr.dtype == np.uint16:
        return arr.astype(float) / 65535.0
    if arr.dtype == np.int32:  # PIL mode "I" for 16-bit grayscale PNGs
        return arr.astype(float) / 65535.0
    return arr.astype(float)


def save_image(path, img, bit_depth=8):
    """Write a [0, 1] float image as an 8- or 16-bit PNG.

    Values are clipped to [0, 1] before quantization. 16-bit output is
    single-channel only (the PNG writer has no 16-bit RGB mode).
    """
    path = Path(path)
    img = np.asarray(img, dtype=float)
    if img.ndim not in (2, 3):
        raise ValueError("image must be 2D or (H, W, C)")
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    img = np.clip(img, 0.0, 1.0)
    if bit_depth == 8:
        data = np.round(img * 255.0).astype(np.uint8)
        out = Image.fromarray(data if img.ndim == 2 else data, mode=None)
    else:
        if img.ndim != 2:
            raise ValueError("16-bit output supports single-channel images only")
        data = np.round(img * 65535.0).astype(np.uint16)
        out = Image.fromarray(data)
    out.save(path)


def save_npy(path, arr):
    """float32 NPY, the interchange format for measurements and recons."""
    np.save(path, np.asarray(arr, dtype=np.float32))


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def _sidecar_path(path):
    return Path(path).with_suffix(".json")


def save_psf(path, psf):
    """Write a Psf as float32 NPY plus a JSON sidecar of its provenance."""
    path = Path(path)
    if path.suffix != ".npy":
        raise ValueError("psf path must end in .npy")
    save_npy(path, psf.data)
    geo = psf.geometry
    crop = geo.sensor_crop
    write_json(
        _sidecar_path(path),
        {
            "wavelengths_m": list(psf.wavelengths),
            "variant": psf.variant,
            "normalization": psf.normalization,
            "geometry": {
                "d1_m": geo.d1,
                "d2_m": geo.d2,
                "sim_height": geo.sim_height,
                "sim_width": geo.sim_width,
                "sim_pitch_m": geo.sim_pitch,
                "sensor_crop": [crop.row_start, crop.col_start, crop.height, crop.width],
            },
        },
    )


def load_psf(path):
    """Read a Psf written by save_psf; inverse up to float32 rounding.

    unit_sum channels are renormalized after the float32 round trip so
    the Psf invariant (channel sums exactly 1 to 1e-9) holds again.
    """
    path = Path(path)
    data = np.load(path).astype(float)
    meta = read_json(_sidecar_path(path))
    g = meta["geometry"]
    geometry = OpticalGeometry(
        d1=g["d1_m"],
        d2=g["d2_m"],
        sim_height=g["sim_height"],
        sim_width=g["sim_width"],
        sim_pitch=g["sim_pitch_m"],
        sensor_crop=CropSpec(*g["sensor_crop"]),
    )
    if meta["normalization"] == "unit_sum":
        sums = data.sum(axis=(0, 1))
        for c in range(data.shape[2]):
            if sums[c] > 0:
                data[:, :, c] /= sums[c]
    return Psf(
        data=data,
        wavelengths=tuple(meta["wavelengths_m"]),
        geometry=geometry,
        normalization=meta["normalization"],
        variant=meta["variant"],
    )
