"""Wave-optics PSF simulation for programmable-mask lensless cameras.

The chain mirrors the physical camera: a point source at distance ``d1``
illuminates the mask with a spherical wave, the mask transmits an
amplitude pattern rasterized from its programmable sub-pixel apertures,
the field propagates a short distance ``d2`` to the sensor via the
bandlimited angular-spectrum method, and the PSF is the arrival
intensity, one narrowband wavelength per color channel.

Simulation happens on a grid larger and finer than the sensor (default
4x the extent at half the pitch) so FFT propagation does not wrap; the
sensor window is cut out at the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from maskcam.core import CropSpec, crop, fft2, ifft2

CHANNEL_NAMES = ("R", "G", "B")

# Default LCD geometry. The sub-pixel aperture (0.06 mm x 0.18 mm) is the
# controllable opening of one color column of one pixel cell; the pitch
# values are a documented configuration choice consistent with a 1.8"
# 128x160 panel (0.219 mm pixel cells, three 0.073 mm color columns each).
PIXEL_PITCH = 0.219e-3
SUBPIXEL_PITCH = 0.073e-3
SUBPIXEL_APERTURE = (0.06e-3, 0.18e-3)  # (width, height) in meters

DEFAULT_WAVELENGTHS = (640e-9, 550e-9, 460e-9)  # R, G, B


def fresnel_number(aperture, distance, wavelength):
    """a^2 / (d * lambda): rough gauge of whether diffraction matters.

    Values near or below ~1 mean ray optics is insufficient and the wave
    simulation is warranted. Accepts scalars or arrays (broadcast).
    """
    aperture = np.asarray(aperture, dtype=float)
    distance = np.asarray(distance, dtype=float)
    wavelength = np.asarray(wavelength, dtype=float)
    if np.any(aperture <= 0) or np.any(distance <= 0) or np.any(wavelength <= 0):
        raise ValueError("aperture, distance, and wavelength must be positive")
    out = aperture**2 / (distance * wavelength)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class OpticalGeometry:
    """Distances and simulation grid for one camera configuration.

    d1: scene (point source) to mask, meters.
    d2: mask to sensor, meters.
    sim_height, sim_width: simulation grid in samples.
    sim_pitch: sample spacing, meters.
    sensor_crop: window of the simulation grid that the sensor occupies.
    """

    d1: float = 0.30
    d2: float = 2e-3
    sim_height: int = 512
    sim_width: int = 512
    sim_pitch: float = 1e-5
    sensor_crop: CropSpec = None

    def __post_init__(self):
        if self.d1 <= 0 or self.d2 <= 0:
            raise ValueError("d1 and d2 must be positive")
        if self.sim_pitch <= 0:
            raise ValueError("sim_pitch must be positive")
        if self.sim_height < 1 or self.sim_width < 1:
            raise ValueError("simulation grid must be nonempty")
        if self.sensor_crop is None:
            object.__setattr__(
                self, "sensor_crop", CropSpec(0, 0, self.sim_height, self.sim_width)
            )
        self.sensor_crop.validate_against((self.sim_height, self.sim_width))

    @classmethod
    def for_sensor(
        cls,
        sensor_shape,
        sensor_pitch,
        d1=0.30,
        d2=2e-3,
        oversample=2,
        extent_factor=4.0,
    ):
        """Geometry whose sim grid covers ``extent_factor`` times the sensor.

        The simulation pitch is ``sensor_pitch / oversample``; the sensor
        window is the centered crop of ``oversample * sensor_shape``
        samples. Defaults (2x oversampling, 4x extent) keep FFT
        wraparound negligible for the short mask-to-sensor distances
        involved.
        """
        sh, sw = sensor_shape
        pitch = sensor_pitch / oversample
        gh = int(math.ceil(sh * oversample * extent_factor))
        gw = int(math.ceil(sw * oversample * extent_factor))
        spec = CropSpec.centered((gh, gw), (sh * oversample, sw * oversample))
        return cls(d1=d1, d2=d2, sim_height=gh, sim_width=gw, sim_pitch=pitch,
                   sensor_crop=spec)

    def grid_coords(self):
        """(y, x) coordinate vectors of the sim grid, centered at index N//2."""
        ys = (np.arange(self.sim_height) - self.sim_height // 2) * self.sim_pitch
        xs = (np.arange(self.sim_width) - self.sim_width // 2) * self.sim_pitch
        return ys, xs


@dataclass(frozen=True)
class ComplexField(object):
    """Sampled optical field (or spectrum): value grid plus sample pitch."""

    samples: np.ndarray
    pitch: float

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples))
        if self.samples.ndim != 2:
            raise ValueError("field samples must be 2D")
        if self.pitch <= 0:
            raise ValueError("pitch must be positive")

    @property
    def shape(self):
        return self.samples.shape

    def energy(self):
        return float(np.sum(np.abs(self.samples) ** 2))


@dataclass(frozen=True)
class MaskPattern:
    """Programmable-mask state: weights plus the physical aperture layout.

    weights: (channels, rows, cols) transmission weights in [0, 1].
    subpixel_centers: (channels, rows, cols, 2) aperture centers as (y, x)
        meters, mask centered on the optical axis. Per channel the centers
        form a separable grid (y depends on the row only, x on the column
        only), which the rasterizer exploits.
    subpixel_aperture: (width, height) of each open rectangle, meters.
    deadspace_enabled: whether the layout models the opaque gaps between
        color columns. When disabled every aperture grows to a full pixel
        cell at the cell center, so an all-ones mask is a solid rectangle.
    """

    rows: int
    cols: int
    channels: int
    weights: np.ndarray
    subpixel_aperture: tuple
    subpixel_centers: np.ndarray
    deadspace_enabled: bool = True
    pixel_pitch: float = PIXEL_PITCH
    subpixel_pitch: float = SUBPIXEL_PITCH

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(
            self, "subpixel_centers", np.asarray(self.subpixel_centers, dtype=float)
        )
        if self.weights.shape != (self.channels, self.rows, self.cols):
            raise ValueError(
                f"weights shape {self.weights.shape} != "
                f"({self.channels}, {self.rows}, {self.cols})"
            )
        if self.weights.min() < 0 or self.weights.max() > 1:
            raise ValueError("weights must lie in [0, 1]")
        if self.subpixel_centers.shape != (self.channels, self.rows, self.cols, 2):
            raise ValueError("subpixel_centers must be (channels, rows, cols, 2)")
        w, h = self.subpixel_aperture
        if w <= 0 or h <= 0:
            raise ValueError("aperture dims must be positive")
        for c in range(self.channels):
            ys = self.subpixel_centers[c, :, 0, 0]
            xs = self.subpixel_centers[c, 0, :, 1]
            if self.rows > 1:
                gaps = np.diff(ys)
                if np.any(gaps <= 0):
                    raise ValueError("aperture y-centers must strictly increase")
                if h > gaps.min() + 1e-12:
                    raise ValueError("apertures of one channel overlap vertically")
            if self.cols > 1:
                gaps = np.diff(xs)
                if np.any(gaps <= 0):
                    raise ValueError("aperture x-centers must strictly increase")
                if w > gaps.min() + 1e-12:
                    raise ValueError("apertures of one channel overlap horizontally")

    @classmethod
    def digicam(
        cls,
        weights,
        pixel_pitch=PIXEL_PITCH,
        subpixel_pitch=SUBPIXEL_PITCH,
        aperture=SUBPIXEL_APERTURE,
        deadspace_enabled=True,
    ):
        """LCD layout: RGB color columns interleaved left-to-right per cell.

        ``weights`` is (3, rows, cols). With deadspace, channel ``c`` of a
        cell opens a rectangle of ``aperture`` size offset by
        ``(c - 1) * subpixel_pitch`` horizontally from the cell center.
        Without deadspace the gaps are ignored: one full-cell aperture per
        cell, shared position for all channels.
        """
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 3 or weights.shape[0] != 3:
            raise ValueError("digicam weights must be (3, rows, cols)")
        _, rows, cols = weights.shape
        cell_y = (np.arange(rows) - (rows - 1) / 2.0) * pixel_pitch
        cell_x = (np.arange(cols) - (cols - 1) / 2.0) * pixel_pitch
        centers = np.zeros((3, rows, cols, 2))
        for c in range(3):
            offset = (c - 1) * subpixel_pitch if deadspace_enabled else 0.0
            centers[c, :, :, 0] = cell_y[:, None]
            centers[c, :, :, 1] = cell_x[None, :] + offset
        eff_aperture = (
            tuple(aperture) if deadspace_enabled else (pixel_pitch, pixel_pitch)
        )
        return cls(
            rows=rows,
            cols=cols,
            channels=3,
            weights=weights,
            subpixel_aperture=eff_aperture,
            subpixel_centers=centers,
            deadspace_enabled=deadspace_enabled,
            pixel_pitch=pixel_pitch,
            subpixel_pitch=subpixel_pitch,
        )

    def with_deadspace(self, enabled):
        """Same weights, layout rebuilt with deadspace on or off."""
        if enabled == self.deadspace_enabled:
            return self
        return MaskPattern.digicam(
            self.weights,
            pixel_pitch=self.pixel_pitch,
            subpixel_pitch=self.subpixel_pitch,
            deadspace_enabled=enabled,
        )

    def extent(self):
        """(height, width) of the bounding box of all apertures, meters."""
        w, h = self.subpixel_aperture
        ys = self.subpixel_centers[..., 0]
        xs = self.subpixel_centers[..., 1]
        return (ys.max() - ys.min() + h, xs.max() - xs.min() + w)


def random_mask(seed, rows=18, cols=26):
    """Uniform-random mask on the default LCD layout; deterministic per seed."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    rng = np.random.default_rng(seed)
    return MaskPattern.digicam(rng.random((3, rows, cols)))


def _channel_index(channel):
    if isinstance(channel, str):
        try:
            return CHANNEL_NAMES.index(channel.upper())
        except ValueError:
            raise ValueError(f"unknown channel {channel!r}") from None
    return int(channel)


def _axis_coverage(positions, pitch, centers, width):
    """Fraction of each grid pixel covered by each aperture interval.

    Returns (len(centers), len(positions)); entry (a, i) is the overlap of
    [centers[a] +- width/2] with [positions[i] +- pitch/2], divided by
    pitch. This area weighting is what anti-aliases aperture boundaries.
    """
    lo = positions - pitch / 2.0
    hi = positions + pitch / 2.0
    a_lo = centers[:, None] - width / 2.0
    a_hi = centers[:, None] + width / 2.0
    overlap = np.minimum(hi[None, :], a_hi) - np.maximum(lo[None, :], a_lo)
    return np.clip(overlap, 0.0, None) / pitch


def rasterize_mask(mask, channel, grid):
    """Transmission map of one color channel on the simulation grid.

    Each open aperture contributes its weight over its rectangle; samples
    on aperture boundaries get area-weighted partial values; deadspace and
    the region outside the mask are 0. Output values lie in [0, 1].

    Raises ValueError if the mask's physical extent does not fit inside
    the grid.
    """
    c = _channel_index(channel)
    if not 0 <= c < mask.channels:
        raise ValueError(f"channel {channel!r} out of range")
    ys, xs = grid.grid_coords()
    aw, ah = mask.subpixel_aperture
    centers_y = mask.subpixel_centers[c, :, 0, 0]
    centers_x = mask.subpixel_centers[c, 0, :, 1]
    if not np.allclose(mask.subpixel_centers[c, :, :, 0], centers_y[:, None]):
        raise ValueError("aperture grid is not separable by rows/cols")
    if not np.allclose(mask.subpixel_centers[c, :, :, 1], centers_x[None, :]):
        raise ValueError("aperture grid is not separable by rows/cols")
    if (
        centers_y.min() - ah / 2.0 < ys[0] - grid.sim_pitch / 2.0
        or centers_y.max() + ah / 2.0 > ys[-1] + grid.sim_pitch / 2.0
        or centers_x.min() - aw / 2.0 < xs[0] - grid.sim_pitch / 2.0
        or centers_x.max() + aw / 2.0 > xs[-1] + grid.sim_pitch / 2.0
    ):
        raise ValueError("mask extent larger than the simulation grid")
    cov_y = _axis_coverage(ys, grid.sim_pitch, centers_y, ah)  # (rows, Ny)
    cov_x = _axis_coverage(xs, grid.sim_pitch, centers_x, aw)  # (cols, Nx)
    amplitude = cov_y.T @ mask.weights[c] @ cov_x
    # coverage products carry ~1e-16 dust past the physical range
    np.clip(amplitude, 0.0, 1.0, out=amplitude)
    return ComplexField(amplitude, grid.sim_pitch)


def spherical_illumination(geometry, wavelength):
    """Spherical wave from an on-axis point source at distance d1.

    Sample at position r has value exp(j * (2 pi / lambda) * sqrt(|r|^2 +
    d1^2)): pure phase, unit magnitude everywhere.
    """
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    ys, xs = geometry.grid_coords()
    rsq = ys[:, None] ** 2 + xs[None, :] ** 2
    phase = (2.0 * np.pi / wavelength) * np.sqrt(rsq + geometry.d1**2)
    return ComplexField(np.exp(1j * phase), geometry.sim_pitch)


def _blas_kernel_samples(shape, pitch, z, wavelength):
    h, w = shape
    fy = np.fft.fftfreq(h, d=pitch)
    fx = np.fft.fftfreq(w, d=pitch)
    fy2 = fy[:, None] ** 2
    fx2 = fx[None, :] ** 2
    arg = 1.0 / wavelength**2 - fy2 - fx2
    propagating = arg > 0
    kz = 2.0 * np.pi * np.sqrt(np.where(propagating, arg, 0.0))
    # Anti-aliasing bandlimit for a grid of extent S: frequencies beyond
    # 1 / (lambda * sqrt((2 z / S)^2 + 1)) alias in the sampled transfer
    # function, so the kernel is cut to a rect inside that limit per axis.
    sy = h * pitch
    sx = w * pitch
    fy_lim = 1.0 / (wavelength * math.sqrt((2.0 * z / sy) ** 2 + 1.0))
    fx_lim = 1.0 / (wavelength * math.sqrt((2.0 * z / sx) ** 2 + 1.0))
    in_band = (
        propagating
        & (np.abs(fy)[:, None] <= fy_lim)
        & (np.abs(fx)[None, :] <= fx_lim)
    )
    return np.where(in_band, np.exp(1j * z * kz), 0.0)


def blas_kernel(grid, z, wavelength):
    """Bandlimited angular-spectrum transfer function for distance z.

    Frequency-domain kernel laid out to match ``fft2`` output ordering.
    Magnitude is exactly 1 inside the passband (propagating and within
    the anti-aliasing rect) and exactly 0 outside, so applying it never
    creates energy.
    """
    if z <= 0:
        raise ValueError("z must be positive")
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    samples = _blas_kernel_samples(
        (grid.sim_height, grid.sim_width), grid.sim_pitch, z, wavelength
    )
    return ComplexField(samples, grid.sim_pitch)


def propagate(field, z, wavelength):
    """Free-space propagation of a sampled field over distance z.

    ifft2(fft2(field) * kernel) with the bandlimited angular-spectrum
    kernel built for the field's own grid. Energy never increases; it is
    conserved (to 1e-9 relative) when the input spectrum lies entirely
    inside the passband. The caller is responsible for a grid large
    enough that wraparound is negligible (see OpticalGeometry.for_sensor).
    """
    if z <= 0:
        raise ValueError("z must be positive")
    kernel = _blas_kernel_samples(field.shape, field.pitch, z, wavelength)
    out = ifft2(fft2(field.samples) * kernel)
    return ComplexField(out, field.pitch)


@dataclass(frozen=True)
class Psf(object):
    """Simulated point spread function: one intensity image per channel.

    data: (H, W, C) nonnegative float array on the sensor window of the
    simulation grid. With unit_sum normalization every nonzero channel
    sums to 1 so reconstruction hyperparameters transfer across masks.
    """

    data: np.ndarray
    wavelengths: tuple
    geometry: OpticalGeometry
    normalization: str = "unit_sum"
    variant: str = "wave+deadspace"

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=float))
        if self.data.ndim != 3:
            raise ValueError("psf data must be (H, W, C)")
        if len(self.wavelengths) != self.data.shape[2]:
            raise ValueError("one wavelength per channel required")
        if self.normalization not in ("unit_sum", "raw"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.data.min() < 0:
            raise ValueError("psf intensities must be nonnegative")
        if self.normalization == "unit_sum":
            sums = self.data.sum(axis=(0, 1))
            bad = np.abs(sums - 1.0) > 1e-9
            if np.any(bad & (sums != 0)):
                raise ValueError("unit_sum psf channels must sum to 1")

    @property
    def pitch(self):
        return self.geometry.sim_pitch

    @property
    def channels(self):
        return self.data.shape[2]


VARIANTS = ("wave+deadspace", "wave-deadspace", "no-wave")


def simulate_psf(mask, geometry, wavelengths=DEFAULT_WAVELENGTHS,
                 variant="wave+deadspace", normalization="unit_sum"):
    """PSF of a mask camera, per color channel.

    Variants:
      wave+deadspace: full model - rasterize with deadspace gaps,
          spherical illumination, propagate d2, take |field|^2.
      wave-deadspace: same but with the gaps filled in (each cell one
          full-size aperture), isolating the effect of deadspace.
      no-wave: skip propagation entirely and use the rasterized
          transmission itself as intensity (geometric shadow).

    The result is cropped to the sensor window and normalized per
    ``normalization``. All-zero channels stay zero under unit_sum rather
    than dividing by zero.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if len(wavelengths) != mask.channels:
        raise ValueError("need one wavelength per mask channel")
    if variant == "wave+deadspace":
        eff_mask = mask.with_deadspace(True)
    elif variant == "wave-deadspace":
        eff_mask = mask.with_deadspace(False)
    else:
        eff_mask = mask
    planes = []
    for c, lam in enumerate(wavelengths):
        transmission = rasterize_mask(eff_mask, c, geometry).samples
        if variant == "no-wave":
            intensity = transmission
        else:
            illum = spherical_illumination(geometry, lam).samples
            at_mask = ComplexField(transmission * illum, geometry.sim_pitch)
            arrived = propagate(at_mask, geometry.d2, lam)
            if not np.all(np.isfinite(arrived.samples)):
                raise ValueError(f"propagated field for channel {c} is not finite")
            intensity = np.abs(arrived.samples) ** 2
        planes.append(crop(intensity, geometry.sensor_crop))
    data = np.stack(planes, axis=2)
    if normalization == "unit_sum":
        sums = data.sum(axis=(0, 1))
        for c in range(data.shape[2]):
            if sums[c] > 0:
                data[:, :, c] /= sums[c]
    return Psf(
        data=data,
        wavelengths=tuple(wavelengths),
        geometry=geometry,
        normalization=normalization,
        variant=variant,
    )
