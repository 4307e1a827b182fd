"""Shift-invariant imaging forward model and sensor noise.

A scene ``x`` and a point spread function ``p`` produce the measurement
``y = H x + n`` where ``H`` applies linear (non-circular) convolution with
``p`` and keeps the window the size of the scene. The PSF pixel taken as
its center is ``(h // 2, w // 2)``, so a unit impulse there makes ``H`` the
identity.

Two independent routes compute ``H``: an FFT route on a zero-padded grid
(:func:`convolve_lsi`) and an explicit dense matrix
(:func:`lsi_to_dense` + :func:`dense_forward`). They agree to round-off,
which the test suite checks; everything downstream uses the FFT route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from maskcam.core import CropSpec, with_channel_axis

# Count of samples zeroed because linear convolution of nonnegative inputs
# returned tiny negative float dust (each clipped value is > -1e-9).
negative_clip_count = 0


def reset_negative_clip_count():
    global negative_clip_count
    negative_clip_count = 0


def _psf_array(psf):
    """Accept a bare ndarray or any object with a ``data`` array attribute."""
    data = getattr(psf, "data", psf)
    return np.asarray(data)


def padded_shape(scene_shape, psf_shape):
    """Linear-convolution grid: s + p - 1 per axis, so nothing wraps."""
    return (
        scene_shape[0] + psf_shape[0] - 1,
        scene_shape[1] + psf_shape[1] - 1,
    )


def rolled_psf_fft(psf2d, grid_shape):
    """FFT of the PSF embedded in ``grid_shape`` with its center pixel at (0, 0).

    Placing ``psf[h//2, w//2]`` at the origin of the circular grid makes
    pointwise spectral multiplication implement "PSF centered on each scene
    pixel" without any half-sample shift, for even and odd sizes alike. The
    solvers reuse this to stay aligned with :func:`convolve_lsi`.
    """
    ph, pw = psf2d.shape
    gh, gw = grid_shape
    if ph > gh or pw > gw:
        raise ValueError(f"psf {psf2d.shape} larger than grid {grid_shape}")
    embedded = np.zeros(grid_shape, dtype=float)
    r0 = (gh - ph) // 2
    c0 = (gw - pw) // 2
    embedded[r0 : r0 + ph, c0 : c0 + pw] = psf2d
    embedded = np.roll(embedded, (-(r0 + ph // 2), -(c0 + pw // 2)), axis=(0, 1))
    return np.fft.fft2(embedded)


def _conv_channel(scene2d, psf2d, adjoint):
    sh, sw = scene2d.shape
    gh, gw = padded_shape(scene2d.shape, psf2d.shape)
    r0 = (gh - sh) // 2
    c0 = (gw - sw) // 2
    padded = np.zeros((gh, gw), dtype=float)
    padded[r0 : r0 + sh, c0 : c0 + sw] = scene2d
    otf = rolled_psf_fft(psf2d, (gh, gw))
    if adjoint:
        otf = np.conj(otf)
    out = np.fft.ifft2(np.fft.fft2(padded) * otf).real
    return out[r0 : r0 + sh, c0 : c0 + sw]


def _conv(scene, psf, adjoint):
    global negative_clip_count
    scene3, scene_had_c = with_channel_axis(scene)
    psf3, _ = with_channel_axis(_psf_array(psf))
    if psf3.shape[2] not in (1, scene3.shape[2]):
        raise ValueError(
            f"psf has {psf3.shape[2]} channels, scene has {scene3.shape[2]}"
        )
    out = np.empty(scene3.shape, dtype=float)
    for c in range(scene3.shape[2]):
        pc = psf3[:, :, min(c, psf3.shape[2] - 1)]
        out[:, :, c] = _conv_channel(scene3[:, :, c].astype(float), pc, adjoint)
    if scene3.min() >= 0 and psf3.min() >= 0:
        # Mathematically the output is nonnegative; anything below zero is
        # FFT round-off dust. Clip it and keep an audit count.
        dust = out < 0
        if dust.any():
            negative_clip_count += int(dust.sum())
            out[dust] = 0.0
    return out if scene_had_c else out[:, :, 0]


def convolve_lsi(scene, psf):
    """Measurement ``H x``: linear convolution cropped to the scene window.

    Parameters
    ----------
    scene : ndarray, (H, W) or (H, W, C)
    psf : ndarray or Psf, (h, w) or (h, w, C)
        A single-channel PSF is shared across scene channels; otherwise
        channel counts must match.

    The output has the scene's shape. Linearity in the scene and exact
    agreement with the dense-matrix route are part of the contract. For
    nonnegative scene and PSF, negative round-off dust (magnitude < 1e-9)
    is clipped to 0 and counted in ``negative_clip_count``.
    """
    return _conv(scene, psf, adjoint=False)


def convolve_lsi_adjoint(img, psf):
    """Adjoint ``H^T y`` of :func:`convolve_lsi` (cross-correlation).

    Satisfies ``<convolve_lsi(x), y> == <x, convolve_lsi_adjoint(y)>``
    to round-off; the iterative solvers depend on this pairing.
    """
    return _conv(img, psf, adjoint=True)


@dataclass
class DenseSystem:
    """Explicit matrix form of a (possibly mismatched, cropped) linear system.

    ``h`` is the true system matrix, ``delta`` an optional deviation (the
    assumed matrix is ``h + delta``), ``crop`` an optional window realized
    as a 0/1 selection matrix applied after the system. ``scene_shape`` /
    ``out_shape`` record the grids behind the flattened vectors; they are
    required when ``crop`` is set.
    """

    h: np.ndarray
    delta: np.ndarray = None
    crop: CropSpec = None
    scene_shape: tuple = None
    out_shape: tuple = None

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        if self.h.ndim != 2:
            raise ValueError("h must be a 2D matrix")
        if not np.all(np.isfinite(self.h)):
            raise ValueError("h has non-finite entries")
        if self.delta is not None:
            self.delta = np.asarray(self.delta, dtype=float)
            if self.delta.shape != self.h.shape:
                raise ValueError(
                    f"delta shape {self.delta.shape} != h shape {self.h.shape}"
                )
            if not np.all(np.isfinite(self.delta)):
                raise ValueError("delta has non-finite entries")
        if self.crop is not None:
            if self.out_shape is None:
                raise ValueError("crop requires out_shape")
            self.crop.validate_against(self.out_shape)

    @property
    def assumed(self):
        """The matrix the reconstruction believes in: h + delta."""
        return self.h if self.delta is None else self.h + self.delta

    def selection_matrix(self):
        """Dense 0/1 realization of ``crop`` acting on flattened outputs."""
        if self.crop is None:
            return np.eye(self.h.shape[0])
        oh, ow = self.out_shape
        rows = []
        for r in range(self.crop.height):
            for c in range(self.crop.width):
                rows.append((self.crop.row_start + r) * ow + self.crop.col_start + c)
        sel = np.zeros((len(rows), oh * ow))
        sel[np.arange(len(rows)), rows] = 1.0
        return sel


def lsi_to_dense(psf, scene_dims):
    """Materialize :func:`convolve_lsi` as a DenseSystem.

    Cost is O((HW)^2) memory, so scenes beyond 16x16 are rejected; this is
    a verification tool, not a solver path. Column ``a`` of the matrix is
    the PSF copied onto the output grid centered at scene pixel ``a``,
    which keeps it independent of the FFT route. Single-channel PSFs only.
    """
    psf2d = _psf_array(psf)
    if psf2d.ndim == 3 and psf2d.shape[2] == 1:
        psf2d = psf2d[:, :, 0]
    if psf2d.ndim != 2:
        raise ValueError("lsi_to_dense expects a single-channel PSF")
    sh, sw = scene_dims
    if sh > 16 or sw > 16:
        raise ValueError(f"scene dims {scene_dims} exceed the 16x16 oracle guard")
    ph, pw = psf2d.shape
    cr, cc = ph // 2, pw // 2
    matrix = np.zeros((sh * sw, sh * sw))
    for ar in range(sh):
        for ac in range(sw):
            col = np.zeros((sh, sw))
            for kr in range(ph):
                for kc in range(pw):
                    orow = ar + kr - cr
                    ocol = ac + kc - cc
                    if 0 <= orow < sh and 0 <= ocol < sw:
                        col[orow, ocol] += psf2d[kr, kc]
            matrix[:, ar * sw + ac] = col.ravel()
    return DenseSystem(matrix, scene_shape=(sh, sw), out_shape=(sh, sw))


def dense_forward(sys, x, n=None):
    """Measurement ``C (H + delta) x + n`` for a DenseSystem.

    ``x`` is a flattened scene vector; ``n`` is a noise vector of the
    output dimension (or None for noiseless).
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != sys.h.shape[1]:
        raise ValueError(f"x has {x.size} entries, system expects {sys.h.shape[1]}")
    y = sys.assumed @ x
    if sys.crop is not None:
        y = sys.selection_matrix() @ y
    if n is not None:
        n = np.asarray(n, dtype=float).ravel()
        if n.size != y.size:
            raise ValueError(f"noise has {n.size} entries, measurement has {y.size}")
        y = y + n
    return y


@dataclass(frozen=True)
class NoiseSpec:
    """Sensor-noise description: kind, target SNR in dB, RNG seed.

    The SNR is an energy ratio, ``10 log10(||signal||^2 / E||noise||^2)``.
    ``snr_db = math.inf`` is the documented no-noise sentinel; NaN is
    rejected.
    """

    kind: str
    snr_db: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("shot_poisson", "gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if math.isnan(self.snr_db):
            raise ValueError("snr_db must not be NaN")

    def apply(self, img):
        if self.kind == "shot_poisson":
            return add_shot_noise(img, self)
        return add_gaussian_noise(img, self)


def add_shot_noise(meas, spec):
    """Poisson (photon) noise calibrated to the target SNR of ``spec``.

    The image is scaled by ``F = 10^(snr/10) * sum(img) / ||img||^2`` so
    that a Poisson draw divided by ``F`` has expected noise energy
    ``sum(img) / F``, i.e. exactly the requested energy-ratio SNR in
    expectation. Deterministic per ``spec.seed``.

    Raises ValueError on negative entries (not a photon flux), on an
    all-zero image with finite SNR (nothing to calibrate against), or if
    the spec kind is not shot_poisson.
    """
    if spec.kind != "shot_poisson":
        raise ValueError(f"add_shot_noise got a {spec.kind!r} spec")
    meas = np.asarray(meas, dtype=float)
    if math.isinf(spec.snr_db) and spec.snr_db > 0:
        return meas.copy()
    if np.any(meas < 0):
        raise ValueError("shot noise needs a nonnegative image")
    total = meas.sum()
    energy = np.sum(meas**2)
    if total == 0 or energy == 0:
        raise ValueError("cannot calibrate shot noise on an all-zero image")
    scale = 10.0 ** (spec.snr_db / 10.0) * total / energy
    rng = np.random.default_rng(spec.seed)
    return rng.poisson(scale * meas).astype(float) / scale


def add_gaussian_noise(arr, spec):
    """Additive white Gaussian noise at the target energy-ratio SNR.

    Per-pixel variance is ``||arr||^2 / (N * 10^(snr/10))``; works for any
    real array (negative values allowed), which is what PSF corruption at
    0 / -10 / -20 dB uses. ``snr_db = inf`` is a no-op copy.
    """
    if spec.kind != "gaussian":
        raise ValueError(f"add_gaussian_noise got a {spec.kind!r} spec")
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("input must be finite")
    if math.isinf(spec.snr_db) and spec.snr_db > 0:
        return arr.copy()
    energy = np.sum(arr**2)
    if energy == 0:
        raise ValueError("cannot calibrate noise on an all-zero array")
    sigma = math.sqrt(energy / (arr.size * 10.0 ** (spec.snr_db / 10.0)))
    rng = np.random.default_rng(spec.seed)
    return arr + rng.normal(scale=sigma, size=arr.shape)
