"""Procedural ground-truth scenes for simulation without a dataset.

Three families: linear gradients, checkerboards, and 1/f ("pink") noise
with natural-image-like spectra. Every scene is a float image in [0, 1]
with a zero border; the border keeps the scene's support away from the
sensor edge so a compact-PSF measurement retains the full convolution
support (no information silently cropped away).
"""

import numpy as np

__all__ = [
    "checkerboard_scene",
    "gradient_scene",
    "pink_noise_scene",
    "scene_batch",
]


def _check_shape(shape, margin):
    h, w = shape
    if h < 4 or w < 4:
        raise ValueError("scenes need at least 4x4 pixels")
    if margin is None:
        margin = min(h, w) // 4
    if margin < 0 or 2 * margin >= min(h, w):
        raise ValueError(f"margin {margin} leaves no interior for shape {shape}")
    return h, w, margin


def _embed(inner, shape, margin):
    out = np.zeros(shape)
    out[margin : margin + inner.shape[0], margin : margin + inner.shape[1]] = inner
    return out


def _normalize(img):
    lo, hi = img.min(), img.max()
    if hi - lo == 0:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def gradient_scene(shape=(64, 64), rng=None, margin=None):
    """Linear intensity ramp at a random (or axis-aligned) orientation."""
    h, w, margin = _check_shape(shape, margin)
    theta = np.pi / 5 if rng is None else rng.uniform(0.0, np.pi)
    ih, iw = h - 2 * margin, w - 2 * margin
    y, x = np.mgrid[0:ih, 0:iw]
    ramp = np.cos(theta) * y + np.sin(theta) * x
    return _embed(_normalize(ramp), shape, margin)


def checkerboard_scene(shape=(64, 64), rng=None, margin=None, tile=None):
    """Binary checkerboard; tile edge drawn from {4, 6, 8} when random."""
    h, w, margin = _check_shape(shape, margin)
    if tile is None:
        tile = 8 if rng is None else int(rng.choice([4, 6, 8]))
    if tile < 1:
        raise ValueError("tile must be >= 1")
    ih, iw = h - 2 * margin, w - 2 * margin
    y, x = np.mgrid[0:ih, 0:iw]
    board = (((y // tile) + (x // tile)) % 2).astype(float)
    return _embed(board, shape, margin)


def pink_noise_scene(shape=(64, 64), rng=None, margin=None):
    """Random-phase field with 1/f amplitude spectrum, rescaled to [0, 1]."""
    h, w, margin = _check_shape(shape, margin)
    if rng is None:
        rng = np.random.default_rng(0)
    ih, iw = h - 2 * margin, w - 2 * margin
    fsq = np.fft.fftfreq(ih)[:, None] ** 2 + np.fft.fftfreq(iw)[None, :] ** 2
    amplitude = 1.0 / np.sqrt(fsq + 1e-4)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(ih, iw))
    field = np.fft.ifft2(amplitude * np.exp(1j * phase)).real
    return _embed(_normalize(field), shape, margin)


_KINDS = (gradient_scene, checkerboard_scene, pink_noise_scene)


def scene_batch(count, shape=(64, 64), seed=0, margin=None):
    """``count`` scenes cycling through the three families.

    Image ``i`` draws its randomness from ``SeedSequence([seed, i])``, so
    scene ``i`` is the same array no matter how many scenes surround it
    or in which order they are generated.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        maker = _KINDS[i % len(_KINDS)]
        out.append(maker(shape, rng=rng, margin=margin))
    return out
