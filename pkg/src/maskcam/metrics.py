"""Image-quality scoring and the ROI protocol applied before it.

PSNR/SSIM operate on images already cropped and resampled to the region
where reconstruction and reference overlap (see :func:`roi_extract`);
``data_fidelity`` instead scores consistency with the raw measurement
through the forward model. Reports carry a fixed column set so files
from different runs line up: id, psnr_db, ssim, lpips (always null - no
pretrained perceptual net in this package), data_fidelity.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from maskcam.core import with_channel_axis
from maskcam.forward import convolve_lsi


def psnr(a, b, peak):
    """10 log10(peak^2 / MSE); returns math.inf for identical images."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def _gaussian_window():
    half = (_SSIM_WINDOW - 1) / 2.0
    t = np.arange(_SSIM_WINDOW) - half
    w = np.exp(-(t**2) / (2.0 * _SSIM_SIGMA**2))
    w2d = np.outer(w, w)
    return w2d / w2d.sum()


def _ssim_maps(a, b, peak):
    """Luminance and contrast-structure factor maps over valid windows."""
    win = _gaussian_window()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_a = convolve2d(a, win, mode="valid")
    mu_b = convolve2d(b, win, mode="valid")
    mu_aa = convolve2d(a * a, win, mode="valid")
    mu_bb = convolve2d(b * b, win, mode="valid")
    mu_ab = convolve2d(a * b, win, mode="valid")
    var_a = mu_aa - mu_a**2
    var_b = mu_bb - mu_b**2
    cov = mu_ab - mu_a * mu_b
    luminance = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    contrast_structure = (2 * cov + c2) / (var_a + var_b + c2)
    return luminance, contrast_structure


def ssim(a, b, peak=None):
    """Mean SSIM with the standard 11x11 Gaussian window, sigma 1.5.

    Averaged over valid window positions and channels. ``peak`` sets the
    stabilizers C1 = (0.01 peak)^2 and C2 = (0.03 peak)^2; the default
    (max over both images) keeps ssim(a, b) == ssim(b, a) exactly.
    """
    a3, _ = with_channel_axis(np.asarray(a, dtype=float))
    b3, _ = with_channel_axis(np.asarray(b, dtype=float))
    if a3.shape != b3.shape:
        raise ValueError(f"shape mismatch {a3.shape} vs {b3.shape}")
    if a3.shape[0] < _SSIM_WINDOW or a3.shape[1] < _SSIM_WINDOW:
        raise ValueError(f"images must be at least {_SSIM_WINDOW}x{_SSIM_WINDOW}")
    if peak is None:
        peak = max(float(a3.max()), float(b3.max()))
        if peak <= 0:
            peak = 1.0
    means = []
    for c in range(a3.shape[2]):
        lum, cs = _ssim_maps(a3[:, :, c], b3[:, :, c], peak)
        means.append(float(np.mean(lum * cs)))
    return float(np.mean(means))


def data_fidelity(meas, est, psf):
    """Squared forward-model residual per pixel: ||H est - meas||^2 / N."""
    meas = np.asarray(meas, dtype=float)
    predicted = convolve_lsi(est, psf)
    if predicted.shape != meas.shape:
        raise ValueError(
            f"estimate maps to shape {predicted.shape}, measurement is {meas.shape}"
        )
    return float(np.sum((predicted - meas) ** 2) / meas.size)


def empirical_snr(clean, noisy):
    """Energy ratio 10 log10(||clean||^2 / ||noisy - clean||^2) in dB."""
    clean = np.asarray(clean, dtype=float)
    noisy = np.asarray(noisy, dtype=float)
    if clean.shape != noisy.shape:
        raise ValueError(f"shape mismatch {clean.shape} vs {noisy.shape}")
    noise_energy = float(np.sum((noisy - clean) ** 2))
    if noise_energy == 0.0:
        return math.inf
    signal_energy = float(np.sum(clean**2))
    return 10.0 * math.log10(signal_energy / noise_energy)


@dataclass(frozen=True)
class RoiSpec:
    """Crop window plus optional resize applied before scoring.

    Offsets and dims are pixels in the reconstruction frame; target dims,
    when set, resample the crop bilinearly (both must be set together).
    """

    row_offset: int
    col_offset: int
    height: int
    width: int
    target_height: int = None
    target_width: int = None

    def __post_init__(self):
        if self.row_offset < 0 or self.col_offset < 0:
            raise ValueError("offsets must be nonnegative")
        if self.height < 1 or self.width < 1:
            raise ValueError("window must be at least 1x1")
        if (self.target_height is None) != (self.target_width is None):
            raise ValueError("target dims must be set together")
        if self.target_height is not None and (
            self.target_height < 1 or self.target_width < 1
        ):
            raise ValueError("target dims must be positive")

    def to_dict(self):
        d = {
            "row_offset": self.row_offset,
            "col_offset": self.col_offset,
            "height": self.height,
            "width": self.width,
        }
        if self.target_height is not None:
            d["target_height"] = self.target_height
            d["target_width"] = self.target_width
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            row_offset=d["row_offset"],
            col_offset=d["col_offset"],
            height=d["height"],
            width=d["width"],
            target_height=d.get("target_height"),
            target_width=d.get("target_width"),
        )


def _bilinear_resize(img, out_h, out_w):
    in_h, in_w = img.shape[:2]
    sy = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.clip(np.floor(sy).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(sx).astype(int), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = np.clip(sy - y0, 0.0, 1.0)[:, None]
    wx = np.clip(sx - x0, 0.0, 1.0)[None, :]
    if img.ndim == 3:
        wy = wy[:, :, None]
        wx = wx[:, :, None]
    top = (1 - wx) * img[y0][:, x0] + wx * img[y0][:, x1]
    bottom = (1 - wx) * img[y1][:, x0] + wx * img[y1][:, x1]
    return (1 - wy) * top + wy * bottom


def roi_extract(recon, spec):
    """Crop the scoring region, then bilinearly resize if targets are set."""
    recon = np.asarray(recon, dtype=float)
    r0, c0 = spec.row_offset, spec.col_offset
    r1, c1 = r0 + spec.height, c0 + spec.width
    if r1 > recon.shape[0] or c1 > recon.shape[1]:
        raise ValueError(
            f"roi window [{r0}:{r1}, {c0}:{c1}] exceeds image {recon.shape[:2]}"
        )
    out = recon[r0:r1, c0:c1]
    if spec.target_height is not None and (
        spec.target_height != spec.height or spec.target_width != spec.width
    ):
        out = _bilinear_resize(out, spec.target_height, spec.target_width)
    return np.array(out)


REPORT_COLUMNS = ("id", "psnr_db", "ssim", "lpips", "data_fidelity")


def _fmt_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def aggregate_rows(rows, group_of=None):
    """Mean metrics per group; rows with missing metrics are counted as excluded.

    ``group_of`` maps a row to a group label (default: one group "all").
    """
    groups = {}
    for row in rows:
        label = "all" if group_of is None else group_of(row)
        groups.setdefault(label, []).append(row)
    out = {}
    for label in sorted(groups):
        members = groups[label]
        kept = [
            r
            for r in members
            if r.get("psnr_db") is not None and r.get("ssim") is not None
        ]
        entry = {"count": len(members), "excluded": len(members) - len(kept)}
        for key in ("psnr_db", "ssim", "data_fidelity"):
            vals = [r[key] for r in kept if r.get(key) is not None]
            finite = [v for v in vals if not math.isinf(v)]
            entry[f"{key}_mean"] = float(np.mean(finite)) if finite else None
        out[label] = entry
    return out


@dataclass
class MetricsReport:
    """Per-image metric rows plus aggregates and a config fingerprint.

    Rows are stored sorted by id so assembly order (serial, threaded,
    resumed) never changes the emitted bytes. Each row carries exactly
    the REPORT_COLUMNS keys; lpips stays None.
    """

    rows: list
    config_fingerprint: str
    aggregates: dict = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for row in self.rows:
            missing = set(REPORT_COLUMNS) - set(row)
            if missing:
                raise ValueError(f"row {row.get('id')!r} missing keys {sorted(missing)}")
        self.rows = sorted(self.rows, key=lambda r: r["id"])
        if self.aggregates is None:
            self.aggregates = aggregate_rows(self.rows)

    def to_json(self, path=None):
        payload = {
            "config_fingerprint": self.config_fingerprint,
            "metadata": self.metadata,
            "aggregates": self.aggregates,
            "rows": [
                {k: _jsonable(row[k]) for k in REPORT_COLUMNS} for row in self.rows
            ],
        }
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt_cell(row[k]) for k in REPORT_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text
