"""Compare the three PSF simulation variants on one mask.

Simulates the same programmable-mask pattern with the full wave model
(including LCD dead space), with dead space disabled, and with the
geometric shadow approximation, then prints energy-compactness and
cross-variant correlation numbers. Optionally dumps the PSFs as PNGs.

Usage:
    python3 scripts/psf_variants.py [--seed 0] [--save-dir out/]
"""

import argparse

import numpy as np

from maskcam.fileio import save_image
from maskcam.optics import VARIANTS, OpticalGeometry, random_mask, simulate_psf


def energy_support(img, fraction):
    """Number of pixels holding ``fraction`` of the total energy."""
    flat = np.sort(img.ravel() ** 2)[::-1]
    csum = np.cumsum(flat)
    return int(np.searchsorted(csum, fraction * csum[-1]) + 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rows", type=int, default=18)
    ap.add_argument("--cols", type=int, default=26)
    ap.add_argument("--save-dir", default=None)
    args = ap.parse_args()

    geometry = OpticalGeometry.for_sensor((64, 64), 5.5e-5, oversample=2)
    mask = random_mask(args.seed, rows=args.rows, cols=args.cols)

    psfs = {}
    for variant in VARIANTS:
        psf = simulate_psf(mask, geometry, variant=variant)
        psfs[variant] = psf.data
        green = psf.data[:, :, 1]
        print(f"variant {variant:>15s}:"
              f"  peak {green.max():.3e}"
              f"  50% energy in {energy_support(green, 0.5):4d} px"
              f"  99% in {energy_support(green, 0.99):4d} px")

    ref = psfs["wave+deadspace"][:, :, 1].ravel()
    ref = ref / np.linalg.norm(ref)
    print()
    for variant in VARIANTS:
        g = psfs[variant][:, :, 1].ravel()
        corr = float(ref @ (g / np.linalg.norm(g)))
        print(f"correlation(wave+deadspace, {variant}) = {corr:.4f}")

    if args.save_dir:
        from pathlib import Path

        out = Path(args.save_dir)
        out.mkdir(parents=True, exist_ok=True)
        for variant, data in psfs.items():
            img = data / data.max()
            name = variant.replace("+", "_plus_")
            save_image(out / f"psf_{name}.png", img)
        print(f"\nwrote {len(psfs)} PNGs to {out}")


if __name__ == "__main__":
    main()
