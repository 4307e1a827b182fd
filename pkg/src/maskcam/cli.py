"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error (bad files, bad
values), 3 numerical failure (solver divergence, identity residual over
tolerance).
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from maskcam.bench import (
    DatasetManifest,
    SweepConfig,
    delta_psf,
    import_dataset,
    multimask_sweep,
    psf_corruption_sweep,
    run_benchmark,
    simulate_dataset,
    snr_robustness_sweep,
)
from maskcam.fileio import load_image, load_psf, save_npy, save_psf, write_json
from maskcam.forward import DenseSystem, NoiseSpec
from maskcam.metrics import data_fidelity
from maskcam.mismatch import (
    AdmmStepContext,
    admm_step_decomposition,
    direct_inversion_residual_slope,
    gd_step_decomposition,
    wiener_decomposition,
)
from maskcam.optics import OpticalGeometry, VARIANTS, random_mask, simulate_psf
from maskcam.pipeline import PipelineConfig, StageSpec, load_pipeline_config, run_pipeline
from maskcam.recover import NumericalError

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _shape(text):
    try:
        h, w = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def _float_list(text):
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}") from None


def _seed_list(text):
    try:
        if ":" in text:
            lo, hi = (int(p) for p in text.split(":"))
            if hi <= lo:
                raise ValueError
            return tuple(range(lo, hi))
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected seeds 'a,b,c' or range 'lo:hi', got {text!r}"
        ) from None


def _load_psf_arg(text, shape=(64, 64)):
    if text == "delta":
        return delta_psf(shape)
    path = Path(text)
    if path.suffix == ".npy" and path.with_suffix(".json").exists():
        return load_psf(path).data
    return load_image(path)


def _pipeline_arg(text):
    if text is None:
        return PipelineConfig(inversion=StageSpec("admm_tv"))
    return load_pipeline_config(text)


def _emit_report(report, timings, out, fmt):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        report.to_json(out / "report.json")
    else:
        report.to_csv(out / "report.csv")
    write_json(out / "timings.json", {k: round(v, 3) for k, v in sorted(timings.items())})
    print(f"wrote report.{fmt} and timings.json under {out}")
    for label, agg in report.aggregates.items():
        mean_psnr = agg.get("psnr_db_mean")
        mean_ssim = agg.get("ssim_mean")
        psnr_txt = "n/a" if mean_psnr is None else f"{mean_psnr:.2f} dB"
        ssim_txt = "n/a" if mean_ssim is None else f"{mean_ssim:.3f}"
        print(
            f"  {label}: psnr {psnr_txt}, ssim {ssim_txt} "
            f"(n={agg['count']}, excluded={agg['excluded']})"
        )


# ---------------------------------------------------------------- psf/mask


def _cmd_psf_simulate(args):
    geometry = OpticalGeometry.for_sensor(
        args.sensor,
        args.pitch,
        d1=args.d1,
        d2=args.d2,
        oversample=args.oversample,
        extent_factor=args.extent_factor,
    )
    mask = random_mask(args.mask_seed, rows=args.rows, cols=args.cols)
    wavelengths = tuple(w * 1e-9 for w in args.wavelengths_nm)
    psf = simulate_psf(mask, geometry, wavelengths=wavelengths, variant=args.variant)
    save_psf(args.out, psf)
    print(
        f"wrote {args.out}: {psf.data.shape[0]}x{psf.data.shape[1]} psf, "
        f"{psf.channels} channels, variant {psf.variant}"
    )


def _cmd_mask_random(args):
    mask = random_mask(args.seed, rows=args.rows, cols=args.cols)
    save_npy(args.out, mask.weights)
    print(
        f"wrote {args.out}: {args.rows}x{args.cols} mask, "
        f"mean transmission {mask.weights.mean():.3f}"
    )


# ---------------------------------------------------------------- dataset


def _cmd_dataset_import(args):
    manifest = import_dataset(
        args.root, interpolation=args.interpolation, downsample=args.downsample
    )
    path = manifest.save(args.out)
    print(f"wrote {path}: {len(manifest.entries)} pairs, psf {manifest.psf}")


def _cmd_dataset_simulate(args):
    from maskcam.scenes import scene_batch

    if args.scenes is not None:
        scenes = DatasetManifest.load(args.scenes)
    else:
        scenes = scene_batch(args.count, args.shape, seed=args.seed)
    psf = _load_psf_arg(args.psf, args.shape)
    if args.noise_kind == "none":
        noise = None
    else:
        noise = NoiseSpec(args.noise_kind, args.snr_db)
    manifest = simulate_dataset(scenes, psf, noise, args.out, seed=args.seed)
    print(f"wrote {len(manifest.entries)} simulated pairs under {args.out}")


# ---------------------------------------------------------------- recover


def _cmd_recover(args):
    meas = load_image(args.meas)
    psf = _load_psf_arg(args.psf, meas.shape[:2])
    cfg = _pipeline_arg(args.config)
    recon = run_pipeline(meas, psf, cfg)
    if args.out is not None:
        save_npy(args.out, recon)
        print(f"wrote {args.out}")
    fidelity = data_fidelity(meas, recon, psf)
    print(
        f"reconstruction {recon.shape}, range [{recon.min():.4g}, {recon.max():.4g}], "
        f"data fidelity {fidelity:.4g}"
    )


# ---------------------------------------------------------------- bench


def _cmd_bench_run(args):
    methods = {}
    for item in args.method:
        if "=" not in item:
            raise ValueError(f"--method wants label=pipeline.toml, got {item!r}")
        label, path = item.split("=", 1)
        if label in methods:
            raise ValueError(f"duplicate method label {label!r}")
        methods[label] = load_pipeline_config(path)
    manifest = DatasetManifest.load(args.manifest)
    report, timings = run_benchmark(manifest, methods)
    _emit_report(report, timings, args.out, args.format)


def _sweep_config(args, **levels):
    return SweepConfig(
        pipeline=_pipeline_arg(args.config),
        images=args.images,
        shape=args.shape,
        master_seed=args.master_seed,
        noise_snr_db=args.noise_snr_db,
        parallel=args.parallel,
        max_workers=args.max_workers,
        **levels,
    )


def _cmd_sweep_snr(args):
    report, timings = snr_robustness_sweep(_sweep_config(args, snr_levels=args.levels))
    _emit_report(report, timings, args.out, args.format)


def _cmd_sweep_psf(args):
    report, timings = psf_corruption_sweep(_sweep_config(args, psf_levels=args.levels))
    _emit_report(report, timings, args.out, args.format)


def _cmd_sweep_mask(args):
    report, timings = multimask_sweep(_sweep_config(args, mask_seeds=args.seeds))
    _emit_report(report, timings, args.out, args.format)


# ---------------------------------------------------------------- decompose


def _random_dense_system(rng, dim, scale):
    g = rng.normal(size=(dim, dim))
    h = g @ g.T / dim + 2.0 * np.eye(dim)
    return DenseSystem(h=h, delta=scale * rng.normal(size=(dim, dim)))


def _decompose_wiener(rng, dim):
    shape = (dim, dim)
    p = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    dp = 0.1 * (rng.normal(size=shape) + 1j * rng.normal(size=shape))
    x = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    n = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    terms, _ = wiener_decomposition(p, dp, x, n, reg=0.5)
    return terms.relative_residual()


def _decompose_gd(rng, dim):
    sys = _random_dense_system(rng, dim, 0.05)
    x = rng.normal(size=dim)
    n = 0.01 * rng.normal(size=dim)
    x_prev = rng.normal(size=dim)
    alpha = 0.5 / float(np.linalg.norm(sys.h, 2) ** 2)
    terms = gd_step_decomposition(sys, x, n, x_prev, alpha)
    return terms.relative_residual()


def _decompose_admm(rng, dim):
    g = rng.normal(size=(dim, dim))
    hhat = g @ g.T / dim + 2.0 * np.eye(dim)
    ctx = AdmmStepContext(
        hhat=hhat,
        delta_h=0.05 * rng.normal(size=(dim, dim)),
        c=np.eye(dim),
        rho_x=0.7,
        rho_y=0.4,
        rho_z=0.9,
        x_prev=rng.normal(size=dim),
        aux=rng.normal(size=dim),
        dual_xi=rng.normal(size=dim),
        noise=0.01 * rng.normal(size=dim),
        x_true=rng.normal(size=dim),
    )
    terms, _ = admm_step_decomposition(ctx)
    return terms.relative_residual()


_DECOMPOSE = {
    "wiener": (_decompose_wiener, 16, 1e-9),
    "gd": (_decompose_gd, 32, 1e-10),
    "admm": (_decompose_admm, 8, 1e-8),
}


def _cmd_decompose(args):
    rng = np.random.default_rng(args.seed)
    if args.kind == "direct":
        tolerance = 0.1 if args.tolerance is None else args.tolerance
        worst = 0.0
        for _ in range(args.trials):
            sys_ = _random_dense_system(rng, args.dim or 16, 0.02)
            x = rng.normal(size=sys_.h.shape[0])
            n = 0.01 * rng.normal(size=sys_.h.shape[0])
            slope = direct_inversion_residual_slope(sys_, x, n)
            worst = max(worst, abs(slope - 2.0))
        print(f"direct inversion: worst |slope - 2| = {worst:.3f} (tolerance {tolerance})")
        if worst > tolerance:
            raise NumericalError("second-order remainder scaling violated")
        print("PASS")
        return
    fn, default_dim, default_tol = _DECOMPOSE[args.kind]
    dim = args.dim or default_dim
    tolerance = default_tol if args.tolerance is None else args.tolerance
    worst = max(fn(rng, dim) for _ in range(args.trials))
    print(
        f"{args.kind} identity: max relative residual {worst:.3e} over "
        f"{args.trials} trials (tolerance {tolerance:g})"
    )
    if worst > tolerance:
        raise NumericalError(f"{args.kind} identity residual {worst:.3e} > {tolerance:g}")
    print("PASS")


# ---------------------------------------------------------------- parser


def _add_sweep_common(sub):
    sub.add_argument("--config", default=None, help="pipeline TOML (default: plain ADMM)")
    sub.add_argument("--images", type=int, default=20)
    sub.add_argument("--shape", type=_shape, default=(64, 64))
    sub.add_argument("--master-seed", type=int, default=0)
    sub.add_argument("--noise-snr-db", type=float, default=math.inf)
    sub.add_argument("--parallel", action="store_true")
    sub.add_argument("--max-workers", type=int, default=4)
    sub.add_argument("--out", required=True)
    sub.add_argument("--format", choices=("csv", "json"), default="json")


def build_parser():
    parser = _Parser(prog="maskcam", description=__doc__)
    top = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    psf = top.add_parser("psf", help="PSF simulation").add_subparsers(
        dest="subcommand", required=True, parser_class=_Parser
    )
    sim = psf.add_parser("simulate", help="simulate a random-mask PSF")
    sim.add_argument("--mask-seed", type=int, required=True)
    sim.add_argument("--rows", type=int, default=8)
    sim.add_argument("--cols", type=int, default=8)
    sim.add_argument("--sensor", type=_shape, default=(64, 64))
    sim.add_argument("--pitch", type=float, default=5.5e-5)
    sim.add_argument("--d1", type=float, default=0.30)
    sim.add_argument("--d2", type=float, default=2e-3)
    sim.add_argument("--oversample", type=int, default=1)
    sim.add_argument("--extent-factor", type=float, default=4.0)
    sim.add_argument("--variant", choices=VARIANTS, default="wave+deadspace")
    sim.add_argument(
        "--wavelengths-nm", type=_float_list, default=(640.0, 550.0, 460.0)
    )
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=_cmd_psf_simulate)

    mask = top.add_parser("mask", help="mask patterns").add_subparsers(
        dest="subcommand", required=True, parser_class=_Parser
    )
    rnd = mask.add_parser("random", help="random mask weights")
    rnd.add_argument("--seed", type=int, required=True)
    rnd.add_argument("--rows", type=int, default=18)
    rnd.add_argument("--cols", type=int, default=26)
    rnd.add_argument("--out", required=True)
    rnd.set_defaults(func=_cmd_mask_random)

    dataset = top.add_parser("dataset", help="dataset tools").add_subparsers(
        dest="subcommand", required=True, parser_class=_Parser
    )
    imp = dataset.add_parser("import", help="build a manifest from a directory")
    imp.add_argument("root")
    imp.add_argument("--interpolation", choices=("bilinear", "nearest"), default="bilinear")
    imp.add_argument("--downsample", type=int, default=1)
    imp.add_argument("--out", default=None)
    imp.set_defaults(func=_cmd_dataset_import)
    dsim = dataset.add_parser("simulate", help="simulate a paired dataset")
    dsim.add_argument("--count", type=int, default=20)
    dsim.add_argument("--shape", type=_shape, default=(64, 64))
    dsim.add_argument("--scenes", default=None, help="manifest whose lensed images are scenes")
    dsim.add_argument("--psf", default="delta", help="'delta' or a PSF file")
    dsim.add_argument(
        "--noise-kind", choices=("shot_poisson", "gaussian", "none"), default="shot_poisson"
    )
    dsim.add_argument("--snr-db", type=float, default=10.0)
    dsim.add_argument("--seed", type=int, default=0)
    dsim.add_argument("--out", required=True)
    dsim.set_defaults(func=_cmd_dataset_simulate)

    rec = top.add_parser("recover", help="reconstruct one measurement")
    rec.add_argument("--meas", required=True)
    rec.add_argument("--psf", required=True, help="'delta' or a PSF file")
    rec.add_argument("--config", default=None, help="pipeline TOML (default: plain ADMM)")
    rec.add_argument("--out", default=None)
    rec.set_defaults(func=_cmd_recover)

    bench = top.add_parser("bench", help="benchmark harness").add_subparsers(
        dest="subcommand", required=True, parser_class=_Parser
    )
    brun = bench.add_parser("run", help="score methods on a dataset")
    brun.add_argument("--manifest", required=True)
    brun.add_argument(
        "--method", action="append", required=True, help="label=pipeline.toml (repeatable)"
    )
    brun.add_argument("--out", required=True)
    brun.add_argument("--format", choices=("csv", "json"), default="json")
    brun.set_defaults(func=_cmd_bench_run)

    sweep = top.add_parser("sweep", help="robustness sweeps").add_subparsers(
        dest="subcommand", required=True, parser_class=_Parser
    )
    ssnr = sweep.add_parser("snr", help="measurement shot-noise sweep")
    ssnr.add_argument("--levels", type=_float_list, default=(0.0, 5.0, 10.0, 15.0, 20.0))
    _add_sweep_common(ssnr)
    ssnr.set_defaults(func=_cmd_sweep_snr)
    spsf = sweep.add_parser("psf", help="PSF corruption sweep")
    spsf.add_argument("--levels", type=_float_list, default=(math.inf, 0.0, -10.0, -20.0))
    _add_sweep_common(spsf)
    spsf.set_defaults(func=_cmd_sweep_psf)
    smask = sweep.add_parser("mask", help="random-mask generalization sweep")
    smask.add_argument("--seeds", type=_seed_list, required=True, help="'a,b,c' or 'lo:hi'")
    _add_sweep_common(smask)
    smask.set_defaults(func=_cmd_sweep_mask)

    dec = top.add_parser("decompose", help="verify the mismatch identities")
    dec.add_argument("--kind", choices=("wiener", "gd", "admm", "direct"), required=True)
    dec.add_argument("--trials", type=int, default=20)
    dec.add_argument("--dim", type=int, default=None)
    dec.add_argument("--seed", type=int, default=0)
    dec.add_argument("--tolerance", type=float, default=None)
    dec.set_defaults(func=_cmd_decompose)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        result = args.func(args)
        return 0 if result is None else int(result)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
