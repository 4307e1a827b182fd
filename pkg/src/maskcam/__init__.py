"""Mask-based lensless camera toolkit.

Three layers, usable independently:

* wave-optics simulation of point spread functions for programmable-mask
  cameras (`maskcam.optics`),
* the shift-invariant forward model plus classical reconstructions
  (`maskcam.forward`, `maskcam.recover`, `maskcam.pipeline`),
* exact single-step error decompositions that isolate how a wrong PSF and
  measurement noise enter each reconstruction rule (`maskcam.mismatch`).

`maskcam.metrics` and `maskcam.bench` provide the evaluation and sweep
harnesses; `maskcam.cli` exposes everything as subcommands.
"""

from maskcam.core import CropSpec, crop, crop_adjoint, fft2, ifft2, pad_embed
from maskcam.optics import (
    MaskPattern,
    OpticalGeometry,
    Psf,
    blas_kernel,
    fresnel_number,
    propagate,
    random_mask,
    rasterize_mask,
    simulate_psf,
    spherical_illumination,
)
from maskcam.forward import (
    DenseSystem,
    NoiseSpec,
    add_gaussian_noise,
    add_shot_noise,
    convolve_lsi,
    convolve_lsi_adjoint,
    dense_forward,
    lsi_to_dense,
)
from maskcam.recover import (
    AdmmParams,
    IstaParams,
    NumericalError,
    WienerParams,
    admm_tv,
    direct_inverse,
    fista_tv,
    power_iteration_lipschitz,
    soft_threshold,
    tv_grad_ops,
    tv_objective,
    wiener_filter,
)
from maskcam.pipeline import (
    PipelineConfig,
    StageSpec,
    load_pipeline_config,
    run_pipeline,
)
from maskcam.mismatch import (
    AdmmStepContext,
    MismatchTerms,
    admm_step_decomposition,
    direct_inversion_decomposition,
    direct_inversion_residual_slope,
    gd_step_decomposition,
    prox_step_mismatch,
    wiener_decomposition,
)
from maskcam.metrics import (
    MetricsReport,
    RoiSpec,
    aggregate_rows,
    data_fidelity,
    empirical_snr,
    psnr,
    roi_extract,
    ssim,
)
from maskcam.scenes import (
    checkerboard_scene,
    gradient_scene,
    pink_noise_scene,
    scene_batch,
)
from maskcam.fileio import (
    load_image,
    load_psf,
    read_json,
    save_image,
    save_npy,
    save_psf,
    write_json,
)
from maskcam.bench import (
    DatasetManifest,
    SweepConfig,
    delta_psf,
    desk_psf,
    import_dataset,
    multimask_sweep,
    psf_corruption_sweep,
    run_benchmark,
    simulate_dataset,
    snr_robustness_sweep,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
