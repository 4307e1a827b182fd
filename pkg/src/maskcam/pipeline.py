"""Configurable pre-process / invert / post-process chains.

A pipeline is data: three stage specs naming registered processors and
an inversion, loadable from TOML. Unknown stage ids or parameter keys
fail at construction, not at run time, so configs are validated before
any solve starts. Identity stages are exact pass-throughs; a pipeline
with identity pre/post is bitwise the bare inversion.
"""

from __future__ import annotations

import hashlib
import logging
import sys as _sys
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, median_filter

from maskcam.core import with_channel_axis
from maskcam.recover import (
    AdmmParams,
    IstaParams,
    WienerParams,
    _tv_prox,
    admm_tv,
    fista_tv,
    wiener_filter,
)

if _sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

PROCESSOR_PARAMS = {
    "identity": set(),
    "gaussian_denoise": {"sigma"},
    "median_denoise": {"size"},
    "tv_denoise": {"weight", "iterations"},
}

INVERSION_IDS = ("wiener", "fista_tv", "admm_tv")


@dataclass(frozen=True)
class StageSpec:
    """One named stage and its keyword parameters."""

    id: str
    params: dict = field(default_factory=dict)


IDENTITY = StageSpec("identity")


def _check_stage(spec, registry, kind):
    if spec.id not in registry:
        raise ValueError(f"unknown {kind} {spec.id!r}; known: {sorted(registry)}")
    if kind == "processor":
        unknown = set(spec.params) - PROCESSOR_PARAMS[spec.id]
        if unknown:
            raise ValueError(
                f"processor {spec.id!r} got unknown params {sorted(unknown)}"
            )


@dataclass(frozen=True)
class PipelineConfig:
    """pre -> inversion -> post, plus the PSF variant label it expects.

    ``psf_variant`` documents which simulated PSF flavor the config was
    tuned against; it is carried into run records and reports but does
    not change execution (the caller supplies the PSF).
    """

    inversion: StageSpec
    pre: StageSpec = IDENTITY
    post: StageSpec = IDENTITY
    psf_variant: str = None

    def __post_init__(self):
        _check_stage(self.pre, PROCESSOR_PARAMS, "processor")
        _check_stage(self.post, PROCESSOR_PARAMS, "processor")
        _check_stage(self.inversion, dict.fromkeys(INVERSION_IDS), "inversion")
        # validate parameter values eagerly, not at first run
        _build_processor(self.pre)
        _build_processor(self.post)
        _build_inversion(self.inversion)
        if self.psf_variant is not None and not isinstance(self.psf_variant, str):
            raise ValueError("psf_variant must be a string label")

    @classmethod
    def from_dict(cls, d):
        allowed = {"pre", "inversion", "post", "psf_variant"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown pipeline keys {sorted(unknown)}")
        if "inversion" not in d:
            raise ValueError("pipeline config needs an [inversion] table")
        return cls(
            inversion=_stage_from_dict(d["inversion"]),
            pre=_stage_from_dict(d.get("pre", {"id": "identity"})),
            post=_stage_from_dict(d.get("post", {"id": "identity"})),
            psf_variant=d.get("psf_variant"),
        )

    def to_dict(self):
        return {
            "pre": _stage_to_dict(self.pre),
            "inversion": _stage_to_dict(self.inversion),
            "post": _stage_to_dict(self.post),
            "psf_variant": self.psf_variant,
        }


def _stage_to_dict(spec):
    out = {"id": spec.id}
    if spec.params:
        out["params"] = dict(spec.params)
    return out


def _stage_from_dict(d):
    if "id" not in d:
        raise ValueError(f"stage table {d!r} is missing 'id'")
    unknown = set(d) - {"id", "params"}
    if unknown:
        raise ValueError(f"stage table has unknown keys {sorted(unknown)}")
    return StageSpec(d["id"], dict(d.get("params", {})))


def load_pipeline_config(path):
    """Read a PipelineConfig from a TOML document."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return PipelineConfig.from_dict(doc)


# ------------------------------------------------------------- processors


def _identity(img):
    return img


def _gaussian_denoise(img, sigma=1.0):
    img3, had_c = with_channel_axis(np.asarray(img, dtype=float))
    out = gaussian_filter(img3, sigma=(sigma, sigma, 0))
    return out if had_c else out[:, :, 0]


def _median_denoise(img, size=3):
    img3, had_c = with_channel_axis(np.asarray(img, dtype=float))
    out = median_filter(img3, size=(size, size, 1))
    return out if had_c else out[:, :, 0]


def _tv_denoise(img, weight=0.1, iterations=50):
    img3, had_c = with_channel_axis(np.asarray(img, dtype=float))
    out = np.empty_like(img3)
    for c in range(img3.shape[2]):
        out[:, :, c], _ = _tv_prox(img3[:, :, c], weight, iterations)
    return out if had_c else out[:, :, 0]


_PROCESSORS = {
    "identity": _identity,
    "gaussian_denoise": _gaussian_denoise,
    "median_denoise": _median_denoise,
    "tv_denoise": _tv_denoise,
}


def _check_processor_values(spec):
    p = spec.params
    if spec.id == "gaussian_denoise" and p.get("sigma", 1.0) <= 0:
        raise ValueError("sigma must be positive")
    if spec.id == "median_denoise":
        size = p.get("size", 3)
        if size < 1 or size % 2 == 0:
            raise ValueError("size must be a positive odd integer")
    if spec.id == "tv_denoise":
        if p.get("weight", 0.1) <= 0:
            raise ValueError("weight must be positive")
        if p.get("iterations", 50) < 1:
            raise ValueError("iterations must be >= 1")


def _build_processor(spec):
    fn = _PROCESSORS[spec.id]
    _check_processor_values(spec)
    params = dict(spec.params)
    return lambda img: fn(img, **params)


def _build_inversion(spec):
    params = dict(spec.params)
    try:
        if spec.id == "wiener":
            p = WienerParams(**params)
            return lambda meas, psf: wiener_filter(meas, psf, p)
        if spec.id == "fista_tv":
            p = IstaParams(**params)
            return lambda meas, psf: fista_tv(meas, psf, p)
        overrides = params.pop("per_iteration_overrides", None)
        if overrides is not None:
            overrides = {int(k): dict(v) for k, v in overrides.items()}
        p = AdmmParams(per_iteration_overrides=overrides, **params)
        return lambda meas, psf: admm_tv(meas, psf, p)
    except TypeError as exc:
        raise ValueError(f"bad params for inversion {spec.id!r}: {exc}") from None


def _stage_hash(arr):
    arr = np.ascontiguousarray(arr)
    digest = hashlib.sha256()
    digest.update(str(arr.shape).encode())
    digest.update(str(arr.dtype).encode())
    digest.update(arr.tobytes())
    return digest.hexdigest()


def run_pipeline(meas, psf, cfg, return_record=False):
    """Apply pre, inversion, post in order.

    With ``return_record`` the result comes with a run record listing
    each stage and the sha256 of its output, which is also logged at
    debug level - enough to audit which stage diverged between two runs.
    """
    stages = (
        ("pre", cfg.pre, _build_processor(cfg.pre)),
        ("inversion", cfg.inversion, _build_inversion(cfg.inversion)),
        ("post", cfg.post, _build_processor(cfg.post)),
    )
    record = {"psf_variant": cfg.psf_variant, "stages": []}
    out = meas
    record["stages"].append({"stage": "input", "id": "input", "sha256": _stage_hash(meas)})
    for role, spec, fn in stages:
        out = fn(out, psf) if role == "inversion" else fn(out)
        digest = _stage_hash(out)
        record["stages"].append({"stage": role, "id": spec.id, "sha256": digest})
        log.debug("pipeline stage %s (%s) output sha256=%s", role, spec.id, digest)
    if return_record:
        return out, record
    return out
