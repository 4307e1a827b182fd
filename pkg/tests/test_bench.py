"""Bench harness tests with tiny datasets and few solver iterations."""

import math

import numpy as np
import pytest

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
from maskcam.fileio import save_npy
from maskcam.forward import NoiseSpec, convolve_lsi
from maskcam.metrics import empirical_snr
from maskcam.pipeline import PipelineConfig, StageSpec
from maskcam.recover import AdmmParams, admm_tv
from maskcam.scenes import scene_batch

FAST = PipelineConfig(inversion=StageSpec("admm_tv", {"iterations": 10}))


def small_scenes(n=2, seed=0):
    return scene_batch(n, (64, 64), seed=seed)


# ------------------------------------------------------------- desk psf


def test_desk_psf_deterministic_and_normalized():
    a = desk_psf(3)
    b = desk_psf(3)
    assert np.array_equal(a.data, b.data)
    assert a.data.shape == (64, 64, 3)
    assert np.allclose(a.data.sum(axis=(0, 1)), 1.0, atol=1e-9)
    assert not np.array_equal(a.data, desk_psf(4).data)


def test_desk_psf_footprint_is_compact():
    # the mask shadow should cover roughly half the sensor, leaving the
    # measurement with the scene's full convolution support
    g = desk_psf(0).data[:, :, 1]
    rows = g.sum(axis=1).cumsum()
    lo, hi = np.searchsorted(rows, [0.001, 0.999])
    assert hi - lo <= 40


# ------------------------------------------------------------- simulate


def test_simulate_zero_noise_delta_measurements_equal_scenes(tmp_path):
    scenes = small_scenes(3)
    man = simulate_dataset(scenes, delta_psf(), None, tmp_path / "ds", seed=0)
    assert len(man.entries) == 3
    for entry, scene in zip(man.entries, scenes):
        meas, gt = man.load_entry(entry)
        assert np.allclose(meas, scene, atol=1e-6)  # float32 storage
        assert np.allclose(gt, scene, atol=1e-6)


def test_simulate_rerun_is_byte_identical(tmp_path):
    scenes = small_scenes(2)
    noise = NoiseSpec("shot_poisson", 10.0)
    simulate_dataset(scenes, delta_psf(), noise, tmp_path / "a", seed=5)
    simulate_dataset(scenes, delta_psf(), noise, tmp_path / "b", seed=5)
    for rel in ("manifest.json", "lensless/img0000.npy", "lensless/img0001.npy"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    # a different master seed draws different noise
    simulate_dataset(scenes, delta_psf(), noise, tmp_path / "c", seed=6)
    assert (tmp_path / "a" / "lensless/img0000.npy").read_bytes() != (
        tmp_path / "c" / "lensless/img0000.npy"
    ).read_bytes()


def test_simulate_shot_noise_snr_calibrated(tmp_path):
    scenes = small_scenes(3, seed=2)
    psf = desk_psf(0).data[:, :, 1]
    man = simulate_dataset(
        scenes, psf, NoiseSpec("shot_poisson", 10.0), tmp_path / "ds", seed=1
    )
    for entry, scene in zip(man.entries, scenes):
        meas, _ = man.load_entry(entry)
        clean = convolve_lsi(scene, psf)
        assert empirical_snr(clean, meas) == pytest.approx(10.0, abs=0.5)


def test_simulate_empty_rejected(tmp_path):
    with pytest.raises(ValueError):
        simulate_dataset([], delta_psf(), None, tmp_path / "ds")


# ------------------------------------------------------------- import


def test_import_round_trip(tmp_path):
    man = simulate_dataset(small_scenes(3), delta_psf(), None, tmp_path / "ds")
    again = import_dataset(tmp_path / "ds")
    assert again.to_dict() == man.to_dict()


def test_import_layout_without_manifest(tmp_path):
    root = tmp_path / "raw"
    (root / "lensless").mkdir(parents=True)
    (root / "lensed").mkdir()
    rng = np.random.default_rng(0)
    for i in range(3):
        save_npy(root / "lensless" / f"s{i}.npy", rng.uniform(size=(16, 16)))
        save_npy(root / "lensed" / f"s{i}.npy", rng.uniform(size=(16, 16)))
    save_npy(root / "psf.npy", delta_psf((16, 16)))
    man = import_dataset(root)
    assert [e["id"] for e in man.entries] == ["s0", "s1", "s2"]
    assert man.psf_array().shape == (16, 16)


def test_import_missing_ground_truth_names_id(tmp_path):
    root = tmp_path / "raw"
    (root / "lensless").mkdir(parents=True)
    (root / "lensed").mkdir()
    save_npy(root / "lensless" / "only.npy", np.ones((8, 8)))
    save_npy(root / "psf.npy", delta_psf((8, 8)))
    with pytest.raises(ValueError, match="only"):
        import_dataset(root)


def test_import_missing_psf(tmp_path):
    root = tmp_path / "raw"
    (root / "lensless").mkdir(parents=True)
    (root / "lensed").mkdir()
    save_npy(root / "lensless" / "a.npy", np.ones((8, 8)))
    save_npy(root / "lensed" / "a.npy", np.ones((8, 8)))
    with pytest.raises(ValueError, match="PSF"):
        import_dataset(root)


def test_import_unrecognized_layout(tmp_path):
    (tmp_path / "stuff").mkdir()
    with pytest.raises(ValueError, match="layout"):
        import_dataset(tmp_path / "stuff")


def test_manifest_duplicate_id_rejected(tmp_path):
    man = simulate_dataset(small_scenes(2), delta_psf(), None, tmp_path / "ds")
    man.entries.append(dict(man.entries[0]))
    with pytest.raises(ValueError, match="duplicate"):
        man.validate()


# ------------------------------------------------------------- benchmark


def test_run_benchmark_row_count_and_aggregates(tmp_path):
    man = simulate_dataset(small_scenes(2), delta_psf(), None, tmp_path / "ds")
    report, timings = run_benchmark(man, {"fast": FAST, "wiener": PipelineConfig(inversion=StageSpec("wiener", {"reg": 1e-6}))})
    assert len(report.rows) == 4
    assert sorted(timings) == [r["id"] for r in report.rows]
    assert all(t >= 0 for t in timings.values())
    assert set(report.aggregates) == {"fast", "wiener"}
    assert report.aggregates["wiener"]["psnr_db_mean"] > 40
    assert report.metadata == {"n_images": 2, "n_methods": 2}


def test_run_benchmark_empty_manifest_rejected(tmp_path):
    man = simulate_dataset(small_scenes(1), delta_psf(), None, tmp_path / "ds")
    man.entries = []
    with pytest.raises(ValueError):
        run_benchmark(man, {"fast": FAST})


def test_run_benchmark_divergent_rows_excluded(tmp_path):
    man = simulate_dataset(small_scenes(2), delta_psf(), None, tmp_path / "ds")
    poisoned = np.full((64, 64), np.nan, dtype=np.float32)
    save_npy(tmp_path / "ds" / man.entries[0]["lensless"], poisoned)
    report, _ = run_benchmark(man, {"fast": FAST})
    bad = report.rows[0]
    assert bad["psnr_db"] is None and bad["ssim"] is None
    assert report.aggregates["fast"]["excluded"] == 1
    assert report.aggregates["fast"]["count"] == 2
    assert report.aggregates["fast"]["psnr_db_mean"] is not None


def test_run_benchmark_label_validation(tmp_path):
    man = simulate_dataset(small_scenes(1), delta_psf(), None, tmp_path / "ds")
    with pytest.raises(ValueError):
        run_benchmark(man, {})
    with pytest.raises(ValueError):
        run_benchmark(man, {"a/b": FAST})
    with pytest.raises(ValueError):
        run_benchmark(man, {"a": "not a config"})


# ------------------------------------------------------------- sweeps


def test_mask_sweep_serial_parallel_identical():
    base = dict(pipeline=FAST, mask_seeds=(0, 1), images=2, master_seed=7)
    r1, _ = multimask_sweep(SweepConfig(**base))
    r2, _ = multimask_sweep(SweepConfig(**base, parallel=True))
    assert r1.to_json() == r2.to_json()
    assert r1.to_csv() == r2.to_csv()


def test_mask_sweep_duplicate_seed_gives_identical_rows():
    cfg = SweepConfig(pipeline=FAST, mask_seeds=(2, 2), images=1, master_seed=0)
    report, _ = multimask_sweep(cfg)
    assert len(report.rows) == 2
    assert report.rows[0] == report.rows[1]


def test_mask_sweep_metadata():
    cfg = SweepConfig(pipeline=FAST, mask_seeds=(0, 1, 2), images=1, master_seed=1)
    report, _ = multimask_sweep(cfg)
    assert report.metadata["split_convention"] == {
        "train_fraction": 0.85,
        "test_fraction": 0.15,
    }
    assert math.isfinite(report.metadata["cross_seed_psnr_std"])
    with pytest.raises(ValueError):
        multimask_sweep(SweepConfig(pipeline=FAST, images=1))


def test_snr_sweep_levels_and_monotone_metadata():
    cfg = SweepConfig(pipeline=FAST, snr_levels=(0.0, 20.0), images=2, master_seed=3)
    report, _ = snr_robustness_sweep(cfg)
    groups = sorted({r["id"].split("/")[0] for r in report.rows})
    assert groups == ["snr_0", "snr_20"]
    assert len(report.rows) == 4
    assert report.metadata["monotone_nondecreasing_fraction"] is not None


def test_snr_sweep_single_level_reduces_to_flat_benchmark():
    cfg = SweepConfig(pipeline=FAST, snr_levels=(10.0,), images=2, master_seed=3)
    report, _ = snr_robustness_sweep(cfg)
    assert len(report.rows) == 2
    assert set(report.aggregates) == {"snr_10"}


def test_psf_sweep_clean_level_matches_direct_run():
    cfg = SweepConfig(pipeline=FAST, psf_levels=(math.inf, -10.0), images=2, master_seed=5)
    report, _ = psf_corruption_sweep(cfg)
    psf2d = desk_psf(5).data[:, :, 1]
    scenes = scene_batch(2, (64, 64), seed=5)
    from maskcam.metrics import psnr
    from maskcam.pipeline import run_pipeline

    clean_rows = {r["id"]: r for r in report.rows if r["id"].startswith("psf_inf/")}
    for i, scene in enumerate(scenes):
        meas = convolve_lsi(scene, psf2d)
        recon = run_pipeline(meas, psf2d, FAST)
        expected = psnr(scene, recon, float(scene.max()))
        assert clean_rows[f"psf_inf/img{i:04d}"]["psnr_db"] == expected


def test_psf_sweep_corruption_hurts():
    cfg = SweepConfig(
        pipeline=FAST, psf_levels=(math.inf, -20.0), images=3, master_seed=2
    )
    report, _ = psf_corruption_sweep(cfg)
    agg = report.aggregates
    assert agg["psf_-20"]["psnr_db_mean"] < agg["psf_inf"]["psnr_db_mean"]


def test_sweep_config_validation():
    with pytest.raises(ValueError):
        SweepConfig(pipeline=FAST, images=0)
    with pytest.raises(ValueError):
        SweepConfig(pipeline=FAST, snr_levels=())
    with pytest.raises(ValueError):
        SweepConfig(pipeline=FAST, max_workers=0)
