"""CLI tests driving main() directly; exit codes per the contract."""

import json

import numpy as np
import pytest

from maskcam.cli import main
from maskcam.fileio import load_psf, read_json, save_npy


PIPE_TOML = "\n".join(
    [
        "[inversion]",
        'id = "admm_tv"',
        "[inversion.params]",
        "iterations = 5",
    ]
)


def write_pipe(tmp_path, name="pipe.toml", body=PIPE_TOML):
    path = tmp_path / name
    path.write_text(body)
    return str(path)


def test_usage_error_exits_1(capsys):
    assert main(["definitely-not-a-command"]) == 1
    assert main([]) == 1
    assert main(["sweep", "mask"]) == 1  # --seeds and --out missing
    capsys.readouterr()


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert main(["psf", "--help"]) == 0
    capsys.readouterr()


def test_psf_simulate_and_mask_random(tmp_path, capsys):
    out = tmp_path / "psf.npy"
    code = main(
        ["psf", "simulate", "--mask-seed", "3", "--out", str(out)]
    )
    assert code == 0
    psf = load_psf(out)
    assert psf.data.shape == (64, 64, 3)
    assert main(["mask", "random", "--seed", "1", "--out", str(tmp_path / "m.npy")]) == 0
    assert np.load(tmp_path / "m.npy").shape == (3, 18, 26)
    capsys.readouterr()


def test_dataset_simulate_import_and_bench(tmp_path, capsys):
    data_dir = tmp_path / "ds"
    code = main(
        [
            "dataset", "simulate",
            "--count", "2",
            "--psf", "delta",
            "--noise-kind", "none",
            "--seed", "4",
            "--out", str(data_dir),
        ]
    )
    assert code == 0
    assert (data_dir / "manifest.json").exists()

    code = main(["dataset", "import", str(data_dir)])
    assert code == 0

    out_dir = tmp_path / "bench"
    pipe = write_pipe(tmp_path)
    code = main(
        [
            "bench", "run",
            "--manifest", str(data_dir / "manifest.json"),
            "--method", f"admm5={pipe}",
            "--out", str(out_dir),
        ]
    )
    assert code == 0
    doc = json.loads((out_dir / "report.json").read_text())
    assert len(doc["rows"]) == 2
    assert set(read_json(out_dir / "timings.json")) == {r["id"] for r in doc["rows"]}
    capsys.readouterr()


def test_bench_bad_method_spec_exits_2(tmp_path, capsys):
    data_dir = tmp_path / "ds"
    main(["dataset", "simulate", "--count", "1", "--noise-kind", "none",
          "--out", str(data_dir)])
    code = main(
        ["bench", "run", "--manifest", str(data_dir / "manifest.json"),
         "--method", "no-equals-sign", "--out", str(tmp_path / "r")]
    )
    assert code == 2
    capsys.readouterr()


def test_recover_roundtrip(tmp_path, capsys):
    rng = np.random.default_rng(0)
    scene = rng.uniform(size=(32, 32))
    save_npy(tmp_path / "meas.npy", scene)
    pipe = write_pipe(tmp_path, body="\n".join(["[inversion]", 'id = "wiener"',
                                               "[inversion.params]", "reg = 1e-8"]))
    code = main(
        ["recover", "--meas", str(tmp_path / "meas.npy"), "--psf", "delta",
         "--config", pipe, "--out", str(tmp_path / "rec.npy")]
    )
    assert code == 0
    rec = np.load(tmp_path / "rec.npy")
    assert np.allclose(rec, scene.astype(np.float32), atol=1e-5)
    capsys.readouterr()


def test_recover_missing_file_exits_2(tmp_path, capsys):
    code = main(
        ["recover", "--meas", str(tmp_path / "nope.npy"), "--psf", "delta"]
    )
    assert code == 2
    capsys.readouterr()


def test_sweep_mask_reports(tmp_path, capsys):
    pipe = write_pipe(tmp_path)
    out = tmp_path / "sweep"
    code = main(
        [
            "sweep", "mask",
            "--seeds", "0,1",
            "--config", pipe,
            "--images", "1",
            "--master-seed", "2",
            "--out", str(out),
            "--format", "csv",
        ]
    )
    assert code == 0
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "id,psnr_db,ssim,lpips,data_fidelity"
    assert len(lines) == 3
    capsys.readouterr()


def test_sweep_snr_json(tmp_path, capsys):
    pipe = write_pipe(tmp_path)
    out = tmp_path / "snr"
    code = main(
        ["sweep", "snr", "--levels", "10,20", "--config", pipe, "--images", "1",
         "--out", str(out)]
    )
    assert code == 0
    doc = json.loads((out / "report.json").read_text())
    assert {r["id"].split("/")[0] for r in doc["rows"]} == {"snr_10", "snr_20"}
    capsys.readouterr()


@pytest.mark.parametrize("kind", ["wiener", "gd", "admm", "direct"])
def test_decompose_passes(kind, capsys):
    code = main(["decompose", "--kind", kind, "--trials", "3", "--seed", "1"])
    out = capsys.readouterr().out
    assert code == 0
    assert "PASS" in out


def test_decompose_impossible_tolerance_exits_3(capsys):
    code = main(
        ["decompose", "--kind", "wiener", "--trials", "2", "--tolerance", "1e-30"]
    )
    assert code == 3
    capsys.readouterr()
