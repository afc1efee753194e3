import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from dcepk.cli import main
from dcepk.io import read_series, read_volume, write_json, write_series, write_volume
from dcepk.core import DceSeries

SMALL = {"width": 32, "height": 32, "model": "patlak",
         "acq": {"tr_seconds": 0.0028, "flip_angle_radians": 0.17453292519943295, "r1_per_mM_per_second": 3.47,
                 "frame_interval_seconds": 20.0, "n_frames": 12, "bolus_arrival_frame": 2}}
TRAIN = {"batch_size": 2, "patch": 24, "epochs": 1, "steps_per_epoch": 2, "lr": 1e-3, "base_channels": 4,
         "cp_hidden_units": 8, "disc_filters": 4, "model": "patlak"}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def configs(tmp_path):
    write_json(tmp_path / "phantom.json", SMALL)
    write_json(tmp_path / "train.json", TRAIN)
    return tmp_path / "phantom.json", tmp_path / "train.json"


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def fit_args(d, out, method="lls", model="patlak"):
    return ["fit", "--method", method, "--model", model, "--series", d / "series.dcev", "--aif", d / "aif.csv",
            "--t1", d / "t1.dcev", "--s0", d / "s0.dcev", "--mask", d / "mask.dcev", "--out", out]


def test_simulate_is_byte_identical(tmp_path, configs, capsys):
    assert run("simulate", "--config", configs[0], "--out", tmp_path / "a", "--seed", 5) == 0
    assert run("simulate", "--config", configs[0], "--out", tmp_path / "b", "--seed", 5) == 0
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")
    summary = json.loads(capsys.readouterr().out.splitlines()[0])
    assert summary["dims"] == [12, 32, 32] and summary["seed"] == 5
    assert run("simulate", "--config", configs[0], "--out", tmp_path / "c", "--seed", 6) == 0
    assert _tree_bytes(tmp_path / "a") != _tree_bytes(tmp_path / "c")


def test_simulate_subject_set(tmp_path, configs):
    assert run("simulate", "--config", configs[0], "--out", tmp_path / "set", "--subjects", 3) == 0
    assert sorted(p.name for p in (tmp_path / "set").iterdir()) == ["subject_000", "subject_001", "subject_002"]


def test_fit_and_evaluate_noiseless_patlak(tmp_path, configs):
    d = tmp_path / "ph"
    run("simulate", "--config", configs[0], "--out", d)
    assert run(*fit_args(d, tmp_path / "fit")) == 0
    codes, meta = read_volume(tmp_path / "fit" / "codes.dcev")
    assert not codes.any() and meta["kind"] == "fit_codes"
    assert run("evaluate", "--pred", tmp_path / "fit" / "pk.dcev", "--reference", d / "pk.dcev",
               "--mask", d / "mask.dcev", "--regions", d / "labels.dcev", "--out", tmp_path / "r.csv",
               "--plot", tmp_path / "plots", "--aif-pred", d / "aif.csv", "--aif-ref", d / "aif.csv") == 0
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert "ktrans,psnr,inf," in lines and "vp,psnr,inf," in lines
    ssim_rows = [l for l in lines if ",ssim," in l]
    assert all(abs(float(l.split(",")[2]) - 1.0) <= 1e-9 for l in ssim_rows)
    assert "cp,nrmse,0.0," in lines
    for name in ("maps.svg", "aif_overlay.svg"):
        root = ET.fromstring((tmp_path / "plots" / name).read_text())
        assert root.tag.endswith("svg")


def test_nlls_workers_and_sidecar(tmp_path, configs):
    d = tmp_path / "ph"
    run("simulate", "--config", configs[0], "--out", d)
    assert run(*fit_args(d, tmp_path / "f1", "nlls"), "--workers", 2) == 0
    _, meta = read_volume(tmp_path / "f1" / "pk.dcev")
    assert meta["fit"]["method"] == "nlls" and meta["fit"]["failed_voxels"] == 0


def test_exit_code_config(tmp_path, configs):
    write_json(tmp_path / "bad.json", {"widht": 3})
    assert run("simulate", "--config", tmp_path / "bad.json", "--out", tmp_path / "x") == 2


def test_exit_code_io(tmp_path):
    assert run("evaluate", "--pred", tmp_path / "none.dcev", "--reference", tmp_path / "none.dcev",
               "--out", tmp_path / "r.csv") == 3
    (tmp_path / "junk.dcev").write_bytes(b"DCEV\x01")
    assert run("evaluate", "--pred", tmp_path / "junk.dcev", "--reference", tmp_path / "junk.dcev",
               "--out", tmp_path / "r.csv") == 3


def test_exit_code_fit_failures(tmp_path, configs):
    d = tmp_path / "ph"
    run("simulate", "--config", configs[0], "--out", d)
    s = read_series(d / "series.dcev")
    write_series(d / "series.dcev", DceSeries(s.data * 50.0, s.acq))  # beyond the SPGR asymptote
    assert run(*fit_args(d, tmp_path / "fit")) == 4
    assert (tmp_path / "fit" / "codes.dcev").exists()


def test_exit_code_aif_mismatch(tmp_path, configs):
    d = tmp_path / "ph"
    run("simulate", "--config", configs[0], "--out", d)
    (d / "aif.csv").write_text("time_seconds,cp_mM\n0.0,0.0\n1.0,1.0\n")
    assert run(*fit_args(d, tmp_path / "fit")) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_code_non_finite_training(tmp_path, configs):
    d = tmp_path / "data"
    run("simulate", "--config", configs[0], "--out", d, "--subjects", 2)
    s = read_series(d / "subject_000" / "series.dcev")
    for sub in ("subject_000", "subject_001"):
        # finite on disk, overflows once cast to the float32 training patches
        write_series(d / sub / "series.dcev", DceSeries(s.data * 1e306, s.acq))
    assert run("train", "--config", configs[1], "--data", d, "--out", tmp_path / "t") == 5


def test_train_infer_evaluate(tmp_path, configs):
    d = tmp_path / "data"
    run("simulate", "--config", configs[0], "--out", d, "--subjects", 2)
    for name in ("t1", "t2"):
        assert run("train", "--config", configs[1], "--data", d, "--out", tmp_path / name, "--seed", 4) == 0
    assert _tree_bytes(tmp_path / "t1") == _tree_bytes(tmp_path / "t2")
    subj = d / "subject_000"
    assert run("infer", "--checkpoint", tmp_path / "t1" / "checkpoint_latest.ckpt", "--series",
               subj / "series.dcev", "--mask", subj / "mask.dcev", "--out", tmp_path / "inf") == 0
    assert run("evaluate", "--pred", tmp_path / "inf" / "pk.dcev", "--reference", subj / "pk.dcev",
               "--mask", subj / "mask.dcev", "--out", tmp_path / "r.csv",
               "--aif-pred", tmp_path / "inf" / "aif_estimate.csv", "--aif-ref", subj / "aif.csv") == 0


def test_resume_with_other_config_is_rejected(tmp_path, configs):
    d = tmp_path / "data"
    run("simulate", "--config", configs[0], "--out", d, "--subjects", 2)
    run("train", "--config", configs[1], "--data", d, "--out", tmp_path / "t")
    assert run("train", "--config", configs[1], "--data", d, "--out", tmp_path / "t", "--seed", 9,
               "--resume", tmp_path / "t" / "checkpoint_latest.ckpt") == 2


def test_infer_frame_mismatch(tmp_path, configs):
    d = tmp_path / "data"
    run("simulate", "--config", configs[0], "--out", d, "--subjects", 2)
    run("train", "--config", configs[1], "--data", d, "--out", tmp_path / "t")
    other = dict(SMALL, acq=dict(SMALL["acq"], n_frames=10))
    write_json(tmp_path / "other.json", other)
    run("simulate", "--config", tmp_path / "other.json", "--out", tmp_path / "o")
    assert run("infer", "--checkpoint", tmp_path / "t" / "checkpoint_latest.ckpt", "--series",
               tmp_path / "o" / "series.dcev", "--out", tmp_path / "inf") == 2


def test_console_script_entry(tmp_path):
    out = subprocess.run([sys.executable, "-m", "dcepk.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "simulate" in out.stdout
    bad = subprocess.run([sys.executable, "-m", "dcepk.cli", "fit"], capture_output=True, text=True)
    assert bad.returncode == 2
