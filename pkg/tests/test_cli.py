import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from geoman.cli import main
from geoman.config import from_dict, load_config
from geoman.errors import ConfigError
from geoman.scenegen import read_sequence

TINY = {
    "data": {"n_train": 2, "n_eval": 1, "frames_train": 4, "frames_eval_subject": 6, "frames_eval_camera": 5,
             "height": 32, "width": 32},
    "codec": {"steps": 3, "widths": [4, 8], "batch_size": 4},
    "i2g": {"steps": 3, "widths": [8, 16], "temb_dim": 16, "batch_size": 2, "ensemble": 1, "sampler_steps": 2},
    "v2g": {"frames": 4, "steps": 3, "widths": [8, 16], "temb_dim": 16, "batch_size": 1, "sampler_steps": 2},
    "pipeline": {"segment": 4, "overlap": 2, "ensemble": 1, "sampler_steps": 2},
    "eval": {"plots": False},
}


def _sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    c = ["--config", str(cfg)]
    assert main(["gen-data", "--out", str(root / "data")] + c) == 0
    assert main(["train-codec", "--data", str(root / "data"), "--out", str(root / "codec")] + c) == 0
    codec = str(root / "codec" / "codec.safetensors")
    for m in ("depth", "normal"):
        assert main(["train-i2g", "--data", str(root / "data"), "--out", str(root / f"i2g_{m}"), "--codec", codec,
                     "--modality", m] + c) == 0
    assert main(["train-v2g", "--data", str(root / "data"), "--out", str(root / "v2g"), "--codec", codec] + c) == 0
    assert main(["train-naive", "--data", str(root / "data"), "--out", str(root / "naive"), "--codec", codec] + c) == 0
    return root, cfg


def test_config_schema():
    with pytest.raises(ConfigError, match="unknown key v2g.widthz"):
        from_dict({"v2g": {"widthz": [1]}})
    with pytest.raises(ConfigError, match="unknown key training"):
        from_dict({"training": {}})
    with pytest.raises(ConfigError, match="codec.steps"):
        from_dict({"codec": {"steps": "many"}})
    with pytest.raises(ConfigError):
        from_dict({"pipeline": {"segment": 4, "overlap": 4}})
    cfg = from_dict({}, env={"GEOMAN_SEED": "7"})
    assert cfg.data.seed == cfg.codec.seed == cfg.v2g.seed == cfg.pipeline.seed == 7
    assert from_dict({"v2g": {"schedule": {"T": 10}}}).v2g.schedule.T == 10


def test_unknown_key_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"data": {"n_trian": 3}}))
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--config", str(bad)]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error[CONFIG]") and "data.n_trian" in err[0]


def test_usage_errors(tmp_path, capsys):
    assert main(["train-i2g", "--data", "x", "--out", str(tmp_path / "o"), "--codec", "c"]) == 2
    assert "error[USAGE]" in capsys.readouterr().err
    assert main(["frobnicate"]) == 2


def test_gen_data_layout_and_determinism(run, tmp_path):
    root, cfg = run
    index = json.loads((root / "data" / "index.json").read_text())
    assert len(index["train"]) == 2 and len(index["eval"]) == 1
    dirs = [p for p in (root / "data").glob("*/seq_*") if p.is_dir()]
    assert len(dirs) == 3
    assert main(["gen-data", "--out", str(tmp_path / "again"), "--config", str(cfg)]) == 0
    for rel in index["train"] + index["eval"]:
        for f in sorted((root / "data" / rel).iterdir()):
            assert _sha(f) == _sha(tmp_path / "again" / rel / f.name), f
    echoed = load_config(root / "data" / "config.json")
    assert echoed.data.n_train == 2 and echoed.codec.steps == 3


def test_force_required(run, capsys):
    root, cfg = run
    assert main(["gen-data", "--out", str(root / "data"), "--config", str(cfg)]) == 1
    assert "--force" in capsys.readouterr().err


def test_loss_csv_rows(run):
    root, _ = run
    rows = list(csv.DictReader(open(root / "i2g_depth" / "loss.csv")))
    assert [int(r["step"]) for r in rows] == [0, 1, 2]
    rows = list(csv.DictReader(open(root / "v2g" / "loss.csv")))
    assert len(rows) == 3 and {r["modality"] for r in rows} <= {"depth", "normal"}


def test_training_reproducible(run):
    root, cfg = run
    codec = str(root / "codec" / "codec.safetensors")
    # a sibling directory keeps the recorded relative codec path identical
    assert main(["train-i2g", "--data", str(root / "data"), "--out", str(root / "i2g_again"), "--codec", codec,
                 "--modality", "depth", "--config", str(cfg)]) == 0
    assert _sha(root / "i2g_again" / "i2g.safetensors") == _sha(root / "i2g_depth" / "i2g.safetensors")


def test_missing_codec(run, tmp_path, capsys):
    root, cfg = run
    rc = main(["train-v2g", "--data", str(root / "data"), "--out", str(tmp_path / "v"), "--codec",
               str(tmp_path / "nope.safetensors"), "--config", str(cfg)])
    assert rc == 1 and "missing codec" in capsys.readouterr().err


def _infer(root, cfg, out, *extra, modality="depth", video="eval/seq_0000"):
    return main(["infer", "--i2g", str(root / f"i2g_{modality}" / "i2g.safetensors"), "--v2g",
                 str(root / "v2g" / "v2g.safetensors"), "--video", str(root / "data" / video), "--modality", modality,
                 "--out", str(out), "--config", str(cfg)] + list(extra))


def test_infer_eval_and_pcd(run, tmp_path):
    root, cfg = run
    assert _infer(root, cfg, tmp_path / "long", "--long") == 0
    side = json.loads((tmp_path / "long" / "prediction.json").read_text())
    assert "stitch" in side and side["modality"] == "depth"
    # a 4-frame clip fits in one segment: no stitch map
    short = read_sequence(root / "data" / "train" / "seq_0000")
    assert short.F == 4
    assert _infer(root, cfg, tmp_path / "short", video="train/seq_0000") == 0
    assert "stitch" not in json.loads((tmp_path / "short" / "prediction.json").read_text())

    assert main(["eval", "--pred", str(tmp_path / "long"), "--gt", str(root / "data" / "eval" / "seq_0000"),
                 "--out", str(tmp_path / "ev"), "--config", str(cfg)]) == 0
    summary = (tmp_path / "ev" / "summary.md").read_text()
    assert "Absolute" in summary

    assert _infer(root, cfg, tmp_path / "nrm", "--long", modality="normal") == 0
    assert main(["eval", "--pred", str(tmp_path / "nrm"), "--gt", str(root / "data" / "eval" / "seq_0000"),
                 "--out", str(tmp_path / "evn"), "--config", str(cfg)]) == 0
    summary = (tmp_path / "evn" / "summary.md").read_text()
    assert "Absolute" not in summary and "Mean°" in summary

    out = tmp_path / "pc.ply"
    assert main(["pcd-export", "--pred", str(tmp_path / "long"), "--camera-from",
                 str(root / "data" / "eval" / "seq_0000"), "--out", str(out), "--frame", "2"]) == 0
    header = out.read_text().split("end_header")[0]
    n = int([ln for ln in header.splitlines() if ln.startswith("element vertex")][0].split()[-1])
    mask = read_sequence(root / "data" / "eval" / "seq_0000").mask[2]
    assert n == int(mask.sum())


def test_infer_errors(run, tmp_path, capsys):
    root, cfg = run
    assert _infer(root, cfg, tmp_path / "a") == 1  # 6 frames > segment 4 without --long
    assert "--long" in capsys.readouterr().err
    assert _infer(root, cfg, tmp_path / "b", "--long", "--overlap", "4") == 1
    assert "overlap" in capsys.readouterr().err
    # depth I2G with a normal request
    rc = main(["infer", "--i2g", str(root / "i2g_depth" / "i2g.safetensors"), "--v2g", str(root / "v2g" / "v2g.safetensors"),
               "--video", str(root / "data" / "eval" / "seq_0000"), "--modality", "normal", "--long",
               "--out", str(tmp_path / "c"), "--config", str(cfg)])
    assert rc == 1 and "error[MODALITY]" in capsys.readouterr().err
    seq = read_sequence(root / "data" / "eval" / "seq_0000")
    masks = np.stack([seq.mask, seq.mask])
    np.savez(tmp_path / "mp.npz", masks=masks, roots=np.ones((2, seq.F)))
    assert _infer(root, cfg, tmp_path / "d", "--long", "--multi-person", str(tmp_path / "mp.npz")) == 1
    assert "overlap" in capsys.readouterr().err


def test_eval_errors(run, tmp_path, capsys):
    root, cfg = run
    assert _infer(root, cfg, tmp_path / "p", "--long") == 0
    # length mismatch against a 4-frame training clip
    assert main(["eval", "--pred", str(tmp_path / "p"), "--gt", str(root / "data" / "train" / "seq_0000"),
                 "--out", str(tmp_path / "e1"), "--config", str(cfg)]) == 1
    assert "length mismatch" in capsys.readouterr().err
