import numpy as np
import pytest

from spacemesh.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from spacemesh.config import ConfigError, RunConfig, load_config
from spacemesh.data_io import read_pgm, save_checkpoint
from spacemesh.model import SpaceMeshLab


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--n", "6", "--val", "2", "--size", "48"]) == EXIT_OK
    return root


def test_params_table_for_dense_grid(capsys):
    assert main(["params", "--rates", "1..18", "--head", "metrocon"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split("\t")[:4] == ["head", "branches", "depth", "concat"]
    assert lines[1].split("\t")[:4] == ["metrocon", "324", "4", "1296"]


def test_bad_config_exits_2(capsys):
    assert main(["params", "--set", "model.nope=1"]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert main(["params", "--rates", "0..3"]) == EXIT_CONFIG


def test_missing_data_exits_3(tmp_path, capsys):
    assert main(["eval", "--data", str(tmp_path / "missing.txt")]) == EXIT_DATA
    (tmp_path / "m.txt").write_text("images/a.ppm\tlabels/a.pgm\tval\n")
    assert main(["eval", "--data", str(tmp_path / "m.txt")]) == EXIT_DATA


def test_config_file_and_override(tmp_path):
    (tmp_path / "c.cfg").write_text("# run\nmodel.num_classes = 5\ntrain.lr0 = 0.02\n")
    cfg = load_config(tmp_path / "c.cfg")
    assert cfg.model.num_classes == 5 and cfg.train.lr0 == 0.02
    again = RunConfig()
    for line in cfg.dumps().splitlines():
        k, v = line.split(" = ", 1)
        again.set(k, v)
    assert again == cfg
    with pytest.raises(ConfigError):
        cfg.set("train.lr0", "fast")


def test_eval_identity_tta_matches_plain(tiny_data, capsys):
    cfg = RunConfig()
    model = SpaceMeshLab(cfg.model)
    save_checkpoint(tiny_data / "m.smck", model)
    common = ["eval", "--data", str(tiny_data / "data" / "manifest.txt"), "--checkpoint", str(tiny_data / "m.smck")]
    assert main(common) == EXIT_OK
    plain = capsys.readouterr().out
    assert main(common + ["--tta", "on", "--tta-scales", "1.0", "--tta-flip", "off"]) == EXIT_OK
    assert capsys.readouterr().out == plain
    assert plain.splitlines()[0] == "class,iou" and plain.splitlines()[-1].startswith("mean,")


def test_infer_writes_label_maps(tiny_data, tmp_path):
    image = tiny_data / "data" / "images" / "00000.ppm"
    rc = main(["infer", "--checkpoint", str(tiny_data / "m.smck"), "--data", str(tiny_data / "data" / "manifest.txt"),
               "--out", str(tmp_path), str(image)])
    assert rc == EXIT_OK
    pred = read_pgm(tmp_path / "00000.pgm")
    assert pred.shape == (48, 48) and pred.max() < 4


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 7 and all(line.startswith("PASS") for line in out)
