import json

import numpy as np
import pytest

from mmpt import checks
from mmpt.checks import SuiteReport, tiny_model_config
from mmpt.cli import main
from mmpt.crystal import load_dataset
from mmpt.train import RunConfig, metrics_path_for

NACL = '{"atoms":[11,17],"frac_coords":[[0,0,0],[0.5,0.5,0.5]],"lattice":[[5.64,0,0],[0,5.64,0],[0,0,5.64]]}'
CUBE = '{"atoms":[11],"frac_coords":[[0,0,0]],"lattice":[[2,0,0],[0,2,0],[0,0,2]]}'


@pytest.fixture
def tiny_config(tmp_path):
    cfg = RunConfig(model=tiny_model_config(), epochs=2, batch_size=4, finetune_epochs=2)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    return str(path)


def test_gen_and_niggli(tmp_path, capsys):
    out = tmp_path / "rs.jsonl"
    assert main(["gen", "--family", "rocksalt", "--count", "3", "--seed", "1", "--out", str(out),
                 "--species", "Na,Cl", "--edge", "5.64"]) == 0
    assert len(load_dataset(out)) == 3
    capsys.readouterr()
    assert main(["niggli", "--in", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert lines[0] == "5.640000000 5.640000000 5.640000000 1.570796327 1.570796327 1.570796327"


def test_graph_and_labels(tmp_path):
    inp = tmp_path / "cube.json"
    inp.write_text(CUBE)
    gout, lout = tmp_path / "g.json", tmp_path / "l.csv"
    assert main(["graph", "--in", str(inp), "--cutoff", "2.5", "--out", str(gout)]) == 0
    assert len(json.loads(gout.read_text())["edges"]) == 6
    assert main(["labels", "--in", str(inp), "--cutoff", "2.5", "--out", str(lout)]) == 0
    assert lout.read_text().splitlines() == [
        "src,dst,k1,k2,k3,direction_class,unit_cell,distance",
        "0,0,-1,0,0,4,1,2.000000000",
        "0,0,0,-1,0,10,1,2.000000000",
        "0,0,0,0,-1,12,1,2.000000000",
        "0,0,0,0,1,14,1,2.000000000",
        "0,0,0,1,0,16,1,2.000000000",
        "0,0,1,0,0,22,1,2.000000000",
    ]


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["gen", "--family", "zincblende", "--count", "2", "--seed", "0", "--out", "x.jsonl"],
    ["gen", "--family", "rocksalt", "--count", "0", "--seed", "0", "--out", "x.jsonl"],
    ["gen", "--family", "rocksalt", "--count", "2", "--seed", "0", "--out", "x.jsonl", "--edge", "1.0"],
    ["check", "--suite", "nope"],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1


def test_bad_config_exits_1(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"epochz": 1}')
    data = tmp_path / "d.jsonl"
    data.write_text(NACL + "\n")
    assert main(["pretrain", "--data", str(data), "--config", str(cfg), "--out", str(tmp_path / "m")]) == 1


@pytest.mark.parametrize("text", [
    NACL.replace("[11,17]", "[11,200]"),
    NACL.replace("5.64,0,0]", "0,5.64,0]"),
    '{"atoms": [1]',
    "",
])
def test_data_errors_exit_2(tmp_path, text):
    inp = tmp_path / "bad.json"
    inp.write_text(text)
    assert main(["niggli", "--in", str(inp)]) == 2
    assert main(["graph", "--in", str(inp), "--out", str(tmp_path / "g.json")]) == 2


def test_missing_file_exits_2(tmp_path):
    assert main(["niggli", "--in", str(tmp_path / "none.json")]) == 2


def test_bad_checkpoint_exits_2(tmp_path):
    ck = tmp_path / "m.ckpt"
    ck.write_bytes(b"junk")
    data = tmp_path / "d.jsonl"
    data.write_text(NACL + "\n")
    assert main(["eval", "--ckpt", str(ck), "--data", str(data)]) == 2


def test_check_pass_and_fail(monkeypatch, capsys):
    assert main(["check", "--suite", "masks"]) == 0
    assert "PASS" in capsys.readouterr().out

    def failing(name, seed=0):
        rep = SuiteReport(name)
        rep.fail({"n_atoms": 3})
        return rep

    monkeypatch.setattr(checks, "run_suite", failing)
    assert main(["check", "--suite", "masks"]) == 3
    out = capsys.readouterr().out
    assert "FAIL" in out and '"n_atoms": 3' in out


def test_pretrain_finetune_eval(tmp_path, tiny_config, capsys):
    data = tmp_path / "d.jsonl"
    assert main(["gen", "--family", "mixed", "--count", "12", "--seed", "4", "--out", str(data),
                 "--perturb", "0.05", "--property", "mean_nn_distance"]) == 0
    ck = tmp_path / "pre.ckpt"
    assert main(["pretrain", "--data", str(data), "--config", tiny_config, "--out", str(ck), "--no-bt"]) == 0
    header = metrics_path_for(ck).read_text().splitlines()[0]
    assert header.startswith("epoch,l_A")
    ft = tmp_path / "ft.ckpt"
    capsys.readouterr()
    assert main(["finetune", "--data", str(data), "--property", "mean_nn_distance", "--ckpt", str(ck),
                 "--config", tiny_config, "--label-fraction", "0.5", "--out", str(ft)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "epoch,train_loss,val_mae,test_mae" and len(out) == 2 + 2
    assert main(["eval", "--ckpt", str(ft), "--data", str(data), "--split", "test"]) == 0
    mae = float(capsys.readouterr().out.split()[-1])
    assert np.isfinite(mae) and mae >= 0


def test_pretrain_is_byte_deterministic(tmp_path, tiny_config):
    data = tmp_path / "d.jsonl"
    main(["gen", "--family", "mixed", "--count", "8", "--seed", "2", "--out", str(data)])
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    for out in (a, b):
        assert main(["pretrain", "--data", str(data), "--config", tiny_config, "--out", str(out)]) == 0
    assert metrics_path_for(a).read_bytes() == metrics_path_for(b).read_bytes()
