import json
import subprocess
import sys

import pytest

from stegozoo import cli, stegattack, tensorstore, zooforge
from stegozoo.detectkit import checkpoint
from stegozoo.detectkit.experiment import EvalReport


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    assert cli.main(["--home", str(root), "zoo", "gen", "--count", "16", "--seed", "7", "--out", "zoos/a"]) == 0
    (root / "payload.bin").write_bytes(b"secret payload \x00\xff")
    assert cli.main(["--home", str(root), "attack", "--zoo", "zoos/a", "--x", "8", "--payload", "payload.bin"]) == 0
    assert cli.main(["--home", str(root), "attack", "--zoo", "zoos/a", "--sweep", "1..23",
                     "--payload-seed", "9", "--payload-bytes", "32"]) == 0
    return root


def test_zoo_gen_layout_and_config(workspace):
    zoo = workspace / "zoos" / "a"
    assert len(list((zoo / "benign").glob("*.mzw"))) == 16
    manifest = json.loads((zoo / "manifest.json").read_text())
    assert manifest["count"] == 16 and manifest["seed"] == 7 and manifest["arch"] == "2-8-8-2"
    cfg = json.loads((zoo / "run_config.json").read_text())
    assert cfg["command"] == "zoo gen" and cfg["params"]["seed"] == 7


def test_zoo_gen_is_byte_identical(workspace, tmp_path):
    assert cli.main(["zoo", "gen", "--count", "16", "--seed", "7", "--out", str(tmp_path / "a")]) == 0
    for p in sorted((workspace / "zoos" / "a" / "benign").glob("*.mzw")):
        assert p.read_bytes() == (tmp_path / "a" / "benign" / p.name).read_bytes()


def test_attack_outputs(workspace):
    zoo = workspace / "zoos" / "a"
    assert zooforge.attacked_levels(zoo) == list(range(1, 24))
    info = json.loads((zoo / "attacked" / "x23" / "attack.json").read_text())
    assert info["x_lsb"] == 23 and info["payload_bits"] == 256
    assert info["payload_sha256"] == stegattack.Payload.random(32, 9).digest()


@pytest.mark.parametrize("argv", [["--x", "0"], ["--x", "24"], ["--sweep", "0..3"], ["--sweep", "20..24"], []])
def test_attack_range_guard(workspace, argv, capsys):
    code = cli.main(["--home", str(workspace), "attack", "--zoo", "zoos/a", "--payload-seed", "1"] + argv)
    assert code == 2


def test_invalid_arch_exits_2(tmp_path, capsys):
    assert cli.main(["zoo", "gen", "--arch", "2-x-2", "--seed", "1", "--out", str(tmp_path / "z")]) == 2
    assert "architecture" in capsys.readouterr().err


def test_generation_failure_exits_3(tmp_path):
    argv = ["zoo", "gen", "--count", "2", "--seed", "1", "--floor", "1.01", "--max-epochs", "2", "--epochs", "1",
            "--out", str(tmp_path / "z")]
    assert cli.main(argv) == 3


def test_strict_mode_requires_seeds(tmp_path, capsys):
    assert cli.main(["--strict", "zoo", "gen", "--count", "2", "--out", str(tmp_path / "z")]) == 2
    assert "--seed" in capsys.readouterr().err


def test_extract_recovers_seeded_payload(workspace, capsys):
    model = workspace / "zoos" / "a" / "attacked" / "x8" / "a-0003.mzw"
    assert tensorstore.load(model).meta["x_lsb"] == "8"
    # x8 was later overwritten by the sweep; the sweep payload is the seeded one
    expected = stegattack.Payload.random(32, 9).to_bytes()
    assert cli.main(["--home", str(workspace), "extract", "--model", str(model), "--bits", "256"]) == 0
    assert capsys.readouterr().out.strip() == expected.hex()


def test_extract_from_payload_file_attack(tmp_path, workspace):
    root = tmp_path
    src = workspace / "zoos" / "a"
    zooforge.save_models(zooforge.load_models(src / "benign")[:2], root / "z" / "benign")
    (root / "p.bin").write_bytes(b"abc")
    assert cli.main(["--home", str(root), "attack", "--zoo", "z", "--x", "5", "--payload", "p.bin"]) == 0
    out = root / "out.bin"
    assert cli.main(["--home", str(root), "extract", "--model", "z/attacked/x5/a-0000.mzw", "--bits", "24",
                     "--out", str(out)]) == 0
    assert out.read_bytes() == b"abc"


def test_features_detect_and_report(workspace, capsys):
    home = ["--home", str(workspace)]
    assert cli.main(home + ["features", "--zoo", "zoos/a", "--kind", "loss", "--seed", "2", "--out", "f/loss",
                            "--ae-epochs", "30"]) == 0
    assert cli.main(home + ["features", "--zoo", "zoos/a", "--kind", "weights", "--out", "f/weights"]) == 0
    f = workspace / "f"
    assert len(list((f / "loss").glob("x*.csv"))) == 23
    assert (f / "loss" / "ae.mzw").exists()
    split = json.loads((f / "loss" / "split.json").read_text())
    assert len(split["train_ids"]) == 11

    assert cli.main(home + ["detect", "eval", "--features", "f/loss", "--method", "mean_eps", "--seed", "2",
                            "--out", "r/loss"]) == 0
    assert cli.main(home + ["detect", "eval", "--features", "f/weights", "--method", "hgb", "--seeds", "1,2",
                            "--out", "r/weights"]) == 0
    loss = EvalReport.read(workspace / "r" / "loss" / "report.csv")
    assert len(loss) == 23 and {r.n_train for r in loss.rows} == {0}  # sizes are not part of the CSV
    assert len(EvalReport.read(workspace / "r" / "weights" / "report.csv")) == 46
    assert (workspace / "r" / "loss" / "f1.svg").read_text().startswith("<svg")
    assert (workspace / "r" / "loss" / "run_config.json").exists()

    capsys.readouterr()
    assert cli.main(home + ["report", "--compare", "r/loss/report.csv", "r/weights/report.csv",
                            "--out", "r/cmp.csv", "--svg"]) == 0
    printed = capsys.readouterr().out
    assert "loss/mean_eps/s2" in printed and "weights/hgb/s1" in printed
    rows = (workspace / "r" / "cmp.csv").read_text().splitlines()
    assert rows[0] == "x_lsb,loss/mean_eps/s2,weights/hgb/s1,weights/hgb/s2" and len(rows) == 24
    assert (workspace / "r" / "cmp.svg").exists()

    assert cli.main(home + ["detect", "train", "--data", "f/weights/x23.csv", "--method", "gb", "--seed", "4",
                            "--out", "ck/gb.sdk"]) == 0
    model, info = checkpoint.load(workspace / "ck" / "gb.sdk")
    assert info["x_lsb"] == 23 and model.variant == "gb"


def test_detect_eval_missing_level_exits_3(workspace, tmp_path):
    src = workspace / "f" / "weights"
    if not src.exists():
        pytest.skip("feature directory not built")
    (tmp_path / "x1.csv").write_text((src / "x1.csv").read_text())
    code = cli.main(["detect", "eval", "--features", str(tmp_path), "--method", "gb", "--levels", "1,2",
                     "--seed", "0", "--out", str(tmp_path / "r")])
    assert code == 3


def test_inspect_prints_bit_views(workspace, capsys):
    model = workspace / "zoos" / "a" / "attacked" / "x4" / "a-0000.mzw"
    assert cli.main(["--home", str(workspace), "inspect", "--model", str(model), "--count", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("arch 2-8-8-2  n_W=114")
    s, e, m = lines[1].split()[-1].split("|")
    assert len(s) == 1 and len(e) == 8 and m.endswith("]") and len(m.split("[")[1]) == 5


def test_stegozoo_home_env(tmp_path):
    env = {"STEGOZOO_HOME": str(tmp_path), "PATH": "/usr/bin:/bin"}
    r = subprocess.run([sys.executable, "-m", "stegozoo", "zoo", "gen", "--count", "2", "--seed", "1",
                        "--out", "z"], env=env, capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "z" / "manifest.json").exists()


def test_level_parsing():
    assert cli.parse_levels("1..3,8") == [1, 2, 3, 8]
    with pytest.raises(cli.ConfigError):
        cli.parse_levels("0..2")
