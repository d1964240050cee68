import json

import pytest

from mmattn.cli import main
from mmattn.config import OUT_DIR_ENV

PAIRWISE_LAYOUT = "img IMAGE IMAGE 2\nq TEXT QUERY 2\n"
PT_LAYOUT = "img IMAGE IMAGE 2\ncap TEXT CAPTION 3\n"


@pytest.fixture
def layout_file(tmp_path):
    def make(text):
        path = tmp_path / "layout.txt"
        path.write_text(text)
        return str(path)
    return make


def test_mask_renders_and_dumps(layout_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["mask", layout_file(PAIRWISE_LAYOUT), "--out", str(out)]) == 0
    assert capsys.readouterr().out == ".#..\n....\n...#\n....\n"
    assert (out / "mask_mma-pairwise.csv").read_text().splitlines()[:3] == ["i,j,value", "0,0,0", "0,1,-inf"]
    assert (out / "mask_mma-pairwise.png").stat().st_size > 0


def test_mask_causal_policy(layout_file, capsys):
    assert main(["mask", layout_file(PAIRWISE_LAYOUT), "--policy", "causal"]) == 0
    assert capsys.readouterr().out == ".###\n..##\n...#\n....\n"


def test_analyze_pt_leak(layout_file, capsys):
    assert main(["analyze", layout_file(PT_LAYOUT), "--depth", "2"]) == 0
    fields = dict(line.split(" = ", 1) for line in capsys.readouterr().out.splitlines())
    assert fields["min_leak_depth"] == "2" and fields["leak_free"] == "false"


def test_analyze_causal_clean(layout_file, capsys, tmp_path):
    assert main(["analyze", layout_file(PT_LAYOUT), "--policy", "CAUSAL", "--out", str(tmp_path / "a")]) == 0
    assert "leak_free = true" in capsys.readouterr().out
    assert list((tmp_path / "a").glob("*.png"))


def test_schedule_output(capsys):
    assert main(["schedule", "--pipeline", "dot", "--steps", "5000"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [line.split("\t")[1:3] for line in lines[:4]] == [
        ["PT", "TEXT>IMAGE"], ["PT", "IMAGE>TEXT"], ["SFT", "TEXT>IMAGE"], ["SFT", "IMAGE>TEXT"]]
    assert lines[-1] == "total_steps\t20000"


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as info:
        main(["mask"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1


def test_validation_exit_code(layout_file, tmp_path, capsys):
    assert main(["mask", layout_file("img IMAGE IMAGE 2\n")]) == 2
    assert "pairwise" in capsys.readouterr().err
    assert main(["mask", str(tmp_path / "missing.txt")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nd_model = 8\n")
    assert main(["compare", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "task.name" in capsys.readouterr().err


def test_schedule_bounds_exit_code(capsys):
    assert main(["schedule", "--modalities", "A,B,C,D,E,F,G"]) == 2


def test_numerical_failure_exit_code(tiny_compare_config, tmp_path, capsys):
    text = tiny_compare_config.read_text().replace("lr = 3e-3", "lr = 1e300\noptimizer = SGD")
    cfg = tmp_path / "boom.ini"
    cfg.write_text(text)
    assert main(["compare", str(cfg), "--out", str(tmp_path / "boom"), "--no-figures"]) == 3
    assert "step" in capsys.readouterr().err


def test_defaults_lists_every_section(capsys):
    assert main(["defaults"]) == 0
    out = capsys.readouterr().out
    for section in ("[model]", "[train]", "[task]", "[schedule]"):
        assert section in out


def test_train_then_eval(tiny_compare_config, tmp_path, capsys):
    text = tiny_compare_config.read_text().replace("name = both", "name = plain_recall")
    cfg = tmp_path / "one.ini"
    cfg.write_text(text)
    out = tmp_path / "run"
    assert main(["train", str(cfg), "--out", str(out)]) == 0
    trained = capsys.readouterr().out
    assert trained.startswith("plain_recall\taccuracy\t")
    lines = (out / "metrics_plain_recall.jsonl").read_text().splitlines()
    assert set(json.loads(lines[0])) == {"step", "stage", "loss", "lr"}
    assert main(["eval", str(out / "plain_recall.ckpt"), str(cfg)]) == 0
    assert capsys.readouterr().out == trained


def test_compare_artifacts_and_determinism(tiny_compare_config, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "env_out"))
    assert main(["compare", str(tiny_compare_config)]) == 0
    first = tmp_path / "env_out"
    table = capsys.readouterr().out
    assert [line.split()[0] for line in table.splitlines()[2:]] == ["CAUSAL"] * 2 + ["MMA_PAIRWISE"] * 2 + ["DOT+CAUSAL"] * 2
    for name in ("summary.txt", "summary.json", "masks/mma-pairwise.txt", "audits/causal.txt",
                 "figures/accuracy.png", "figures/loss_blind_readout.png"):
        assert (first / name).exists(), name
    summary = json.loads((first / "summary.json").read_text())
    assert all(0.0 <= c["accuracy"] <= 1.0 for c in summary["cells"])
    audit = (first / "audits" / "mma-pairwise.txt").read_text()
    assert "[pt]" in audit and "[sft]" in audit

    second = tmp_path / "again"
    assert main(["compare", str(tiny_compare_config), "--out", str(second), "--no-figures"]) == 0
    names = sorted(p.name for p in (first / "metrics").iterdir())
    assert len(names) == 12
    for name in names:
        assert (first / "metrics" / name).read_bytes() == (second / "metrics" / name).read_bytes()
    assert (first / "summary.json").read_bytes() == (second / "summary.json").read_bytes()
