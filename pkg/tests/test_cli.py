import json

import pytest

from mcbpool.cli import build_parser, main, parse_seeds
from mcbpool.io import load_sketch
from mcbpool.sketch import sample_params

SMALL = ["--n1", "4", "--n2", "4", "--classes", "3", "--n-train", "60", "--n-val", "20",
         "--n-test", "20", "--epochs", "2"]


def test_parse_seeds():
    assert parse_seeds("1..5") == [1, 2, 3, 4, 5]
    assert parse_seeds("3,1") == [3, 1]
    with pytest.raises(ValueError):
        parse_seeds("5..1")


def test_verify_selected_suite(capsys):
    assert main(["verify", "--suite", "param-counts"]) == 0
    assert "[PASS]" in capsys.readouterr().out


def test_verify_zero_tolerance_fails(capsys):
    assert main(["verify", "--suite", "oracle-equivalence", "--tolerance", "0"]) == 1
    out = capsys.readouterr().out
    assert "FAILED" in out and "MCB vs explicit outer-product sketch" in out


def test_bench_cli(tmp_path, capsys):
    assert main(["bench", "--n1", "1", "--n2", "1", "--d", "1", "--classes", "1",
                 "--repetitions", "2", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "bench.csv").read_text().splitlines()
    assert lines[0].startswith("leg,n1,n2,d") and len(lines) == 3


def test_sketch_save_load(tmp_path, capsys):
    path = tmp_path / "s.json"
    assert main(["sketch", "save", str(path), "--n", "9", "--d", "4", "--seed", "3"]) == 0
    assert load_sketch(path) == sample_params(3, 9, 4)
    assert main(["sketch", "load", str(path)]) == 0
    path.write_text(path.read_text()[:30])
    assert main(["sketch", "load", str(path)]) == 2
    assert "error" in capsys.readouterr().err


def test_unknown_method_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["ablate", "--methods", "mcb,mean"])
    assert exc.value.code == 2
    assert "--methods" in capsys.readouterr().err


def test_bad_flag_values_named(capsys):
    for argv, flag in ((["train", "--glimpses", "0"], "--glimpses"),
                       (["ablate", "--seeds", "x"], "--seeds"),
                       (["train", "--d", "8,16"], "--d")):
        with pytest.raises(SystemExit):
            main(argv)
        assert flag in capsys.readouterr().err


def test_ablate_writes_rows_and_summaries(tmp_path, capsys):
    out = tmp_path / "a"
    assert main(["ablate", "--methods", "mcb,concat,sum", "--seeds", "1..5", "--d", "8",
                 "--out", str(out)] + SMALL) == 0
    lines = (out / "ablate.csv").read_text().splitlines()
    assert len(lines) == 1 + 15 + 3
    assert sum(1 for line in lines if ",run," in line) == 15
    assert "mean test acc" in capsys.readouterr().out


def test_train_twice_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--pooling", "mcb", "--seed", "1", "--d", "8",
                     "--out", str(tmp_path / name)] + SMALL) == 0
    for f in ("train.json", "train.csv", "train.history.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    metrics = json.loads((tmp_path / "a" / "train.json").read_text())["metrics"]
    assert set(metrics) == {"train_accuracy", "val_accuracy", "test_accuracy", "best_epoch",
                            "n_params", "epochs_run"}


def test_train_with_attention(tmp_path):
    assert main(["train", "--attention", "--glimpses", "2", "--d", "8",
                 "--out", str(tmp_path)] + SMALL) == 0


def test_ground_and_export_and_dataset(tmp_path):
    assert main(["ground", "--methods", "mcb,concat", "--seeds", "1", "--d", "8",
                 "--out", str(tmp_path / "g"), "--n-train", "40", "--n-val", "10",
                 "--n-test", "10", "--epochs", "1", "--proposals", "3"]) == 0
    assert (tmp_path / "g" / "ground.csv").exists()
    assert main(["export-attention", "--count", "3", "--out", str(tmp_path / "e")] + SMALL
                + ["--d", "8"]) == 0
    doc = json.loads((tmp_path / "e" / "attention.json").read_text())
    assert len(doc["maps"]) == 3
    for kind in ("classification", "grid", "grounding"):
        assert main(["dataset", "--kind", kind, "--count", "5", "--out", str(tmp_path / "d")]) == 0
        assert (tmp_path / "d" / f"{kind}.jsonl").exists()


def test_parser_lists_commands():
    text = build_parser().format_help()
    for cmd in ("verify", "bench", "train", "ablate", "ground", "sketch", "export-attention", "dataset"):
        assert cmd in text
