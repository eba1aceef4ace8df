import json
from pathlib import Path

import numpy as np
import pytest

from mcbpool.exceptions import CorruptFileError
from mcbpool.harness import AblationReport, AblationRow
from mcbpool.io import (
    dumps,
    format_float,
    load_dataset,
    load_sketch,
    save_dataset,
    save_sketch,
    write_csv,
    write_report,
)
from mcbpool.sketch import sample_params
from mcbpool.tasks import (
    BilinearClassificationTask,
    GridClassificationTask,
    GroundingRankingTask,
    gen_classification,
    gen_grid_classification,
    gen_grounding,
)

GOLDEN = Path(__file__).parent / "data" / "sketch_seed2024_n12_d7.json"


def test_sketch_roundtrip(tmp_path):
    p = sample_params(99, 40, 13)
    save_sketch(tmp_path / "s.json", p)
    q = load_sketch(tmp_path / "s.json")
    assert q == p and q.seed == 99
    np.testing.assert_array_equal(q.h, p.h)


def test_golden_file_loads_with_identical_params():
    p = load_sketch(GOLDEN)
    assert p == sample_params(2024, 12, 7)
    np.testing.assert_array_equal(p.h_one_based, [2, 5, 1, 2, 3, 3, 7, 6, 7, 7, 1, 1])
    np.testing.assert_array_equal(p.s, [1, -1, -1, -1, 1, -1, -1, -1, -1, 1, 1, 1])


def test_golden_file_rewrites_byte_identically(tmp_path):
    save_sketch(tmp_path / "g.json", sample_params(2024, 12, 7))
    assert (tmp_path / "g.json").read_bytes() == GOLDEN.read_bytes()


def test_truncated_file(tmp_path):
    path = tmp_path / "t.json"
    path.write_bytes(GOLDEN.read_bytes()[:50])
    with pytest.raises(CorruptFileError):
        load_sketch(path)


@pytest.mark.parametrize("edit", [
    lambda d: d.update(h=[1] * 12),
    lambda d: d.update(version=2),
    lambda d: d.update(format="other"),
    lambda d: d.pop("s"),
    lambda d: d.update(checksum="sha256:00"),
])
def test_tampered_file(tmp_path, edit):
    doc = json.loads(GOLDEN.read_text())
    edit(doc)
    path = tmp_path / "x.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(CorruptFileError):
        load_sketch(path)


def test_consistent_checksum_but_invalid_params(tmp_path):
    from mcbpool.io import _checksum

    doc = json.loads(GOLDEN.read_text())
    doc.pop("checksum")
    doc["h"][0] = 99
    doc["checksum"] = _checksum(doc)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(CorruptFileError):
        load_sketch(path)


def test_format_float():
    assert format_float(0.1) == "0.10000000000000001"
    assert format_float(2) == "2.0"
    assert format_float(float("nan")) == "null"
    assert float(format_float(1 / 3)) == 1 / 3


def test_dumps_is_compact_and_ordered():
    assert dumps({"b": 1, "a": [0.5, True, None, "x"]}) == '{"b":1,"a":[0.5,true,null,"x"]}'
    with pytest.raises(TypeError):
        dumps({"a": object()})


@pytest.mark.parametrize("make", [
    lambda: gen_classification(BilinearClassificationTask(3, 4, 3, 0.1, seed=1), 7),
    lambda: gen_grid_classification(GridClassificationTask(3, 4, 3, 5, 0.1, seed=1), 7),
    lambda: gen_grounding(GroundingRankingTask(3, 4, 3, 0.1, seed=1), 7),
])
def test_dataset_roundtrip(tmp_path, make):
    data = make()
    save_dataset(tmp_path / "d.jsonl", data)
    back = load_dataset(tmp_path / "d.jsonl")
    assert back.content_hash() == data.content_hash()


def test_dataset_truncated(tmp_path):
    data = gen_classification(BilinearClassificationTask(3, 4, 3, seed=1), 5)
    path = tmp_path / "d.jsonl"
    save_dataset(path, data)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(CorruptFileError):
        load_dataset(path)
    path.write_text("")
    with pytest.raises(CorruptFileError):
        load_dataset(path)


def test_csv_dialect(tmp_path):
    write_csv(tmp_path / "x.csv", ("a", "b"), [(1, 0.25), ("m", None)])
    assert (tmp_path / "x.csv").read_bytes() == b"a,b\n1,0.25\nm,\n"


def _report():
    rows = [AblationRow("mcb[d=8]", "d=8", 80, 0.9, 0.8, 1.5, s) for s in (1, 2)]
    rows.append(AblationRow("concat[fc=3]", "hidden=3", 79, 0.7, 0.6, 0.5, 1))
    return AblationReport(rows)


def test_report_files_deterministic(tmp_path):
    write_report(tmp_path / "a", "r", "ablate", {"seed": 1}, _report(), {"m": 0.5})
    slower = AblationReport([AblationRow(r.method, r.config, r.n_params, r.train_accuracy,
                                         r.test_accuracy, r.seconds * 7, r.seed)
                             for r in _report().rows])
    write_report(tmp_path / "b", "r", "ablate", {"seed": 1}, slower, {"m": 0.5})
    for name in ("r.csv", "r.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "r.timing.json").read_bytes() != (tmp_path / "b" / "r.timing.json").read_bytes()
    lines = (tmp_path / "a" / "r.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 + 2
    assert json.loads((tmp_path / "a" / "r.json").read_text())["version"] == 1
