"""File formats: sketch parameter files, JSON-lines datasets, CSV/JSON reports.

Every format carries a version number and unknown versions are rejected.
JSON is written with a fixed key order and floats pinned to 17 significant
digits so reruns produce byte-identical files. CSV uses commas, a header
row and ``\\n`` line endings.
"""

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

from .exceptions import CorruptFileError
from .sketch import CountSketchParams
from .tasks import ClassificationData, GroundingData

__all__ = [
    "SKETCH_VERSION",
    "DATASET_VERSION",
    "REPORT_VERSION",
    "format_float",
    "dumps",
    "write_json",
    "sketch_to_dict",
    "save_sketch",
    "load_sketch",
    "save_dataset",
    "load_dataset",
    "write_csv",
    "report_rows",
    "write_report",
]

SKETCH_VERSION = 1
DATASET_VERSION = 1
REPORT_VERSION = 1


def format_float(x):
    x = float(x)
    if not math.isfinite(x):
        return "null"
    text = format(x, ".17g")
    if "." not in text and "e" not in text and "n" not in text:
        text += ".0"
    return text


def _encode(obj, out):
    if obj is None or isinstance(obj, (bool, np.bool_)):
        out.append(json.dumps(None if obj is None else bool(obj)))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(json.dumps(str(k)))
            out.append(":")
            _encode(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _encode(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj):
    """Compact deterministic JSON (insertion key order, 17-digit floats)."""
    out = []
    _encode(obj, out)
    return "".join(out)


def write_json(path, obj):
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8", newline="\n")


def _sketch_payload(p):
    return {
        "format": "mcbpool.sketch",
        "version": SKETCH_VERSION,
        "n": p.n,
        "d": p.d,
        "seed": p.seed,
        "h": [int(v) for v in p.h_one_based],
        "s": [int(v) for v in p.s],
    }


def _checksum(payload):
    return "sha256:" + hashlib.sha256(dumps(payload).encode()).hexdigest()


def sketch_to_dict(p):
    payload = _sketch_payload(p)
    payload["checksum"] = _checksum(payload)
    return payload


def save_sketch(path, p):
    """Write ``p`` as JSON with 1-based buckets and a SHA-256 checksum."""
    write_json(path, sketch_to_dict(p))


def load_sketch(path):
    """Read a sketch file; raises :class:`CorruptFileError` on any defect."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != "mcbpool.sketch":
        raise CorruptFileError(f"{path}: not a sketch file")
    if doc.get("version") != SKETCH_VERSION:
        raise CorruptFileError(f"{path}: unsupported version {doc.get('version')!r}")
    fields = ("n", "d", "seed", "h", "s", "checksum")
    missing = [f for f in fields if f not in doc]
    if missing:
        raise CorruptFileError(f"{path}: missing fields {missing}")
    checksum = doc.pop("checksum")
    if _checksum(doc) != checksum:
        raise CorruptFileError(f"{path}: checksum mismatch")
    try:
        return CountSketchParams.from_one_based(doc["n"], doc["d"], doc["h"], doc["s"], doc["seed"])
    except (ValueError, TypeError) as exc:
        raise CorruptFileError(f"{path}: invalid parameters ({exc})") from exc


def save_dataset(path, data):
    """JSON lines: a header record, then one record per item."""
    if isinstance(data, GroundingData):
        kind = "grounding"
        records = ({"phrase": p, "proposals": v, "correct": int(c)}
                   for p, v, c in zip(data.phrases, data.proposals, data.correct))
    else:
        kind = "grid-classification" if data.x.ndim == 3 else "classification"
        records = ({"x": x, "q": q, "label": int(y)}
                   for x, q, y in zip(data.x, data.q, data.labels))
    header = {"format": "mcbpool.dataset", "version": DATASET_VERSION,
              "kind": kind, "count": len(data)}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(header) + "\n")
        for rec in records:
            fh.write(dumps(rec) + "\n")


def load_dataset(path):
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        header = json.loads(lines[0])
        records = [json.loads(line) for line in lines[1:]]
    except (IndexError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: unreadable dataset ({exc})") from exc
    if header.get("format") != "mcbpool.dataset" or header.get("version") != DATASET_VERSION:
        raise CorruptFileError(f"{path}: unsupported dataset header {header!r}")
    if header.get("count") != len(records):
        raise CorruptFileError(f"{path}: expected {header.get('count')} records, found {len(records)}")
    try:
        if header["kind"] == "grounding":
            return GroundingData(np.array([r["phrase"] for r in records], dtype=np.float64),
                                 np.array([r["proposals"] for r in records], dtype=np.float64),
                                 np.array([r["correct"] for r in records], dtype=np.int64))
        return ClassificationData(np.array([r["x"] for r in records], dtype=np.float64),
                                  np.array([r["q"] for r in records], dtype=np.float64),
                                  np.array([r["label"] for r in records], dtype=np.int64))
    except (KeyError, ValueError) as exc:
        raise CorruptFileError(f"{path}: malformed record ({exc})") from exc


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


REPORT_HEADER = ("format_version", "kind", "method", "config", "n_params", "seed",
                 "train_accuracy", "test_accuracy", "test_accuracy_std", "runs")


def report_rows(report):
    """CSV rows of an ablation report: one per run, then one summary per method."""
    rows = []
    for r in report.rows:
        rows.append((REPORT_VERSION, "run", r.method, r.config, r.n_params, r.seed,
                     r.train_accuracy, r.test_accuracy, None, 1))
    for s in report.summary():
        first = next(r for r in report.rows if r.method == s["method"])
        rows.append((REPORT_VERSION, "summary", s["method"], first.config, first.n_params, None,
                     s["mean_train_accuracy"], s["mean_test_accuracy"],
                     s["std_test_accuracy"], s["runs"]))
    return rows


def write_report(out_dir, name, command, config, report, metrics=None):
    """Write ``<name>.csv`` and ``<name>.json`` (deterministic) and
    ``<name>.timing.json`` (wall-clock data, which varies between runs)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"{name}.csv", REPORT_HEADER, report_rows(report))
    record = {
        "format": "mcbpool.result",
        "version": REPORT_VERSION,
        "command": command,
        "config": config,
        "metrics": metrics or {},
        "rows": [{"method": r.method, "config": r.config, "n_params": r.n_params, "seed": r.seed,
                  "train_accuracy": r.train_accuracy, "test_accuracy": r.test_accuracy}
                 for r in report.rows],
        "summary": report.summary(),
    }
    write_json(out / f"{name}.json", record)
    write_json(out / f"{name}.timing.json", {
        "format": "mcbpool.timing",
        "version": REPORT_VERSION,
        "command": command,
        "rows": [{"method": r.method, "seed": r.seed, "seconds": r.seconds} for r in report.rows],
    })
    return record
