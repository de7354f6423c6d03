"""On-disk formats: parameter blobs, dataset CSV and JSON helpers.

Parameters are stored as a JSON index (layer, name, shape, offset) next to a
flat little-endian float64 blob, so any language can read them back.
"""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
from pathlib import Path

import numpy as np

from .errors import DomainError
from .synth import Dataset


def dumps(obj):
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_params(params, index_path, blob_path):
    """Write ``params`` (a list of dicts of arrays) as an index plus a blob."""
    entries, chunks, offset = [], [], 0
    for li, p in enumerate(params):
        for name in sorted(p):
            a = np.ascontiguousarray(p[name], dtype="<f8")
            entries.append({"layer": li, "name": name, "shape": list(a.shape), "offset": offset})
            chunks.append(a.reshape(-1))
            offset += a.size
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    Path(blob_path).write_bytes(blob.astype("<f8").tobytes())
    write_json(index_path, {"layers": len(params), "count": int(offset),
                            "blob": Path(blob_path).name, "dtype": "float64-le", "arrays": entries})


def load_params(index_path, blob_path=None):
    index = read_json(index_path)
    if blob_path is None:
        blob_path = Path(index_path).parent / index["blob"]
    raw = Path(blob_path).read_bytes()
    flat = np.frombuffer(raw, dtype="<f8")
    if flat.size != index["count"]:
        raise DomainError(f"{blob_path}: expected {index['count']} values, found {flat.size}")
    params = [{} for _ in range(index["layers"])]
    for e in index["arrays"]:
        size = int(np.prod(e["shape"], dtype=int))
        params[e["layer"]][e["name"]] = flat[e["offset"]:e["offset"] + size].reshape(e["shape"]).copy()
    return params


def dataset_to_csv(data):
    """Columns ``x0..x{k-1}, tau, y0..y{o-1}`` with round-trip float reprs."""
    X = data.X.reshape(len(data), -1)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(X.shape[1])] + ["tau"] + [f"y{i}" for i in range(data.y.shape[1])])
    for x, t, y in zip(X, data.tau, data.y):
        w.writerow([repr(float(v)) for v in x] + [repr(float(t))] + [repr(float(v)) for v in y])
    return buf.getvalue()


def dataset_from_csv(text):
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows or "tau" not in rows[0]:
        raise DomainError("line 1: expected a header with x*, tau and y* columns")
    head = rows[0]
    ti = head.index("tau")
    xs = [i for i, h in enumerate(head) if h.startswith("x")]
    ys = [i for i, h in enumerate(head) if h.startswith("y")]
    if not xs or not ys:
        raise DomainError("line 1: need at least one x and one y column")
    X, tau, Y = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(head):
            raise DomainError(f"line {lineno}: expected {len(head)} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise DomainError(f"line {lineno}: not a number") from None
        X.append([vals[i] for i in xs])
        tau.append(vals[ti])
        Y.append([vals[i] for i in ys])
    if not X:
        raise DomainError("no data rows")
    return Dataset(np.array(X), np.array(tau), np.array(Y))
