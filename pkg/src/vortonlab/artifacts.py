"""Atomic CSV/JSON writers that keep a content-hashed list of everything written."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

__all__ = ["ArtifactWriter", "atomic_write", "format_number", "jsonable"]


def atomic_write(path: Path, data: bytes) -> None:
    """Write to a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_number(x) -> str:
    """Shortest round-trip decimal for floats (Python repr is locale independent)."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def jsonable(obj):
    """Plain JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


class ArtifactWriter:
    def __init__(self, out_dir):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.records: list[dict] = []

    def _record(self, name: str, data: bytes) -> Path:
        path = self.root / name
        atomic_write(path, data)
        self.records = [r for r in self.records if r["path"] != name]
        self.records.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        return path

    def csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_number(v) for v in row])
        return self._record(name, buf.getvalue().encode("utf-8"))

    def json(self, name: str, obj) -> Path:
        text = json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
        return self._record(name, text.encode("utf-8"))

    def manifest(self, info: dict) -> Path:
        """manifest.json listing every artifact with its hash; not itself listed."""
        doc = dict(info)
        doc["artifacts"] = sorted(self.records, key=lambda r: r["path"])
        text = json.dumps(jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"
        path = self.root / "manifest.json"
        atomic_write(path, text.encode("utf-8"))
        return path
