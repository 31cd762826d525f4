"""Deterministic CSV/JSON output with a SHA-256 manifest."""

from __future__ import annotations

import hashlib
import json
import math
import threading
from pathlib import Path

import numpy as np

SIG_DIGITS = 12


def format_number(x) -> str:
    """Shortest round-trip text for ``x``, capped at 12 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return repr(x)
    if x == 0.0:
        return "0"
    short = repr(x)
    mantissa = short.split("e")[0].lstrip("-").replace(".", "").lstrip("0")
    if len(mantissa) <= SIG_DIGITS:
        return short
    return format(x, f".{SIG_DIGITS}g")


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    return format_number(v)


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(format_number(x)) if math.isfinite(x) else repr(x)
    return obj


class RunWriter:
    """All files of one run go through this writer; ``finalize`` writes ``manifest.json``."""

    def __init__(self, out_dir):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}
        self.meta: dict = {}
        self._lock = threading.Lock()

    def _register(self, rel: str, data: bytes):
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        with self._lock:
            self.files[rel] = hashlib.sha256(data).hexdigest()
        return path

    def write_csv(self, rel: str, header, rows) -> Path:
        lines = [",".join(header)]
        lines += [",".join(_cell(v) for v in row) for row in rows]
        return self._register(rel, ("\n".join(lines) + "\n").encode("utf-8"))

    def write_json(self, rel: str, obj) -> Path:
        text = json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"
        return self._register(rel, text.encode("utf-8"))

    def write_grid(self, rel: str, grid) -> Path:
        nodes = grid.nodes()
        header = [f"x{a}" for a in range(nodes.shape[1])] + ["u"]
        rows = [list(n) + [v] for n, v in zip(nodes, grid.flat)]
        return self.write_csv(rel, header, rows)

    def finalize(self, **meta) -> Path:
        self.meta.update(meta)
        manifest = {"files": [{"path": k, "sha256": v} for k, v in sorted(self.files.items())], **self.meta}
        text = json.dumps(to_jsonable(manifest), indent=2, sort_keys=True) + "\n"
        path = self.root / "manifest.json"
        path.write_text(text, encoding="utf-8")
        return path


def grid_from_csv(path, domain):
    """Read a grid CSV written by :meth:`RunWriter.write_grid`."""
    from .lax_oleinik import GridFunction

    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    d = domain.dimension
    coords, vals = data[:, :d], data[:, d]
    res = tuple(len(np.unique(np.round(coords[:, a], 12))) for a in range(d))
    return GridFunction(domain, vals.reshape(res))
