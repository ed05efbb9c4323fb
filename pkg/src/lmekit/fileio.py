"""Point-set files: CSV with a ``# d=<dim>`` header, or JSON ``{"d": int, "points": [...]}``."""

from __future__ import annotations

import json
import os
import re

import numpy as np

from .geometry import PointSet

_HEADER = re.compile(r"#\s*d\s*=\s*(\d+)\s*$")


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def format_csv(points) -> str:
    X = np.atleast_2d(np.asarray(points, dtype=float))
    lines = [f"# d={X.shape[1]}"]
    lines += [",".join(_fmt(v) for v in row) for row in X]
    return "\n".join(lines) + "\n"


def format_json(points) -> str:
    X = np.atleast_2d(np.asarray(points, dtype=float))
    rows = ",\n    ".join("[" + ", ".join(_fmt(v) for v in row) + "]" for row in X)
    return f'{{\n  "d": {X.shape[1]},\n  "points": [\n    {rows}\n  ]\n}}\n'


def parse_csv(text: str) -> np.ndarray:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not _HEADER.match(lines[0]):
        raise ValueError("CSV point file must start with a '# d=<dim>' header")
    d = int(_HEADER.match(lines[0]).group(1))
    rows = []
    for k, ln in enumerate(lines[1:], start=2):
        if ln.startswith("#"):
            continue
        parts = [p.strip() for p in ln.split(",")]
        if len(parts) != d:
            raise ValueError(f"line {k}: expected {d} coordinates, got {len(parts)}")
        rows.append([float(p) for p in parts])
    return np.array(rows, dtype=float).reshape(-1, d)


def parse_json(text: str) -> np.ndarray:
    obj = json.loads(text)
    if not isinstance(obj, dict) or "d" not in obj or "points" not in obj:
        raise ValueError('JSON point file must be an object with "d" and "points"')
    d = int(obj["d"])
    X = np.array(obj["points"], dtype=float).reshape(-1, d) if obj["points"] else np.zeros((0, d))
    if any(len(p) != d for p in obj["points"]):
        raise ValueError(f"every point must have {d} coordinates")
    return X


def _is_json(path: str) -> bool:
    return os.path.splitext(path)[1].lower() == ".json"


def read_points(path: str) -> PointSet:
    """Load a point set; the format is chosen by the ``.json`` extension, CSV otherwise."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    X = parse_json(text) if _is_json(path) else parse_csv(text)
    return PointSet(X)


def write_points(P, path: str) -> None:
    X = P.points if isinstance(P, PointSet) else P
    text = format_json(X) if _is_json(path) else format_csv(X)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
