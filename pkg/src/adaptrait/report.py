"""Table emission (CSV at 3 decimals, JSON at full precision) and trait files."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .models import TraitDataset

SENTINELS = {"inf": math.inf, "-inf": -math.inf, "nan": math.nan}


def fmt3(value) -> str:
    """Three-decimal rendering; negative zero prints as ``0.000``."""
    if isinstance(value, str):
        return value
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    text = f"{value:.3f}"
    return "0.000" if text == "-0.000" else text


def header_line(config_hash: str, seed: int) -> str:
    return f"# config_hash={config_hash} seed={seed}\n"


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence[Any]], config_hash: str,
              seed: int) -> Path:
    """CSV with a provenance comment line; floats rendered by :func:`fmt3`."""
    buf = io.StringIO()
    buf.write(header_line(config_hash, seed))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt3(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return _write_text(path, buf.getvalue())


def read_csv(path) -> tuple[dict[str, str], list[list[str]]]:
    """Return ``(header_meta, rows)`` where rows include the column row."""
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        meta = dict(part.split("=", 1) for part in first.lstrip("# ").split())
        return meta, list(csv.reader(fh))


def encode(obj):
    """Recursively make ``obj`` JSON-safe with string sentinels for non-finite floats."""
    if isinstance(obj, Mapping):
        return {str(k): encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [encode(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return encode(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return obj


def decode(obj):
    """Inverse of :func:`encode` (sentinel strings become floats)."""
    if isinstance(obj, dict):
        return {k: decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [decode(v) for v in obj]
    if isinstance(obj, str) and obj in SENTINELS:
        return SENTINELS[obj]
    return obj


def write_json(path, payload: Mapping[str, Any], config_hash: str, seed: int) -> Path:
    """JSON with ``config_hash`` and ``seed`` as leading keys, full precision."""
    doc = {"config_hash": config_hash, "seed": seed, **encode(payload)}
    return _write_text(path, json.dumps(doc, indent=2) + "\n")


def load_json(path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        return decode(json.load(fh))


def _write_text(path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


# -- trait files --------------------------------------------------------------

def read_traits(path) -> TraitDataset:
    """Read ``species,y,x1,...,xk`` (header required, case-sensitive labels)."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if not rows:
        raise ValueError(f"{path}: empty trait file")
    head = [h.strip() for h in rows[0]]
    k = len(head) - 2
    if k < 0 or head[0] != "species" or head[1] != "y" or head[2:] != [f"x{i + 1}" for i in range(k)]:
        raise ValueError(f"{path}: header must be species,y,x1,...,xk; got {','.join(head)}")
    labels, values = [], []
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(head):
            raise ValueError(f"{path}:{line_no}: expected {len(head)} fields, got {len(row)}")
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError:
            raise ValueError(f"{path}:{line_no}: non-numeric trait value") from None
        labels.append(row[0].strip())
    arr = np.array(values, dtype=float).reshape(len(labels), k + 1)
    return TraitDataset(labels, arr[:, 0], arr[:, 1:])


def write_traits(path, data: TraitDataset) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["species", "y"] + [f"x{i + 1}" for i in range(data.k)])
    for lab, row in zip(data.labels, data.traits()):
        writer.writerow([lab] + [repr(float(v)) for v in row])
    return _write_text(path, buf.getvalue())


# -- tables -------------------------------------------------------------------

TABLE_ROWS = (("bias", "bias"), ("sd", "sd"), ("5%", "q05"), ("95%", "q95"))


def study_table_rows(summaries: Mapping[int, Mapping[str, Mapping[str, float]] | None],
                     names: Sequence[str]) -> list[list[Any]]:
    """Rows ``parameter, statistic, value per taxa size`` (failed cells print ``NA``)."""
    sizes = list(summaries)
    rows = []
    for name in names:
        for label, key in TABLE_ROWS:
            row: list[Any] = [name, label]
            for n in sizes:
                cell = summaries[n]
                row.append("NA" if cell is None else float(cell[name][key]))
            rows.append(row)
    return rows
