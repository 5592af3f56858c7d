"""Series files, manifests and windowing."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError

__all__ = [
    "TimeSeries",
    "SeriesEntry",
    "DatasetManifest",
    "load_series",
    "save_series",
    "make_windows",
    "split_windows",
    "window_count",
]

ROLES = ("auxiliary", "evaluation")


@dataclass
class TimeSeries:
    name: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)

    def __len__(self):
        return self.values.size


def load_series(path, name=None) -> TimeSeries:
    """Read a one-value-per-row delimited file; the first row may be a header.

    Only the first column is used. Missing or non-finite entries are
    rejected with the offending row number (1-based, header included).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    text = path.read_text()
    try:
        dialect = csv.Sniffer().sniff(text[:1024], delimiters=",;\t ")
    except csv.Error:
        dialect = csv.excel
    values = []
    for row_no, row in enumerate(csv.reader(text.splitlines(), dialect), start=1):
        if not row or not any(cell.strip() for cell in row):
            continue
        cell = row[0].strip()
        try:
            v = float(cell)
        except ValueError:
            if row_no == 1:
                continue
            raise DataError(f"{path}: row {row_no}: cannot parse {cell!r}") from None
        if not math.isfinite(v):
            raise DataError(f"{path}: row {row_no}: non-finite value {cell!r}")
        values.append(v)
    if not values:
        raise DataError(f"{path}: no observations")
    return TimeSeries(name or path.stem, np.array(values))


def save_series(series, path, header="value"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = getattr(series, "values", series)
    with path.open("w") as fh:
        if header:
            fh.write(header + "\n")
        for v in values:
            fh.write(f"{float(v)!r}\n")


@dataclass
class SeriesEntry:
    id: str
    path: Path
    role: str
    note: str = ""


@dataclass
class DatasetManifest:
    """Series files grouped by role, plus the corpus-wide bin count and seed."""

    series: list = field(default_factory=list)
    m: int = 150
    seed: int = 0

    def __post_init__(self):
        ids = [e.id for e in self.series]
        if len(set(ids)) != len(ids):
            raise ConfigError("manifest series ids must be unique")
        for e in self.series:
            if e.role not in ROLES:
                raise ConfigError(f"series {e.id}: role must be one of {ROLES}, got {e.role!r}")

    def by_role(self, role):
        return [e for e in self.series if e.role == role]

    def load(self, role):
        return [load_series(e.path, e.id) for e in self.by_role(role)]

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest {path}: {exc}") from None
        base = path.parent
        try:
            entries = [
                SeriesEntry(str(s["id"]), (base / s["path"]).resolve(), s["role"], s.get("note", ""))
                for s in raw["series"]
            ]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed manifest {path}: {exc}") from None
        for e in entries:
            if not e.path.is_file():
                raise DataError(f"manifest entry {e.id}: missing file {e.path}")
        return cls(entries, int(raw.get("m", 150)), int(raw.get("seed", 0)))

    def to_file(self, path):
        path = Path(path)
        base = path.parent.resolve()
        rows = []
        for e in self.series:
            p = Path(e.path).resolve()
            try:
                p = p.relative_to(base)
            except ValueError:
                pass
            rows.append({"id": e.id, "path": str(p), "role": e.role, "note": e.note})
        path.write_text(json.dumps({"m": self.m, "seed": self.seed, "series": rows}, indent=2) + "\n")


def window_count(length, context_len, target_len, stride=1):
    return (length - context_len - target_len) // stride + 1


def make_windows(series, context_len, target_len, stride=1):
    """Sliding ``(context, target)`` pairs in chronological order.

    ``target_len=0`` gives encoder-only windows with empty targets.
    """
    v = np.asarray(getattr(series, "values", series), dtype=float)
    if context_len < 1 or target_len < 0 or stride < 1:
        raise ValueError("context_len and stride must be positive, target_len non-negative")
    if v.size < context_len + target_len:
        raise DataError(
            f"series of length {v.size} is shorter than context {context_len} + target {target_len}"
        )
    out = []
    for s in range(0, window_count(v.size, context_len, target_len, stride) * stride, stride):
        out.append((v[s:s + context_len], v[s + context_len:s + context_len + target_len]))
    return out


def split_windows(windows, val_fraction=0.2):
    """Chronological split: the final ``val_fraction`` of windows is held out.

    At least one window goes to validation whenever there are two or more.
    """
    n = len(windows)
    n_val = int(round(n * val_fraction))
    if n >= 2:
        n_val = min(max(n_val, 1), n - 1)
    return windows[:n - n_val], windows[n - n_val:]
