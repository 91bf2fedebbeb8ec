"""Deterministic CSV/JSON exports and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import __version__


def fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float) or hasattr(v, "dtype"):
        x = float(v)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(v)


def write_csv(path: Path, header_note: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """CSV with a leading ``#`` comment naming units and orderings; floats round-trip exactly."""
    path = Path(path)
    with path.open("w", newline="") as f:
        f.write(f"# {header_note}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def read_csv(path: Path) -> tuple[str, list[dict[str, str]]]:
    with Path(path).open() as f:
        note = f.readline().lstrip("# ").rstrip("\n")
        return note, list(csv.DictReader(f))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "tolist"):
        return _jsonable(x.tolist())
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def write_json(path: Path, obj: Any) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")
    return path


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config_path: str
    seed: int
    output_dir: str
    version: str
    config_sha256: str
    options: dict

    @classmethod
    def create(cls, command: str, config_path: Path, seed: int, out: Path, options: dict) -> "RunManifest":
        return cls(command, str(config_path), int(seed), str(out), __version__, file_sha256(config_path), options)

    def write(self, out: Path) -> Path:
        return write_json(Path(out) / "manifest.json", asdict(self))
