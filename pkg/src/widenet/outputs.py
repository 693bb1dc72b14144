"""CSV, SVG and manifest writers with byte-stable output."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.json"


def format_value(v) -> str:
    """Shortest round-trip text for floats; plain ``str`` otherwise."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float) or hasattr(v, "dtype") and v.dtype.kind == "f":
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    if hasattr(v, "dtype"):
        return str(v.item())
    return str(v)


def csv_text(header, rows, config_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# manifest={MANIFEST_NAME} config_sha256={config_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def read_csv(path) -> tuple[list, list]:
    """Header and string rows, skipping ``#`` comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, list(reader)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_text(path: Path, text: str) -> None:
    path.write_bytes(text.encode())


def write_manifest(out_dir: Path, config_hash: str, files: list[Path], wall_clock: float,
                   summary: dict | None = None) -> Path:
    manifest = {
        "config_sha256": config_hash,
        "version": __version__,
        "wall_clock_seconds": round(wall_clock, 3),
        "outputs": {p.name: sha256_file(p) for p in sorted(files)},
    }
    if summary:
        manifest["summary"] = summary
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(v):
    if hasattr(v, "item"):
        return v.item()
    if hasattr(v, "tolist"):
        return v.tolist()
    raise TypeError(type(v))
