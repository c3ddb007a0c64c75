"""Deterministic CSV output and the run manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .rng import ALGORITHM


def format_cell(v) -> str:
    """Shortest round-trip text for floats, plain text for everything else."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
            w.writerow([format_cell(v) for v in row])
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_string() -> str:
    return f"infomax {__version__}; numpy {np.__version__}; python {platform.python_version()}; rng {ALGORITHM}"


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_json_atomic(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".manifest-", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


class RunManifest:
    """Collects emitted files during a run; ``write`` checksums them and saves manifest.json."""

    NAME = "manifest.json"

    def __init__(self, out_dir, subcommand: str, seed: int, config: dict, config_path=None):
        self.out_dir = Path(out_dir)
        self.subcommand = subcommand
        self.seed = seed
        self.config = config
        self.config_path = config_path
        self.started = utc_now()
        self.files: list[Path] = []

    def add(self, path) -> Path:
        p = Path(path)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file()):
                self.add(f)
        elif p not in self.files:
            self.files.append(p)
        return p

    def csv(self, name: str, header, rows) -> Path:
        return self.add(write_csv(self.out_dir / name, header, rows))

    def write(self, status: str = "ok", error: dict | None = None) -> Path:
        entries = [{"path": p.relative_to(self.out_dir).as_posix(), "sha256": sha256_file(p),
                    "bytes": p.stat().st_size} for p in self.files]
        payload = {
            "subcommand": self.subcommand,
            "status": status,
            "build": build_string(),
            "version": __version__,
            "seed": self.seed,
            "config": self.config,
            "config_path": self.config_path,
            "started": self.started,
            "finished": utc_now(),
            "files": entries,
        }
        if error is not None:
            payload["error"] = error
        return write_json_atomic(self.out_dir / self.NAME, payload)


def verify_manifest(out_dir) -> list[str]:
    """Files whose checksum no longer matches the manifest (empty list when all match)."""
    out_dir = Path(out_dir)
    data = json.loads((out_dir / RunManifest.NAME).read_text())
    bad = []
    for e in data["files"]:
        p = out_dir / e["path"]
        if not p.is_file() or sha256_file(p) != e["sha256"]:
            bad.append(e["path"])
    return bad
