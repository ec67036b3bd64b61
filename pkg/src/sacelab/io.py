"""Result persistence: versioned CSV, canonical JSON, atomic writes, run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

MANIFEST = "manifest.json"
MANIFEST_SCHEMA = "sacelab.manifest/1"


def _atomic_write_bytes(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(x):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path: str, obj) -> str:
    _atomic_write_bytes(path, dumps_json(obj).encode("utf-8"))
    return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str, schema: str, columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    """CSV whose first line is ``# schema: <schema>``; floats in shortest round-trip form."""
    buf = io.StringIO()
    buf.write(f"# schema: {schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    _atomic_write_bytes(path, buf.getvalue().encode("utf-8"))
    return path


def read_csv(path: str) -> tuple[str, list, np.ndarray]:
    """Return (schema id, column names, float array of rows)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("# schema:"):
            raise ValueError(f"{path}: missing schema header")
        schema = first.split(":", 1)[1].strip()
        rd = csv.reader(fh)
        cols = next(rd)
        data = [[float(v) for v in r] for r in rd if r]
    return schema, cols, np.asarray(data, dtype=float).reshape(-1, len(cols))


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    kind: str
    started: str
    finished: str = ""
    status: str = "RUNNING"
    seeds: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)  # relative path -> sha256
    error: Optional[str] = None
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"schema": MANIFEST_SCHEMA, "config_hash": self.config_hash,
                "code_version": self.code_version, "kind": self.kind, "started": self.started,
                "finished": self.finished, "status": self.status, "seeds": self.seeds,
                "files": dict(sorted(self.files.items())), "error": self.error,
                "summary": self.summary}

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        d = dict(d)
        d.pop("schema", None)
        return cls(**d)


def inventory(out_dir: str) -> dict:
    out = {}
    for root, _, names in os.walk(out_dir):
        for n in names:
            if n == MANIFEST or n.startswith(".tmp-"):
                continue
            full = os.path.join(root, n)
            out[os.path.relpath(full, out_dir).replace(os.sep, "/")] = sha256_file(full)
    return out


def write_manifest(out_dir: str, manifest: RunManifest) -> str:
    manifest.files = inventory(out_dir)
    return write_json(os.path.join(out_dir, MANIFEST), manifest.to_dict())


def read_manifest(out_dir: str) -> RunManifest:
    with open(os.path.join(out_dir, MANIFEST), encoding="utf-8") as fh:
        return RunManifest.from_dict(json.load(fh))


def verify_manifest(out_dir: str) -> list[str]:
    """Problems found: files missing from the manifest, missing on disk, or checksum drift."""
    m = read_manifest(out_dir)
    disk = inventory(out_dir)
    probs = []
    for k in sorted(set(disk) - set(m.files)):
        probs.append(f"not in manifest: {k}")
    for k in sorted(set(m.files) - set(disk)):
        probs.append(f"missing on disk: {k}")
    for k in sorted(set(disk) & set(m.files)):
        if disk[k] != m.files[k]:
            probs.append(f"checksum mismatch: {k}")
    return probs
