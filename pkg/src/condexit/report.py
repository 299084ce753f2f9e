"""Deterministic artifact writing: CSV and JSON text, atomic commits and the manifest."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

MANIFEST = "manifest.json"


def fmt(v: Any) -> str:
    """Shortest round-trip text for numbers; ``str`` for everything else."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def csv_text(header: Iterable[str], rows: Iterable[Iterable[Any]]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def _plain(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        # JSON has no infinities or NaN
        return f if math.isfinite(f) else str(f)
    return obj


def json_text(obj: Any) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def config_hash(kind: str, config: Mapping[str, Any]) -> str:
    payload = json.dumps({"kind": kind, "config": _plain(config)}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def atomic_write(path: str | Path, content: str | bytes) -> None:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    data = content.encode() if isinstance(content, str) else content
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def commit(out_dir: str | Path, files: Mapping[str, str | bytes], kind: str, config: Mapping[str, Any], seeds) -> dict:
    """Write ``files`` atomically and append one run entry to the manifest.

    Returns the manifest entry.  Each file is listed with its SHA-256, the
    configuration hash and the seeds that generated it.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(kind, config)
    listed = []
    for name in sorted(files):
        content = files[name]
        atomic_write(out / name, content)
        data = content.encode() if isinstance(content, str) else content
        listed.append({"file": name, "sha256": hashlib.sha256(data).hexdigest(), "config_hash": chash, "seeds": list(seeds)})
    entry = {"kind": kind, "config_hash": chash, "config": _plain(config), "seeds": list(seeds), "files": listed}
    mpath = out / MANIFEST
    runs = json.loads(mpath.read_text())["runs"] if mpath.exists() else []
    runs.append(entry)
    atomic_write(mpath, json_text({"runs": runs}))
    return entry


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
