"""Run manifests: the reproducibility record written by every CLI command.

A manifest ties together the command, its fully resolved configuration, the
master seed, and content digests of every input and output file. Content is
deliberately free of volatile data (absolute paths, timestamps, durations) so
a rerun from the same seed produces a byte-identical manifest; wall-clock
timing goes to the log stream instead.
"""

import hashlib
import json
from pathlib import Path

from . import __version__
from .gridfile import atomic_write_bytes


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_manifest(out_dir, command: str, config: dict, master_seed,
                   inputs=(), outputs=(), extra: dict | None = None) -> Path:
    """Write ``manifest.json`` into ``out_dir`` and return its path.

    ``inputs``/``outputs`` are file paths; they are recorded by basename and
    sha256 digest only.
    """
    out_dir = Path(out_dir)
    manifest = {
        "run_id": hashlib.sha256(
            _canonical({"command": command, "config": config, "seed": master_seed})
        ).hexdigest()[:16],
        "tool_version": __version__,
        "command": command,
        "master_seed": master_seed,
        "config": config,
        "inputs": [{"name": Path(p).name, "sha256": file_digest(p)} for p in inputs],
        "outputs": [{"name": Path(p).name, "sha256": file_digest(p)} for p in outputs],
    }
    if extra:
        manifest["extra"] = extra
    path = out_dir / "manifest.json"
    atomic_write_bytes(path, json.dumps(manifest, sort_keys=True, indent=2).encode("utf-8") + b"\n")
    return path
