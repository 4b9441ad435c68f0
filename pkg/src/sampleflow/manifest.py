"""Run manifests: hashes and config snapshots for reproducibility audits."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

from . import __version__


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode()).hexdigest()


def build_manifest(subcommand: str, config: dict, seed: int | None,
                   inputs: list[str | Path], outputs: list[str | Path],
                   started: float, finished: float) -> dict:
    return {
        "tool_version": __version__,
        "subcommand": subcommand,
        "config": config,
        "config_sha256": config_hash(config),
        "seed": seed,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "started_unix": started,
        "finished_unix": finished,
    }


def write_manifest(artifact: str | Path, subcommand: str, config: dict,
                   seed: int | None, inputs: list[str | Path],
                   started: float) -> Path:
    manifest = build_manifest(subcommand, config, seed, inputs, [artifact],
                              started, time.time())
    out = Path(str(artifact) + ".manifest.json")
    out.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return out
