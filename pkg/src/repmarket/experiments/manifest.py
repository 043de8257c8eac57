"""Run-directory management: manifests, content hashes, and result tables.

Every experiment writes one manifest (experiment name, resolved
configuration, seed, and a content hash of the parameters) plus one or more
tab-separated result tables.  Re-running a subcommand with the same manifest
inputs reproduces every table byte for byte: floats are rendered with
``repr`` (shortest round-trip form) and row order is deterministic.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..core import ConfigError, RunConfig

__all__ = [
    "config_payload",
    "format_cell",
    "param_hash",
    "read_manifest",
    "read_table",
    "prepare_run_dir",
    "write_manifest",
    "write_table",
]

MANIFEST_NAME = "manifest.json"


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def config_payload(cfg: RunConfig) -> dict:
    """Plain-dict view of a run configuration (benchmark matrix elided; it
    is derived from the seed)."""
    payload = dataclasses.asdict(cfg)
    pop = payload.get("population", {})
    if pop.get("w_center") is not None:
        pop["w_center"] = "seed-derived"
    return _jsonable(payload)


def param_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def prepare_run_dir(path: "str | Path", force: bool = False) -> Path:
    """Create the run directory; refuse to reuse one that already holds a
    manifest unless forced."""
    run_dir = Path(path)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = run_dir / MANIFEST_NAME
    if manifest.exists() and not force:
        raise ConfigError(
            f"{manifest} already exists; pass --force to overwrite the run"
        )
    return run_dir


def write_manifest(
    run_dir: Path,
    experiment: str,
    cfg: RunConfig,
    extra: dict | None = None,
) -> dict:
    payload = {
        "experiment": experiment,
        "config": config_payload(cfg),
        "seed": cfg.seed,
        "extra": _jsonable(extra or {}),
    }
    payload["hash"] = param_hash(payload)
    text = json.dumps(payload, indent=2, sort_keys=True)
    (run_dir / MANIFEST_NAME).write_text(text + "\n")
    return payload


def read_manifest(run_dir: "str | Path") -> dict:
    manifest = Path(run_dir) / MANIFEST_NAME
    if not manifest.exists():
        raise ConfigError(f"no manifest found: {manifest}")
    return json.loads(manifest.read_text())


def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_table(path: "str | Path", header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(format_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_table(path: "str | Path") -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing result table: {path}")
    lines = path.read_text().splitlines()
    if not lines:
        raise ConfigError(f"empty result table: {path}")
    header = lines[0].split("\t")
    return header, [line.split("\t") for line in lines[1:]]
