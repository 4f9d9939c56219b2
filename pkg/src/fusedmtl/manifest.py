"""Run manifests: every CLI command records enough to reproduce itself.

A manifest holds the command name, every resolved parameter (after config
file and default merging), SHA-256 digests of the input files, the tool
version, and timestamps. Re-running the command rebuilt from a manifest
yields byte-identical outputs; only the manifest's own timestamp differs.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone

from . import __version__

TIMESTAMP_KEY = "created_utc"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def build_manifest(command: str, parameters: dict, input_paths) -> dict:
    return {
        "command": command,
        "tool_version": __version__,
        TIMESTAMP_KEY: datetime.now(timezone.utc).isoformat(),
        "parameters": dict(parameters),
        "inputs": {str(p): file_digest(p) for p in input_paths},
    }


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def manifest_to_argv(manifest: dict, out_dir=None) -> list[str]:
    """Rebuild the command line from a manifest's resolved parameters.

    out_dir may be overridden so a rerun can write next to, rather than over,
    the original outputs.
    """
    argv = [manifest["command"]]
    for key, value in sorted(manifest["parameters"].items()):
        if value is None:
            continue
        flag = "--" + key.replace("_", "-")
        if key == "out_dir" and out_dir is not None:
            value = out_dir
        if isinstance(value, bool):
            argv.append(flag if value else "--no-" + flag[2:])
        else:
            argv.extend([flag, str(value)])
    return argv
