"""Run manifests: what produced an output directory, from which inputs."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__

MANIFEST = "manifest.json"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def digest_tree(path) -> dict:
    """sha256 of every regular file below ``path`` except the manifest, keyed by relative path."""
    root = Path(path)
    if root.is_file():
        return {root.name: file_digest(root)}
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            out[p.relative_to(root).as_posix()] = file_digest(p)
    return out


@dataclass
class RunManifest:
    command: str
    config: dict
    config_hash: str
    inputs: dict
    tool_version: str
    seed: int | None
    started: str
    finished: str = ""
    outputs: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    @classmethod
    def begin(cls, command: str, config: dict, inputs: dict, seed) -> "RunManifest":
        digests = {}
        for name, path in sorted(inputs.items()):
            if path is None:
                continue
            for rel, d in digest_tree(path).items():
                digests[f"{name}/{rel}"] = d
        return cls(command, config, config_hash(config), digests, __version__, seed, _now())

    def finish(self, out_dir) -> Path:
        self.outputs = digest_tree(out_dir)
        self.finished = _now()
        path = Path(out_dir) / MANIFEST
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def load(cls, out_dir) -> "RunManifest":
        with open(Path(out_dir) / MANIFEST) as fh:
            return cls(**json.load(fh))

    def outputs_match(self, out_dir) -> bool:
        return digest_tree(out_dir) == self.outputs


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def verify_chain(dirs) -> list[str]:
    """Check each directory against its manifest and every recorded input
    digest against the manifest of the directory that produced it.

    Returns a list of problems; empty means the chain verifies.
    """
    problems = []
    produced = {}
    for d in dirs:
        d = Path(d)
        try:
            m = RunManifest.load(d)
        except FileNotFoundError:
            problems.append(f"{d}: no manifest")
            continue
        if not m.outputs_match(d):
            problems.append(f"{d}: outputs differ from manifest")
        for rel, dig in m.outputs.items():
            produced.setdefault(dig, f"{d}/{rel}")
        for name, dig in m.inputs.items():
            if name.split("/", 1)[0] in m.notes.get("external_inputs", []):
                continue
            if dig not in produced:
                problems.append(f"{d}: input {name} not produced by an earlier stage")
    return problems
