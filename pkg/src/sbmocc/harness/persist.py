"""Run directories: config snapshot, artifacts and a checksum manifest."""
from __future__ import annotations

import hashlib
import json
import platform
import shutil
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

from .. import __version__
from ..kernel import ConfigurationError
from .config import ExperimentConfig

MANIFEST = "manifest.json"
CONFIG = "config.ini"
FAILED_MARKER = "FAILED"


class RunExistsError(ConfigurationError):
    pass


class ChecksumError(RuntimeError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunRecord:
    directory: str
    config_text: str
    version: str
    seed: int | None
    rng: str
    files: dict = field(default_factory=dict)  # relative name -> sha256
    wall_clock_s: float = 0.0
    started: str = ""
    platform: str = ""

    @property
    def config(self) -> ExperimentConfig:
        return ExperimentConfig.from_text(self.config_text)

    def manifest_dict(self) -> dict:
        """Reproducible part of the record: timing and host go in a separate file."""
        return {"version": self.version, "seed": self.seed, "rng": self.rng, "files": dict(sorted(self.files.items()))}


def persist_run(config: ExperimentConfig, writers: dict[str, Callable[[Path], None]], directory,
                seed: int | None = None, force: bool = False) -> RunRecord:
    """Write every artifact, then the manifest; a failure leaves a FAILED marker instead.

    ``writers`` maps a relative file name to a callable that writes it.
    Files are written to a sibling staging directory and moved into place
    only when all of them succeed.
    """
    directory = Path(directory)
    if directory.exists():
        if not force:
            raise RunExistsError(f"{directory} exists; pass --force to overwrite")
        shutil.rmtree(directory)
    staging = directory.with_name(directory.name + ".partial")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    t0 = time.time()
    config_text = config.to_text()
    try:
        (staging / CONFIG).write_text(config_text)
        for name in writers:
            target = staging / name
            target.parent.mkdir(parents=True, exist_ok=True)
            writers[name](target)
    except BaseException as exc:
        (staging / FAILED_MARKER).write_text(f"{type(exc).__name__}: {exc}\n")
        raise
    files = {p.relative_to(staging).as_posix(): sha256_file(p) for p in sorted(staging.rglob("*")) if p.is_file()}
    record = RunRecord(str(directory), config_text, __version__, seed, "splitmix64 counter hash / numpy PCG64",
                       files, time.time() - t0, time.strftime("%Y-%m-%dT%H:%M:%S"), platform.platform())
    (staging / MANIFEST).write_text(json.dumps(record.manifest_dict(), indent=2) + "\n")
    (staging / "run_info.json").write_text(json.dumps(
        {"wall_clock_s": record.wall_clock_s, "started": record.started, "platform": record.platform}, indent=2))
    staging.rename(directory)
    return record


def load_run(directory) -> RunRecord:
    directory = Path(directory)
    if (directory / FAILED_MARKER).exists():
        raise ConfigurationError(f"{directory} is marked FAILED")
    try:
        man = json.loads((directory / MANIFEST).read_text())
        text = (directory / CONFIG).read_text()
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"{directory} is not a run directory: {exc}") from exc
    info = {}
    if (directory / "run_info.json").exists():
        info = json.loads((directory / "run_info.json").read_text())
    return RunRecord(str(directory), text, man["version"], man.get("seed"), man.get("rng", ""), man["files"],
                     info.get("wall_clock_s", 0.0), info.get("started", ""), info.get("platform", ""))


def verify_run(directory) -> RunRecord:
    """Load a run and check every manifest checksum; raises ChecksumError on mismatch."""
    record = load_run(directory)
    bad = []
    for name, digest in record.files.items():
        p = Path(directory) / name
        if not p.exists() or sha256_file(p) != digest:
            bad.append(name)
    if bad:
        raise ChecksumError(f"checksum mismatch in {directory}: {', '.join(bad)}")
    return record
