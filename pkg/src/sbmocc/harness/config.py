"""Experiment configuration: sectioned key = value text, one level deep."""
from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..kernel import ConfigurationError

KINDS = ("hitting", "moments", "simulate", "analyze", "suite")
OUTPUT_ROOT_ENV = "SBMOCC_OUTPUT_ROOT"
WORKERS_ENV = "SBMOCC_WORKERS"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def env_workers() -> int | None:
    v = os.environ.get(WORKERS_ENV)
    if v is None:
        return None
    try:
        n = int(v)
    except ValueError as exc:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer") from exc
    if n < 1:
        raise ConfigurationError(f"{WORKERS_ENV} must be >= 1")
    return n


@dataclass
class ExperimentConfig:
    """``kind`` plus string-valued parameter blocks keyed by section name.

    Values stay strings so the text form round-trips exactly; typed access
    goes through :meth:`get`.
    """

    kind: str
    params: dict = field(default_factory=dict)  # section -> {key: str}
    output_dir: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}")
        for sec, block in self.params.items():
            if not isinstance(block, dict):
                raise ConfigurationError(f"section {sec!r} must be a flat mapping")
            for k, v in block.items():
                if not isinstance(v, str):
                    block[k] = _fmt(v)

    def section(self, name: str | None = None) -> dict:
        return self.params.setdefault(name or self.kind, {})

    def get(self, key, cast=str, default=None, section=None):
        block = self.params.get(section or self.kind, {})
        if key not in block or block[key] == "":
            return default
        raw = block[key]
        try:
            if cast is bool:
                return raw.lower() in ("1", "true", "yes", "on")
            if cast is list:
                return [s.strip() for s in raw.split(",") if s.strip()]
            return cast(raw)
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc

    def get_floats(self, key, default=None, section=None):
        vals = self.get(key, list, None, section)
        if vals is None:
            return default
        try:
            return [float(v) for v in vals]
        except ValueError as exc:
            raise ConfigurationError(f"bad number list for {key}") from exc

    def merged(self, overrides: dict, section: str | None = None) -> "ExperimentConfig":
        """Copy with ``overrides`` (None values skipped) written into ``section``."""
        params = {s: dict(b) for s, b in self.params.items()}
        block = params.setdefault(section or self.kind, {})
        for k, v in overrides.items():
            if v is not None:
                block[k] = _fmt(v)
        return ExperimentConfig(self.kind, params, self.output_dir)

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["experiment"] = {"kind": self.kind, **({"output_dir": self.output_dir} if self.output_dir else {})}
        for sec in sorted(self.params):
            cp[sec] = dict(sorted(self.params[sec].items()))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str, kind: str | None = None) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"invalid config file: {exc}") from exc
        exp = dict(cp["experiment"]) if cp.has_section("experiment") else {}
        k = kind or exp.get("kind")
        if k is None:
            raise ConfigurationError("config needs [experiment] kind = ...")
        params = {s: dict(cp[s]) for s in cp.sections() if s != "experiment"}
        return cls(k, params, exp.get("output_dir"))

    @classmethod
    def load(cls, path, kind: str | None = None) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        cfg = cls.from_text(text, kind)
        if kind is not None and cfg.kind != kind:
            cfg = ExperimentConfig(kind, cfg.params, cfg.output_dir)
        return cfg

    def __eq__(self, other):
        return (isinstance(other, ExperimentConfig) and self.kind == other.kind
                and self.output_dir == other.output_dir
                and {s: b for s, b in self.params.items() if b} == {s: b for s, b in other.params.items() if b})


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)
