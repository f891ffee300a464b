"""Run configuration: flat key-value files, strict key checking, override
precedence (CLI flag > config file > default), and the seeded run directory.

Config files are plain text, one `section.key = value` per line, `#` for
comments. Sections map onto the encoder / network / training / metric
dataclasses plus a handful of run-level keys; any unknown key is an error
listing the offenders, never a silent default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

from .codec import EncoderConfig
from .geometry import MetricConfig
from .network import NetworkConfig
from .training import TrainConfig

RUN_KEYS = {
    "dataset": str,  # cornell | jacquard
    "root": str,
    "seed": int,
    "split_mode": str,  # image_wise | object_wise
    "train_fraction": float,
    "top_n": int,
}

_SECTIONS = {
    "encoder": EncoderConfig,
    "net": NetworkConfig,
    "train": TrainConfig,
    "metric": MetricConfig,
}


@dataclass
class RunConfig:
    dataset: str = "cornell"
    root: str = ""
    seed: int = 0
    split_mode: str = "image_wise"
    train_fraction: float = 0.9
    top_n: int = 1
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    net: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metric: MetricConfig = field(default_factory=MetricConfig)

    def flat_items(self) -> list[tuple[str, str]]:
        """Every config value as (dotted key, rendered value), sorted."""
        items = [(k, _render(getattr(self, k))) for k in RUN_KEYS]
        for section, cls in _SECTIONS.items():
            obj = getattr(self, section)
            for f in fields(cls):
                items.append((f"{section}.{f.name}", _render(getattr(obj, f.name))))
        return sorted(items)

    def hash(self) -> str:
        blob = json.dumps(self.flat_items()).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(raw: str, target_type):
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if target_type is float:
        return float(raw)
    if target_type is int:
        return int(raw)
    return raw


def parse_config_file(path) -> dict[str, str]:
    """Read `key = value` lines; returns the raw string mapping."""
    entries = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            entries[key] = raw
    return entries


def apply_overrides(cfg: RunConfig, entries: dict[str, str]) -> RunConfig:
    """Apply dotted-key overrides; unknown keys raise with the full list."""
    unknown = []
    run_updates = {}
    section_updates: dict[str, dict] = {name: {} for name in _SECTIONS}
    # field types come from the default instances (annotations are strings)
    section_types = {
        name: {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}
        for name, cls in _SECTIONS.items()
    }
    for key, raw in entries.items():
        if key in RUN_KEYS:
            run_updates[key] = _coerce(raw, RUN_KEYS[key])
            continue
        section, _, name = key.partition(".")
        if section in section_updates and name in section_types[section]:
            section_updates[section][name] = _coerce(raw, section_types[section][name])
        else:
            unknown.append(key)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")

    for section, updates in section_updates.items():
        if updates:
            cfg = dataclasses.replace(
                cfg, **{section: dataclasses.replace(getattr(cfg, section), **updates)}
            )
    if run_updates:
        cfg = dataclasses.replace(cfg, **run_updates)
    return cfg


def load_run_config(config_path=None, flag_overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if config_path:
        cfg = apply_overrides(cfg, parse_config_file(config_path))
    if flag_overrides:
        cfg = apply_overrides(cfg, flag_overrides)
    return cfg


def make_run_dir(base, cfg: RunConfig) -> Path:
    """Create run-<timestamp>-<confighash>/ and echo the full config into it."""
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = Path(base) / f"run-{stamp}-{cfg.hash()}"
    run_dir.mkdir(parents=True, exist_ok=False)
    with open(run_dir / "config.txt", "w") as f:
        for key, value in cfg.flat_items():
            f.write(f"{key} = {value}\n")
    return run_dir
