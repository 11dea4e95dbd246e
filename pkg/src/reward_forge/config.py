"""Flat JSON configuration: one file drives env, ppo, search and distill settings by key prefix."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .distill import DistillConfig
from .env import EnvConfig
from .ppo import PpoConfig


class ConfigError(ValueError):
    pass


@dataclass
class SearchSettings:
    endpoint: str = "stub://0"
    model: str = "gpt-4o"
    temperature: float = 1.0
    timeout: float = 120.0
    max_retries: int = 3
    iterations: int = 5
    samples: int = 4
    strategy: str = "bpmod"
    seed: int = 0
    eval_episodes: int = 64
    workers: int = 1


SECTIONS = {
    "env": EnvConfig,
    "ppo": PpoConfig,
    "search": SearchSettings,
    "distill": DistillConfig,
}

# shorthand spellings accepted without a prefix
ALIASES = {
    "discount": "ppo.gamma",
    "gae_tau": "ppo.gae_lambda",
    "clip": "ppo.clip_eps",
    "lr": "ppo.learning_rate",
    "d_tol": "env.goal_dtol",
    "samples_per_iteration": "search.samples",
}


@dataclass
class Settings:
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    search: SearchSettings = field(default_factory=SearchSettings)
    distill: DistillConfig = field(default_factory=DistillConfig)
    overrides: dict = field(default_factory=dict)  # explicit keys, fully qualified

    def to_flat(self) -> dict:
        out = {}
        for name in SECTIONS:
            for k, v in dataclasses.asdict(getattr(self, name)).items():
                out[f"{name}.{k}"] = list(v) if isinstance(v, tuple) else v
        return out


def _defaults(cls) -> dict:
    return {f.name: f for f in dataclasses.fields(cls)}


def _unique_owner(key: str) -> str | None:
    owners = [s for s, cls in SECTIONS.items() if key in _defaults(cls)]
    if len(owners) > 1:
        raise ConfigError(f"key {key!r} is ambiguous; write one of " + ", ".join(f"{o}.{key}" for o in owners))
    return f"{owners[0]}.{key}" if owners else None


def resolve_key(key: str) -> tuple[str, str]:
    """Map a flat key to (section, field); raises ConfigError naming unknown keys."""
    if "." in key:
        section, _, name = key.partition(".")
        if section not in SECTIONS:
            raise ConfigError(f"unknown config key {key!r}: section must be one of {', '.join(SECTIONS)}")
        if name not in _defaults(SECTIONS[section]):
            raise ConfigError(f"unknown config key {key!r}")
        return section, name
    full = ALIASES.get(key) or _unique_owner(key)
    if full is None:
        raise ConfigError(f"unknown config key {key!r}")
    return resolve_key(full)


def _coerce(key: str, default, value):
    if isinstance(value, bool) and not isinstance(default, bool):
        raise ConfigError(f"{key}: expected a number or string, got a boolean")
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int)
    elif isinstance(default, float) or default is None:
        ok = isinstance(value, (int, float)) or (default is None and value is None)
        value = float(value) if ok and value is not None else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value)
        value = tuple(value) if ok else value
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{key}: value {value!r} has the wrong type")
    return value


def build_settings(flat: dict) -> Settings:
    """Apply flat overrides to compiled defaults and validate each section."""
    per_section = {s: {} for s in SECTIONS}
    seen = {}
    explicit = {}
    for key, value in flat.items():
        section, name = resolve_key(key)
        if (section, name) in seen:
            raise ConfigError(f"{key!r} and {seen[section, name]!r} set the same value")
        seen[section, name] = key
        default = _defaults(SECTIONS[section])[name]
        if default.default is not dataclasses.MISSING:
            base = default.default
        else:
            base = default.default_factory()
        per_section[section][name] = _coerce(key, base, value)
        explicit[f"{section}.{name}"] = value
    built = {}
    for section, cls in SECTIONS.items():
        try:
            built[section] = cls(**per_section[section])
        except ValueError as e:
            raise ConfigError(f"invalid {section} settings: {e}") from None
    s = built["search"]
    if s.iterations < 1 or s.samples < 1 or s.workers < 1 or s.eval_episodes < 1:
        raise ConfigError("search.iterations, samples, workers and eval_episodes must be >= 1")
    if s.strategy not in ("original", "mod", "bp", "bpmod"):
        raise ConfigError(f"search.strategy must be original, mod, bp or bpmod, got {s.strategy!r}")
    return Settings(**built, overrides=explicit)


def parse_config_text(text: str, origin: str = "<config>") -> Settings:
    if not text.strip():
        return Settings()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{origin}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{origin}: top level must be a JSON object")
    return build_settings(data)


def load_config(path) -> Settings:
    """Read a flat JSON file; an empty file yields all defaults."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror or e}") from None
    return parse_config_text(text, str(p))


def with_overrides(settings: Settings, flat: dict) -> Settings:
    merged = dict(settings.overrides)
    for key, value in flat.items():
        section, name = resolve_key(key)
        merged[f"{section}.{name}"] = value
    return build_settings(merged)
