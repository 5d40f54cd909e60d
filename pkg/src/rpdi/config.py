"""Layered settings: CLI flag > environment > config file > built-in default.

The config file is YAML (JSON also parses) with three optional sections::

    policy:
      window: 512
      threshold: 2.0
      budget: 16384
      boundary_set: ["\\n\\n", ".\\n\\n", ". ", ".", "?", "!", ";"]
    upstream:
      base_url: http://127.0.0.1:8000
      logprobs_top_k: 20
    gateway:
      port: 8080

Every key can be overridden by ``RPDI_<SECTION>_<KEY>`` in the environment,
e.g. ``RPDI_POLICY_WINDOW=256``. ``RPDI_CONFIG`` names the config file.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping
from urllib.parse import urlparse

import yaml

from rpdi.policy import ConfigError, PolicyConfig

ENV_PREFIX = "RPDI_"
CONFIG_ENV = "RPDI_CONFIG"
COMPLETION_STYLES = ("chat", "raw-completion")


@dataclass(frozen=True)
class UpstreamConfig:
    base_url: str = "http://127.0.0.1:8000"
    logprobs_top_k: int = 20
    request_timeout: float = 60.0
    completion_style: str = "chat"

    def __post_init__(self) -> None:
        if isinstance(self.logprobs_top_k, bool) or not isinstance(self.logprobs_top_k, int) or self.logprobs_top_k < 1:
            raise ConfigError(f"logprobs_top_k must be a positive integer, got {self.logprobs_top_k!r}")
        parsed = urlparse(self.base_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ConfigError(f"base_url is not an http(s) URL: {self.base_url!r}")
        if not self.request_timeout > 0:
            raise ConfigError("request_timeout must be > 0")
        if self.completion_style not in COMPLETION_STYLES:
            raise ConfigError(f"completion_style must be one of {COMPLETION_STYLES}")

    @property
    def endpoint(self) -> str:
        path = "/v1/chat/completions" if self.completion_style == "chat" else "/v1/completions"
        return self.base_url.rstrip("/") + path


@dataclass(frozen=True)
class GatewaySettings:
    host: str = "127.0.0.1"
    port: int = 8080
    # False relays the upstream stream untouched
    monitoring: bool = True
    health_check: bool = True
    shutdown_timeout: float = 30.0


@dataclass(frozen=True)
class Settings:
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    upstream: UpstreamConfig = field(default_factory=UpstreamConfig)
    gateway: GatewaySettings = field(default_factory=GatewaySettings)


def _parse_bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_int(v: Any) -> int:
    if isinstance(v, bool):
        raise ValueError(f"not an integer: {v!r}")
    if isinstance(v, int):
        return v
    if isinstance(v, float) and v.is_integer():
        return int(v)
    return int(str(v).strip())


def _parse_float(v: Any) -> float:
    if isinstance(v, bool):
        raise ValueError(f"not a number: {v!r}")
    return float(v)


def _parse_str_set(v: Any) -> frozenset[str]:
    if isinstance(v, str):
        v = json.loads(v)
    if not isinstance(v, (list, tuple, set, frozenset)) or not all(isinstance(x, str) for x in v):
        raise ValueError("expected a list of strings")
    return frozenset(v)


_PARSERS: dict[str, dict[str, Callable[[Any], Any]]] = {
    "policy": {
        "window": _parse_int,
        "threshold": _parse_float,
        "boundary_set": _parse_str_set,
        "budget": _parse_int,
        "gtf_epsilon": _parse_float,
        "variant": str,
        "tail_policy": str,
        "termination_marker": str,
        "answer_reserve": _parse_int,
        "rebuild_interval": _parse_int,
    },
    "upstream": {
        "base_url": str,
        "logprobs_top_k": _parse_int,
        "request_timeout": _parse_float,
        "completion_style": str,
    },
    "gateway": {
        "host": str,
        "port": _parse_int,
        "monitoring": _parse_bool,
        "health_check": _parse_bool,
        "shutdown_timeout": _parse_float,
    },
}

KEYS = tuple(f"{sec}.{key}" for sec, keys in _PARSERS.items() for key in keys)


def env_name(key: str) -> str:
    return ENV_PREFIX + key.replace(".", "_").upper()


def _coerce(key: str, value: Any, origin: str) -> Any:
    sec, name = key.split(".", 1)
    try:
        return _PARSERS[sec][name](value)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{origin}: bad value for {key}: {exc}") from None


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Flatten a config file into ``{"section.key": value}``."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    flat: dict[str, Any] = {}
    for sec, body in data.items():
        if sec not in _PARSERS:
            raise ConfigError(f"{path}: unknown section {sec!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: section {sec!r} must be a mapping")
        for name, value in body.items():
            key = f"{sec}.{name}"
            if name not in _PARSERS[sec]:
                raise ConfigError(f"{path}: unknown key {key!r}")
            flat[key] = _coerce(key, value, str(path))
    return flat


def read_env(env: Mapping[str, str]) -> dict[str, Any]:
    return {k: _coerce(k, env[env_name(k)], env_name(k)) for k in KEYS if env_name(k) in env}


def load_settings(
    config_path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> Settings:
    """Resolve settings. ``overrides`` holds CLI flags as ``{"policy.window": 256}``;
    entries set to None are ignored."""
    env = os.environ if env is None else env
    merged: dict[str, Any] = {}
    path = config_path or env.get(CONFIG_ENV)
    if path:
        merged.update(read_config_file(path))
    merged.update(read_env(env))
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown setting {key!r}")
        if value is not None:
            merged[key] = _coerce(key, value, "command line")

    sections: dict[str, dict[str, Any]] = {sec: {} for sec in _PARSERS}
    for key, value in merged.items():
        sec, name = key.split(".", 1)
        sections[sec][name] = value
    try:
        return Settings(
            policy=PolicyConfig(**sections["policy"]),
            upstream=UpstreamConfig(**sections["upstream"]),
            gateway=GatewaySettings(**sections["gateway"]),
        )
    except ValueError as exc:  # ConfigError and bad enum values
        raise ConfigError(str(exc)) from None


def settings_as_dict(settings: Settings) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {}
    for sec in ("policy", "upstream", "gateway"):
        obj = getattr(settings, sec)
        body = {}
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, frozenset):
                v = sorted(v)
            elif hasattr(v, "value"):
                v = v.value
            body[f.name] = v
        out[sec] = body
    return out


__all__ = [
    "GatewaySettings",
    "KEYS",
    "Settings",
    "UpstreamConfig",
    "env_name",
    "load_settings",
    "read_config_file",
    "settings_as_dict",
]
