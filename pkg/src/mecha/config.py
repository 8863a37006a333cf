"""Broker configuration and its ``key = value`` file format."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .device import LatencyModel

DEFAULT_SOCKET = "./mecha.sock"
SOCKET_ENV = "MECHA_SOCKET"

_UNBOUNDED = {"", "none", "never", "unbounded", "inf"}
_LATENCY_KEYS = ("ctx_open_us", "ctx_close_us", "per_byte_ns", "per_op_us")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BrokerConfig:
    socket_path: str = DEFAULT_SOCKET
    priority_list: tuple[str, ...] = ()
    max_clients: int = 128
    latency_model: LatencyModel = field(default_factory=LatencyModel)
    batch_max: int | None = None  # None drains the whole send queue per cycle
    idle_close_ms: float | None = None  # None keeps the device context open
    queue_capacity: int = 4096

    def __post_init__(self):
        if not self.socket_path:
            raise ConfigError("socket_path must be non-empty")
        if self.max_clients < 1:
            raise ConfigError("max_clients must be >= 1")
        if len(set(self.priority_list)) != len(self.priority_list):
            raise ConfigError("priority entries must be unique")
        if self.batch_max is not None and self.batch_max < 1:
            raise ConfigError("batch_max must be >= 1")
        if self.idle_close_ms is not None and self.idle_close_ms < 0:
            raise ConfigError("idle_close_ms must be >= 0")
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be >= 1")

    def with_env(self, environ=os.environ) -> BrokerConfig:
        path = environ.get(SOCKET_ENV)
        return replace(self, socket_path=path) if path else self


def _optional_int(key, value):
    if value.lower() in _UNBOUNDED:
        return None
    return _number(key, value, int)


def _number(key, value, kind):
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def parse_config(text: str) -> BrokerConfig:
    kwargs = {}
    latency = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        if key == "socket_path":
            kwargs["socket_path"] = value
        elif key == "max_clients":
            kwargs["max_clients"] = _number(key, value, int)
        elif key == "batch_max":
            kwargs["batch_max"] = _optional_int(key, value)
        elif key == "idle_close_ms":
            kwargs["idle_close_ms"] = None if value.lower() in _UNBOUNDED else _number(key, value, float)
        elif key == "priority":
            kwargs["priority_list"] = tuple(n.strip() for n in value.split(",") if n.strip())
        elif key in _LATENCY_KEYS:
            latency[key] = _number(key, value, float)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    try:
        kwargs["latency_model"] = LatencyModel(**latency)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return BrokerConfig(**kwargs)


def load_config(path: str | os.PathLike | None = None, environ=os.environ) -> BrokerConfig:
    """Read a config file (or defaults when ``path`` is None) and apply ``MECHA_SOCKET``."""
    cfg = parse_config(Path(path).read_text()) if path else BrokerConfig()
    return cfg.with_env(environ)
