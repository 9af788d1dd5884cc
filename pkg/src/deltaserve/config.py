"""Server configuration.

Loadable from a KEY=VALUE file ('#' starts a comment; keys match the field
names below) with environment overrides DELTASERVE_CONFIG (config path),
DELTASERVE_HOST and DELTASERVE_PORT.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

FEATURE_FLAGS = (
    "radix_enabled",
    "speculation_enabled",
    "response_cache_enabled",
    "grouping_enabled",
    "validator_enabled",
)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    model_name: str = "deltaserve-mock-8b"

    # mock model shape
    layers: int = 32
    hidden: int = 4096
    vocab: int = 32768
    copy_min_match: int = 3
    bytes_per_value: int = 2

    # unified KV cache
    capacity_cells: int = 32768

    # sequence pool
    pool_transient: int = 12
    pool_session: int = 4
    acquire_timeout_s: float = 5.0
    request_deadline_s: float = 60.0

    # scheduler
    n_batch: int = 4096
    chunk_min: int = 128
    chunk_max: int = 4096
    fair_chunk: int = 1024
    high_water: float = 0.95
    group_window: int = 8
    latency_sensitive_max_tokens: int = 32
    spec_workers: int = 0

    # speculation
    spec_buffer: int = 2048
    spec_min_match: int = 3
    spec_max_lookahead: int = 16
    spec_ema_decay: float = 0.9
    spec_base_cap: int = 16
    spec_d0: int = 4
    spec_gate_threshold: float = 0.30
    spec_floor_cap: int = 2

    # validator
    validator_grace_pieces: int = 2

    # caches
    response_cache_entries: int = 1024
    render_cache_entries: int = 256
    tokenize_cache_entries: int = 64

    # simulated cost model
    prefill_ms_per_token: float = 0.5
    restore_ms: float = 0.5
    decode_ms: float = 25.0
    http_ms: float = 1.0
    realtime_factor: float = 0.0  # 0 = account time without sleeping

    # feature flags (toggled at runtime via /admin/config)
    radix_enabled: bool = True
    speculation_enabled: bool = True
    response_cache_enabled: bool = True
    grouping_enabled: bool = True
    validator_enabled: bool = True

    radix_commit_sessions: bool = True
    allow_fault_injection: bool = False
    default_max_tokens: int = 128

    @classmethod
    def from_file(cls, path: str) -> "ServerConfig":
        values: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected KEY=VALUE, got {raw!r}")
                key, val = line.split("=", 1)
                values[key.strip()] = val.strip()
        return cls().with_overrides(values)

    def with_overrides(self, values: dict[str, str]) -> "ServerConfig":
        by_name = {f.name: f for f in fields(self)}
        out = {}
        for key, val in values.items():
            if key not in by_name:
                raise ValueError(f"unknown config key: {key}")
            out[key] = _coerce(val, by_name[key].type)
        merged = {f.name: getattr(self, f.name) for f in fields(self)}
        merged.update(out)
        return ServerConfig(**merged)

    @classmethod
    def load(cls, path: str | None = None) -> "ServerConfig":
        path = path or os.environ.get("DELTASERVE_CONFIG")
        cfg = cls.from_file(path) if path else cls()
        host = os.environ.get("DELTASERVE_HOST")
        port = os.environ.get("DELTASERVE_PORT")
        if host:
            cfg.host = host
        if port:
            cfg.port = int(port)
        return cfg

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce(val: str, typ) -> object:
    name = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    if name == "bool":
        low = val.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected boolean, got {val!r}")
    if name == "int":
        return int(val)
    if name == "float":
        return float(val)
    return val
