"""Flat key=value configuration shared by `serve`, `train`, and store tools.

Lines are `key = value`; blank lines and `#` comments are ignored. Secrets
(passphrase, key file contents) never live here; they arrive via environment
variables so they stay out of shell history and config backups.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

KNOWN_KEYS = {
    "listen_host",
    "listen_port",
    "store_path",
    "model_path",
    "session_ttl_hours",
    "sync_remote_url",
    "sync_username",
    "sync_password",
    "export_key",
}


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected `key = value`")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


@dataclass
class ServiceConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 8077
    store_path: str = "store"
    model_path: str = ""
    session_ttl_hours: float = 8.0
    sync_remote_url: str = ""
    sync_username: str = ""
    sync_password: str = ""
    export_key: str = ""
    unknown: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str) -> "ServiceConfig":
        kv = parse_kv(text)
        cfg = cls()
        for key, value in kv.items():
            if key == "listen_port":
                cfg.listen_port = int(value)
            elif key == "session_ttl_hours":
                cfg.session_ttl_hours = float(value)
            elif key in KNOWN_KEYS:
                setattr(cfg, key, value)
            else:
                cfg.unknown[key] = value
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))
