"""Daemon and CLI configuration: JSON file with explicit-flag overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

DEFAULT_MANAGER_FRAME_PORT = 7700
DEFAULT_AGENT_PORT = 7701
DEFAULT_API_PORT = 7702
DEFAULT_ANNOUNCE_INTERVAL_S = 10.0
DEFAULT_LOST_TIMEOUT_S = 60.0

# A tiny default device so `masd start` works out of the box.
DEFAULT_MIB_SCRIPT = """\
1.3.6.1.2.1.1.3.0 linear:0:100        # sysUpTime, hundredths of a second
1.3.6.1.2.1.1.5.0 str:simulated-device
1.3.6.1.2.1.2.1.0 constant:2          # ifNumber
1.3.6.1.2.1.2.2.1.10.1 linear:1000:250
1.3.6.1.2.1.2.2.1.10.2 linear:2000:50
table 1.3.6.1.2.1.6.13
row const:1 const:20 str:established
row const:2 const:5 str:listen
row const:3 const:80 str:established
"""


@dataclass
class MasdSettings:
    listen_host: str = "127.0.0.1"
    listen_port: int = DEFAULT_AGENT_PORT
    manager_addr: str = f"127.0.0.1:{DEFAULT_MANAGER_FRAME_PORT}"
    device_class: str = ""
    announce_interval_s: float = DEFAULT_ANNOUNCE_INTERVAL_S
    trusted_keys: list[str] = field(default_factory=list)
    mib_script: str | None = None
    cache_dir: str | None = None
    workers: int = 2
    load_source: str = "process"
    policy: dict = field(default_factory=dict)


@dataclass
class ManagerSettings:
    listen_host: str = "127.0.0.1"
    frame_port: int = DEFAULT_MANAGER_FRAME_PORT
    api_host: str = "127.0.0.1"
    api_port: int = DEFAULT_API_PORT
    private_key: str | None = None
    public_key: str | None = None
    data_dir: str = "manager-data"
    topology_file: str | None = None
    announce_interval_s: float = DEFAULT_ANNOUNCE_INTERVAL_S
    lost_timeout_s: float = DEFAULT_LOST_TIMEOUT_S
    k_max: int = 8
    cost_s0: float = 512.0
    cost_sd: float = 128.0
    console_dir: str | None = None


def _build(cls, file_values: dict, overrides: dict):
    known = {f.name for f in fields(cls)}
    merged = {}
    for source in (file_values, overrides):
        for key, value in source.items():
            if key in known and value is not None:
                merged[key] = value
    return cls(**merged)


def load_settings(cls, config_path: str | Path | None, **overrides):
    """File values first, then explicit flags; flags always win."""
    file_values = {}
    if config_path:
        file_values = json.loads(Path(config_path).read_text())
    return _build(cls, file_values, overrides)
