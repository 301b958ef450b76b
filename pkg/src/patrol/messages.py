"""Wire payloads exchanged between the manager and agent-server daemons."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

from .proto import Reader, Writer
from .security import SignatureBlock
from .taskmodel import PollMode


class AgentStatus(IntEnum):
    ACTIVE = 1
    SUSPENDED = 2
    DEACTIVATED = 3


class ControlVerb(IntEnum):
    LIST_AGENTS = 1
    SUSPEND = 2
    RESUME = 3
    ACTIVATE = 4
    SET_FREQUENCY = 5
    GET_LOAD = 6


@dataclass
class MaInfo:
    """Registry record of an agent resident on a host."""

    agent_id: str
    class_name: str
    class_version: int
    poll_mode: PollMode
    frequency_s: int
    encrypt: bool
    arrival_time: int
    status: AgentStatus
    priority: int

    def encode(self, w: Writer) -> None:
        w.str(self.agent_id)
        w.str(self.class_name)
        w.u32(self.class_version)
        w.u8(self.poll_mode)
        w.u32(self.frequency_s)
        w.bool(self.encrypt)
        w.u64(self.arrival_time)
        w.u8(self.status)
        w.u8(self.priority)

    @classmethod
    def decode(cls, r: Reader) -> "MaInfo":
        return cls(
            agent_id=r.str(),
            class_name=r.str(),
            class_version=r.u32(),
            poll_mode=PollMode(r.u8()),
            frequency_s=r.u32(),
            encrypt=r.bool(),
            arrival_time=r.u64(),
            status=AgentStatus(r.u8()),
            priority=r.u8(),
        )

    def to_json(self, host: str | None = None) -> dict:
        record = {
            "id": self.agent_id,
            "class_name": self.class_name,
            "class_version": self.class_version,
            "poll_mode": self.poll_mode.name.lower().replace("_", "-"),
            "frequency_s": self.frequency_s,
            "authentication": True,
            "encrypt": self.encrypt,
            "arrival_time": self.arrival_time,
            "status": self.status.name.lower(),
            "priority": self.priority,
        }
        if host is not None:
            record["host"] = host
        return record


@dataclass(frozen=True)
class HostLoad:
    cpu_percent: float
    mem_bytes_used: int
    sampled_at: int

    def encode(self, w: Writer) -> None:
        w.f64(self.cpu_percent)
        w.u64(self.mem_bytes_used)
        w.u64(self.sampled_at)

    @classmethod
    def decode(cls, r: Reader) -> "HostLoad":
        return cls(r.f64(), r.u64(), r.u64())

    def to_json(self) -> dict:
        return {
            "cpu_percent": self.cpu_percent,
            "mem_bytes_used": self.mem_bytes_used,
            "sampled_at": self.sampled_at,
        }


@dataclass(frozen=True)
class BundleDigest:
    name: str
    version: int
    digest: bytes

    def encode(self, w: Writer) -> None:
        w.str(self.name)
        w.u32(self.version)
        w.bytes(self.digest)

    @classmethod
    def decode(cls, r: Reader) -> "BundleDigest":
        return cls(r.str(), r.u32(), r.bytes())


@dataclass(frozen=True)
class Announce:
    """Periodic liveness beacon from an agent server to the manager."""

    host_id: str
    host: str
    port: int
    device_class: str
    load: HostLoad
    bundles: tuple[BundleDigest, ...]

    def encode(self, w: Writer) -> None:
        w.str(self.host_id)
        w.str(self.host)
        w.u16(self.port)
        w.str(self.device_class)
        self.load.encode(w)
        w.list(sorted(self.bundles, key=lambda b: b.name), lambda w, b: b.encode(w))

    @classmethod
    def decode(cls, r: Reader) -> "Announce":
        return cls(
            host_id=r.str(),
            host=r.str(),
            port=r.u16(),
            device_class=r.str(),
            load=HostLoad.decode(r),
            bundles=tuple(r.list(BundleDigest.decode)),
        )


@dataclass(frozen=True)
class ControlRequest:
    verb: ControlVerb
    agent_id: str = ""
    value: int | None = None
    signature: SignatureBlock | None = None

    def signed_bytes(self) -> bytes:
        w = Writer()
        w.u8(self.verb)
        w.str(self.agent_id)
        w.opt(self.value, Writer.u32)
        return w.getvalue()

    def encode(self, w: Writer) -> None:
        w.u8(self.verb)
        w.str(self.agent_id)
        w.opt(self.value, Writer.u32)
        w.opt(self.signature, lambda w, s: s.encode(w))

    @classmethod
    def decode(cls, r: Reader) -> "ControlRequest":
        return cls(
            verb=ControlVerb(r.u8()),
            agent_id=r.str(),
            value=r.opt(Reader.u32),
            signature=r.opt(SignatureBlock.decode),
        )


@dataclass(frozen=True)
class ControlResponse:
    status: str
    detail: str = ""
    agents: tuple[MaInfo, ...] = ()
    load: HostLoad | None = None

    @property
    def ok(self) -> bool:
        return self.status == "OK"

    def encode(self, w: Writer) -> None:
        w.str(self.status)
        w.str(self.detail)
        w.list(self.agents, lambda w, a: a.encode(w))
        w.opt(self.load, lambda w, l: l.encode(w))

    @classmethod
    def decode(cls, r: Reader) -> "ControlResponse":
        return cls(
            status=r.str(),
            detail=r.str(),
            agents=tuple(r.list(MaInfo.decode)),
            load=r.opt(HostLoad.decode),
        )


@dataclass(frozen=True)
class ResultMsg:
    """Out-of-band notice to the manager, e.g. an agent rejected at a hop."""

    kind: str
    agent_id: str
    class_name: str
    class_version: int
    host: str
    code: str
    detail: str
    timestamp: int

    def encode(self, w: Writer) -> None:
        w.str(self.kind)
        w.str(self.agent_id)
        w.str(self.class_name)
        w.u32(self.class_version)
        w.str(self.host)
        w.str(self.code)
        w.str(self.detail)
        w.u64(self.timestamp)

    @classmethod
    def decode(cls, r: Reader) -> "ResultMsg":
        return cls(
            kind=r.str(),
            agent_id=r.str(),
            class_name=r.str(),
            class_version=r.u32(),
            host=r.str(),
            code=r.str(),
            detail=r.str(),
            timestamp=r.u64(),
        )
