"""The mobile agent itself: migrating state, init-once guard, task execution.

Mobility is weak: what migrates is the agent's state plus a cursor into its
itinerary, never an execution stack.  Header fields are written exactly once
at creation and signed by the manager; any later write attempt raises
NotAuthorizedToInitialize.  The data folder is append-only and every entry is
either plaintext or sealed to the manager, never both.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable

from cryptography.hazmat.primitives.asymmetric import rsa

from . import proto
from .mibsim import NO_SUCH_OID
from .proto import FieldRange, Reader, Writer
from .security import (
    AuthorizationViolation,
    AuthPolicy,
    SealedEntry,
    SignatureBlock,
    seal,
    sign,
)
from .taskmodel import (
    AgentClassId,
    Comparator,
    ServiceType,
    TaskProgram,
    ThresholdExpr,
    compare,
)

MAX_PRIORITY = 10
DEFAULT_PRIORITY = 5


class _Home:
    def __repr__(self) -> str:
        return "HOME"


HOME = _Home()


class NotAuthorizedToInitialize(Exception):
    """Raised on any attempt to modify an immutable agent property after init."""


class SfError(Exception):
    """Service facilitator failure during a host visit."""


class EntryKind(IntEnum):
    VALUES = 1
    ROWS = 2
    ALARM = 3
    ERROR = 4


def encode_value(w: Writer, value) -> None:
    """MIB value union: i64, string, or the NO_SUCH_OID marker."""
    if value is NO_SUCH_OID:
        w.u8(2)
    elif isinstance(value, str):
        w.u8(1)
        w.str(value)
    elif isinstance(value, int) and not isinstance(value, bool):
        w.u8(0)
        w.i64(value)
    else:
        raise FieldRange(f"unsupported MIB value: {value!r}")


def decode_value(r: Reader):
    tag = r.u8()
    if tag == 0:
        return r.i64()
    if tag == 1:
        return r.str()
    if tag == 2:
        return NO_SUCH_OID
    raise proto.Corrupt(f"bad value tag: {tag}")


@dataclass(frozen=True)
class ValuesPayload:
    """Polled values in request order; sat_flags only for threshold samples."""

    values: tuple
    sat_flags: tuple[bool, ...] = ()

    def encode(self, w: Writer) -> None:
        w.list(self.values, encode_value)
        w.list(self.sat_flags, Writer.bool)

    @classmethod
    def decode(cls, r: Reader) -> "ValuesPayload":
        return cls(tuple(r.list(decode_value)), tuple(r.list(Reader.bool)))


@dataclass(frozen=True)
class RowsPayload:
    rows: tuple[tuple, ...]

    def encode(self, w: Writer) -> None:
        w.list(self.rows, lambda w, row: w.list(row, encode_value))

    @classmethod
    def decode(cls, r: Reader) -> "RowsPayload":
        return cls(tuple(tuple(row) for row in r.list(lambda r: r.list(decode_value))))


@dataclass(frozen=True)
class AlarmPayload:
    oid: str
    quantity: float
    limit: float
    comparator: Comparator
    expression: ThresholdExpr

    def encode(self, w: Writer) -> None:
        w.str(self.oid)
        w.f64(self.quantity)
        w.f64(self.limit)
        w.u8(self.comparator)
        w.u8(self.expression)

    @classmethod
    def decode(cls, r: Reader) -> "AlarmPayload":
        return cls(r.str(), r.f64(), r.f64(), Comparator(r.u8()), ThresholdExpr(r.u8()))


@dataclass(frozen=True)
class ErrorPayload:
    code: str
    detail: str

    def encode(self, w: Writer) -> None:
        w.str(self.code)
        w.str(self.detail)

    @classmethod
    def decode(cls, r: Reader) -> "ErrorPayload":
        return cls(r.str(), r.str())


_PAYLOAD_TYPES = {
    EntryKind.VALUES: ValuesPayload,
    EntryKind.ROWS: RowsPayload,
    EntryKind.ALARM: AlarmPayload,
    EntryKind.ERROR: ErrorPayload,
}


def decode_entry_payload(kind: EntryKind, raw: bytes):
    return proto.canonical_decode(_PAYLOAD_TYPES[EntryKind(kind)], raw)


@dataclass(frozen=True)
class DataEntry:
    host: str
    timestamp: int
    kind: EntryKind
    payload: bytes | None = None
    sealed: SealedEntry | None = None

    def __post_init__(self) -> None:
        if (self.payload is None) == (self.sealed is None):
            raise ValueError("exactly one of payload/sealed must be present")

    def encode(self, w: Writer) -> None:
        w.str(self.host)
        w.u64(self.timestamp)
        w.u8(self.kind)
        w.opt(self.payload, Writer.bytes)
        w.opt(self.sealed, lambda w, s: s.encode(w))

    @classmethod
    def decode(cls, r: Reader) -> "DataEntry":
        return cls(
            host=r.str(),
            timestamp=r.u64(),
            kind=EntryKind(r.u8()),
            payload=r.opt(Reader.bytes),
            sealed=r.opt(SealedEntry.decode),
        )

    def encoded_size(self) -> int:
        return len(proto.canonical_encode(self))


_HOOK_EVENTS = (
    "on_create",
    "on_arrival",
    "on_before_dispatch",
    "on_migration_failure",
    "on_start",
    "on_stop",
    "on_suspend",
    "on_resume",
)


class LifecycleHooks:
    """Named extension points the host fires exactly once per event."""

    def __init__(self, **handlers: Callable) -> None:
        unknown = set(handlers) - set(_HOOK_EVENTS)
        if unknown:
            raise ValueError(f"unknown hook events: {sorted(unknown)}")
        self._handlers = handlers

    def fire(self, event: str, agent: "AgentState", **info) -> None:
        if event not in _HOOK_EVENTS:
            raise ValueError(f"unknown hook event: {event}")
        handler = self._handlers.get(event)
        if handler is not None:
            handler(agent, **info)


_HEADER_FIELDS = (
    "agent_id",
    "class_id",
    "origin",
    "created_at",
    "priority",
    "encrypt",
    "itinerary",
)
_LOCKED_FIELDS = _HEADER_FIELDS + ("header_signature", "init_done")


class AgentState:
    """Migrating unit: signed immutable header + cursor + append-only data folder."""

    def __init__(
        self,
        agent_id: str,
        class_id: AgentClassId,
        origin: str,
        created_at: int,
        priority: int,
        encrypt: bool,
        itinerary: tuple[str, ...],
        cursor: int = 0,
        data_folder: list[DataEntry] | None = None,
        header_signature: SignatureBlock | None = None,
        init_done: bool = False,
    ) -> None:
        object.__setattr__(self, "init_done", False)
        self.agent_id = agent_id
        self.class_id = class_id
        self.origin = origin
        self.created_at = created_at
        self.priority = priority
        self.encrypt = encrypt
        self.itinerary = tuple(itinerary)
        self.cursor = cursor
        self.data_folder = list(data_folder or [])
        self.header_signature = header_signature
        object.__setattr__(self, "init_done", init_done)

    def __setattr__(self, name: str, value) -> None:
        if getattr(self, "init_done", False) and name in _LOCKED_FIELDS:
            raise NotAuthorizedToInitialize(f"{name} may only be set at creation time")
        object.__setattr__(self, name, value)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AgentState):
            return NotImplemented
        return all(
            getattr(self, f) == getattr(other, f)
            for f in _HEADER_FIELDS + ("cursor", "data_folder", "header_signature", "init_done")
        )

    def __repr__(self) -> str:
        return (
            f"AgentState({self.agent_id!r}, {self.class_id.name}"
            f" v{self.class_id.version}, cursor={self.cursor}/{len(self.itinerary)},"
            f" entries={len(self.data_folder)})"
        )

    def header_bytes(self) -> bytes:
        w = Writer()
        w.str(self.agent_id)
        self.class_id.encode(w)
        w.str(self.origin)
        w.u64(self.created_at)
        w.u8(self.priority)
        w.bool(self.encrypt)
        w.list(self.itinerary, Writer.str)
        return w.getvalue()

    def encode(self, w: Writer) -> None:
        w.str(self.agent_id)
        self.class_id.encode(w)
        w.str(self.origin)
        w.u64(self.created_at)
        w.u8(self.priority)
        w.bool(self.encrypt)
        w.list(self.itinerary, Writer.str)
        w.u16(self.cursor)
        w.list(self.data_folder, lambda w, e: e.encode(w))
        w.opt(self.header_signature, lambda w, s: s.encode(w))
        w.bool(self.init_done)

    @classmethod
    def decode(cls, r: Reader) -> "AgentState":
        return cls(
            agent_id=r.str(),
            class_id=AgentClassId.decode(r),
            origin=r.str(),
            created_at=r.u64(),
            priority=r.u8(),
            encrypt=r.bool(),
            itinerary=tuple(r.list(Reader.str)),
            cursor=r.u16(),
            data_folder=r.list(lambda r: DataEntry.decode(r)),
            header_signature=r.opt(SignatureBlock.decode),
            init_done=r.bool(),
        )

    def folder_bytes(self) -> int:
        return sum(entry.encoded_size() for entry in self.data_folder)

    def append_entry(self, entry: DataEntry) -> None:
        self.data_folder.append(entry)


def init_agent(
    agent_id: str,
    class_id: AgentClassId,
    origin: str,
    itinerary: list[str] | tuple[str, ...],
    manager_private_key: rsa.RSAPrivateKey,
    priority: int = DEFAULT_PRIORITY,
    encrypt: bool = False,
    created_at: int | None = None,
    hooks: LifecycleHooks | None = None,
) -> AgentState:
    """Create, validate and sign an agent; sensitive properties are now fixed."""
    if not 0 <= priority <= MAX_PRIORITY:
        raise FieldRange(f"priority {priority} outside 0..{MAX_PRIORITY}")
    if not itinerary:
        raise FieldRange("itinerary must contain at least one hop")
    agent = AgentState(
        agent_id=agent_id,
        class_id=class_id,
        origin=origin,
        created_at=int(time.time() * 1000) if created_at is None else created_at,
        priority=priority,
        encrypt=encrypt,
        itinerary=tuple(itinerary),
    )
    signature = sign(agent.header_bytes(), manager_private_key)
    agent.header_signature = signature
    object.__setattr__(agent, "init_done", True)
    if hooks:
        hooks.fire("on_create", agent)
    return agent


def set_immutable(agent: AgentState, field: str, value) -> None:
    """Attempt a post-init write of an immutable property; always raises."""
    setattr(agent, field, value)


def advance_itinerary(agent: AgentState):
    """Next hop, advancing the cursor; HOME (terminal, idempotent) when done."""
    if agent.cursor >= len(agent.itinerary):
        return HOME
    nxt = agent.itinerary[agent.cursor]
    agent.cursor += 1
    return nxt


def last_readable_sample(agent: AgentState, host: str):
    """Most recent plaintext VALUES entry for host: (payload, timestamp) or None."""
    for entry in reversed(agent.data_folder):
        if entry.kind == EntryKind.VALUES and entry.host == host and entry.payload is not None:
            return decode_entry_payload(EntryKind.VALUES, entry.payload), entry.timestamp
    return None


def evaluate_threshold(
    program: TaskProgram,
    values: tuple,
    prior: tuple[ValuesPayload, int] | None,
    now_ms: int,
) -> tuple[tuple[bool, ...], list[AlarmPayload]]:
    """Per-OID threshold evaluation with edge-triggered alarms.

    An alarm fires when the comparator becomes satisfied, i.e. satisfied now
    and unsatisfied at the previous evaluation; the first evaluation (no prior
    sample) never fires.  DELTA_PER_SECOND needs a numeric prior value and a
    positive elapsed time to be evaluable at all.
    """
    spec = program.threshold
    sat_flags: list[bool] = []
    alarms: list[AlarmPayload] = []
    prior_payload, prior_ts = prior if prior is not None else (None, 0)
    for i, value in enumerate(values):
        quantity = None
        numeric = isinstance(value, int) and not isinstance(value, bool)
        if spec.expression == ThresholdExpr.VALUE:
            if numeric:
                quantity = float(value)
        else:
            if numeric and prior_payload is not None and i < len(prior_payload.values):
                prev = prior_payload.values[i]
                elapsed_s = (now_ms - prior_ts) / 1000.0
                if isinstance(prev, int) and not isinstance(prev, bool) and elapsed_s > 0:
                    quantity = (value - prev) / elapsed_s
        satisfied = quantity is not None and compare(spec.comparator, quantity, spec.limit)
        sat_flags.append(satisfied)
        prior_sat = (
            prior_payload.sat_flags[i]
            if prior_payload is not None and i < len(prior_payload.sat_flags)
            else None
        )
        if satisfied and prior_sat is False:
            alarms.append(
                AlarmPayload(program.oids[i], quantity, spec.limit, spec.comparator, spec.expression)
            )
    return tuple(sat_flags), alarms


def execute_on_host(
    agent: AgentState,
    program: TaskProgram,
    sf,
    policy: AuthPolicy,
    manager_public_key: rsa.RSAPublicKey,
    hooks: LifecycleHooks | None = None,
    now_ms: int | None = None,
) -> AgentState:
    """Run one host visit.

    The SF handle enforces the authorization policy; any violation, SF
    failure or exec-time overrun turns the visit into a single ERROR entry
    and the agent migrates onward regardless.
    """
    host = getattr(sf, "host_id", None) or (
        agent.itinerary[agent.cursor - 1] if agent.cursor > 0 else agent.origin
    )
    now = int(time.time() * 1000) if now_ms is None else now_ms
    if hooks:
        hooks.fire("on_start", agent)
    started = time.monotonic()
    results: list[tuple[EntryKind, object]] = []
    error: tuple[str, str] | None = None
    try:
        if program.service_type == ServiceType.SCALAR_POLL:
            values = tuple(sf.get_scalar(list(program.oids), agent_id=agent.agent_id))
            results.append((EntryKind.VALUES, ValuesPayload(values)))
        elif program.service_type == ServiceType.TABLE_FILTER:
            rows = sf.get_table(program.oids[0], agent_id=agent.agent_id)
            matched = tuple(tuple(row) for row in rows if program.filter.matches(row))
            results.append((EntryKind.ROWS, RowsPayload(matched)))
        else:
            values = tuple(sf.get_scalar(list(program.oids), agent_id=agent.agent_id))
            prior = last_readable_sample(agent, host)
            sat_flags, alarms = evaluate_threshold(program, values, prior, now)
            results.append((EntryKind.VALUES, ValuesPayload(values, sat_flags)))
            for alarm in alarms:
                results.append((EntryKind.ALARM, alarm))
    except AuthorizationViolation as exc:
        error = ("AUTHORIZATION_VIOLATION", str(exc))
    except SfError as exc:
        error = ("SF_ERROR", str(exc))
    elapsed_ms = (time.monotonic() - started) * 1000
    if error is None and elapsed_ms > policy.max_exec_millis_per_host:
        error = (
            "EXEC_TIMEOUT",
            f"visit took {elapsed_ms:.0f} ms, cap {policy.max_exec_millis_per_host} ms",
        )
    if error is not None:
        results = [(EntryKind.ERROR, ErrorPayload(*error))]
    _append_results(agent, host, now, results, policy, manager_public_key)
    if hooks:
        hooks.fire("on_stop", agent)
    return agent


def append_error_entry(agent: AgentState, host: str, code: str, detail: str, now_ms: int | None = None) -> None:
    now = int(time.time() * 1000) if now_ms is None else now_ms
    raw = proto.canonical_encode(ErrorPayload(code, detail))
    agent.append_entry(DataEntry(host=host, timestamp=now, kind=EntryKind.ERROR, payload=raw))


def _append_results(
    agent: AgentState,
    host: str,
    now: int,
    results: list[tuple[EntryKind, object]],
    policy: AuthPolicy,
    manager_public_key: rsa.RSAPublicKey,
) -> None:
    used = agent.folder_bytes()
    for kind, payload_obj in results:
        raw = proto.canonical_encode(payload_obj)
        if agent.encrypt and kind != EntryKind.ERROR:
            entry = DataEntry(
                host=host,
                timestamp=now,
                kind=kind,
                sealed=seal(raw, manager_public_key, policy.max_data_folder_bytes),
            )
        else:
            entry = DataEntry(host=host, timestamp=now, kind=kind, payload=raw)
        size = entry.encoded_size()
        if used + size > policy.max_data_folder_bytes:
            # Replaces the remainder of the visit; error entries are small.
            append_error_entry(
                agent,
                host,
                "FOLDER_FULL",
                f"entry of {size} bytes would exceed {policy.max_data_folder_bytes}",
                now,
            )
            return
        agent.append_entry(entry)
        used += size
