"""Agent server daemon: receives, authenticates, executes and re-dispatches agents.

Components map onto the platform roles: a framed-TCP listener, a registry of
resident agents, a one-version-per-class code cache with a disk mirror, the
service facilitator that mediates all MIB access under the authorization
policy, a migration facility with skip-ahead rerouting, a periodic announcer
toward the manager, and a signed control surface (list/suspend/resume/
activate/set-frequency/load).

Execution is a cooperative priority scheduler: a bounded worker pool pops the
highest-priority arrival first (FIFO within a priority).  A deterministic
mode disables the pool and lets tests step agents one at a time.
"""

from __future__ import annotations

import logging
import os
import queue
import resource
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric import rsa

from . import proto, runtime, taskmodel
from .messages import (
    AgentStatus,
    Announce,
    BundleDigest,
    ControlRequest,
    ControlResponse,
    ControlVerb,
    HostLoad,
    MaInfo,
    ResultMsg,
)
from .mibsim import Mib, NoSuchTable
from .proto import MsgType
from .runtime import AgentState, HOME, LifecycleHooks, SfError, advance_itinerary
from .security import AuthPolicy, authorize, verify_trusted
from .taskmodel import CodeBundle, PollMode, bundle_digest, validate_bundle
from .wire import FrameCapture, FrameServer, send_payload, unpack_payload

log = logging.getLogger(__name__)

DEFAULT_AGENT_PORT = 7701
DEFAULT_MANAGER_PORT = 7700
ANNOUNCE_INTERVAL_S = 10.0


class RegistryError(Exception):
    pass


class DuplicateId(RegistryError):
    pass


class UnknownId(RegistryError):
    pass


@dataclass
class ResidentAgent:
    agent: AgentState
    bundle: CodeBundle
    info: MaInfo
    seq: int
    resume: threading.Event = field(default_factory=threading.Event)
    parked: bool = False

    def __post_init__(self) -> None:
        self.resume.set()


class Registry:
    """Agent-id keyed table of agents currently resident on this host."""

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._residents: dict[str, ResidentAgent] = {}

    def register(self, resident: ResidentAgent) -> None:
        with self._lock:
            if resident.agent.agent_id in self._residents:
                raise DuplicateId(resident.agent.agent_id)
            self._residents[resident.agent.agent_id] = resident

    def deregister(self, agent_id: str) -> None:
        with self._lock:
            if agent_id not in self._residents:
                raise UnknownId(agent_id)
            del self._residents[agent_id]

    def get(self, agent_id: str) -> ResidentAgent:
        with self._lock:
            resident = self._residents.get(agent_id)
        if resident is None:
            raise UnknownId(agent_id)
        return resident

    def list_infos(self) -> list[MaInfo]:
        with self._lock:
            residents = sorted(self._residents.values(), key=lambda r: r.seq)
        return [r.info for r in residents]

    def __len__(self) -> int:
        with self._lock:
            return len(self._residents)


class CodeCache:
    """Latest accepted bundle per class name, mirrored to a directory."""

    def __init__(self, directory: str | Path | None = None) -> None:
        self.directory = Path(directory) if directory else None
        self._lock = threading.Lock()
        self._bundles: dict[str, CodeBundle] = {}
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)
            for path in sorted(self.directory.glob("*.bundle")):
                try:
                    bundle = proto.canonical_decode(CodeBundle, path.read_bytes())
                except proto.ProtocolError:
                    log.warning("ignoring unreadable bundle file %s", path)
                    continue
                name = bundle.class_id.name
                cached = self._bundles.get(name)
                if cached is None or bundle.class_id.version > cached.class_id.version:
                    self._bundles[name] = bundle

    def get(self, name: str) -> CodeBundle | None:
        with self._lock:
            return self._bundles.get(name)

    def accept(self, bundle: CodeBundle, trusted_keys: dict[bytes, rsa.RSAPublicKey]) -> None:
        """Validate and swap in; the disposed version's file is removed."""
        with self._lock:
            cached = self._bundles.get(bundle.class_id.name)
            latest = cached.class_id.version if cached else None
            validate_bundle(bundle, trusted_keys, latest_version=latest)
            self._bundles[bundle.class_id.name] = bundle
            if self.directory:
                if cached is not None:
                    old = self.directory / f"{cached.class_id.name}.{cached.class_id.version}.bundle"
                    old.unlink(missing_ok=True)
                new = self.directory / f"{bundle.class_id.name}.{bundle.class_id.version}.bundle"
                new.write_bytes(proto.canonical_encode(bundle))

    def digests(self) -> tuple[BundleDigest, ...]:
        with self._lock:
            bundles = sorted(self._bundles.values(), key=lambda b: b.class_id.name)
        return tuple(
            BundleDigest(b.class_id.name, b.class_id.version, bundle_digest(b)) for b in bundles
        )


class ServiceFacilitator:
    """The one road from visiting agents to the local MIB.

    Every call is authorized first and appended to the audit log; the gate
    callback blocks while the calling agent is suspended.
    """

    def __init__(self, host_id: str, mib: Mib, policy: AuthPolicy, gate=None) -> None:
        self.host_id = host_id
        self.mib = mib
        self.policy = policy
        self._gate = gate
        self.audit: list[tuple[str, str, int]] = []

    def get_scalar(self, oids: list[str], agent_id: str = "") -> list:
        if self._gate:
            self._gate(agent_id)
        authorize("get_scalar", len(oids), self.policy)
        self.audit.append((agent_id, "get_scalar", len(oids)))
        return [self.mib.get(oid) for oid in oids]

    def get_table(self, table_oid: str, agent_id: str = "") -> list[list]:
        if self._gate:
            self._gate(agent_id)
        authorize("get_table", 1, self.policy)
        self.audit.append((agent_id, "get_table", 1))
        try:
            return self.mib.get_table(table_oid)
        except NoSuchTable:
            raise SfError(f"NO_SUCH_TABLE: {table_oid}") from None


class LoadSampler:
    """Portable resource inspection: this process's CPU and memory usage.

    source "synthetic:<cpu>:<mem>" pins the readings for tests and hosts
    where sampling is unavailable.
    """

    def __init__(self, source: str = "process") -> None:
        self.source = source
        self._last_cpu = None
        self._last_wall = None

    def sample(self) -> HostLoad:
        now_ms = int(time.time() * 1000)
        if self.source.startswith("synthetic:"):
            _, cpu, mem = self.source.split(":")
            return HostLoad(float(cpu), int(mem), now_ms)
        times = os.times()
        cpu_used = times.user + times.system
        wall = time.monotonic()
        cpu_percent = 0.0
        if self._last_cpu is not None and wall > self._last_wall:
            cpu_percent = 100.0 * (cpu_used - self._last_cpu) / (wall - self._last_wall)
        self._last_cpu, self._last_wall = cpu_used, wall
        mem_bytes = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
        return HostLoad(max(0.0, min(100.0, cpu_percent)), mem_bytes, now_ms)


class AgentServer:
    """One per managed device; see module docstring."""

    def __init__(
        self,
        listen_host: str,
        listen_port: int,
        manager_addr: str,
        mib: Mib,
        trusted_keys: dict[bytes, rsa.RSAPublicKey],
        policy: AuthPolicy | None = None,
        device_class: str = "",
        announce_interval_s: float = ANNOUNCE_INTERVAL_S,
        cache_dir: str | Path | None = None,
        workers: int = 2,
        deterministic: bool = False,
        hooks: LifecycleHooks | None = None,
        capture: FrameCapture | None = None,
        load_source: str = "process",
    ) -> None:
        self.manager_addr = manager_addr
        self.mib = mib
        self.trusted_keys = dict(trusted_keys)
        self.policy = policy or AuthPolicy()
        self.device_class = device_class
        self.announce_interval_s = announce_interval_s
        self.deterministic = deterministic
        self.workers = max(1, workers)
        self.hooks = hooks or LifecycleHooks()
        self.capture = capture
        self.registry = Registry()
        self.cache = CodeCache(cache_dir)
        self.sampler = LoadSampler(load_source)
        self._queue: queue.PriorityQueue = queue.PriorityQueue()
        self._seq = 0
        self._seq_lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._server = FrameServer(listen_host, listen_port, self._handle_frame, capture=capture)
        self.host_id = self._server.address
        self.sf = ServiceFacilitator(self.host_id, mib, self.policy, gate=self._suspension_gate)

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self._server.start()
        if not self.deterministic:
            for i in range(self.workers):
                t = threading.Thread(target=self._worker_loop, name=f"masd-worker-{i}", daemon=True)
                t.start()
                self._threads.append(t)
        t = threading.Thread(target=self._announce_loop, name="masd-announce", daemon=True)
        t.start()
        self._threads.append(t)

    def stop(self) -> None:
        if self._stop.is_set():
            return
        self._stop.set()
        for _ in self._threads:
            self._queue.put((-(runtime.MAX_PRIORITY + 1), -1, None))
        self._server.stop()
        for t in self._threads:
            t.join(timeout=2.0)

    # -- frame handling ----------------------------------------------------

    def _handle_frame(self, msg_type, flags, payload, peer):
        if msg_type == MsgType.AGENT_STATE:
            resp = self.receive_agent(flags, payload)
        elif msg_type == MsgType.CODE_BUNDLE:
            resp = self.accept_bundle(flags, payload)
        elif msg_type == MsgType.CONTROL_REQ:
            resp = self.control(flags, payload)
        else:
            return None
        return MsgType.CONTROL_RESP, 0, proto.canonical_encode(resp)

    def _next_seq(self) -> int:
        with self._seq_lock:
            self._seq += 1
            return self._seq

    def receive_agent(self, flags: int, payload: bytes) -> ControlResponse:
        """Decompress, decode, authenticate, register and schedule an arrival."""
        try:
            raw = unpack_payload(flags, payload)
            agent = proto.canonical_decode(AgentState, raw)
        except proto.ProtocolError as exc:
            return ControlResponse("DECODE_FAILED", str(exc))
        if agent.header_signature is None or not verify_trusted(
            agent.header_bytes(), agent.header_signature, self.trusted_keys
        ):
            self._notify_manager_of_rejection(agent, "AUTH_FAILED", "untrusted or invalid header signature")
            return ControlResponse("AUTH_FAILED", agent.agent_id)
        bundle = self.cache.get(agent.class_id.name)
        if bundle is None or bundle.class_id.version < agent.class_id.version:
            detail = f"{agent.class_id.name} v{agent.class_id.version}"
            self._notify_origin(agent, "AGENT_CODE_MISSING", detail)
            return ControlResponse("AGENT_CODE_MISSING", detail)
        if agent.class_id.version < bundle.class_id.version:
            detail = (
                f"{agent.class_id.name} v{agent.class_id.version}"
                f" superseded by v{bundle.class_id.version}"
            )
            self._notify_origin(agent, "VERSION_SUPERSEDED", detail)
            return ControlResponse("VERSION_SUPERSEDED", detail)
        info = MaInfo(
            agent_id=agent.agent_id,
            class_name=agent.class_id.name,
            class_version=agent.class_id.version,
            poll_mode=bundle.program.poll_mode,
            frequency_s=bundle.program.frequency_s or 0,
            encrypt=agent.encrypt,
            arrival_time=int(time.time() * 1000),
            status=AgentStatus.ACTIVE,
            priority=agent.priority,
        )
        resident = ResidentAgent(agent=agent, bundle=bundle, info=info, seq=self._next_seq())
        try:
            self.registry.register(resident)
        except DuplicateId:
            return ControlResponse("DUPLICATE_ID", agent.agent_id)
        self.hooks.fire("on_arrival", agent)
        self._queue.put((-agent.priority, resident.seq, agent.agent_id))
        return ControlResponse("OK", agent.agent_id)

    def accept_bundle(self, flags: int, payload: bytes) -> ControlResponse:
        try:
            raw = unpack_payload(flags, payload)
            bundle = proto.canonical_decode(CodeBundle, raw)
        except proto.ProtocolError as exc:
            return ControlResponse("DECODE_FAILED", str(exc))
        try:
            self.cache.accept(bundle, self.trusted_keys)
        except taskmodel.BadSignature as exc:
            return ControlResponse("BAD_SIGNATURE", str(exc))
        except taskmodel.StaleVersion as exc:
            return ControlResponse("STALE_VERSION", str(exc))
        except taskmodel.InvalidProgram as exc:
            return ControlResponse("INVALID_PROGRAM", str(exc))
        log.info("cached %s v%d", bundle.class_id.name, bundle.class_id.version)
        return ControlResponse("OK", f"{bundle.class_id.name} v{bundle.class_id.version}")

    # -- scheduling and execution -------------------------------------------

    def _worker_loop(self) -> None:
        while not self._stop.is_set():
            _, _, agent_id = self._queue.get()
            if agent_id is None:
                return
            try:
                self._run_agent(agent_id)
            except Exception:
                log.exception("agent %s execution failed", agent_id)

    def step(self, max_agents: int = 1) -> int:
        """Deterministic mode: synchronously start up to max_agents queued agents.

        Returns how many actually began execution; suspended agents are parked
        and dropped (superseded) agents do not count.
        """
        ran = 0
        while ran < max_agents:
            try:
                item = self._queue.get_nowait()
            except queue.Empty:
                break
            agent_id = item[2]
            if agent_id is None:
                continue
            try:
                resident = self.registry.get(agent_id)
            except UnknownId:
                continue
            if resident.info.status != AgentStatus.ACTIVE:
                resident.parked = True
                continue
            if self._run_agent(agent_id):
                ran += 1
        return ran

    def registry_parked(self, agent_id: str) -> bool:
        try:
            return self.registry.get(agent_id).parked
        except UnknownId:
            return False

    def _suspension_gate(self, agent_id: str) -> None:
        try:
            resident = self.registry.get(agent_id)
        except UnknownId:
            return
        while not resident.resume.wait(timeout=0.1):
            if self._stop.is_set():
                return

    def _run_agent(self, agent_id: str) -> bool:
        try:
            resident = self.registry.get(agent_id)
        except UnknownId:
            return False
        if not self.deterministic:
            self._suspension_gate(agent_id)
        latest = self.cache.get(resident.agent.class_id.name)
        if latest is not None and latest.class_id.version > resident.agent.class_id.version:
            # Superseded while queued: never start an old version.
            detail = (
                f"{resident.agent.class_id.name} v{resident.agent.class_id.version}"
                f" superseded before start"
            )
            self._notify_origin(resident.agent, "VERSION_SUPERSEDED", detail)
            self.registry.deregister(agent_id)
            return False
        manager_key = self.trusted_keys.get(resident.agent.header_signature.signer_key_id)
        runtime.execute_on_host(
            resident.agent,
            resident.bundle.program,
            self.sf,
            self.policy,
            manager_key,
            hooks=self.hooks,
        )
        self.dispatch_agent(resident)
        return True

    # -- migration -----------------------------------------------------------

    def dispatch_agent(self, resident: ResidentAgent) -> str:
        """Send the agent onward: sent | rerouted | returned_home | parked."""
        agent = resident.agent
        self.hooks.fire("on_before_dispatch", agent)
        rerouted = False
        while True:
            nxt = advance_itinerary(agent)
            going_home = nxt is HOME
            target = agent.origin if going_home else nxt
            flags = proto.FLAG_SIGNED | (proto.FLAG_SEALED if agent.encrypt else 0)
            try:
                send_payload(
                    target,
                    MsgType.AGENT_STATE,
                    proto.canonical_encode(agent),
                    extra_flags=flags,
                    expect_reply=True,
                    capture=self.capture,
                )
            except OSError as exc:
                if going_home:
                    resident.info.status = AgentStatus.SUSPENDED
                    resident.resume.clear()
                    resident.parked = True
                    log.warning("agent %s parked: home %s unreachable", agent.agent_id, target)
                    return "parked"
                self.hooks.fire("on_migration_failure", agent, host=target)
                runtime.append_error_entry(agent, target, "MIGRATION_FAILED", str(exc))
                rerouted = True
                continue
            try:
                self.registry.deregister(agent.agent_id)
            except UnknownId:
                pass
            if going_home:
                return "returned_home"
            return "rerouted" if rerouted else "sent"

    # -- announce -------------------------------------------------------------

    def build_announce(self) -> Announce:
        host, _, port = self.host_id.rpartition(":")
        return Announce(
            host_id=self.host_id,
            host=host,
            port=int(port),
            device_class=self.device_class,
            load=self.sampler.sample(),
            bundles=self.cache.digests(),
        )

    def announce_once(self) -> None:
        send_payload(
            self.manager_addr,
            MsgType.ANNOUNCE,
            proto.canonical_encode(self.build_announce()),
            capture=self.capture,
        )

    def _announce_loop(self) -> None:
        failures = 0
        while not self._stop.is_set():
            try:
                self.announce_once()
                failures = 0
            except OSError:
                failures = min(failures + 1, 3)
            if self._stop.wait(self.announce_interval_s * (2**failures)):
                return

    # -- control ---------------------------------------------------------------

    def control(self, flags: int, payload: bytes) -> ControlResponse:
        try:
            raw = unpack_payload(flags, payload)
            request = proto.canonical_decode(ControlRequest, raw)
        except proto.ProtocolError as exc:
            return ControlResponse("DECODE_FAILED", str(exc))
        if request.signature is None or not verify_trusted(
            request.signed_bytes(), request.signature, self.trusted_keys
        ):
            return ControlResponse("AUTH_FAILED", "control request not signed by a trusted key")
        verb = request.verb
        if verb == ControlVerb.LIST_AGENTS:
            return ControlResponse("OK", agents=tuple(self.registry.list_infos()))
        if verb == ControlVerb.GET_LOAD:
            return ControlResponse("OK", load=self.sampler.sample())
        try:
            resident = self.registry.get(request.agent_id)
        except UnknownId:
            return ControlResponse("UNKNOWN_ID", request.agent_id)
        if verb == ControlVerb.SUSPEND:
            if resident.info.status != AgentStatus.ACTIVE:
                return ControlResponse("BAD_STATE", resident.info.status.name)
            resident.info.status = AgentStatus.SUSPENDED
            resident.resume.clear()
            self.hooks.fire("on_suspend", resident.agent)
            return ControlResponse("OK", request.agent_id)
        if verb == ControlVerb.RESUME:
            if resident.info.status != AgentStatus.SUSPENDED:
                return ControlResponse("BAD_STATE", resident.info.status.name)
            return self._reactivate(resident)
        if verb == ControlVerb.ACTIVATE:
            if resident.info.status == AgentStatus.ACTIVE:
                return ControlResponse("BAD_STATE", resident.info.status.name)
            return self._reactivate(resident)
        if verb == ControlVerb.SET_FREQUENCY:
            if not request.value or request.value < 1:
                return ControlResponse("BAD_STATE", f"bad frequency {request.value}")
            resident.info.frequency_s = request.value
            return ControlResponse("OK", request.agent_id)
        return ControlResponse("BAD_STATE", f"unhandled verb {verb}")

    def _reactivate(self, resident: ResidentAgent) -> ControlResponse:
        resident.info.status = AgentStatus.ACTIVE
        resident.resume.set()
        self.hooks.fire("on_resume", resident.agent)
        if resident.parked:
            resident.parked = False
            self._queue.put((-resident.agent.priority, resident.seq, resident.agent.agent_id))
        return ControlResponse("OK", resident.agent.agent_id)

    # -- notices -----------------------------------------------------------------

    def _result_msg(self, agent: AgentState, code: str, detail: str) -> ResultMsg:
        return ResultMsg(
            kind="AGENT_REJECTED",
            agent_id=agent.agent_id,
            class_name=agent.class_id.name,
            class_version=agent.class_id.version,
            host=self.host_id,
            code=code,
            detail=detail,
            timestamp=int(time.time() * 1000),
        )

    def _send_notice(self, addr: str, msg: ResultMsg) -> None:
        try:
            send_payload(addr, MsgType.RESULT, proto.canonical_encode(msg), capture=self.capture)
        except OSError:
            log.warning("could not deliver %s notice to %s", msg.code, addr)

    def _notify_origin(self, agent: AgentState, code: str, detail: str) -> None:
        self._send_notice(agent.origin, self._result_msg(agent, code, detail))

    def _notify_manager_of_rejection(self, agent: AgentState, code: str, detail: str) -> None:
        # Origin is untrusted when authentication failed; tell the configured manager.
        self._send_notice(self.manager_addr, self._result_msg(agent, code, detail))
