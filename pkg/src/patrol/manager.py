"""Manager daemon: server directory, task lifecycle, agent returns, results.

The manager discovers agent servers through their periodic announces, turns
operator forms into signed versioned bundles multicast once to every active
server, plans itineraries, dispatches one agent per route each polling round,
and harvests returning agents into an append-only results log plus a live
event stream.  Per-task polling threads replace a cron; everything they do is
also callable synchronously, which is how the tests drive rounds.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import itinerary, proto, runtime, taskmodel
from .messages import (
    Announce,
    ControlRequest,
    ControlResponse,
    ControlVerb,
    HostLoad,
    ResultMsg,
)
from .mibsim import NO_SUCH_OID
from .proto import MsgType
from .runtime import (
    AgentState,
    DataEntry,
    EntryKind,
    ValuesPayload,
    decode_entry_payload,
    evaluate_threshold,
)
from .security import KeyPair, OpenFailed, open_sealed, sign, verify_trusted
from .taskmodel import (
    BundleStore,
    CodeBundle,
    Comparator,
    FilterPredicate,
    InvalidForm,
    PollMode,
    ServiceType,
    TaskProgram,
    ThresholdExpr,
    ThresholdSpec,
    bundle_digest,
    generate_bundle,
)
from .wire import FrameCapture, FrameServer, send_payload, unpack_payload

log = logging.getLogger(__name__)

ANNOUNCE_TTL_FACTOR = 3
DEFAULT_LOST_TIMEOUT_S = 60.0
DEFAULT_COST_S0 = 512
DEFAULT_COST_SD = 128


class ManagerError(Exception):
    pass


class HostInactive(ManagerError):
    pass


class UnknownTask(ManagerError):
    pass


@dataclass
class DirEntry:
    host_id: str
    host: str
    port: int
    device_class: str
    last_announce: float
    load: HostLoad
    bundles: dict[str, tuple[int, bytes]]
    state: str = "ACTIVE"

    def to_json(self) -> dict:
        return {
            "host_id": self.host_id,
            "host": self.host,
            "port": self.port,
            "device_class": self.device_class,
            "state": self.state,
            "last_announce": self.last_announce,
            "load": self.load.to_json(),
            "bundles": [
                {"name": n, "version": v, "digest": d.hex()}
                for n, (v, d) in sorted(self.bundles.items())
            ],
        }


@dataclass
class DispatchRecord:
    agent_id: str
    task: str
    round_num: int
    route: tuple[str, ...]
    sent_at: float
    seed_count: int
    done: bool = False
    outcome: str = ""


@dataclass
class TaskRun:
    name: str
    version: int
    bundle: CodeBundle
    priority: int
    frequency_s: int
    enabled: bool = True
    round_num: int = 0
    plan: itinerary.Plan | None = None
    dispatches: dict[str, DispatchRecord] = field(default_factory=dict)
    # Threshold bookkeeping: last plaintext sample entry per host for seeding,
    # and the manager-side prior (payload, ts) per host for sealed samples.
    last_samples: dict[str, DataEntry] = field(default_factory=dict)
    manager_prior: dict[str, tuple[ValuesPayload, int]] = field(default_factory=dict)

    @property
    def program(self) -> TaskProgram:
        return self.bundle.program

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "service_type": self.program.service_type.name.lower().replace("_", "-"),
            "poll_mode": self.program.poll_mode.name.lower().replace("_", "-"),
            "frequency_s": self.frequency_s,
            "encrypt": self.program.encrypt,
            "device_class": self.program.device_class,
            "oids": list(self.program.oids),
            "priority": self.priority,
            "enabled": self.enabled,
            "round": self.round_num,
            "routes": [list(r) for r in self.plan.routes] if self.plan else [],
        }


class EventBus:
    """Fan-out of console events: result, alarm, directory, dispatch."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._subscribers: list[queue.SimpleQueue] = []

    def subscribe(self) -> queue.SimpleQueue:
        q: queue.SimpleQueue = queue.SimpleQueue()
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.SimpleQueue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def publish(self, event: str, data: dict) -> None:
        with self._lock:
            subscribers = list(self._subscribers)
        for q in subscribers:
            q.put((event, data))


class ResultStore:
    """Append-only JSON-lines result log; records are written before streaming."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            with self.path.open("a") as fh:
                fh.write(line + "\n")
                fh.flush()

    def query(
        self,
        task: str | None = None,
        host: str | None = None,
        since: float | None = None,
        kind: str | None = None,
    ) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        with self._lock:
            lines = self.path.read_text().splitlines()
        for line in lines:
            if not line.strip():
                continue
            record = json.loads(line)
            if task is not None and record.get("task") != task:
                continue
            if host is not None and record.get("host") != host:
                continue
            if since is not None and record.get("timestamp", 0) < since:
                continue
            if kind is not None and record.get("kind") != kind:
                continue
            out.append(record)
        return out


_COMPARATORS = {c.name: c for c in Comparator}
_SERVICE_TYPES = {
    "scalar-poll": ServiceType.SCALAR_POLL,
    "table-filter": ServiceType.TABLE_FILTER,
    "threshold-monitor": ServiceType.THRESHOLD_MONITOR,
}
_EXPRESSIONS = {
    "value": ThresholdExpr.VALUE,
    "delta-per-second": ThresholdExpr.DELTA_PER_SECOND,
}


def parse_form(form: dict) -> tuple[str, TaskProgram, int]:
    """Turn a task-creation form into a validated TaskProgram.

    Raises InvalidForm listing every offending field.
    """
    bad: list[str] = []
    name = form.get("name") or ""
    if not name or not isinstance(name, str):
        bad.append("name")
    service = _SERVICE_TYPES.get(str(form.get("service_type", "")).lower())
    if service is None:
        bad.append("service_type")
    oids = form.get("oids") or []
    if not isinstance(oids, list) or not all(isinstance(o, str) for o in oids):
        bad.append("oids")
        oids = []
    filter_spec = None
    if form.get("filter") is not None:
        f = form["filter"]
        comparator = _COMPARATORS.get(str(f.get("comparator", "")).upper())
        if comparator is None or not isinstance(f.get("column"), int) or "constant" not in f:
            bad.append("filter")
        else:
            filter_spec = FilterPredicate(f["column"], comparator, f["constant"])
    threshold_spec = None
    if form.get("threshold") is not None:
        t = form["threshold"]
        comparator = _COMPARATORS.get(str(t.get("comparator", "")).upper())
        expression = _EXPRESSIONS.get(str(t.get("expression", "")).lower())
        if comparator is None or expression is None or "limit" not in t:
            bad.append("threshold")
        else:
            threshold_spec = ThresholdSpec(expression, comparator, float(t["limit"]))
    mode = str(form.get("poll_mode", "periodic")).lower()
    poll_mode = {"one-shot": PollMode.ONE_SHOT, "periodic": PollMode.PERIODIC}.get(mode)
    if poll_mode is None:
        bad.append("poll_mode")
        poll_mode = PollMode.PERIODIC
    frequency = form.get("frequency_s")
    if frequency is not None:
        try:
            frequency = int(frequency)
        except (TypeError, ValueError):
            bad.append("frequency_s")
            frequency = None
    priority = form.get("priority", runtime.DEFAULT_PRIORITY)
    if not isinstance(priority, int) or not 0 <= priority <= runtime.MAX_PRIORITY:
        bad.append("priority")
        priority = runtime.DEFAULT_PRIORITY
    if bad:
        raise InvalidForm(sorted(set(bad)))
    program = TaskProgram(
        service_type=service,
        oids=tuple(oids),
        filter=filter_spec,
        threshold=threshold_spec,
        poll_mode=poll_mode,
        frequency_s=frequency,
        encrypt=bool(form.get("encrypt", False)),
        device_class=form.get("device_class", "") or "",
    )
    invalid = program.invalid_fields()
    if invalid:
        raise InvalidForm(invalid)
    return name, program, priority


class Manager:
    def __init__(
        self,
        listen_host: str,
        frame_port: int,
        keys: KeyPair,
        data_dir: str | Path,
        topology_file: str | Path | None = None,
        announce_interval_s: float = 10.0,
        lost_timeout_s: float = DEFAULT_LOST_TIMEOUT_S,
        k_max: int = itinerary.DEFAULT_K_MAX,
        cost_s0: float = DEFAULT_COST_S0,
        cost_sd: float = DEFAULT_COST_SD,
        auto_rounds: bool = True,
        capture: FrameCapture | None = None,
        retain_returned: bool = False,
    ) -> None:
        self.keys = keys
        self.trusted = {keys.key_id: keys.public_key}
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.mcr = BundleStore(self.data_dir / "mcr")
        self.results = ResultStore(self.data_dir / "results.jsonl")
        self.tasks_path = self.data_dir / "tasks.json"
        self.topology_file = Path(topology_file) if topology_file else None
        self.announce_ttl_s = announce_interval_s * ANNOUNCE_TTL_FACTOR
        self.lost_timeout_s = lost_timeout_s
        self.k_max = k_max
        self.cost_params = itinerary.CostParams(cost_s0, cost_sd)
        self.auto_rounds = auto_rounds
        self.capture = capture
        self.retain_returned = retain_returned
        self.returned_agents: list[tuple[AgentState, DispatchRecord | None]] = []
        self.events = EventBus()
        self.directory: dict[str, DirEntry] = {}
        self.tasks: dict[str, TaskRun] = {}
        self._last_push: dict[tuple[str, str], int] = {}
        self._lock = threading.RLock()
        self._counter = 0
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._pt_threads: dict[str, threading.Thread] = {}
        self._server = FrameServer(listen_host, frame_port, self._handle_frame, capture=capture)
        self.address = self._server.address
        self._load_tasks()

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        self._server.start()
        sweeper = threading.Thread(target=self._sweep_loop, name="mgr-sweeper", daemon=True)
        sweeper.start()
        self._threads.append(sweeper)
        if self.auto_rounds:
            for task in list(self.tasks.values()):
                self._arm_task(task)

    def stop(self) -> None:
        self._stop.set()
        self._server.stop()
        for t in self._threads + list(self._pt_threads.values()):
            t.join(timeout=2.0)

    # -- frame handling --------------------------------------------------------

    def _handle_frame(self, msg_type, flags, payload, peer):
        if msg_type == MsgType.ANNOUNCE:
            try:
                ann = proto.canonical_decode(Announce, unpack_payload(flags, payload))
            except proto.ProtocolError as exc:
                log.warning("undecodable announce from %s: %s", peer, exc)
                return None
            self.refresh_directory(ann)
            return None
        if msg_type == MsgType.AGENT_STATE:
            resp = self.receive_returning_agent(flags, payload)
            return MsgType.CONTROL_RESP, 0, proto.canonical_encode(resp)
        if msg_type == MsgType.RESULT:
            try:
                msg = proto.canonical_decode(ResultMsg, unpack_payload(flags, payload))
            except proto.ProtocolError as exc:
                log.warning("undecodable notice from %s: %s", peer, exc)
                return None
            self.handle_notice(msg)
            return None
        return None

    # -- directory ---------------------------------------------------------------

    def refresh_directory(self, ann: Announce) -> None:
        now = time.time()
        bundles = {b.name: (b.version, b.digest) for b in ann.bundles}
        with self._lock:
            entry = self.directory.get(ann.host_id)
            was_active = entry is not None and entry.state == "ACTIVE"
            if entry is None:
                entry = DirEntry(
                    host_id=ann.host_id,
                    host=ann.host,
                    port=ann.port,
                    device_class=ann.device_class,
                    last_announce=now,
                    load=ann.load,
                    bundles=bundles,
                )
                self.directory[ann.host_id] = entry
            else:
                entry.last_announce = now
                entry.load = ann.load
                entry.device_class = ann.device_class
                entry.bundles = bundles
                entry.state = "ACTIVE"
        if not was_active:
            self.events.publish("directory", {"host": ann.host_id, "state": "ACTIVE"})
            self._replan_all()
        self._reconcile_bundles(entry)

    def _reconcile_bundles(self, entry: DirEntry) -> None:
        """Re-push any bundle the host's announce shows missing or stale.

        Only announces built after our last successful push count as evidence
        the host lacks the bundle; older announces are just in flight.
        """
        for task in list(self.tasks.values()):
            if not self._host_matches(entry, task.program.device_class):
                continue
            cached = entry.bundles.get(task.name)
            expected = (task.version, bundle_digest(task.bundle))
            if cached == expected:
                continue
            last_push = self._last_push.get((entry.host_id, task.name), -1)
            if entry.load.sampled_at > last_push:
                self._push_bundle(entry.host_id, task.bundle)

    def directory_snapshot(self) -> list[DirEntry]:
        self._apply_ttl()
        with self._lock:
            return sorted(self.directory.values(), key=lambda e: e.host_id)

    def _apply_ttl(self) -> None:
        """Flip entries past the announce TTL to INACTIVE (and replan)."""
        now = time.time()
        flipped = []
        with self._lock:
            for entry in self.directory.values():
                inactive = now - entry.last_announce > self.announce_ttl_s
                if inactive and entry.state == "ACTIVE":
                    entry.state = "INACTIVE"
                    flipped.append(entry.host_id)
        for host_id in flipped:
            self.events.publish("directory", {"host": host_id, "state": "INACTIVE"})
        if flipped:
            self._replan_all()

    def active_hosts(self, device_class: str = "") -> list[DirEntry]:
        return [
            e
            for e in self.directory_snapshot()
            if e.state == "ACTIVE" and self._host_matches(e, device_class)
        ]

    @staticmethod
    def _host_matches(entry: DirEntry, device_class: str) -> bool:
        return not device_class or entry.device_class == device_class

    # -- planning -----------------------------------------------------------------

    def topology_for(self, targets: list[str]) -> itinerary.Topology:
        if self.topology_file and self.topology_file.exists():
            return itinerary.load_topology(self.topology_file)
        return itinerary.complete_topology(targets, self.address)

    def compute_plan(self, task: TaskRun) -> itinerary.Plan | None:
        targets = [e.host_id for e in self.active_hosts(task.program.device_class)]
        if not targets:
            return None
        topo = self.topology_for(targets)
        try:
            return itinerary.plan(topo, targets, self.cost_params, k_max=self.k_max)
        except itinerary.PlanError as exc:
            log.warning("planning failed for %s: %s", task.name, exc)
            return None

    def _replan_all(self) -> None:
        with self._lock:
            tasks = list(self.tasks.values())
        for task in tasks:
            task.plan = self.compute_plan(task)

    # -- task lifecycle ----------------------------------------------------------------

    def create_task(self, form: dict) -> dict:
        """Generate, store and multicast a bundle; arm the task's polling round."""
        name, program, priority = parse_form(form)
        version = self.mcr.next_version(name)
        bundle = generate_bundle(name, program, version, self.keys.private_key)
        self.mcr.store(bundle)
        distributed, failed = [], []
        for entry in self.active_hosts(program.device_class):
            if self._push_bundle(entry.host_id, bundle):
                distributed.append(entry.host_id)
            else:
                failed.append(entry.host_id)
        task = TaskRun(
            name=name,
            version=version,
            bundle=bundle,
            priority=priority,
            frequency_s=program.frequency_s or 0,
        )
        task.plan = self.compute_plan(task)
        with self._lock:
            self.tasks[name] = task
        self._save_tasks()
        if self.auto_rounds:
            self._arm_task(task)
        result = {
            "name": name,
            "version": version,
            "distributed": distributed,
            "failed": failed,
        }
        if failed:
            result["warning"] = "PARTIAL_DISTRIBUTION"
        return result

    def _push_bundle(self, host_id: str, bundle: CodeBundle) -> bool:
        try:
            reply = send_payload(
                host_id,
                MsgType.CODE_BUNDLE,
                proto.canonical_encode(bundle),
                extra_flags=proto.FLAG_SIGNED,
                expect_reply=True,
                capture=self.capture,
            )
        except OSError:
            return False
        resp = proto.canonical_decode(ControlResponse, unpack_payload(reply[1], reply[2]))
        if resp.ok or resp.status == "STALE_VERSION":
            self._last_push[(host_id, bundle.class_id.name)] = int(time.time() * 1000)
        return resp.ok

    def _arm_task(self, task: TaskRun) -> None:
        if task.name in self._pt_threads and self._pt_threads[task.name].is_alive():
            return
        t = threading.Thread(target=self._pt_loop, args=(task.name,), name=f"pt-{task.name}", daemon=True)
        self._pt_threads[task.name] = t
        t.start()

    def _pt_loop(self, name: str) -> None:
        """One polling thread per task; rounds never interleave within a task."""
        while not self._stop.is_set():
            with self._lock:
                task = self.tasks.get(name)
            if task is None or not task.enabled:
                return
            try:
                self.run_round(name)
            except Exception:
                log.exception("round failed for task %s", name)
            if task.program.poll_mode == PollMode.ONE_SHOT:
                return
            if self._stop.wait(max(task.frequency_s, 1)):
                return

    def run_round(self, name: str) -> list[dict]:
        with self._lock:
            task = self.tasks.get(name)
        if task is None:
            raise UnknownTask(name)
        if not task.enabled:
            return []
        if task.plan is None:
            task.plan = self.compute_plan(task)
        if task.plan is None:
            return []
        self._check_lost_agents()
        round_num = task.round_num
        task.round_num += 1
        dispatched = []
        for route in task.plan.routes:
            with self._lock:
                self._counter += 1
                agent_id = f"{self.address}:{self._counter}"
            agent = runtime.init_agent(
                agent_id=agent_id,
                class_id=task.bundle.class_id,
                origin=self.address,
                itinerary=route,
                manager_private_key=self.keys.private_key,
                priority=task.priority,
                encrypt=task.program.encrypt,
            )
            seed_count = self._seed_threshold_samples(task, agent, route)
            record = DispatchRecord(
                agent_id=agent_id,
                task=name,
                round_num=round_num,
                route=route,
                sent_at=time.time(),
                seed_count=seed_count,
            )
            first_hop = runtime.advance_itinerary(agent)
            flags = proto.FLAG_SIGNED | (proto.FLAG_SEALED if agent.encrypt else 0)
            # Registered before the send: the tour can finish before we return.
            with self._lock:
                task.dispatches[agent_id] = record
            try:
                send_payload(
                    first_hop,
                    MsgType.AGENT_STATE,
                    proto.canonical_encode(agent),
                    extra_flags=flags,
                    expect_reply=True,
                    capture=self.capture,
                )
            except OSError as exc:
                record.done = True
                record.outcome = "DISPATCH_FAILED"
                self._append_record(
                    task=name,
                    round_num=round_num,
                    agent_id=agent_id,
                    host=route[0],
                    kind="error",
                    data={"code": "DISPATCH_FAILED", "detail": str(exc)},
                )
            self.events.publish(
                "dispatch",
                {"task": name, "round": round_num, "agent_id": agent_id, "route": list(route)},
            )
            dispatched.append({"agent_id": agent_id, "route": list(route), "outcome": record.outcome or "sent"})
        if task.program.poll_mode == PollMode.ONE_SHOT:
            task.enabled = False
            self._save_tasks()
        return dispatched

    def _seed_threshold_samples(self, task: TaskRun, agent: AgentState, route) -> int:
        """Give a fresh agent last round's sample entries so edges span rounds."""
        if task.program.service_type != ServiceType.THRESHOLD_MONITOR:
            return 0
        count = 0
        for host in route:
            entry = task.last_samples.get(host)
            if entry is not None:
                agent.append_entry(entry)
                count += 1
        return count

    # -- returns ------------------------------------------------------------------------

    def receive_returning_agent(self, flags: int, payload: bytes) -> ControlResponse:
        try:
            raw = unpack_payload(flags, payload)
            agent = proto.canonical_decode(AgentState, raw)
        except proto.ProtocolError as exc:
            return ControlResponse("DECODE_FAILED", str(exc))
        if agent.header_signature is None or not verify_trusted(
            agent.header_bytes(), agent.header_signature, self.trusted
        ):
            return ControlResponse("AUTH_FAILED", agent.agent_id)
        with self._lock:
            task = self.tasks.get(agent.class_id.name)
            record = task.dispatches.get(agent.agent_id) if task else None
        seed_count = record.seed_count if record else 0
        task_name = record.task if record else agent.class_id.name
        round_num = record.round_num if record else -1
        fresh_entries = agent.data_folder[seed_count:]
        self._ingest_entries(task, task_name, round_num, agent, fresh_entries)
        if record:
            record.done = True
            record.outcome = record.outcome or "returned"
        if self.retain_returned:
            self.returned_agents.append((agent, record))
        return ControlResponse("OK", agent.agent_id)

    def _ingest_entries(
        self,
        task: TaskRun | None,
        task_name: str,
        round_num: int,
        agent: AgentState,
        entries: list[DataEntry],
    ) -> None:
        program = task.program if task else None
        for entry in entries:
            sealed = entry.sealed is not None
            try:
                raw = (
                    open_sealed(entry.sealed, self.keys.private_key) if sealed else entry.payload
                )
                payload = decode_entry_payload(entry.kind, raw)
            except (OpenFailed, proto.ProtocolError) as exc:
                self._append_record(
                    task=task_name,
                    round_num=round_num,
                    agent_id=agent.agent_id,
                    host=entry.host,
                    kind="error",
                    data={"code": "OPEN_FAILED", "detail": str(exc)},
                    timestamp=entry.timestamp,
                )
                continue
            kind, data = self._record_body(entry.kind, payload, program)
            self._append_record(
                task=task_name,
                round_num=round_num,
                agent_id=agent.agent_id,
                host=entry.host,
                kind=kind,
                data=data,
                timestamp=entry.timestamp,
            )
            if (
                task is not None
                and program is not None
                and program.service_type == ServiceType.THRESHOLD_MONITOR
                and entry.kind == EntryKind.VALUES
            ):
                self._track_threshold_sample(task, agent, entry, payload)

    def _track_threshold_sample(
        self, task: TaskRun, agent: AgentState, entry: DataEntry, payload: ValuesPayload
    ) -> None:
        if entry.payload is not None:
            # Plaintext samples ride back out as next round's seed entries.
            task.last_samples[entry.host] = entry
            return
        # Sealed samples: the host could not read priors, so crossings are
        # detected here from the opened values.
        prior = task.manager_prior.get(entry.host)
        sat_flags, alarms = evaluate_threshold(task.program, payload.values, prior, entry.timestamp)
        tracked = ValuesPayload(payload.values, sat_flags)
        task.manager_prior[entry.host] = (tracked, entry.timestamp)
        for alarm in alarms:
            self._append_record(
                task=task.name,
                round_num=task.round_num - 1,
                agent_id=agent.agent_id,
                host=entry.host,
                kind="alarm",
                data={
                    "oid": alarm.oid,
                    "quantity": alarm.quantity,
                    "limit": alarm.limit,
                    "comparator": alarm.comparator.name,
                    "expression": alarm.expression.name.lower().replace("_", "-"),
                },
                timestamp=entry.timestamp,
            )

    def _record_body(self, kind: EntryKind, payload, program: TaskProgram | None):
        if kind == EntryKind.VALUES:
            oids = list(program.oids) if program else []
            values = [
                [oids[i] if i < len(oids) else "", None if v is NO_SUCH_OID else v]
                for i, v in enumerate(payload.values)
            ]
            return "values", {"values": values}
        if kind == EntryKind.ROWS:
            return "rows", {"rows": [list(row) for row in payload.rows]}
        if kind == EntryKind.ALARM:
            return "alarm", {
                "oid": payload.oid,
                "quantity": payload.quantity,
                "limit": payload.limit,
                "comparator": payload.comparator.name,
                "expression": payload.expression.name.lower().replace("_", "-"),
            }
        return "error", {"code": payload.code, "detail": payload.detail}

    def _append_record(
        self,
        task: str,
        round_num: int,
        agent_id: str,
        host: str,
        kind: str,
        data: dict,
        timestamp: int | None = None,
    ) -> None:
        record = {
            "task": task,
            "round": round_num,
            "agent_id": agent_id,
            "host": host,
            "timestamp": int(time.time() * 1000) if timestamp is None else timestamp,
            "kind": kind,
            **{"data": data},
        }
        self.results.append(record)
        self.events.publish("alarm" if kind == "alarm" else "result", record)

    # -- notices and sweeping ---------------------------------------------------------------

    def handle_notice(self, msg: ResultMsg) -> None:
        """A hop rejected one of our agents; account for it and recover."""
        self._append_record(
            task=msg.class_name,
            round_num=self._round_of(msg.class_name, msg.agent_id),
            agent_id=msg.agent_id,
            host=msg.host,
            kind="error",
            data={"code": msg.code, "detail": msg.detail},
            timestamp=msg.timestamp,
        )
        with self._lock:
            task = self.tasks.get(msg.class_name)
            record = task.dispatches.get(msg.agent_id) if task else None
        if record:
            record.done = True
            record.outcome = msg.code
        if msg.code == "AGENT_CODE_MISSING" and task is not None:
            self._push_bundle(msg.host, task.bundle)

    def _round_of(self, task_name: str, agent_id: str) -> int:
        with self._lock:
            task = self.tasks.get(task_name)
            record = task.dispatches.get(agent_id) if task else None
        return record.round_num if record else -1

    def _check_lost_agents(self) -> None:
        now = time.time()
        with self._lock:
            open_records = [
                (task, rec)
                for task in self.tasks.values()
                for rec in task.dispatches.values()
                if not rec.done
            ]
        for task, rec in open_records:
            if now - rec.sent_at > self.lost_timeout_s:
                rec.done = True
                rec.outcome = "LOST"
                for host in rec.route:
                    self._append_record(
                        task=rec.task,
                        round_num=rec.round_num,
                        agent_id=rec.agent_id,
                        host=host,
                        kind="error",
                        data={"code": "AGENT_LOST", "detail": f"no return within {self.lost_timeout_s}s"},
                    )

    def _sweep_loop(self) -> None:
        while not self._stop.wait(min(1.0, self.announce_ttl_s / 3)):
            self._apply_ttl()
            self._check_lost_agents()

    # -- control proxy ---------------------------------------------------------------------

    def control_proxy(
        self, host_id: str, verb: ControlVerb, agent_id: str = "", value: int | None = None
    ) -> ControlResponse:
        entry = next((e for e in self.directory_snapshot() if e.host_id == host_id), None)
        if entry is None or entry.state != "ACTIVE":
            raise HostInactive(host_id)
        request = ControlRequest(verb=verb, agent_id=agent_id, value=value)
        request = replace(request, signature=sign(request.signed_bytes(), self.keys.private_key))
        reply = send_payload(
            host_id,
            MsgType.CONTROL_REQ,
            proto.canonical_encode(request),
            extra_flags=proto.FLAG_SIGNED,
            expect_reply=True,
            capture=self.capture,
        )
        return proto.canonical_decode(ControlResponse, unpack_payload(reply[1], reply[2]))

    def set_task_frequency(self, name: str, seconds: int) -> dict:
        with self._lock:
            task = self.tasks.get(name)
        if task is None:
            raise UnknownTask(name)
        if seconds < 1:
            raise InvalidForm(["frequency_s"])
        task.frequency_s = seconds
        self._save_tasks()
        # Best-effort fan-out to hosts where this task's agents are resident.
        for entry in self.active_hosts(task.program.device_class):
            try:
                resp = self.control_proxy(entry.host_id, ControlVerb.LIST_AGENTS)
            except (OSError, HostInactive):
                continue
            for info in resp.agents:
                if info.class_name == name:
                    try:
                        self.control_proxy(
                            entry.host_id, ControlVerb.SET_FREQUENCY, info.agent_id, seconds
                        )
                    except (OSError, HostInactive):
                        pass
        return {"name": name, "frequency_s": seconds}

    # -- results / persistence ----------------------------------------------------------------

    def query_results(self, **filters) -> list[dict]:
        return self.results.query(**filters)

    def _save_tasks(self) -> None:
        with self._lock:
            blob = {
                name: {
                    "version": task.version,
                    "priority": task.priority,
                    "frequency_s": task.frequency_s,
                    "enabled": task.enabled,
                    "round": task.round_num,
                }
                for name, task in self.tasks.items()
            }
        self.tasks_path.write_text(json.dumps(blob, indent=2, sort_keys=True))

    def _load_tasks(self) -> None:
        if not self.tasks_path.exists():
            return
        try:
            blob = json.loads(self.tasks_path.read_text())
        except json.JSONDecodeError:
            log.warning("unreadable tasks.json; starting empty")
            return
        for name, spec in blob.items():
            bundle = self.mcr.load_latest(name)
            if bundle is None:
                continue
            self.tasks[name] = TaskRun(
                name=name,
                version=bundle.class_id.version,
                bundle=bundle,
                priority=spec.get("priority", runtime.DEFAULT_PRIORITY),
                frequency_s=spec.get("frequency_s", bundle.program.frequency_s or 0),
                enabled=spec.get("enabled", True),
                round_num=spec.get("round", 0),
            )

    def task_snapshot(self) -> list[dict]:
        with self._lock:
            return [task.to_json() for _, task in sorted(self.tasks.items())]

    def topology_snapshot(self) -> dict:
        hosts = [e.host_id for e in self.active_hosts()]
        topo = self.topology_for(hosts)
        edges = []
        seen = set()
        for u, neighbors in topo.adj.items():
            for v, cost in neighbors:
                key = tuple(sorted((u, v)))
                if key not in seen:
                    seen.add(key)
                    edges.append({"a": key[0], "b": key[1], "cost": cost})
        return {"manager": topo.manager, "nodes": topo.nodes, "edges": edges}
