import json
import time

import pytest

from patrol import proto, runtime
from patrol.bench import BenchCluster
from patrol.manager import HostInactive, Manager, UnknownTask
from patrol.messages import ControlVerb, ResultMsg
from patrol.proto import MsgType
from patrol.runtime import DataEntry, EntryKind, ValuesPayload, init_agent
from patrol.security import seal
from patrol.taskmodel import AgentClassId, InvalidForm

SCALAR_FORM = {
    "name": "uptimePoll",
    "service_type": "scalar-poll",
    "oids": ["1.3.6.1.2.1.1.3.0", "1.3.6.1.2.1.4.3.0"],
    "poll_mode": "periodic",
    "frequency_s": 5,
}

THRESHOLD_FORM = {
    "name": "fragWatch",
    "service_type": "threshold-monitor",
    "oids": ["1.3.6.1.2.1.4.8.0"],
    "threshold": {"expression": "value", "comparator": "GT", "limit": 500},
    "poll_mode": "periodic",
    "frequency_s": 5,
}


@pytest.fixture
def cluster(tmp_path):
    c = BenchCluster(n_hosts=3, work_dir=tmp_path, announce_interval_s=0.15)
    c.start()
    yield c
    c.stop()


def wait_until(predicate, timeout=8.0, interval=0.02):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return False


class TestDirectory:
    def test_discovery(self, cluster):
        entries = cluster.manager.directory_snapshot()
        assert len(entries) == 3
        assert all(e.state == "ACTIVE" for e in entries)
        blob = entries[0].to_json()
        assert {"host_id", "state", "load", "bundles"} <= set(blob)

    def test_ttl_flip_and_replan(self, cluster):
        events = cluster.manager.events.subscribe()
        cluster.manager.create_task(dict(SCALAR_FORM))
        task = cluster.manager.tasks["uptimePoll"]
        lost = cluster.servers[0].host_id
        assert any(lost in route for route in task.plan.routes)
        cluster.servers[0].stop()
        assert wait_until(
            lambda: any(
                e.host_id == lost and e.state == "INACTIVE"
                for e in cluster.manager.directory_snapshot()
            ),
            timeout=5.0,
        )
        assert all(lost not in route for route in task.plan.routes)
        seen = []
        while not events.empty():
            seen.append(events.get())
        assert ("directory", {"host": lost, "state": "INACTIVE"}) in [
            (e, {"host": d.get("host"), "state": d.get("state")}) for e, d in seen if e == "directory"
        ]


class TestTasks:
    def test_create_distributes_everywhere(self, cluster):
        result = cluster.manager.create_task(dict(SCALAR_FORM))
        assert result["version"] == 1 and not result["failed"]
        assert sorted(result["distributed"]) == sorted(s.host_id for s in cluster.servers)
        for server in cluster.servers:
            assert server.cache.get("uptimePoll").class_id.version == 1
        assert cluster.manager.tasks["uptimePoll"].plan is not None

    def test_recreate_bumps_version(self, cluster):
        cluster.manager.create_task(dict(SCALAR_FORM))
        result = cluster.manager.create_task(dict(SCALAR_FORM))
        assert result["version"] == 2
        for server in cluster.servers:
            assert server.cache.get("uptimePoll").class_id.version == 2

    def test_partial_distribution(self, cluster):
        down = cluster.servers[2]
        down.stop()
        result = cluster.manager.create_task(dict(SCALAR_FORM))
        assert result["warning"] == "PARTIAL_DISTRIBUTION"
        assert result["failed"] == [down.host_id]

    def test_invalid_form_lists_fields(self, cluster):
        with pytest.raises(InvalidForm) as err:
            cluster.manager.create_task({"name": "x", "service_type": "table-filter", "oids": ["1.2"]})
        assert "filter" in err.value.fields

    def test_unknown_task_round(self, cluster):
        with pytest.raises(UnknownTask):
            cluster.manager.run_round("nope")


class TestRounds:
    def test_round_trip_records(self, cluster):
        events = cluster.manager.events.subscribe()
        cluster.manager.create_task(dict(SCALAR_FORM))
        cluster.manager.run_round("uptimePoll")
        cluster.wait_for_round("uptimePoll")
        records = cluster.manager.query_results(task="uptimePoll", kind="values")
        assert len(records) == 3
        assert sorted(r["host"] for r in records) == sorted(s.host_id for s in cluster.servers)
        for record in records:
            oids = [pair[0] for pair in record["data"]["values"]]
            assert oids == SCALAR_FORM["oids"]
        streamed = []
        while not events.empty():
            streamed.append(events.get())
        assert sum(1 for e, _ in streamed if e == "result") >= 3
        assert sum(1 for e, _ in streamed if e == "dispatch") >= 1

    def test_code_once_during_rounds(self, cluster):
        cluster.manager.create_task(dict(SCALAR_FORM))
        time.sleep(0.4)  # let announce reconciliation settle
        cluster.capture.clear()
        for _ in range(3):
            cluster.manager.run_round("uptimePoll")
            cluster.wait_for_round("uptimePoll")
        bundle_frames = [
            f for f in cluster.capture.frames(MsgType.CODE_BUNDLE) if f.direction == "out"
        ]
        assert bundle_frames == []

    def test_one_shot_runs_once(self, cluster):
        form = dict(SCALAR_FORM, name="once", poll_mode="one-shot")
        form.pop("frequency_s")
        cluster.manager.create_task(form)
        assert cluster.manager.run_round("once")
        cluster.wait_for_round("once")
        assert cluster.manager.run_round("once") == []
        assert not cluster.manager.tasks["once"].enabled

    def test_disabled_task_never_dispatches(self, cluster):
        cluster.manager.create_task(dict(SCALAR_FORM))
        cluster.manager.tasks["uptimePoll"].enabled = False
        assert cluster.manager.run_round("uptimePoll") == []

    def test_lost_agent_accounting(self, cluster):
        from patrol.manager import DispatchRecord

        cluster.manager.lost_timeout_s = 0.05
        cluster.manager.create_task(dict(SCALAR_FORM))
        task = cluster.manager.tasks["uptimePoll"]
        task.dispatches["ghost"] = DispatchRecord(
            agent_id="ghost",
            task="uptimePoll",
            round_num=7,
            route=("h1:1", "h2:1"),
            sent_at=time.time() - 1,
            seed_count=0,
        )
        cluster.manager._check_lost_agents()
        lost = [
            r
            for r in cluster.manager.query_results(task="uptimePoll", kind="error")
            if r["data"]["code"] == "AGENT_LOST"
        ]
        assert {r["host"] for r in lost} == {"h1:1", "h2:1"}
        assert task.dispatches["ghost"].outcome == "LOST"


class TestThresholdAcrossRounds:
    def test_exactly_one_alarm_per_crossing(self, cluster):
        cluster.manager.create_task(dict(THRESHOLD_FORM))
        # Round 1: below the limit (step at t=30 in the bench script).
        cluster.manager.run_round("fragWatch")
        cluster.wait_for_round("fragWatch")
        for mib in cluster.mibs:
            mib.tick(40)  # cross the step
        cluster.manager.run_round("fragWatch")
        cluster.wait_for_round("fragWatch")
        cluster.manager.run_round("fragWatch")
        cluster.wait_for_round("fragWatch")
        alarms = cluster.manager.query_results(task="fragWatch", kind="alarm")
        per_host = {}
        for record in alarms:
            per_host[record["host"]] = per_host.get(record["host"], 0) + 1
        assert per_host == {s.host_id: 1 for s in cluster.servers}


class TestReturns:
    def _agent_with_entries(self, cluster, entries, agent_id="ret:1"):
        agent = init_agent(
            agent_id=agent_id,
            class_id=AgentClassId("uptimePoll", 1),
            origin=cluster.manager.address,
            itinerary=(cluster.servers[0].host_id,),
            manager_private_key=cluster.keys.private_key,
        )
        for entry in entries:
            agent.append_entry(entry)
        return agent

    def test_sealed_entries_open_only_here(self, cluster):
        cluster.manager.create_task(dict(SCALAR_FORM))
        payload = proto.canonical_encode(ValuesPayload((41,)))
        good = lambda host: DataEntry(
            host=host,
            timestamp=1000,
            kind=EntryKind.VALUES,
            sealed=seal(payload, cluster.keys.public_key),
        )
        sealed = seal(payload, cluster.keys.public_key)
        tampered = type(sealed)(
            wrapped_key=sealed.wrapped_key,
            nonce=sealed.nonce,
            ciphertext=bytes([sealed.ciphertext[0] ^ 1]) + sealed.ciphertext[1:],
        )
        agent = self._agent_with_entries(
            cluster,
            [
                good("h1:1"),
                DataEntry(host="h2:1", timestamp=1001, kind=EntryKind.VALUES, sealed=tampered),
                good("h3:1"),
            ],
        )
        resp = cluster.manager.receive_returning_agent(0, proto.canonical_encode(agent))
        assert resp.ok
        values = cluster.manager.query_results(task="uptimePoll", kind="values")
        errors = [
            r
            for r in cluster.manager.query_results(task="uptimePoll", kind="error")
            if r["data"]["code"] == "OPEN_FAILED"
        ]
        assert len(values) == 2 and len(errors) == 1

    def test_unsigned_return_rejected(self, cluster, other_keys):
        agent = init_agent(
            agent_id="evil:1",
            class_id=AgentClassId("uptimePoll", 1),
            origin=cluster.manager.address,
            itinerary=("h:1",),
            manager_private_key=other_keys.private_key,
        )
        resp = cluster.manager.receive_returning_agent(0, proto.canonical_encode(agent))
        assert resp.status == "AUTH_FAILED"
        assert cluster.manager.query_results() == []


class TestNoticesAndProxy:
    def test_code_missing_triggers_repush(self, cluster):
        cluster.manager.create_task(dict(SCALAR_FORM))
        victim = cluster.servers[1]
        with victim.cache._lock:
            victim.cache._bundles.clear()
        notice = ResultMsg(
            kind="AGENT_REJECTED",
            agent_id="x:1",
            class_name="uptimePoll",
            class_version=1,
            host=victim.host_id,
            code="AGENT_CODE_MISSING",
            detail="uptimePoll v1",
            timestamp=int(time.time() * 1000),
        )
        cluster.manager.handle_notice(notice)
        assert victim.cache.get("uptimePoll") is not None
        errors = cluster.manager.query_results(task="uptimePoll", kind="error")
        assert errors and errors[0]["data"]["code"] == "AGENT_CODE_MISSING"

    def test_control_proxy_roundtrip(self, cluster):
        resp = cluster.manager.control_proxy(cluster.servers[0].host_id, ControlVerb.LIST_AGENTS)
        assert resp.ok and resp.agents == ()
        load = cluster.manager.control_proxy(cluster.servers[0].host_id, ControlVerb.GET_LOAD)
        assert load.ok and load.load is not None

    def test_proxy_to_inactive_host(self, cluster):
        lost = cluster.servers[0]
        lost.stop()
        wait_until(
            lambda: all(
                e.state == "INACTIVE"
                for e in cluster.manager.directory_snapshot()
                if e.host_id == lost.host_id
            ),
            timeout=5.0,
        )
        with pytest.raises(HostInactive):
            cluster.manager.control_proxy(lost.host_id, ControlVerb.LIST_AGENTS)

    def test_set_task_frequency(self, cluster):
        cluster.manager.create_task(dict(SCALAR_FORM))
        out = cluster.manager.set_task_frequency("uptimePoll", 25)
        assert out == {"name": "uptimePoll", "frequency_s": 25}
        assert cluster.manager.tasks["uptimePoll"].frequency_s == 25
        blob = json.loads(cluster.manager.tasks_path.read_text())
        assert blob["uptimePoll"]["frequency_s"] == 25


class TestPersistence:
    def test_results_file_lines(self, cluster):
        cluster.manager.create_task(dict(SCALAR_FORM))
        cluster.manager.run_round("uptimePoll")
        cluster.wait_for_round("uptimePoll")
        lines = (cluster.manager.data_dir / "results.jsonl").read_text().splitlines()
        assert len(lines) == len(cluster.manager.query_results())
        for line in lines:
            record = json.loads(line)
            assert {"task", "round", "agent_id", "host", "timestamp", "kind", "data"} <= set(record)

    def test_restart_preserves_records_and_tasks(self, cluster, tmp_path):
        cluster.manager.create_task(dict(SCALAR_FORM))
        cluster.manager.run_round("uptimePoll")
        cluster.wait_for_round("uptimePoll")
        before = cluster.manager.query_results(task="uptimePoll")
        assert before
        reborn = Manager(
            listen_host="127.0.0.1",
            frame_port=0,
            keys=cluster.keys,
            data_dir=cluster.manager.data_dir,
            auto_rounds=False,
        )
        assert reborn.query_results(task="uptimePoll") == before
        assert "uptimePoll" in reborn.tasks
        assert reborn.tasks["uptimePoll"].version == 1

    def test_query_filters(self, cluster):
        cluster.manager.create_task(dict(SCALAR_FORM))
        cluster.manager.run_round("uptimePoll")
        cluster.wait_for_round("uptimePoll")
        host = cluster.servers[0].host_id
        only = cluster.manager.query_results(host=host)
        assert only and all(r["host"] == host for r in only)
