from patrol import proto
from patrol.messages import (
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
from patrol.security import sign, verify
from patrol.taskmodel import PollMode


def rt(value):
    return proto.canonical_decode(type(value), proto.canonical_encode(value))


def test_ma_info_round_trip():
    info = MaInfo(
        agent_id="m:1",
        class_name="probe",
        class_version=2,
        poll_mode=PollMode.PERIODIC,
        frequency_s=15,
        encrypt=True,
        arrival_time=123456,
        status=AgentStatus.SUSPENDED,
        priority=7,
    )
    assert rt(info) == info
    row = info.to_json(host="h1:1")
    assert row["status"] == "suspended" and row["authentication"] is True
    assert row["host"] == "h1:1" and row["poll_mode"] == "periodic"


def test_host_load_round_trip():
    load = HostLoad(12.5, 1024 * 1024, 99)
    assert rt(load) == load


def test_announce_round_trip_sorts_bundles():
    ann = Announce(
        host_id="127.0.0.1:7711",
        host="127.0.0.1",
        port=7711,
        device_class="sim",
        load=HostLoad(1.0, 2, 3),
        bundles=(
            BundleDigest("zeta", 1, b"z" * 32),
            BundleDigest("alpha", 2, b"a" * 32),
        ),
    )
    decoded = rt(ann)
    assert [b.name for b in decoded.bundles] == ["alpha", "zeta"]
    assert decoded.host_id == ann.host_id


def test_control_request_signing(keys):
    request = ControlRequest(verb=ControlVerb.SET_FREQUENCY, agent_id="m:1", value=25)
    signed = ControlRequest(
        verb=request.verb,
        agent_id=request.agent_id,
        value=request.value,
        signature=sign(request.signed_bytes(), keys.private_key),
    )
    decoded = rt(signed)
    assert decoded.verb == ControlVerb.SET_FREQUENCY and decoded.value == 25
    assert verify(decoded.signed_bytes(), decoded.signature, keys.public_key)


def test_control_response_round_trip():
    resp = ControlResponse("BAD_STATE", "ACTIVE")
    assert rt(resp) == resp and not resp.ok
    ok = ControlResponse("OK", load=HostLoad(5.0, 10, 20))
    assert rt(ok).load == ok.load and ok.ok


def test_result_msg_round_trip():
    msg = ResultMsg(
        kind="AGENT_REJECTED",
        agent_id="m:3",
        class_name="probe",
        class_version=1,
        host="127.0.0.1:7711",
        code="VERSION_SUPERSEDED",
        detail="probe v1 superseded by v2",
        timestamp=42,
    )
    assert rt(msg) == msg
