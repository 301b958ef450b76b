from __future__ import annotations

import queue
import random
import threading

import pytest

from patrol import proto
from patrol.itinerary import Topology
from patrol.proto import MsgType
from patrol.security import generate_keypair
from patrol.wire import FrameServer


@pytest.fixture(scope="session")
def keys():
    return generate_keypair()


@pytest.fixture(scope="session")
def other_keys():
    return generate_keypair()


class StubManager:
    """Frame sink standing in for a manager: records everything it receives."""

    def __init__(self):
        self.frames: list[tuple[MsgType, int, bytes]] = []
        self._lock = threading.Lock()
        self.received = queue.Queue()
        self.server = FrameServer("127.0.0.1", 0, self._handle)
        self.server.start()

    @property
    def address(self) -> str:
        return self.server.address

    def _handle(self, msg_type, flags, payload, peer):
        with self._lock:
            self.frames.append((msg_type, flags, payload))
        self.received.put((msg_type, flags, payload))
        if msg_type in (MsgType.AGENT_STATE, MsgType.CODE_BUNDLE, MsgType.CONTROL_REQ):
            from patrol.messages import ControlResponse

            return MsgType.CONTROL_RESP, 0, proto.canonical_encode(ControlResponse("OK"))
        return None

    def wait_for(self, msg_type: MsgType, timeout: float = 5.0, predicate=None):
        import time

        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            try:
                item = self.received.get(timeout=0.05)
            except queue.Empty:
                continue
            if item[0] == msg_type and (predicate is None or predicate(item)):
                return item
        raise TimeoutError(f"no {msg_type.name} frame arrived")

    def of_type(self, msg_type: MsgType):
        with self._lock:
            return [f for f in self.frames if f[0] == msg_type]

    def stop(self):
        self.server.stop()


@pytest.fixture
def stub_manager():
    stub = StubManager()
    yield stub
    stub.stop()


def random_connected_topology(rng: random.Random, n_targets: int) -> tuple[Topology, list[str]]:
    """Random connected graph over a manager and n_targets hosts, costs 1..10."""
    manager = "m"
    targets = [f"t{i}" for i in range(n_targets)]
    nodes = [manager] + targets
    edges = []
    for i in range(1, len(nodes)):
        j = rng.randrange(i)
        edges.append((nodes[i], nodes[j], rng.randint(1, 10)))
    extra = rng.randint(0, n_targets)
    for _ in range(extra):
        u, v = rng.sample(nodes, 2)
        edges.append((u, v, rng.randint(1, 10)))
    return Topology(manager, edges), targets
