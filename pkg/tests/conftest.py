import time
from pathlib import Path

import pytest

from agentmobility import MemoryBus, NodeConfig, ToyProgram, start_node

GOLDEN = Path(__file__).parent / "golden"

ADDR_A, ADDR_B, ADDR_C = "127.0.0.1:9001", "127.0.0.1:9002", "127.0.0.1:9003"

ITINERARY = ToyProgram.of(
    "inc c", f"hop {ADDR_B}", "inc c", f"hop {ADDR_C}", "inc c", "stop")


def wait_until(predicate, timeout=5.0, interval=0.01):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return predicate()


@pytest.fixture
def bus():
    return MemoryBus()


@pytest.fixture
def make_node(bus):
    """Factory for in-memory nodes; every node is shut down after the test."""
    started = []

    def factory(platform, address, bus_=None, **overrides):
        overrides.setdefault("step_timeout_seconds", 2)
        node = start_node(NodeConfig(platform, address, **overrides), bus_ if bus_ is not None else bus)
        started.append(node)
        return node

    yield factory
    for node in started:
        node.shutdown()


@pytest.fixture
def pair(make_node):
    return make_node("A", ADDR_A), make_node("B", ADDR_B)
