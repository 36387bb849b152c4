"""Agent hosting: lifecycle, snapshot/rebuild, and the toy itinerary runtime.

Toy programs are line-oriented text::

    toy-itinerary-v1
    inc c
    hop 127.0.0.1:9002
    stop

Agent data is a flat string map plus the program counter, serialized as
compact JSON with sorted keys so that snapshots are byte-stable.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping

from .acl import AgentIdentifier
from .cid import compute_cid
from .push_transfer import AgentPackage

TOY_FORMAT = "toy-itinerary-v1"


class HostError(Exception):
    pass


class AgentNotFound(HostError):
    pass


class AgentNotActive(HostError):
    pass


class AgentRunning(HostError):
    pass


class NameCollision(HostError):
    pass


class CodeFormatError(HostError):
    pass


class DataFormatError(HostError):
    pass


class IllegalTransition(HostError):
    pass


class Lifecycle(str, Enum):
    ACTIVE = "Active"
    SUSPENDED = "Suspended"
    TRANSIT = "Transit"
    DEAD = "Dead"


L = Lifecycle
LEGAL_TRANSITIONS = frozenset({
    (L.ACTIVE, L.SUSPENDED),
    (L.SUSPENDED, L.ACTIVE),
    (L.ACTIVE, L.TRANSIT),
    (L.TRANSIT, L.ACTIVE),
    (L.TRANSIT, L.DEAD),
    (L.SUSPENDED, L.DEAD),
})


@dataclass(frozen=True)
class Instruction:
    op: str
    arg: str | None = None

    def __str__(self) -> str:
        return self.op if self.arg is None else f"{self.op} {self.arg}"


@dataclass(frozen=True)
class ToyProgram:
    instructions: tuple[Instruction, ...]

    @classmethod
    def of(cls, *lines: str) -> ToyProgram:
        """Build from instruction lines, e.g. ``ToyProgram.of("inc c", "stop")``."""
        return cls.parse(("\n".join((TOY_FORMAT,) + lines) + "\n").encode())

    @classmethod
    def parse(cls, code: bytes) -> ToyProgram:
        try:
            text = code.decode("utf-8")
        except UnicodeDecodeError:
            raise CodeFormatError("code is not UTF-8") from None
        if not text.endswith("\n"):
            raise CodeFormatError("code must be newline-terminated")
        lines = text[:-1].split("\n")
        if lines[0] != TOY_FORMAT:
            raise CodeFormatError(f"first line must be {TOY_FORMAT!r}")
        out = []
        for n, line in enumerate(lines[1:], start=2):
            parts = line.split(" ")
            if parts == ["stop"]:
                out.append(Instruction("stop"))
            elif len(parts) == 2 and parts[0] in ("inc", "hop") and parts[1]:
                if parts[0] == "hop" and not _looks_like_address(parts[1]):
                    raise CodeFormatError(f"line {n}: bad address {parts[1]!r}")
                out.append(Instruction(parts[0], parts[1]))
            else:
                raise CodeFormatError(f"line {n}: cannot parse {line!r}")
        if not out or out[-1].op != "stop":
            raise CodeFormatError("program must end with stop")
        return cls(tuple(out))

    def encode(self) -> bytes:
        return "".join(f"{line}\n" for line in [TOY_FORMAT, *map(str, self.instructions)]).encode()


def _looks_like_address(text: str) -> bool:
    host, sep, port = text.rpartition(":")
    return bool(sep and host and port.isdigit())


def encode_data(data: Mapping[str, str], program_counter: int) -> bytes:
    obj = {"data": dict(sorted(data.items())), "program-counter": str(program_counter)}
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


def decode_data(raw: bytes) -> tuple[dict[str, str], int]:
    try:
        obj = json.loads(raw.decode("utf-8"))
        data, pc = obj["data"], obj["program-counter"]
        if set(obj) != {"data", "program-counter"} or not isinstance(data, dict):
            raise ValueError("unexpected fields")
        if not all(isinstance(k, str) and isinstance(v, str) for k, v in data.items()):
            raise ValueError("values must be strings")
        counter = int(pc)
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise DataFormatError(f"cannot decode agent data: {exc}") from None
    if encode_data(data, counter) != bytes(raw):
        raise DataFormatError("agent data is not in canonical form")
    return data, counter


@dataclass(frozen=True)
class RuntimeEvent:
    kind: str  # incremented | wants-migration | stopped
    key: str | None = None
    value: int | None = None
    destination: str | None = None


@dataclass
class HostedAgent:
    id: AgentIdentifier
    lifecycle: Lifecycle
    code: bytes
    program: ToyProgram
    data_map: dict[str, str] = field(default_factory=dict)
    program_counter: int = 0
    state: bytes | None = None
    version: str | None = None

    @property
    def package(self) -> AgentPackage:
        return AgentPackage(self.code, encode_data(self.data_map, self.program_counter),
                            compute_cid(self.code), self.state)


class AgentHost:
    """The set of agents resident on one platform."""

    def __init__(self, platform_name: str, address: str = ""):
        self.platform_name = platform_name
        self.address = address
        self._agents: dict[str, HostedAgent] = {}
        self._lock = threading.RLock()
        self.resume_listeners: list[Callable[[str], None]] = []

    def _get(self, name: str) -> HostedAgent:
        try:
            return self._agents[name]
        except KeyError:
            raise AgentNotFound(name) from None

    def _move(self, agent: HostedAgent, target: Lifecycle) -> None:
        if (agent.lifecycle, target) not in LEGAL_TRANSITIONS:
            raise IllegalTransition(f"{agent.id.name}: {agent.lifecycle.value} -> {target.value}")
        agent.lifecycle = target
        if target is Lifecycle.DEAD:
            del self._agents[agent.id.name]

    def create_agent(self, local_name: str, program: ToyProgram,
                     initial_data: Mapping[str, str] | None = None) -> AgentIdentifier:
        aid = AgentIdentifier(f"{local_name}@{self.platform_name}",
                              (self.address,) if self.address else ())
        if aid.problems():
            raise HostError("; ".join(aid.problems()))
        with self._lock:
            if aid.name in self._agents:
                raise NameCollision(aid.name)
            self._agents[aid.name] = HostedAgent(
                aid, Lifecycle.ACTIVE, program.encode(), program, dict(initial_data or {}))
        self._notify_resumed(aid.name)
        return aid

    def list_agents(self) -> list[tuple[str, Lifecycle]]:
        with self._lock:
            return sorted((n, a.lifecycle) for n, a in self._agents.items())

    def hosts(self, name: str) -> bool:
        return name in self._agents

    def lifecycle(self, name: str) -> Lifecycle:
        with self._lock:
            return self._get(name).lifecycle

    def agent(self, name: str) -> HostedAgent:
        with self._lock:
            return self._get(name)

    def data_map(self, name: str) -> dict[str, str]:
        with self._lock:
            return dict(self._get(name).data_map)

    def snapshot_agent(self, name: str, resume_at: int | None = None) -> AgentPackage:
        """Package a stopped agent; ``resume_at`` overrides the stored program counter."""
        with self._lock:
            agent = self._get(name)
            if agent.lifecycle not in (Lifecycle.SUSPENDED, Lifecycle.TRANSIT):
                raise AgentRunning(name)
            pc = agent.program_counter if resume_at is None else resume_at
            return AgentPackage(agent.code, encode_data(agent.data_map, pc),
                                compute_cid(agent.code), agent.state)

    def install_agent(self, package: AgentPackage, aid: AgentIdentifier) -> None:
        if compute_cid(package.code) != package.cid:
            raise CodeFormatError("cid does not match code")
        program = ToyProgram.parse(package.code)
        data, pc = decode_data(package.data)
        if not 0 <= pc < len(program.instructions):
            raise DataFormatError(f"program counter {pc} out of range")
        with self._lock:
            if aid.name in self._agents:
                raise NameCollision(aid.name)
            self._agents[aid.name] = HostedAgent(
                aid, Lifecycle.SUSPENDED, package.code, program, data, pc, package.state)

    def suspend_agent(self, name: str) -> None:
        with self._lock:
            self._move(self._get(name), Lifecycle.SUSPENDED)

    def begin_transit(self, name: str) -> None:
        with self._lock:
            agent = self._get(name)
            if agent.lifecycle is not Lifecycle.ACTIVE:
                raise AgentNotActive(f"{name} is {agent.lifecycle.value}")
            self._move(agent, Lifecycle.TRANSIT)

    def resume_agent(self, name: str) -> None:
        with self._lock:
            self._move(self._get(name), Lifecycle.ACTIVE)
        self._notify_resumed(name)

    def kill_agent(self, name: str) -> None:
        with self._lock:
            self._move(self._get(name), Lifecycle.DEAD)

    def _notify_resumed(self, name: str) -> None:
        for listener in self.resume_listeners:
            listener(name)

    def step_runtime(self, name: str) -> RuntimeEvent:
        with self._lock:
            agent = self._get(name)
            if agent.lifecycle is not Lifecycle.ACTIVE:
                raise AgentNotActive(f"{name} is {agent.lifecycle.value}")
            ins = agent.program.instructions[agent.program_counter]
            if ins.op == "inc":
                try:
                    value = int(agent.data_map.get(ins.arg, "0")) + 1
                except ValueError:
                    raise DataFormatError(f"{ins.arg} does not hold an integer") from None
                agent.data_map[ins.arg] = str(value)
                agent.program_counter += 1
                return RuntimeEvent("incremented", key=ins.arg, value=value)
            if ins.op == "hop":
                return RuntimeEvent("wants-migration", destination=ins.arg)
            return RuntimeEvent("stopped")
