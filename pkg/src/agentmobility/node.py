"""A platform node: transport, host, code cache, registry and AMM wired together.

The node also serves a private control ontology over the same ACL transport,
which is how the command line talks to a running node.
"""

from __future__ import annotations

import base64
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .acl import (
    AclError,
    AclMessage,
    AgentIdentifier,
    Content,
    ContentKind,
    Performative,
    decode_message,
    encode_message,
    error_content,
    make_reply,
)
from .amm import AgentMobilityManager, EventLog, MigrationResult, new_session_id
from .host import AgentHost, HostError, Lifecycle, RuntimeEvent, ToyProgram
from .ontology import OntologyError, SupportedProtocols
from .push_transfer import CodeCache, PushTransfer
from .registry import (
    PUSH_TRANSFER_PROTOCOL,
    DiscoveryCache,
    DiscoveryClient,
    HandshakeProtocol,
    MigrationStep,
    ProtocolRegistry,
    RemoteFailure,
)
from .transport import (
    Closed,
    Envelope,
    FaultInjector,
    FaultSpec,
    MemoryBus,
    TcpTransport,
    Timeout,
    Transport,
    TransportError,
    parse_address,
)

logger = logging.getLogger(__name__)

CONTROL_PROTOCOL = "control-protocol-v1"
CONTROL_ONTOLOGY = "control"
FAULT_STEPS = ("main", "discovery", "pre-transfer", "transfer", "transfer-stage-1",
               "transfer-stage-2", "post-transfer", "registration", "power-up")


class ConfigError(ValueError):
    pass


def parse_faults(text: str) -> list[FaultSpec]:
    """``"registration:send:1,transfer-stage-2:receive:1"`` to fault specs."""
    out = []
    for item in filter(None, (part.strip() for part in text.split(","))):
        parts = item.split(":")
        if len(parts) != 3:
            raise ConfigError(f"fault {item!r}: expected step:direction:count")
        step, direction, count = parts
        if step not in FAULT_STEPS:
            raise ConfigError(f"fault {item!r}: unknown step {step!r}")
        if direction not in ("send", "receive"):
            raise ConfigError(f"fault {item!r}: direction must be send or receive")
        if not count.isdigit():
            raise ConfigError(f"fault {item!r}: count must be a non-negative integer")
        out.append(FaultSpec(step, direction, int(count)))
    return out


def _names(text: str) -> tuple[str, ...]:
    return tuple(filter(None, (n.strip() for n in text.split(","))))


@dataclass
class NodeConfig:
    platform_name: str
    listen_address: str
    code_cache_path: str | None = None
    cache_capacity: int = 128
    discovery_ttl_seconds: float = 300
    step_timeout_seconds: float = 10
    fault_injections: list[FaultSpec] = field(default_factory=list)
    autorun: bool = False
    hop_retries: int = 0
    max_sessions: int = 64
    pre_transfer_protocols: tuple[str, ...] = ()
    post_transfer_protocols: tuple[str, ...] = ()
    event_log_path: str | None = None

    def __post_init__(self) -> None:
        if not self.platform_name or "@" in self.platform_name or " " in self.platform_name:
            raise ConfigError(f"bad platform-name {self.platform_name!r}")
        try:
            parse_address(self.listen_address)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.cache_capacity < 1:
            raise ConfigError("cache-capacity must be positive")
        if self.step_timeout_seconds <= 0:
            raise ConfigError("step-timeout-seconds must be positive")
        if self.hop_retries < 0:
            raise ConfigError("hop-retries must not be negative")

    @classmethod
    def from_text(cls, text: str) -> NodeConfig:
        """Parse flat ``key=value`` lines; ``#`` starts a comment line."""
        known = {f.name.replace("_", "-"): f for f in fields(cls)}
        kwargs: dict[str, Any] = {}
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep:
                raise ConfigError(f"line {n}: expected key=value")
            if key not in known:
                raise ConfigError(f"line {n}: unknown key {key!r}")
            name = known[key].name
            try:
                if name in ("cache_capacity", "hop_retries", "max_sessions"):
                    kwargs[name] = int(value)
                elif name in ("discovery_ttl_seconds", "step_timeout_seconds"):
                    kwargs[name] = float(value)
                elif name == "autorun":
                    if value not in ("true", "false"):
                        raise ValueError("expected true or false")
                    kwargs[name] = value == "true"
                elif name == "fault_injections":
                    kwargs[name] = parse_faults(value)
                elif name in ("pre_transfer_protocols", "post_transfer_protocols"):
                    kwargs[name] = _names(value)
                else:
                    kwargs[name] = value or None
            except ValueError as exc:
                raise ConfigError(f"line {n}: {key}: {exc}") from None
        for required in ("platform_name", "listen_address"):
            if required not in kwargs:
                raise ConfigError(f"missing {required.replace('_', '-')}")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> NodeConfig:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


class _Mailbox:
    def __init__(self) -> None:
        self._items: list[tuple[AclMessage, int]] = []
        self._cond = threading.Condition()

    def put(self, msg: AclMessage, nbytes: int) -> None:
        with self._cond:
            self._items.append((msg, nbytes))
            self._cond.notify_all()

    def take(self, in_reply_to: str, timeout: float) -> tuple[AclMessage, int] | None:
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                for i, (msg, n) in enumerate(self._items):
                    if msg.in_reply_to == in_reply_to:
                        del self._items[i]
                        return msg, n
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self._cond.wait(remaining)


def sender_address(payload: bytes) -> str:
    msg = decode_message(payload)
    return msg.sender.addresses[0] if msg.sender.addresses else ""


class PlatformNode:
    """One running platform.  Construct through :func:`start_node`."""

    def __init__(self, config: NodeConfig, transport: Transport):
        self.config = config
        self.transport = transport
        self.address = transport.address
        self.me = AgentIdentifier(f"amm@{config.platform_name}", (self.address,))
        self.host = AgentHost(config.platform_name, self.address)
        self.cache = CodeCache(config.cache_capacity, config.code_cache_path)
        self.registry = ProtocolRegistry()
        self.push = PushTransfer(self.cache)
        self.registry.register_protocol(self.push.descriptor())
        for name in config.pre_transfer_protocols:
            self.registry.register_protocol(
                HandshakeProtocol(name, MigrationStep.PRE_TRANSFER).descriptor())
        for name in config.post_transfer_protocols:
            self.registry.register_protocol(
                HandshakeProtocol(name, MigrationStep.POST_TRANSFER).descriptor())
        self.events = EventLog(config.event_log_path)
        self.amm = AgentMobilityManager(self.me, self.host, self.registry, self,
                                        self.events, config.step_timeout_seconds,
                                        config.max_sessions)
        self.discovery = DiscoveryClient(self.me, self._exchange_once,
                                         DiscoveryCache(config.discovery_ttl_seconds),
                                         new_session_id)
        self._mailboxes: dict[str, _Mailbox] = {}
        self._mb_lock = threading.Lock()
        self._running: set[str] = set()
        self._run_lock = threading.Lock()
        self._executor = ThreadPoolExecutor(max_workers=16, thread_name_prefix=f"node-{config.platform_name}")
        self._stopped = threading.Event()
        self.host.resume_listeners.append(self._on_resume)
        self._thread = threading.Thread(target=self._dispatch_loop,
                                        name=f"dispatch-{config.platform_name}", daemon=True)

    # -- messenger surface used by the AMM

    def send(self, msg: AclMessage, label: str | None) -> int:
        if not msg.receiver.addresses:
            raise TransportError(f"no address for {msg.receiver.name}")
        env = Envelope(msg.receiver.addresses[0], self.address, encode_message(msg), label)
        return self.transport.send(env)

    def open_mailbox(self, conversation_id: str) -> None:
        with self._mb_lock:
            self._mailboxes.setdefault(conversation_id, _Mailbox())

    def close_mailbox(self, conversation_id: str) -> None:
        with self._mb_lock:
            self._mailboxes.pop(conversation_id, None)

    def wait_reply(self, conversation_id: str, in_reply_to: str,
                   timeout: float) -> tuple[AclMessage, int] | None:
        with self._mb_lock:
            box = self._mailboxes.get(conversation_id)
        return box.take(in_reply_to, timeout) if box else None

    def _exchange_once(self, address: str, msg: AclMessage) -> AclMessage:
        self.open_mailbox(msg.conversation_id)
        try:
            self.send(msg, "discovery")
            got = self.wait_reply(msg.conversation_id, msg.reply_with,
                                  self.config.step_timeout_seconds)
        finally:
            self.close_mailbox(msg.conversation_id)
        if got is None:
            raise Timeout(f"no reply from {address}")
        return got[0]

    # -- dispatcher

    def start(self) -> PlatformNode:
        self._thread.start()
        return self

    def _dispatch_loop(self) -> None:
        last_reap = time.monotonic()
        while not self._stopped.is_set():
            try:
                env = self.transport.receive(timeout=0.1)
            except Closed:
                return
            if time.monotonic() - last_reap > 1.0:
                last_reap = time.monotonic()
                self._send_all(self.amm.expire_sessions())
            if env is None:
                continue
            try:
                msg = decode_message(env.payload)
            except AclError as exc:
                logger.warning("%s: undecodable message from %s: %s", self.address, env.from_, exc)
                continue
            try:
                self._dispatch(msg, len(env.payload) + 4)
            except Exception:
                logger.exception("%s: error while handling %s", self.address, msg.protocol)

    def _dispatch(self, msg: AclMessage, nbytes: int) -> None:
        if msg.performative not in (Performative.REQUEST, Performative.PROPOSE):
            with self._mb_lock:
                box = self._mailboxes.get(msg.conversation_id)
            if box is None:
                logger.info("%s: dropping late %s in %s", self.address, msg.performative.value,
                            msg.conversation_id)
            else:
                box.put(msg, nbytes)
            return
        if msg.receiver.local_name != "amm":
            self._send_all([make_reply(msg, Performative.FAILURE, error_content("unknown-receiver"))])
            return
        if msg.protocol == CONTROL_PROTOCOL:
            self._executor.submit(self._serve_control, msg)
            return
        if self.transport.faults.trip(self.amm.step_label(msg), "receive"):
            replies = self.amm.reject_request(msg, "injected-fault")
        else:
            replies = self.amm.handle(msg)
        self._send_all(replies)

    def _send_all(self, messages: list[AclMessage]) -> None:
        for m in messages:
            try:
                self.send(m, self.amm.step_label(m))
            except TransportError as exc:
                logger.warning("%s: could not send %s to %s: %s", self.address,
                               m.performative.value, m.receiver.name, exc)

    # -- programmatic API

    def create_agent(self, local_name: str, program: ToyProgram | bytes,
                     data: dict[str, str] | None = None) -> str:
        if isinstance(program, bytes):
            program = ToyProgram.parse(program)
        return self.host.create_agent(local_name, program, data).name

    def list_agents(self) -> list[tuple[str, Lifecycle]]:
        return self.host.list_agents()

    def migrate(self, name: str, destination: str, kind: str = "move",
                transfer: tuple[str, ...] = (PUSH_TRANSFER_PROTOCOL,),
                pre_transfer: tuple[str, ...] = (), post_transfer: tuple[str, ...] = (),
                resume_at: int | None = None) -> MigrationResult:
        return self.amm.initiate_migration(name, destination, kind, transfer, pre_transfer,
                                           post_transfer, resume_at=resume_at)

    def step_agent(self, name: str) -> tuple[RuntimeEvent, MigrationResult | None]:
        """One runtime step; a hop instruction triggers the migration it asks for."""
        event = self.host.step_runtime(name)
        result = None
        if event.kind == "wants-migration":
            result = self._hop(name, event.destination)
        return event, result

    def _hop(self, name: str, destination: str) -> MigrationResult:
        pc = self.host.agent(name).program_counter
        result = None
        for _ in range(self.config.hop_retries + 1):
            result = self.migrate(name, destination, "move", resume_at=pc + 1)
            if result.ok:
                break
            logger.warning("%s: hop of %s to %s failed at %s: %s", self.address, name,
                           destination, result.step, result.reason)
        return result

    def run_agent(self, name: str, max_steps: int = 10_000) -> list[RuntimeEvent]:
        """Step until the agent stops or leaves; at most one runner per agent."""
        with self._run_lock:
            if name in self._running:
                return []
            self._running.add(name)
        events = []
        try:
            for _ in range(max_steps):
                if not self.host.hosts(name) or self.host.lifecycle(name) is not Lifecycle.ACTIVE:
                    break
                event, result = self.step_agent(name)
                events.append(event)
                if event.kind != "incremented":
                    break
        finally:
            with self._run_lock:
                self._running.discard(name)
        return events

    def _on_resume(self, name: str) -> None:
        if self.config.autorun and not self._stopped.is_set():
            with self._run_lock:
                if name in self._running:
                    return
            self._executor.submit(self.run_agent, name)

    def query_protocols(self, address: str, bypass_cache: bool = False) -> SupportedProtocols:
        return self.discovery.query_remote_protocols(
            address, "bypass-cache" if bypass_cache else "use-cache")

    def counters(self):
        return self.transport.counters.snapshot()

    def cache_cids(self) -> list[str]:
        return self.cache.cids()

    def shutdown(self) -> None:
        if self._stopped.is_set():
            return
        self._stopped.set()
        self.transport.close()
        if self._thread.is_alive() and self._thread is not threading.current_thread():
            self._thread.join(timeout=2)
        self._executor.shutdown(wait=False, cancel_futures=True)

    def wait_closed(self, timeout: float | None = None) -> bool:
        return self._stopped.wait(timeout)

    # -- control ontology

    def _serve_control(self, msg: AclMessage) -> None:
        try:
            payload = self._control(msg.content)
            reply = make_reply(msg, Performative.INFORM,
                               Content(ContentKind.RESULT, msg.content.name, payload))
        except (HostError, OntologyError, TransportError, RemoteFailure, ValueError) as exc:
            reply = make_reply(msg, Performative.FAILURE,
                               error_content(f"{type(exc).__name__}: {exc}"))
        except Exception as exc:
            logger.exception("control request failed")
            reply = make_reply(msg, Performative.FAILURE, error_content(f"internal: {exc}"))
        try:
            self.send(reply, None)
        except TransportError as exc:
            logger.warning("cannot answer control client: %s", exc)
        if msg.content.name == "shutdown":
            self.shutdown()

    def _control(self, content: Content) -> dict[str, Any]:
        p = content.payload
        name = content.name
        if name == "list-agents":
            return {"agents": [f"{n} {state.value}" for n, state in self.list_agents()]}
        if name == "create-agent":
            code = base64.b64decode(p["program"], validate=True)
            data = dict(kv.split("=", 1) for kv in p.get("data", []))
            return {"name": self.create_agent(p["name"], code, data)}
        if name == "step-agent":
            event, result = self.step_agent(p["name"])
            out = {"event": event.kind}
            if event.key is not None:
                out.update(key=event.key, value=str(event.value))
            if event.destination is not None:
                out["destination"] = event.destination
            if result is not None:
                out.update(_result_payload(result))
            return out
        if name == "migrate":
            result = self.migrate(p["name"], p["destination"], p.get("kind", "move"),
                                  tuple(p.get("transfer", [PUSH_TRANSFER_PROTOCOL])),
                                  tuple(p.get("pre-transfer", [])),
                                  tuple(p.get("post-transfer", [])))
            return _result_payload(result)
        if name == "query-protocols":
            sp = self.query_protocols(p["address"], p.get("policy") == "bypass-cache")
            return sp.to_frame()
        if name == "cache-list":
            return {"cids": self.cache_cids()}
        if name == "counters":
            return {"peers": [
                f"peer={peer} messages_sent={c.messages_sent} bytes_sent={c.bytes_sent} "
                f"messages_received={c.messages_received} bytes_received={c.bytes_received}"
                for peer, c in sorted(self.counters().items())]}
        if name == "shutdown":
            return {"status": "stopping"}
        raise ValueError(f"unknown control action {name!r}")


def _result_payload(result: MigrationResult) -> dict[str, str]:
    out = {"status": result.status.value, "session": result.session_id}
    for key in ("step", "reason", "agent", "warning"):
        value = getattr(result, key)
        if value:
            out[key] = value
    return out


def start_node(config: NodeConfig, bus: MemoryBus | None = None) -> PlatformNode:
    """Bind the transport and start serving.  Raises ``BindError``."""
    faults = FaultInjector(list(config.fault_injections))
    if bus is not None:
        transport = bus.connect(config.listen_address, faults)
    else:
        transport = TcpTransport(config.listen_address, peer_of=sender_address, faults=faults)
    return PlatformNode(config, transport).start()


class ControlClient:
    """Talks to a node's control endpoint from an ephemeral TCP listener."""

    def __init__(self, node_address: str, timeout: float = 60.0):
        self.node_address = node_address
        self.timeout = timeout

    def call(self, action: str, payload: dict[str, Any] | None = None) -> AclMessage:
        transport = TcpTransport("127.0.0.1:0", peer_of=sender_address)
        try:
            conv = new_session_id()
            msg = AclMessage(
                Performative.REQUEST,
                AgentIdentifier(f"control@{conv[:8]}", (transport.address,)),
                AgentIdentifier(f"amm@{self.node_address}", (self.node_address,)),
                conv, CONTROL_PROTOCOL, CONTROL_ONTOLOGY,
                Content(ContentKind.ACTION, action, payload or {}),
                reply_with=f"{conv}-c",
            )
            transport.send(Envelope(self.node_address, transport.address, encode_message(msg)))
            deadline = time.monotonic() + self.timeout
            while (remaining := deadline - time.monotonic()) > 0:
                env = transport.receive(timeout=remaining)
                if env is None:
                    break
                reply = decode_message(env.payload)
                if reply.in_reply_to == msg.reply_with:
                    return reply
            raise Timeout(f"no reply from {self.node_address}")
        finally:
            transport.close()
