"""Agent Mobility Manager: drives migrations as initiator and serves them as responder.

A migration is one session.  The initiator sends ``request{move|clone}`` with
the mobile agent description; after ``agree`` it runs, in order, every listed
pre-transfer, transfer and post-transfer protocol, then registration and
power-up.  The destination closes the Main conversation with ``inform`` once
power-up succeeds, or ``failure`` as soon as any step fails.  Every message of
a session carries the session id as its conversation id.
"""

from __future__ import annotations

import itertools
import logging
import secrets
import shlex
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Protocol

from .acl import (
    AclMessage,
    AgentIdentifier,
    Content,
    ContentKind,
    Performative,
    done_content,
    error_content,
    make_reply,
)
from .host import AgentHost, HostError, IllegalTransition, Lifecycle, NameCollision
from .interaction import (
    ConversationState,
    Direction,
    Pattern,
    ProtocolViolation,
    Role,
    advance,
    pattern_for,
)
from .ontology import (
    MIGRATION_ONTOLOGY,
    Action,
    MobileAgentDescription,
    MobileAgentProfile,
    OntologyError,
    build_action,
    build_result,
    parse_content,
)
from .push_transfer import AgentPackage
from .registry import (
    DISCOVERY_PROTOCOL,
    MAIN_PROTOCOL,
    OPEN_STEPS,
    POWER_UP_PROTOCOL,
    PUSH_TRANSFER_PROTOCOL,
    REGISTRATION_PROTOCOL,
    MigrationStep,
    NotMigrationCapable,
    ProtocolRegistry,
    StepFailed,
)
from .transport import TransportError

logger = logging.getLogger(__name__)

STEP_ORDER = tuple(MigrationStep)
AGENT_PROFILE = MobileAgentProfile(system="agentmobility", language="toy-itinerary-v1")


class SessionStatus(str, Enum):
    NEGOTIATING = "negotiating"
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    REFUSED = "refused"
    FAILED = "failed"


class InvalidDescription(ValueError):
    pass


def new_session_id() -> str:
    return secrets.token_hex(16)


@dataclass
class MigrationSession:
    session_id: str
    kind: str
    agent: AgentIdentifier
    destination_address: str
    role: Role
    description: MobileAgentDescription | None = None
    current_step: MigrationStep | None = None
    staged_package: AgentPackage | None = None
    registered_name: AgentIdentifier | None = None
    status: SessionStatus = SessionStatus.NEGOTIATING
    failure_reason: str | None = None
    byte_counters: dict[str, dict[str, int]] = field(default_factory=dict)
    package: AgentPackage | None = None
    peer: AgentIdentifier | None = None
    notes: dict[str, str] = field(default_factory=dict)
    protocol_state: dict[str, dict[str, Any]] = field(default_factory=dict)
    main_request: AclMessage | None = None
    main_state: ConversationState | None = None
    expected: list[tuple[MigrationStep, str]] = field(default_factory=list)
    cursor: int = -1
    powered: bool = False
    last_activity: float = field(default_factory=time.monotonic)

    def __post_init__(self) -> None:
        self._seq = itertools.count(1)

    def next_tag(self, protocol: str) -> str:
        return f"{protocol}#{next(self._seq)}"

    def count(self, label: str, sent: int = 0, received: int = 0) -> None:
        c = self.byte_counters.setdefault(label, {"sent": 0, "received": 0})
        c["sent"] += sent
        c["received"] += received

    def bytes_for(self, label: str) -> tuple[int, int]:
        c = self.byte_counters.get(label, {"sent": 0, "received": 0})
        return c["sent"], c["received"]

    @property
    def live(self) -> bool:
        return self.status in (SessionStatus.NEGOTIATING, SessionStatus.RUNNING)


@dataclass(frozen=True)
class MigrationResult:
    status: SessionStatus
    session_id: str
    step: str | None = None
    reason: str | None = None
    agent: str | None = None
    warning: str | None = None

    @property
    def ok(self) -> bool:
        return self.status is SessionStatus.SUCCEEDED


# -- event log ---------------------------------------------------------------

EVENT_FIELDS = ("event", "role", "session", "step", "protocol", "bytes_sent", "bytes_received")


@dataclass(frozen=True)
class Event:
    event: str
    role: str
    session: str
    step: str
    protocol: str = "-"
    bytes_sent: int = 0
    bytes_received: int = 0
    detail: tuple[tuple[str, str], ...] = ()

    def line(self) -> str:
        parts = [f"{k}={shlex.quote(str(getattr(self, k)))}" for k in EVENT_FIELDS]
        parts.extend(f"{k}={shlex.quote(v)}" for k, v in self.detail)
        return " ".join(parts)


def parse_event_line(line: str) -> dict[str, str]:
    return dict(part.split("=", 1) for part in shlex.split(line))


class EventLog:
    """Structured per-session events; optionally appended to a file."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._events: list[Event] = []
        self._lock = threading.Lock()

    def emit(self, event: str, session: MigrationSession, step: str, protocol: str = "-",
             bytes_sent: int = 0, bytes_received: int = 0, **detail: str) -> Event:
        ev = Event(event, session.role.value, session.session_id, step, protocol,
                   bytes_sent, bytes_received, tuple((k, str(v)) for k, v in detail.items()))
        with self._lock:
            self._events.append(ev)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(ev.line() + "\n")
        logger.info("%s", ev.line())
        return ev

    def events(self, session_id: str | None = None) -> list[Event]:
        with self._lock:
            return [e for e in self._events if session_id is None or e.session == session_id]

    def lines(self) -> list[str]:
        return [e.line() for e in self.events()]


# -- initiator plumbing --------------------------------------------------------

class Network(Protocol):
    """What the manager needs from its node."""

    def send(self, msg: AclMessage, label: str | None) -> int: ...

    def open_mailbox(self, conversation_id: str) -> None: ...

    def close_mailbox(self, conversation_id: str) -> None: ...

    def wait_reply(self, conversation_id: str, in_reply_to: str,
                   timeout: float) -> tuple[AclMessage, int] | None: ...


class StepContext:
    """Handed to a protocol's initiator hook for one step of one session."""

    def __init__(self, amm: AgentMobilityManager, session: MigrationSession,
                 step: MigrationStep, protocol: str):
        self.amm = amm
        self.session = session
        self.step = step
        self.protocol = protocol

    @property
    def package(self) -> AgentPackage:
        return self.session.package

    def exchange(self, performative: Performative, content: Content, ontology: str,
                 stage: str | None = None) -> AclMessage:
        return self.amm._exchange(self.session, self.step, self.protocol,
                                  performative, content, ontology, stage)

    def note(self, key: str, value: str) -> None:
        self.session.notes[f"{self.protocol}:{key}"] = value


class AgentMobilityManager:
    def __init__(self, me: AgentIdentifier, host: AgentHost, registry: ProtocolRegistry,
                 net: Network, events: EventLog | None = None, step_timeout: float = 10.0,
                 max_sessions: int = 64, session_timeout: float | None = None,
                 clock: Callable[[], float] = time.monotonic):
        self.me = me
        self.host = host
        self.registry = registry
        self.net = net
        self.events = events or EventLog()
        self.step_timeout = step_timeout
        self.max_sessions = max_sessions
        self.session_timeout = session_timeout if session_timeout is not None else 3 * step_timeout
        self._clock = clock
        self._sessions: dict[str, MigrationSession] = {}
        self._initiated: dict[str, MigrationSession] = {}
        self._clone_names: set[str] = set()
        self._lock = threading.RLock()

    # ---------------------------------------------------------------- initiator

    def initiate_migration(self, agent_name: str, destination: str, kind: str = "move",
                           transfer: tuple[str, ...] | list[str] = (PUSH_TRANSFER_PROTOCOL,),
                           pre_transfer: tuple[str, ...] | list[str] = (),
                           post_transfer: tuple[str, ...] | list[str] = (),
                           agent_version: str | None = None,
                           resume_at: int | None = None) -> MigrationResult:
        """Move or clone a locally hosted agent to the platform at ``destination``.

        Raises ``AgentNotFound``/``AgentNotActive`` before anything is sent;
        every later problem is reported through the returned result, with
        the origin agent back in Active state unless a move succeeded.
        """
        if kind not in ("move", "clone"):
            raise ValueError(f"kind must be move or clone, not {kind!r}")
        if not transfer:
            raise InvalidDescription("at least one transfer protocol is required")
        self.host.begin_transit(agent_name)
        agent = self.host.agent(agent_name)
        session = MigrationSession(new_session_id(), kind, agent.id, destination, Role.INITIATOR)
        session.peer = AgentIdentifier(f"amm@{destination}", (destination,))
        session.description = MobileAgentDescription(
            name=agent.id,
            agent_profile=AGENT_PROFILE,
            transfer=tuple(transfer),
            agent_version=agent_version if agent_version is not None else agent.version,
            pre_transfer=tuple(pre_transfer),
            post_transfer=tuple(post_transfer),
        )
        with self._lock:
            self._initiated[session.session_id] = session
        self.net.open_mailbox(session.session_id)
        try:
            session.package = self.host.snapshot_agent(agent_name, resume_at)
            result = self._run(session)
        except Exception as exc:
            logger.exception("migration %s crashed", session.session_id)
            result = self._result(session, SessionStatus.FAILED, "main", f"internal: {exc}")
        finally:
            self.net.close_mailbox(session.session_id)
        self.finalize(session, result)
        return result

    def _result(self, session: MigrationSession, status: SessionStatus, step: str | None = None,
                reason: str | None = None, warning: str | None = None) -> MigrationResult:
        session.status = status
        session.failure_reason = reason
        name = session.registered_name.name if session.registered_name else None
        return MigrationResult(status, session.session_id, step, reason, name, warning)

    def _exchange(self, session: MigrationSession, step: MigrationStep | str, protocol: str,
                  performative: Performative, content: Content, ontology: str,
                  stage: str | None = None) -> AclMessage:
        step_name = step.value if isinstance(step, MigrationStep) else step
        tag = session.next_tag(protocol)
        msg = AclMessage(performative, self.me, session.peer, session.session_id, protocol,
                         ontology, content, reply_with=tag)
        conv = ConversationState(pattern_for(performative), Role.INITIATOR, session.session_id)
        conv = advance(conv, Direction.SENT, performative)
        label = stage or step_name
        try:
            sent = self.net.send(msg, label)
        except TransportError as exc:
            raise StepFailed(step_name, protocol, f"transport: {exc}") from None
        session.count(step_name, sent=sent)
        if stage:
            session.count(stage, sent=sent)
        got = self.net.wait_reply(session.session_id, tag, self.step_timeout)
        if got is None:
            raise StepFailed(step_name, protocol, "timeout")
        reply, received = got
        session.count(step_name, received=received)
        if stage:
            session.count(stage, received=received)
        try:
            advance(conv, Direction.RECEIVED, reply.performative)
        except ProtocolViolation as exc:
            raise StepFailed(step_name, protocol, f"protocol-violation: {exc}") from None
        return reply

    def _run(self, session: MigrationSession) -> MigrationResult:
        sid = session.session_id
        main_tag = f"{MAIN_PROTOCOL}#0"
        request = AclMessage(
            Performative.REQUEST, self.me, session.peer, sid, MAIN_PROTOCOL, MIGRATION_ONTOLOGY,
            build_action(session.kind, session.description), reply_with=main_tag)
        state = advance(ConversationState(Pattern.REQUEST, Role.INITIATOR, sid),
                        Direction.SENT, Performative.REQUEST)
        self.events.emit("step-started", session, "main", MAIN_PROTOCOL)
        try:
            sent = self.net.send(request, "main")
        except TransportError as exc:
            self.events.emit("step-failed", session, "main", MAIN_PROTOCOL, reason=str(exc))
            return self._result(session, SessionStatus.FAILED, "main", f"transport: {exc}")
        session.count("main", sent=sent)
        got = self.net.wait_reply(sid, main_tag, self.step_timeout)
        if got is None:
            self.events.emit("step-failed", session, "main", MAIN_PROTOCOL, reason="timeout")
            return self._result(session, SessionStatus.FAILED, "main", "timeout")
        reply, received = got
        session.count("main", received=received)
        try:
            state = advance(state, Direction.RECEIVED, reply.performative)
        except ProtocolViolation as exc:
            return self._result(session, SessionStatus.FAILED, "main", f"protocol-violation: {exc}")
        if reply.performative is Performative.REFUSE:
            reason = reply.content.reason or "refused"
            self.events.emit("step-failed", session, "main", MAIN_PROTOCOL, reason=reason)
            return self._result(session, SessionStatus.REFUSED, "main", reason)
        session.peer = reply.sender
        session.status = SessionStatus.RUNNING
        self.events.emit("step-done", session, "main", MAIN_PROTOCOL, *session.bytes_for("main"))

        mad = session.description
        try:
            for step, names in zip(OPEN_STEPS, (mad.pre_transfer, mad.transfer, mad.post_transfer)):
                for name in names:
                    descriptor = self.registry.get(name)
                    if descriptor is None or descriptor.step is not step:
                        raise StepFailed(step, name, "not-supported-locally")
                    self._run_step(session, step, name, descriptor.initiator)
            self._run_step(session, MigrationStep.REGISTRATION, REGISTRATION_PROTOCOL,
                           self._register_initiator)
            self._run_step(session, MigrationStep.POWER_UP, POWER_UP_PROTOCOL,
                           self._power_up_initiator)
        except StepFailed as exc:
            return self._result(session, SessionStatus.FAILED, exc.step, exc.reason)

        got = self.net.wait_reply(sid, main_tag, self.step_timeout)
        if got is None:
            logger.warning("session %s: no final Main reply; agent was powered up at destination", sid)
            return self._result(session, SessionStatus.SUCCEEDED,
                                warning="final inform not received")
        final, received = got
        session.count("main", received=received)
        try:
            advance(state, Direction.RECEIVED, final.performative)
        except ProtocolViolation as exc:
            return self._result(session, SessionStatus.FAILED, "main", f"protocol-violation: {exc}")
        if final.performative is Performative.FAILURE:
            return self._result(session, SessionStatus.FAILED, "main", final.content.reason)
        return self._result(session, SessionStatus.SUCCEEDED)

    def _run_step(self, session: MigrationSession, step: MigrationStep, protocol: str,
                  hook: Callable[[StepContext], None]) -> None:
        session.current_step = step
        before = session.bytes_for(step.value)
        self.events.emit("step-started", session, step.value, protocol)
        try:
            hook(StepContext(self, session, step, protocol))
        except StepFailed as exc:
            after = session.bytes_for(step.value)
            self.events.emit("step-failed", session, step.value, protocol,
                             after[0] - before[0], after[1] - before[1], reason=exc.reason)
            raise
        after = session.bytes_for(step.value)
        self.events.emit("step-done", session, step.value, protocol,
                         after[0] - before[0], after[1] - before[1])

    def _target_identifier(self, session: MigrationSession) -> AgentIdentifier:
        dest = (session.destination_address,)
        if session.kind == "move":
            return AgentIdentifier(session.agent.name, dest)
        platform = session.peer.platform
        with self._lock:
            for k in itertools.count(1):
                name = f"{session.agent.local_name}-clone-{k}@{platform}"
                if name not in self._clone_names:
                    self._clone_names.add(name)
                    return AgentIdentifier(name, dest)

    def _register_initiator(self, ctx: StepContext) -> None:
        target = self._target_identifier(ctx.session)
        reply = ctx.exchange(Performative.REQUEST, build_action("register", target),
                             MIGRATION_ONTOLOGY)
        if reply.performative is not Performative.INFORM:
            raise StepFailed(ctx.step, ctx.protocol, reply.content.reason or "unspecified")
        ctx.session.registered_name = target

    def _power_up_initiator(self, ctx: StepContext) -> None:
        reply = ctx.exchange(Performative.REQUEST,
                             build_action("power-up", ctx.session.registered_name),
                             MIGRATION_ONTOLOGY)
        if reply.performative is not Performative.INFORM:
            raise StepFailed(ctx.step, ctx.protocol, reply.content.reason or "unspecified")

    def finalize(self, session: MigrationSession, result: MigrationResult) -> None:
        name = session.agent.name
        if result.ok and session.kind == "move":
            self.host.kill_agent(name)
        else:
            self.host.resume_agent(name)
        sent = sum(c["sent"] for k, c in session.byte_counters.items() if "-stage" not in k)
        received = sum(c["received"] for k, c in session.byte_counters.items() if "-stage" not in k)
        detail = {"status": result.status.value}
        if result.step:
            detail["failed_step"] = result.step
        if result.reason:
            detail["reason"] = result.reason
        self.events.emit("finalized", session, "main", MAIN_PROTOCOL, sent, received, **detail)

    def session(self, session_id: str) -> MigrationSession | None:
        with self._lock:
            return self._initiated.get(session_id) or self._sessions.get(session_id)

    # ---------------------------------------------------------------- responder

    def step_label(self, msg: AclMessage) -> str | None:
        """Step (or stage) a message belongs to; used for fault addressing."""
        fixed = {
            MAIN_PROTOCOL: "main",
            DISCOVERY_PROTOCOL: "discovery",
            REGISTRATION_PROTOCOL: MigrationStep.REGISTRATION.value,
            POWER_UP_PROTOCOL: MigrationStep.POWER_UP.value,
        }
        if msg.protocol in fixed:
            return fixed[msg.protocol]
        d = self.registry.get(msg.protocol)
        if d is None:
            return None
        return d.stage_of(msg) if d.stage_of else d.step.value

    def _reply(self, original: AclMessage, performative: Performative,
               content: Content) -> AclMessage:
        return replace(make_reply(original, performative, content), sender=self.me)

    def _negative(self, msg: AclMessage, reason: str) -> AclMessage:
        if msg.performative is Performative.PROPOSE:
            return self._reply(msg, Performative.REJECT_PROPOSAL, error_content(reason))
        if msg.protocol == MAIN_PROTOCOL:
            return self._reply(msg, Performative.REFUSE, error_content(reason))
        return self._reply(msg, Performative.FAILURE, error_content(reason))

    def handle(self, msg: AclMessage) -> list[AclMessage]:
        """Serve one incoming request/propose; returns the messages to send back."""
        if msg.protocol == MAIN_PROTOCOL:
            return self.handle_migration_request(msg)
        if msg.protocol == DISCOVERY_PROTOCOL:
            return [self.handle_discovery(msg)]
        with self._lock:
            session = self._sessions.get(msg.conversation_id)
        if session is None:
            return [self._negative(msg, "no-session")]
        with self._lock:
            return self._handle_step_message(session, msg)

    def reject_request(self, msg: AclMessage, reason: str) -> list[AclMessage]:
        """Answer an incoming request negatively, aborting its session if one exists."""
        if msg.protocol in (MAIN_PROTOCOL, DISCOVERY_PROTOCOL):
            return [self._negative(msg, reason)]
        with self._lock:
            session = self._sessions.get(msg.conversation_id)
            out = [self._negative(msg, reason)]
            if session is not None and session.live:
                out.extend(self._abort(session, reason))
            return out

    def handle_migration_request(self, msg: AclMessage) -> list[AclMessage]:
        try:
            advance(ConversationState(Pattern.REQUEST, Role.RESPONDER), Direction.RECEIVED,
                    msg.performative)
        except ProtocolViolation:
            logger.warning("dropping %s on the Main protocol", msg.performative.value)
            return []
        try:
            if msg.ontology != MIGRATION_ONTOLOGY:
                raise OntologyError(f"unexpected ontology {msg.ontology!r}")
            parsed = parse_content(msg.content, MIGRATION_ONTOLOGY)
            if not isinstance(parsed, Action) or parsed.name not in ("move", "clone"):
                raise OntologyError("expected a move or clone action")
        except OntologyError as exc:
            return [self._negative(msg, f"invalid-description: {exc}")]
        mad: MobileAgentDescription = parsed.value
        with self._lock:
            existing = self._sessions.get(msg.conversation_id)
            if existing is not None and existing.live:
                return [self._negative(msg, "invalid-description: duplicate session id")]
            missing = self.registry.check_request_supported(mad)
            if missing or not self.registry.migration_capable:
                return [self._negative(msg, "unsupported-protocols: " + ", ".join(missing))]
            if sum(s.live for s in self._sessions.values()) >= self.max_sessions:
                return [self._negative(msg, "overloaded")]
            session = MigrationSession(msg.conversation_id, parsed.name, mad.name,
                                       self.me.addresses[0] if self.me.addresses else "",
                                       Role.RESPONDER, description=mad,
                                       status=SessionStatus.RUNNING)
            session.peer = msg.sender
            session.main_request = msg
            session.main_state = advance(
                advance(ConversationState(Pattern.REQUEST, Role.RESPONDER, msg.conversation_id),
                        Direction.RECEIVED, Performative.REQUEST),
                Direction.SENT, Performative.AGREE)
            session.expected = (
                [(MigrationStep.PRE_TRANSFER, p) for p in mad.pre_transfer]
                + [(MigrationStep.TRANSFER, p) for p in mad.transfer]
                + [(MigrationStep.POST_TRANSFER, p) for p in mad.post_transfer]
                + [(MigrationStep.REGISTRATION, REGISTRATION_PROTOCOL),
                   (MigrationStep.POWER_UP, POWER_UP_PROTOCOL)]
            )
            session.last_activity = self._clock()
            self._sessions[session.session_id] = session
        return [self._reply(msg, Performative.AGREE, Content(ContentKind.DONE))]

    def handle_discovery(self, msg: AclMessage) -> AclMessage:
        try:
            parsed = parse_content(msg.content, MIGRATION_ONTOLOGY)
            if not isinstance(parsed, Action) or parsed.name != "get-supported-protocols":
                raise OntologyError("expected get-supported-protocols")
        except OntologyError as exc:
            return self._negative(msg, f"validation: {exc}")
        try:
            supported = self.registry.supported_protocols()
        except NotMigrationCapable:
            return self._negative(msg, "not-migration-capable")
        return self._reply(msg, Performative.INFORM, build_result("supported-protocols", supported))

    def _advance_cursor(self, session: MigrationSession, protocol: str) -> MigrationStep | None:
        if 0 <= session.cursor < len(session.expected) and session.expected[session.cursor][1] == protocol:
            return session.expected[session.cursor][0]
        nxt = session.cursor + 1
        if nxt < len(session.expected) and session.expected[nxt][1] == protocol:
            session.cursor = nxt
            session.current_step = session.expected[nxt][0]
            return session.current_step
        return None

    def _handle_step_message(self, session: MigrationSession, msg: AclMessage) -> list[AclMessage]:
        if not session.live:
            return [self._negative(msg, "session-closed")]
        session.last_activity = self._clock()
        try:
            conv = advance(ConversationState(pattern_for(msg.performative), Role.RESPONDER,
                                             msg.conversation_id),
                           Direction.RECEIVED, msg.performative)
        except ProtocolViolation:
            logger.warning("dropping unsolicited %s in session %s", msg.performative.value,
                           session.session_id)
            return []
        step = self._advance_cursor(session, msg.protocol)
        if step is None:
            reason = f"protocol-violation: {msg.protocol} out of order"
            return [self._negative(msg, reason)] + self._abort(session, reason)
        if msg.protocol == REGISTRATION_PROTOCOL:
            performative, content = self.handle_register(session, msg)
        elif msg.protocol == POWER_UP_PROTOCOL:
            performative, content = self.handle_power_up(session, msg)
        else:
            try:
                performative, content = self.registry.get(msg.protocol).responder(session, msg)
            except Exception as exc:
                logger.exception("responder for %s crashed", msg.protocol)
                performative, content = Performative.FAILURE, error_content(f"internal: {exc}")
                if msg.performative is Performative.PROPOSE:
                    performative = Performative.REJECT_PROPOSAL
        try:
            advance(conv, Direction.SENT, performative)
        except ProtocolViolation as exc:
            reason = f"protocol-violation: {exc}"
            return [self._negative(msg, reason)] + self._abort(session, reason)
        out = [self._reply(msg, performative, content)]
        failed = performative is Performative.FAILURE or (
            performative is Performative.REJECT_PROPOSAL and content.kind is ContentKind.ERROR)
        if failed:
            out.extend(self._abort(session, content.reason or "unspecified"))
        elif msg.protocol == POWER_UP_PROTOCOL:
            out.append(self._close_main(session, Performative.INFORM,
                                        done_content(session.kind)))
            session.status = SessionStatus.SUCCEEDED
            self.events.emit("finalized", session, "main", MAIN_PROTOCOL, status="succeeded")
        return out

    def _close_main(self, session: MigrationSession, performative: Performative,
                    content: Content) -> AclMessage:
        session.main_state = advance(session.main_state, Direction.SENT, performative)
        return self._reply(session.main_request, performative, content)

    def _discard_agent(self, name: str) -> None:
        try:
            self.host.kill_agent(name)
        except IllegalTransition:
            self.host.suspend_agent(name)
            self.host.kill_agent(name)
        except HostError:
            pass

    def _abort(self, session: MigrationSession, reason: str) -> list[AclMessage]:
        """Fail a responder session: undo registration, drop staged state, close Main."""
        if session.registered_name is not None and self.host.hosts(session.registered_name.name):
            self._discard_agent(session.registered_name.name)
        session.staged_package = None
        session.status = SessionStatus.FAILED
        session.failure_reason = reason
        step = session.current_step.value if session.current_step else "main"
        self.events.emit("finalized", session, step, MAIN_PROTOCOL, status="failed", reason=reason)
        return [self._close_main(session, Performative.FAILURE, error_content(reason))]

    def handle_register(self, session: MigrationSession, msg: AclMessage) -> tuple[Performative, Content]:
        try:
            parsed = parse_content(msg.content, MIGRATION_ONTOLOGY)
            if not isinstance(parsed, Action) or parsed.name != "register":
                raise OntologyError("expected a register action")
        except OntologyError as exc:
            return Performative.FAILURE, error_content(f"validation: {exc}")
        aid: AgentIdentifier = parsed.value
        if session.staged_package is None:
            return Performative.FAILURE, error_content("no-staged-package")
        if session.kind == "move" and aid.name != session.agent.name:
            return Performative.FAILURE, error_content("validation: identifier differs from request")
        if self.host.hosts(aid.name):
            return Performative.FAILURE, error_content("name-collision")
        try:
            self.host.install_agent(session.staged_package, aid)
        except NameCollision:
            return Performative.FAILURE, error_content("name-collision")
        except HostError as exc:
            return Performative.FAILURE, error_content(f"rebuild-error: {exc}")
        session.registered_name = aid
        return Performative.INFORM, done_content("register")

    def handle_power_up(self, session: MigrationSession, msg: AclMessage) -> tuple[Performative, Content]:
        try:
            parsed = parse_content(msg.content, MIGRATION_ONTOLOGY)
            if not isinstance(parsed, Action) or parsed.name != "power-up":
                raise OntologyError("expected a power-up action")
        except OntologyError as exc:
            return Performative.FAILURE, error_content(f"validation: {exc}")
        aid: AgentIdentifier = parsed.value
        if session.registered_name is None or aid.name != session.registered_name.name:
            return Performative.FAILURE, error_content("not-registered")
        try:
            self.host.resume_agent(aid.name)
        except Exception as exc:
            return Performative.FAILURE, error_content(f"resume-error: {exc}")
        session.powered = True
        return Performative.INFORM, done_content("power-up")

    def expire_sessions(self) -> list[AclMessage]:
        """Abort responder sessions idle for longer than the session timeout."""
        now = self._clock()
        out: list[AclMessage] = []
        with self._lock:
            for sid, session in list(self._sessions.items()):
                idle = now - session.last_activity
                if session.live and idle > self.session_timeout:
                    out.extend(self._abort(session, "session-timeout"))
                elif not session.live and idle > 10 * self.session_timeout:
                    del self._sessions[sid]
        return out

    def responder_sessions(self) -> list[MigrationSession]:
        with self._lock:
            return list(self._sessions.values())


def lifecycle_of(host: AgentHost, name: str) -> Lifecycle | None:
    return host.lifecycle(name) if host.hosts(name) else None
