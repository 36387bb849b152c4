"""Per-node registry of open-step protocols, plus supported-protocols discovery."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable

from .acl import AclMessage, AgentIdentifier, Content, ContentKind, Performative, done_content, error_content
from .ontology import (
    MIGRATION_ONTOLOGY,
    MobileAgentDescription,
    Predicate,
    SupportedProtocols,
    ValidationFailed,
    build_action,
    parse_content,
)

PUSH_TRANSFER_PROTOCOL = "push-transfer-protocol-v1"
REGISTRATION_PROTOCOL = "registration-protocol-v1"
POWER_UP_PROTOCOL = "power-up-protocol-v1"
MAIN_PROTOCOL = "main-migration-protocol-v1"
DISCOVERY_PROTOCOL = "supported-protocols-protocol-v1"


class MigrationStep(str, Enum):
    PRE_TRANSFER = "pre-transfer"
    TRANSFER = "transfer"
    POST_TRANSFER = "post-transfer"
    REGISTRATION = "registration"
    POWER_UP = "power-up"


OPEN_STEPS = (MigrationStep.PRE_TRANSFER, MigrationStep.TRANSFER, MigrationStep.POST_TRANSFER)


class RegistryError(Exception):
    pass


class DuplicateName(RegistryError):
    pass


class NotMigrationCapable(RegistryError):
    pass


class StepFailed(Exception):
    """A migration step did not complete; ``step`` is a step name or ``"main"``."""

    def __init__(self, step: MigrationStep | str, protocol: str, reason: str):
        self.step = step.value if isinstance(step, MigrationStep) else step
        self.protocol = protocol
        self.reason = reason
        super().__init__(f"{self.step} ({protocol}): {reason}")


class RemoteFailure(Exception):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


@dataclass(frozen=True)
class ProtocolDescriptor:
    """An open-step protocol known under a well-known name.

    ``initiator(ctx)`` runs the protocol from the migrating side and raises
    ``StepFailed`` on failure.  ``responder(session, msg)`` answers one
    incoming message with a ``(performative, content)`` pair.  ``stage_of(msg)``
    optionally labels a message with a finer-grained stage name, used for
    logging and fault addressing.
    """

    name: str
    step: MigrationStep
    initiator: Callable[[Any], None]
    responder: Callable[[Any, AclMessage], tuple[Performative, Any]]
    stage_of: Callable[[AclMessage], str] | None = None


class ProtocolRegistry:
    def __init__(self) -> None:
        self._by_name: dict[str, ProtocolDescriptor] = {}
        self._lock = threading.Lock()

    def register_protocol(self, descriptor: ProtocolDescriptor) -> None:
        if descriptor.step not in OPEN_STEPS:
            raise RegistryError(f"{descriptor.step.value} is not an open step")
        with self._lock:
            if descriptor.name in self._by_name:
                raise DuplicateName(descriptor.name)
            self._by_name[descriptor.name] = descriptor

    def get(self, name: str) -> ProtocolDescriptor | None:
        return self._by_name.get(name)

    def names(self, step: MigrationStep) -> tuple[str, ...]:
        return tuple(n for n, d in self._by_name.items() if d.step is step)

    @property
    def migration_capable(self) -> bool:
        return bool(self.names(MigrationStep.TRANSFER))

    def supported_protocols(self) -> SupportedProtocols:
        transfer = self.names(MigrationStep.TRANSFER)
        if not transfer:
            raise NotMigrationCapable("no transfer protocol registered")
        return SupportedProtocols(
            transfer=transfer,
            pre_transfer=self.names(MigrationStep.PRE_TRANSFER),
            post_transfer=self.names(MigrationStep.POST_TRANSFER),
        )

    def check_request_supported(self, mad: MobileAgentDescription) -> list[str]:
        """Names requested by ``mad`` that this node cannot run at the requested step."""
        missing = []
        for step, names in (
            (MigrationStep.PRE_TRANSFER, mad.pre_transfer),
            (MigrationStep.TRANSFER, mad.transfer),
            (MigrationStep.POST_TRANSFER, mad.post_transfer),
        ):
            for name in names:
                d = self._by_name.get(name)
                if d is None or d.step is not step:
                    missing.append(name)
        return missing


@dataclass
class DiscoveryCacheEntry:
    platform_address: str
    protocols: SupportedProtocols
    fetched_at: float
    ttl: float


class DiscoveryCache:
    def __init__(self, ttl: float = 300.0, clock: Callable[[], float] = time.monotonic):
        self.ttl = ttl
        self._clock = clock
        self._entries: dict[str, DiscoveryCacheEntry] = {}
        self._lock = threading.Lock()

    def get(self, address: str) -> SupportedProtocols | None:
        with self._lock:
            entry = self._entries.get(address)
            if entry is None:
                return None
            if self._clock() - entry.fetched_at >= entry.ttl:
                del self._entries[address]
                return None
            return entry.protocols

    def put(self, address: str, protocols: SupportedProtocols) -> None:
        if self.ttl <= 0:
            return
        with self._lock:
            self._entries[address] = DiscoveryCacheEntry(address, protocols, self._clock(), self.ttl)


class DiscoveryClient:
    """Asks remote platforms which protocols they accept, caching the answers.

    ``exchange(address, message)`` must deliver the request and return the
    single reply (a simplified request: no agree/refuse).
    """

    def __init__(self, me: AgentIdentifier,
                 exchange: Callable[[str, AclMessage], AclMessage],
                 cache: DiscoveryCache,
                 new_conversation_id: Callable[[], str]):
        self.me = me
        self._exchange = exchange
        self.cache = cache
        self._new_id = new_conversation_id

    def query_remote_protocols(self, address: str, policy: str = "use-cache") -> SupportedProtocols:
        if policy not in ("use-cache", "bypass-cache"):
            raise ValueError(f"unknown cache policy {policy!r}")
        if policy == "use-cache":
            hit = self.cache.get(address)
            if hit is not None:
                return hit
        conversation_id = self._new_id()
        request = AclMessage(
            performative=Performative.REQUEST,
            sender=self.me,
            receiver=AgentIdentifier(f"amm@{address}", (address,)),
            conversation_id=conversation_id,
            protocol=DISCOVERY_PROTOCOL,
            ontology=MIGRATION_ONTOLOGY,
            content=build_action("get-supported-protocols"),
            reply_with=f"{conversation_id}-q",
        )
        reply = self._exchange(address, request)
        if reply.performative is Performative.FAILURE:
            raise RemoteFailure(reply.content.reason or "unspecified")
        if reply.performative is not Performative.INFORM or reply.content.kind is not ContentKind.RESULT:
            raise ValidationFailed([f"unexpected {reply.performative.value} reply"])
        parsed = parse_content(reply.content, MIGRATION_ONTOLOGY)
        if not isinstance(parsed, Predicate) or parsed.name != "supported-protocols":
            raise ValidationFailed(["reply does not carry supported-protocols"])
        self.cache.put(address, parsed.value)
        return parsed.value


class HandshakeProtocol:
    """Minimal open-step protocol: one simplified request answered by inform-done.

    Useful as a placeholder pre-/post-transfer protocol; the responder can be
    told to fail to exercise abort paths.
    """

    def __init__(self, name: str, step: MigrationStep, fail_with: str | None = None):
        self.name = name
        self.step = step
        self.fail_with = fail_with

    def descriptor(self) -> ProtocolDescriptor:
        return ProtocolDescriptor(self.name, self.step, self.initiate, self.respond)

    def initiate(self, ctx: Any) -> None:
        content = Content(ContentKind.ACTION, "handshake", {"step": self.step.value})
        reply = ctx.exchange(Performative.REQUEST, content, self.name)
        if reply.performative is not Performative.INFORM:
            raise StepFailed(self.step, self.name, reply.content.reason or "unspecified")

    def respond(self, session: Any, msg: AclMessage) -> tuple[Performative, Content]:
        if self.fail_with:
            return Performative.FAILURE, error_content(self.fail_with)
        return Performative.INFORM, done_content("handshake")
