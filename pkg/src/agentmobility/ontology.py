"""Frames, actions and predicates of the migration and push-transfer ontologies.

Every frame is declared once in :data:`FRAMES` with its parameters, their
presence (mandatory/optional) and wire type.  :func:`validate_frame` checks a
wire-level payload against that table; the typed dataclasses below convert
between Python values and wire frames (byte-streams travel as base64 text).
"""

from __future__ import annotations

import base64
import binascii
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, NamedTuple

from .acl import AgentIdentifier, Content, ContentKind
from .cid import is_cid

MIGRATION_ONTOLOGY = "migration-ontology"
PUSH_TRANSFER_ONTOLOGY = "push-transfer-protocol-ontology-v1"

MAX_BYTE_STREAM = 64 * 1024 * 1024


class OntologyError(Exception):
    pass


class UnknownOntology(OntologyError):
    pass


class UnknownFrame(OntologyError):
    pass


class DomainMismatch(OntologyError):
    pass


class ValidationFailed(OntologyError):
    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


class ParamType(Enum):
    STRING = "string"
    STRING_SET = "set-of-string"
    BYTE_STREAM = "byte-stream"
    FRAME = "frame"


@dataclass(frozen=True)
class Param:
    name: str
    type: ParamType
    mandatory: bool
    frame: str | None = None
    non_empty: bool = False
    cid: bool = False


def _p(name, type_, mandatory=False, **kw) -> Param:
    return Param(name, type_, mandatory, **kw)


S, SET, BS, FR = ParamType.STRING, ParamType.STRING_SET, ParamType.BYTE_STREAM, ParamType.FRAME

FRAMES: dict[str, dict[str, tuple[Param, ...]]] = {
    MIGRATION_ONTOLOGY: {
        "agent-identifier": (
            _p("name", S, True, non_empty=True),
            _p("addresses", SET),
        ),
        "mobile-agent-profile": (
            _p("system", S, True, non_empty=True),
            _p("language", S, True, non_empty=True),
            _p("os", S),
        ),
        "mobile-agent-description": (
            _p("name", FR, True, frame="agent-identifier"),
            _p("agent-profile", FR, True, frame="mobile-agent-profile"),
            _p("agent-version", S),
            _p("pre-transfer", SET),
            _p("transfer", SET, True, non_empty=True),
            _p("post-transfer", SET),
        ),
        "supported-protocols": (
            _p("pre-transfer", SET),
            _p("transfer", SET, True, non_empty=True),
            _p("post-transfer", SET),
        ),
    },
    PUSH_TRANSFER_ONTOLOGY: {
        "push-transfer-protocol-negotiate": (
            _p("cid", S, cid=True),
        ),
        "push-transfer-protocol-transfer": (
            _p("cid", S, cid=True),
            _p("code", BS),
            _p("data", BS, True, non_empty=True),
            _p("state", BS),
        ),
    },
}

# name -> (ontology, domain frame or None)
ACTIONS: dict[str, tuple[str, str | None]] = {
    "move": (MIGRATION_ONTOLOGY, "mobile-agent-description"),
    "clone": (MIGRATION_ONTOLOGY, "mobile-agent-description"),
    "register": (MIGRATION_ONTOLOGY, "agent-identifier"),
    "power-up": (MIGRATION_ONTOLOGY, "agent-identifier"),
    "get-supported-protocols": (MIGRATION_ONTOLOGY, None),
    "transfer": (PUSH_TRANSFER_ONTOLOGY, "push-transfer-protocol-transfer"),
}

PREDICATES: dict[str, tuple[str, str]] = {
    "negotiate": (PUSH_TRANSFER_ONTOLOGY, "push-transfer-protocol-negotiate"),
    "supported-protocols": (MIGRATION_ONTOLOGY, "supported-protocols"),
}


def registry_names() -> dict[str, set[str]]:
    return {
        "frames": {f for frames in FRAMES.values() for f in frames},
        "actions": set(ACTIONS),
        "predicates": set(PREDICATES),
    }


def _params(ontology: str, frame_name: str) -> tuple[Param, ...]:
    if ontology not in FRAMES:
        raise UnknownOntology(ontology)
    try:
        return FRAMES[ontology][frame_name]
    except KeyError:
        raise UnknownFrame(f"{frame_name!r} is not a frame of {ontology}") from None


def _byte_stream_problem(value: str) -> str | None:
    if len(value) // 4 * 3 > MAX_BYTE_STREAM:
        return "byte-stream exceeds the 64 MiB limit"
    try:
        raw = base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError):
        return "not valid base64"
    if base64.b64encode(raw).decode("ascii") != value:
        return "base64 is not in canonical form"
    return None


def validate_frame(ontology: str, frame_name: str, payload: Any, _prefix: str = "") -> list[str]:
    """Return the list of violations of ``payload`` against a frame (empty means ok)."""
    params = _params(ontology, frame_name)
    if not isinstance(payload, Mapping):
        return [f"{_prefix or frame_name}: payload must be a frame"]
    out: list[str] = []
    known = {p.name for p in params}
    for key in payload:
        if key not in known:
            out.append(f"{_prefix}{key}: unknown parameter")
    for p in params:
        where = f"{_prefix}{p.name}"
        if p.name not in payload:
            if p.mandatory:
                out.append(f"{where}: mandatory parameter missing")
            continue
        value = payload[p.name]
        if p.type in (ParamType.STRING, ParamType.BYTE_STREAM):
            if not isinstance(value, str):
                out.append(f"{where}: expected {p.type.value}")
                continue
            if p.non_empty and not value:
                out.append(f"{where}: must not be empty")
            if p.cid and not is_cid(value):
                out.append(f"{where}: must be 64 lowercase hex characters")
            if p.type is ParamType.BYTE_STREAM:
                problem = _byte_stream_problem(value)
                if problem:
                    out.append(f"{where}: {problem}")
        elif p.type is ParamType.STRING_SET:
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                out.append(f"{where}: expected a list of strings")
                continue
            if p.non_empty and not value:
                out.append(f"{where}: must not be empty")
            if len(set(value)) != len(value):
                out.append(f"{where}: duplicate entries")
        else:
            out.extend(validate_frame(ontology, p.frame, value, f"{where}."))
    if frame_name == "agent-identifier" and isinstance(payload.get("name"), str) and payload["name"]:
        out.extend(f"{_prefix}{v}" for v in AgentIdentifier(payload["name"]).problems())
    if frame_name == "push-transfer-protocol-transfer" and "code" in payload and "cid" not in payload:
        out.append(f"{_prefix}cid: mandatory when code is present")
    return out


def _b64(raw: bytes) -> str:
    return base64.b64encode(raw).decode("ascii")


def _unb64(text: str) -> bytes:
    return base64.b64decode(text, validate=True)


@dataclass(frozen=True)
class MobileAgentProfile:
    system: str
    language: str
    os: str | None = None

    def to_frame(self) -> dict[str, Any]:
        frame = {"system": self.system, "language": self.language}
        if self.os is not None:
            frame["os"] = self.os
        return frame

    @classmethod
    def from_frame(cls, frame: Mapping[str, Any]) -> MobileAgentProfile:
        return cls(frame["system"], frame["language"], frame.get("os"))


@dataclass(frozen=True)
class MobileAgentDescription:
    name: AgentIdentifier
    agent_profile: MobileAgentProfile
    transfer: tuple[str, ...]
    agent_version: str | None = None
    pre_transfer: tuple[str, ...] = ()
    post_transfer: tuple[str, ...] = ()

    def to_frame(self) -> dict[str, Any]:
        frame: dict[str, Any] = {
            "name": self.name.to_frame(),
            "agent-profile": self.agent_profile.to_frame(),
        }
        if self.agent_version is not None:
            frame["agent-version"] = self.agent_version
        if self.pre_transfer:
            frame["pre-transfer"] = list(self.pre_transfer)
        frame["transfer"] = list(self.transfer)
        if self.post_transfer:
            frame["post-transfer"] = list(self.post_transfer)
        return frame

    @classmethod
    def from_frame(cls, frame: Mapping[str, Any]) -> MobileAgentDescription:
        return cls(
            name=AgentIdentifier.from_frame(frame["name"]),
            agent_profile=MobileAgentProfile.from_frame(frame["agent-profile"]),
            transfer=tuple(frame["transfer"]),
            agent_version=frame.get("agent-version"),
            pre_transfer=tuple(frame.get("pre-transfer", ())),
            post_transfer=tuple(frame.get("post-transfer", ())),
        )


@dataclass(frozen=True)
class SupportedProtocols:
    transfer: tuple[str, ...]
    pre_transfer: tuple[str, ...] = ()
    post_transfer: tuple[str, ...] = ()

    def to_frame(self) -> dict[str, Any]:
        frame: dict[str, Any] = {}
        if self.pre_transfer:
            frame["pre-transfer"] = list(self.pre_transfer)
        frame["transfer"] = list(self.transfer)
        if self.post_transfer:
            frame["post-transfer"] = list(self.post_transfer)
        return frame

    @classmethod
    def from_frame(cls, frame: Mapping[str, Any]) -> SupportedProtocols:
        return cls(
            transfer=tuple(frame["transfer"]),
            pre_transfer=tuple(frame.get("pre-transfer", ())),
            post_transfer=tuple(frame.get("post-transfer", ())),
        )


@dataclass(frozen=True)
class NegotiateFrame:
    cid: str | None = None

    def to_frame(self) -> dict[str, Any]:
        return {} if self.cid is None else {"cid": self.cid}

    @classmethod
    def from_frame(cls, frame: Mapping[str, Any]) -> NegotiateFrame:
        return cls(frame.get("cid"))


@dataclass(frozen=True)
class TransferFrame:
    data: bytes
    cid: str | None = None
    code: bytes | None = None
    state: bytes | None = None

    def to_frame(self) -> dict[str, Any]:
        frame: dict[str, Any] = {}
        if self.cid is not None:
            frame["cid"] = self.cid
        if self.code is not None:
            frame["code"] = _b64(self.code)
        frame["data"] = _b64(self.data)
        if self.state is not None:
            frame["state"] = _b64(self.state)
        return frame

    @classmethod
    def from_frame(cls, frame: Mapping[str, Any]) -> TransferFrame:
        return cls(
            data=_unb64(frame["data"]),
            cid=frame.get("cid"),
            code=_unb64(frame["code"]) if "code" in frame else None,
            state=_unb64(frame["state"]) if "state" in frame else None,
        )


DOMAIN_TYPES: dict[str, type] = {
    "agent-identifier": AgentIdentifier,
    "mobile-agent-description": MobileAgentDescription,
    "supported-protocols": SupportedProtocols,
    "push-transfer-protocol-negotiate": NegotiateFrame,
    "push-transfer-protocol-transfer": TransferFrame,
}


class Action(NamedTuple):
    name: str
    value: Any


class Predicate(NamedTuple):
    name: str
    value: Any


def ontology_of(name: str) -> str:
    """Ontology of an action or predicate name."""
    if name in ACTIONS:
        return ACTIONS[name][0]
    if name in PREDICATES:
        return PREDICATES[name][0]
    raise UnknownFrame(name)


def _frame_for(ontology: str, domain: str, payload: Any) -> dict[str, Any]:
    expected = DOMAIN_TYPES[domain]
    if isinstance(payload, expected):
        frame = payload.to_frame()
    elif isinstance(payload, Mapping):
        frame = dict(payload)
    else:
        raise DomainMismatch(f"expected {domain}, got {type(payload).__name__}")
    violations = validate_frame(ontology, domain, frame)
    if violations:
        raise DomainMismatch(f"payload is not a valid {domain}: " + "; ".join(violations))
    return frame


def build_action(name: str, payload: Any = None) -> Content:
    try:
        ontology, domain = ACTIONS[name]
    except KeyError:
        raise UnknownFrame(f"unknown action {name!r}") from None
    if domain is None:
        if payload not in (None, {}):
            raise DomainMismatch(f"{name} takes no argument")
        return Content(ContentKind.ACTION, name, {})
    return Content(ContentKind.ACTION, name, _frame_for(ontology, domain, payload))


def build_predicate(name: str, payload: Any) -> Content:
    try:
        ontology, domain = PREDICATES[name]
    except KeyError:
        raise UnknownFrame(f"unknown predicate {name!r}") from None
    return Content(ContentKind.PREDICATE, name, _frame_for(ontology, domain, payload))


def build_result(name: str, payload: Any) -> Content:
    """Wrap a predicate as the content of an inform-result reply."""
    return Content(ContentKind.RESULT, name, build_predicate(name, payload).payload)


def _typed(domain: str, frame: Mapping[str, Any]) -> Any:
    return DOMAIN_TYPES[domain].from_frame(frame)


def parse_content(content: Content, ontology: str) -> Action | Predicate | Content:
    """Turn builder output back into typed values; other content passes through."""
    if ontology not in FRAMES:
        raise UnknownOntology(ontology)
    if content.kind is ContentKind.ACTION:
        entry = ACTIONS.get(content.name)
        if entry is None or entry[0] != ontology:
            raise UnknownFrame(f"{content.name!r} is not an action of {ontology}")
        domain = entry[1]
        if domain is None:
            if content.payload:
                raise ValidationFailed([f"{content.name}: takes no argument"])
            return Action(content.name, None)
        violations = validate_frame(ontology, domain, content.payload)
        if violations:
            raise ValidationFailed(violations)
        return Action(content.name, _typed(domain, content.payload))
    if content.kind is ContentKind.PREDICATE or (
        content.kind is ContentKind.RESULT and content.name in PREDICATES
    ):
        entry = PREDICATES.get(content.name)
        if entry is None or entry[0] != ontology:
            raise UnknownFrame(f"{content.name!r} is not a predicate of {ontology}")
        violations = validate_frame(ontology, entry[1], content.payload)
        if violations:
            raise ValidationFailed(violations)
        return Predicate(content.name, _typed(entry[1], content.payload))
    return content
