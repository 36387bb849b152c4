"""ACL message model and its canonical wire codec.

Messages are encoded as compact UTF-8 JSON objects whose fields appear in a
fixed order.  Decoding is strict: an input is accepted only if re-encoding the
decoded message reproduces it byte for byte, so every message has exactly one
valid encoding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping


class Performative(str, Enum):
    REQUEST = "request"
    AGREE = "agree"
    REFUSE = "refuse"
    INFORM = "inform"
    FAILURE = "failure"
    PROPOSE = "propose"
    ACCEPT_PROPOSAL = "accept-proposal"
    REJECT_PROPOSAL = "reject-proposal"


class ContentKind(str, Enum):
    ACTION = "action"
    PREDICATE = "predicate"
    DONE = "done"
    RESULT = "result"
    ERROR = "error"


class AclError(Exception):
    """Base class for codec errors."""


class InvalidMessage(AclError):
    """Raised by the encoder when a message breaks an invariant."""


class MalformedEncoding(AclError):
    """Input bytes are not a canonical message encoding."""


class UnknownPerformative(MalformedEncoding):
    pass


class InvariantViolation(MalformedEncoding):
    """Input parsed fine but describes an invalid message."""


@dataclass(frozen=True)
class AgentIdentifier:
    name: str
    addresses: tuple[str, ...] = ()

    @property
    def local_name(self) -> str:
        return self.name.split("@", 1)[0]

    @property
    def platform(self) -> str:
        return self.name.split("@", 1)[1]

    def problems(self) -> list[str]:
        out = []
        if not isinstance(self.name, str):
            return ["name: not a string"]
        parts = self.name.split("@")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            out.append(f"name: {self.name!r} is not of the form local@platform")
        for a in self.addresses:
            if not isinstance(a, str) or not a:
                out.append("addresses: entries must be non-empty strings")
                break
        return out

    def to_frame(self) -> dict[str, Any]:
        return {"name": self.name, "addresses": list(self.addresses)}

    @classmethod
    def from_frame(cls, frame: Mapping[str, Any]) -> AgentIdentifier:
        return cls(frame["name"], tuple(frame.get("addresses", ())))


@dataclass(frozen=True)
class Content:
    kind: ContentKind
    name: str | None = None
    payload: dict[str, Any] = field(default_factory=dict)

    @property
    def reason(self) -> str | None:
        r = self.payload.get("reason")
        return r if isinstance(r, str) else None


@dataclass(frozen=True)
class AclMessage:
    performative: Performative
    sender: AgentIdentifier
    receiver: AgentIdentifier
    conversation_id: str
    protocol: str
    ontology: str
    content: Content
    reply_with: str | None = None
    in_reply_to: str | None = None


def done_content(action: str | None = None) -> Content:
    return Content(ContentKind.DONE, action)


def error_content(reason: str) -> Content:
    return Content(ContentKind.ERROR, None, {"reason": reason})


def _frame_problems(frame: Any, where: str) -> list[str]:
    if not isinstance(frame, dict):
        return [f"{where}: frame must be an object"]
    out = []
    for key, value in frame.items():
        path = f"{where}.{key}"
        if not isinstance(key, str) or not key:
            out.append(f"{where}: parameter names must be non-empty strings")
        elif isinstance(value, str):
            continue
        elif isinstance(value, list):
            if not all(isinstance(v, str) for v in value):
                out.append(f"{path}: lists may only hold strings")
        elif isinstance(value, dict):
            out.extend(_frame_problems(value, path))
        else:
            out.append(f"{path}: unsupported value type {type(value).__name__}")
    return out


def message_problems(msg: AclMessage) -> list[str]:
    out: list[str] = []
    if not isinstance(msg.performative, Performative):
        out.append("performative: not a Performative")
    for role in ("sender", "receiver"):
        aid = getattr(msg, role)
        if not isinstance(aid, AgentIdentifier):
            out.append(f"{role}: not an AgentIdentifier")
        else:
            out.extend(f"{role}.{p}" for p in aid.problems())
    if not isinstance(msg.conversation_id, str) or not msg.conversation_id:
        out.append("conversation-id: must be non-empty")
    for name in ("protocol", "ontology"):
        if not isinstance(getattr(msg, name), str):
            out.append(f"{name}: must be a string")
    for name in ("reply_with", "in_reply_to"):
        v = getattr(msg, name)
        if v is not None and not isinstance(v, str):
            out.append(f"{name}: must be a string when present")
    c = msg.content
    if not isinstance(c, Content) or not isinstance(c.kind, ContentKind):
        out.append("content: not a Content value")
        return out
    if c.kind in (ContentKind.ACTION, ContentKind.PREDICATE) and not c.name:
        out.append(f"content: {c.kind.value} content needs a name")
    if c.name is not None and not isinstance(c.name, str):
        out.append("content.name: must be a string")
    out.extend(_frame_problems(c.payload, "content.payload"))
    if c.kind is ContentKind.ERROR and not c.reason:
        out.append("content: error content needs a non-empty reason")
    return out


def _aid_obj(aid: AgentIdentifier) -> dict[str, Any]:
    return {"name": aid.name, "addresses": list(aid.addresses)}


def _to_obj(msg: AclMessage) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "performative": msg.performative.value,
        "sender": _aid_obj(msg.sender),
        "receiver": _aid_obj(msg.receiver),
        "conversation-id": msg.conversation_id,
        "protocol": msg.protocol,
        "ontology": msg.ontology,
    }
    if msg.reply_with is not None:
        obj["reply-with"] = msg.reply_with
    if msg.in_reply_to is not None:
        obj["in-reply-to"] = msg.in_reply_to
    content: dict[str, Any] = {"kind": msg.content.kind.value}
    if msg.content.name is not None:
        content["name"] = msg.content.name
    content["payload"] = msg.content.payload
    obj["content"] = content
    return obj


def _dump(obj: Any) -> bytes:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def encode_message(msg: AclMessage) -> bytes:
    problems = message_problems(msg)
    if problems:
        raise InvalidMessage("; ".join(problems))
    try:
        return _dump(_to_obj(msg))
    except UnicodeEncodeError as exc:
        raise InvalidMessage(f"text is not encodable as UTF-8: {exc}") from None


def _no_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in pairs:
        if k in out:
            raise MalformedEncoding(f"duplicate key {k!r}")
        out[k] = v
    return out


def _reject_constant(token: str) -> Any:
    raise MalformedEncoding(f"non-finite number {token}")


def _aid_from_obj(obj: Any, where: str) -> AgentIdentifier:
    if not isinstance(obj, dict) or set(obj) != {"name", "addresses"}:
        raise MalformedEncoding(f"{where}: expected name and addresses")
    if not isinstance(obj["name"], str) or not isinstance(obj["addresses"], list):
        raise MalformedEncoding(f"{where}: bad field types")
    return AgentIdentifier(obj["name"], tuple(obj["addresses"]))


def decode_message(data: bytes) -> AclMessage:
    try:
        text = bytes(data).decode("utf-8")
        obj = json.loads(text, object_pairs_hook=_no_duplicates, parse_constant=_reject_constant)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedEncoding(str(exc)) from None
    if not isinstance(obj, dict):
        raise MalformedEncoding("top level must be an object")
    required = ("performative", "sender", "receiver", "conversation-id", "protocol", "ontology", "content")
    missing = [k for k in required if k not in obj]
    if missing:
        raise MalformedEncoding(f"missing fields: {', '.join(missing)}")
    try:
        performative = Performative(obj["performative"])
    except ValueError:
        raise UnknownPerformative(f"unknown performative {obj['performative']!r}") from None
    content_obj = obj["content"]
    if not isinstance(content_obj, dict) or "kind" not in content_obj or "payload" not in content_obj:
        raise MalformedEncoding("content: expected kind and payload")
    try:
        kind = ContentKind(content_obj["kind"])
    except ValueError:
        raise MalformedEncoding(f"unknown content kind {content_obj['kind']!r}") from None
    msg = AclMessage(
        performative=performative,
        sender=_aid_from_obj(obj["sender"], "sender"),
        receiver=_aid_from_obj(obj["receiver"], "receiver"),
        conversation_id=obj["conversation-id"],
        protocol=obj["protocol"],
        ontology=obj["ontology"],
        reply_with=obj.get("reply-with"),
        in_reply_to=obj.get("in-reply-to"),
        content=Content(kind, content_obj.get("name"), content_obj["payload"]),
    )
    problems = message_problems(msg)
    if problems:
        raise InvariantViolation("; ".join(problems))
    if _dump(_to_obj(msg)) != bytes(data):
        raise MalformedEncoding("input is not in canonical form")
    return msg


def make_reply(original: AclMessage, performative: Performative, content: Content,
               reply_with: str | None = None) -> AclMessage:
    """Answer ``original``: endpoints swapped, conversation metadata copied."""
    return AclMessage(
        performative=performative,
        sender=original.receiver,
        receiver=original.sender,
        conversation_id=original.conversation_id,
        protocol=original.protocol,
        ontology=original.ontology,
        content=content,
        reply_with=reply_with,
        in_reply_to=original.reply_with,
    )
