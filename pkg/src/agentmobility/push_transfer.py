"""Push transfer: negotiate by code identifier, then ship code/data/state.

Stage 1 proposes ``negotiate{cid}``.  The destination accepts when it needs
the code and rejects (with empty content) when it already holds it; a
rejection that carries error content aborts the transfer.  Stage 2 requests
``transfer{cid, code?, data, state?}`` and expects inform-done or failure.
"""

from __future__ import annotations

import logging
import os
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .acl import AclMessage, Content, ContentKind, Performative, done_content, error_content
from .cid import compute_cid, is_cid
from .ontology import (
    PUSH_TRANSFER_ONTOLOGY,
    NegotiateFrame,
    OntologyError,
    TransferFrame,
    build_action,
    build_predicate,
    parse_content,
)
from .registry import PUSH_TRANSFER_PROTOCOL, MigrationStep, ProtocolDescriptor, StepFailed

logger = logging.getLogger(__name__)

__all__ = [
    "AgentPackage", "CodeCache", "CidMismatch", "CorruptEntry", "PushTransfer",
    "TransferOutcome", "compute_cid",
]

STAGE_NEGOTIATE = "transfer-stage-1"
STAGE_TRANSFER = "transfer-stage-2"


class CidMismatch(ValueError):
    pass


class CorruptEntry(Exception):
    """A persisted cache entry no longer hashes to its identifier."""


@dataclass(frozen=True)
class AgentPackage:
    code: bytes
    data: bytes
    cid: str
    state: bytes | None = None

    @classmethod
    def build(cls, code: bytes, data: bytes, state: bytes | None = None) -> AgentPackage:
        return cls(code=code, data=data, cid=compute_cid(code), state=state)

    def problems(self) -> list[str]:
        out = []
        if compute_cid(self.code) != self.cid:
            out.append("cid does not match code")
        if not self.data:
            out.append("data is empty")
        return out


class CodeCache:
    """LRU map from code identifier to code bytes, optionally backed by a directory.

    With a persistence path every entry lives in ``<path>/<cid>`` and is
    re-hashed whenever it is read back.
    """

    def __init__(self, capacity: int = 128, path: str | os.PathLike | None = None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.path = Path(path) if path is not None else None
        self._entries: OrderedDict[str, bytes | None] = OrderedDict()
        self._lock = threading.RLock()
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)
            files = [f for f in self.path.iterdir() if f.is_file() and is_cid(f.name)]
            for f in sorted(files, key=lambda f: f.stat().st_mtime):
                self._entries[f.name] = None
            self._trim()

    def __contains__(self, cid: object) -> bool:
        return cid in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def cids(self) -> list[str]:
        with self._lock:
            return list(self._entries)

    def lookup(self, cid: str) -> bytes | None:
        with self._lock:
            if cid not in self._entries:
                return None
            code = self._entries[cid]
            if code is None:
                try:
                    code = (self.path / cid).read_bytes()
                except FileNotFoundError:
                    del self._entries[cid]
                    return None
            if compute_cid(code) != cid:
                self._evict(cid)
                raise CorruptEntry(cid)
            self._entries.move_to_end(cid)
            return code

    def store(self, cid: str, code: bytes) -> None:
        if compute_cid(code) != cid:
            raise CidMismatch(cid)
        with self._lock:
            if cid in self._entries:
                self._entries.move_to_end(cid)
                return
            if self.path is not None:
                tmp = self.path / f".{cid}.tmp"
                tmp.write_bytes(code)
                os.replace(tmp, self.path / cid)
                self._entries[cid] = None
            else:
                self._entries[cid] = bytes(code)
            self._trim()

    def _evict(self, cid: str) -> None:
        self._entries.pop(cid, None)
        if self.path is not None:
            try:
                (self.path / cid).unlink()
            except FileNotFoundError:
                pass

    def _trim(self) -> None:
        while len(self._entries) > self.capacity:
            self._evict(next(iter(self._entries)))


@dataclass(frozen=True)
class TransferOutcome:
    ok: bool
    reason: str | None = None
    code_sent: bool = False
    negotiation: Performative | None = None


class PushTransfer:
    """Both roles of the push transfer protocol for one node."""

    name = PUSH_TRANSFER_PROTOCOL

    def __init__(self, cache: CodeCache):
        self.cache = cache

    def descriptor(self) -> ProtocolDescriptor:
        return ProtocolDescriptor(
            name=self.name,
            step=MigrationStep.TRANSFER,
            initiator=self._initiate,
            responder=self.respond,
            stage_of=self.stage_of,
        )

    @staticmethod
    def stage_of(msg: AclMessage) -> str:
        if msg.performative in (Performative.PROPOSE, Performative.ACCEPT_PROPOSAL,
                                Performative.REJECT_PROPOSAL):
            return STAGE_NEGOTIATE
        return STAGE_TRANSFER

    # initiator side

    def run_initiator(self, ctx: Any) -> TransferOutcome:
        pkg: AgentPackage = ctx.package
        reply = ctx.exchange(
            Performative.PROPOSE,
            build_predicate("negotiate", NegotiateFrame(pkg.cid)),
            PUSH_TRANSFER_ONTOLOGY,
            stage=STAGE_NEGOTIATE,
        )
        ctx.note("negotiation", reply.performative.value)
        empty = not reply.content.payload and reply.content.kind is not ContentKind.ERROR
        ctx.note("negotiation-content", "empty" if empty else reply.content.kind.value)
        if reply.performative is Performative.REJECT_PROPOSAL:
            if reply.content.kind is ContentKind.ERROR:
                return TransferOutcome(False, reply.content.reason, negotiation=reply.performative)
            send_code = False
        else:
            send_code = True
        frame = TransferFrame(
            data=pkg.data,
            cid=pkg.cid,
            code=pkg.code if send_code else None,
            state=pkg.state,
        )
        reply2 = ctx.exchange(
            Performative.REQUEST,
            build_action("transfer", frame),
            PUSH_TRANSFER_ONTOLOGY,
            stage=STAGE_TRANSFER,
        )
        if reply2.performative is Performative.INFORM:
            return TransferOutcome(True, code_sent=send_code, negotiation=reply.performative)
        return TransferOutcome(False, reply2.content.reason or "unspecified", send_code, reply.performative)

    def _initiate(self, ctx: Any) -> None:
        outcome = self.run_initiator(ctx)
        if not outcome.ok:
            raise StepFailed(MigrationStep.TRANSFER, self.name, outcome.reason or "unspecified")

    # responder side

    def handle_negotiate(self, frame: NegotiateFrame) -> tuple[Performative, Content]:
        try:
            if frame.cid is not None and self.cache.lookup(frame.cid) is not None:
                return Performative.REJECT_PROPOSAL, Content(ContentKind.DONE)
        except CorruptEntry:
            pass
        except Exception as exc:  # cache I/O trouble
            logger.exception("negotiate failed")
            return Performative.REJECT_PROPOSAL, error_content(f"internal: {exc}")
        return Performative.ACCEPT_PROPOSAL, Content(ContentKind.DONE)

    def handle_transfer(self, frame: TransferFrame, session: Any) -> tuple[Performative, Content]:
        negotiated = session.protocol_state.get(self.name, {}).get("cid")
        if frame.code is not None:
            if compute_cid(frame.code) != frame.cid:
                return Performative.FAILURE, error_content("cid-mismatch")
            code = frame.code
        else:
            try:
                code = self.cache.lookup(frame.cid) if frame.cid else None
            except CorruptEntry:
                code = None
            if code is None:
                return Performative.FAILURE, error_content("unknown-cid")
        if negotiated is not None and negotiated != frame.cid:
            return Performative.FAILURE, error_content("cid-mismatch")
        pkg = AgentPackage(code=code, data=frame.data, cid=frame.cid, state=frame.state)
        if pkg.problems():
            return Performative.FAILURE, error_content("validation: " + "; ".join(pkg.problems()))
        if frame.code is not None:
            self.cache.store(frame.cid, frame.code)
        session.staged_package = pkg
        return Performative.INFORM, done_content("transfer")

    def respond(self, session: Any, msg: AclMessage) -> tuple[Performative, Content]:
        state = session.protocol_state.setdefault(self.name, {})
        try:
            parsed = parse_content(msg.content, PUSH_TRANSFER_ONTOLOGY)
        except OntologyError as exc:
            if msg.performative is Performative.PROPOSE:
                return Performative.REJECT_PROPOSAL, error_content(f"validation: {exc}")
            return Performative.FAILURE, error_content(f"validation: {exc}")
        if msg.performative is Performative.PROPOSE and parsed.name == "negotiate":
            state["negotiated"] = True
            state["cid"] = parsed.value.cid
            return self.handle_negotiate(parsed.value)
        if msg.performative is Performative.REQUEST and parsed.name == "transfer":
            if not state.get("negotiated"):
                return Performative.FAILURE, error_content("protocol-violation: transfer before negotiate")
            return self.handle_transfer(parsed.value, session)
        return Performative.FAILURE, error_content(f"protocol-violation: unexpected {msg.performative.value}")
