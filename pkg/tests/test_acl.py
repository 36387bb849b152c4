import json

import pytest
from hypothesis import given, settings

from agentmobility.acl import (
    AclMessage,
    AgentIdentifier,
    Content,
    ContentKind,
    InvalidMessage,
    InvariantViolation,
    MalformedEncoding,
    Performative,
    UnknownPerformative,
    decode_message,
    done_content,
    encode_message,
    error_content,
    make_reply,
)
from agentmobility.transport import deframe
from conftest import GOLDEN
from strategies import messages

A = AgentIdentifier("amm@A", ("127.0.0.1:9001",))
B = AgentIdentifier("amm@B", ("127.0.0.1:9002",))


def sample(**kw):
    base = dict(performative=Performative.REQUEST, sender=A, receiver=B, conversation_id="s1",
                protocol="push-transfer-protocol-v1", ontology="push-transfer-protocol-ontology-v1",
                content=done_content(), reply_with="r1")
    base.update(kw)
    return AclMessage(**base)


@settings(max_examples=1000, deadline=None)
@given(messages)
def test_round_trip(msg):
    raw = encode_message(msg)
    assert decode_message(raw) == msg
    assert encode_message(msg) == raw


def test_golden_frame_decodes_to_golden_payload():
    frame = (GOLDEN / "main_request.frame").read_bytes()
    payload = (GOLDEN / "main_request.json").read_bytes()
    body, rest = deframe(frame)
    assert rest == b"" and body == payload
    assert frame[:4] == len(payload).to_bytes(4, "big")
    assert encode_message(decode_message(body)) == payload


def test_field_order_is_fixed():
    raw = encode_message(sample(in_reply_to="x"))
    keys = list(json.loads(raw))
    assert keys == ["performative", "sender", "receiver", "conversation-id", "protocol",
                    "ontology", "reply-with", "in-reply-to", "content"]
    assert b" " not in raw


def test_empty_conversation_id_is_invalid():
    with pytest.raises(InvalidMessage):
        encode_message(sample(conversation_id=""))


def test_error_content_needs_reason():
    with pytest.raises(InvalidMessage):
        encode_message(sample(content=Content(ContentKind.ERROR, None, {})))


def test_action_needs_name():
    with pytest.raises(InvalidMessage):
        encode_message(sample(content=Content(ContentKind.ACTION)))


def test_bad_identifier_is_invalid():
    with pytest.raises(InvalidMessage):
        encode_message(sample(sender=AgentIdentifier("no-at-sign")))


def test_truncated_bytes_are_malformed():
    payload = (GOLDEN / "main_request.json").read_bytes()
    with pytest.raises(MalformedEncoding):
        decode_message(payload[:-5])


def test_unknown_performative():
    payload = (GOLDEN / "main_request.json").read_bytes()
    with pytest.raises(UnknownPerformative):
        decode_message(payload.replace(b'"request"', b'"query"', 1))


def test_non_canonical_whitespace_rejected():
    raw = encode_message(sample())
    with pytest.raises(MalformedEncoding):
        decode_message(raw.replace(b",", b", ", 1))


def test_duplicate_keys_rejected():
    raw = encode_message(sample())
    with pytest.raises(MalformedEncoding):
        decode_message(raw[:-1] + b',"protocol":"x"}')


def test_invariant_violation_on_decode():
    raw = encode_message(sample()).replace(b'"conversation-id":"s1"', b'"conversation-id":""')
    with pytest.raises(InvariantViolation):
        decode_message(raw)


def test_make_reply_swaps_and_copies():
    original = sample()
    reply = make_reply(original, Performative.INFORM, done_content("transfer"))
    assert (reply.sender, reply.receiver) == (B, A)
    assert reply.conversation_id == "s1"
    assert reply.protocol == "push-transfer-protocol-v1"
    assert reply.ontology == original.ontology
    assert reply.in_reply_to == "r1"


def test_make_reply_without_reply_with():
    reply = make_reply(sample(reply_with=None), Performative.FAILURE, error_content("x"))
    assert reply.in_reply_to is None
    assert b"in-reply-to" not in encode_message(reply)
