import base64

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentmobility.acl import AgentIdentifier, Content, ContentKind
from agentmobility.cid import compute_cid, is_cid
from agentmobility.ontology import (
    MIGRATION_ONTOLOGY,
    PUSH_TRANSFER_ONTOLOGY,
    Action,
    DomainMismatch,
    MobileAgentDescription,
    MobileAgentProfile,
    NegotiateFrame,
    Predicate,
    SupportedProtocols,
    TransferFrame,
    UnknownFrame,
    UnknownOntology,
    ValidationFailed,
    build_action,
    build_predicate,
    build_result,
    parse_content,
    registry_names,
    validate_frame,
)
from conftest import GOLDEN

BOB = AgentIdentifier("bob@A", ("127.0.0.1:9001",))
PROFILE = MobileAgentProfile("agentmobility", "toy-itinerary-v1")


def test_registry_is_complete():
    names = registry_names()
    assert names["actions"] == {"move", "clone", "register", "power-up",
                                "get-supported-protocols", "transfer"}
    assert names["predicates"] == {"negotiate", "supported-protocols"}
    assert {"agent-identifier", "mobile-agent-profile", "mobile-agent-description",
            "supported-protocols", "push-transfer-protocol-negotiate",
            "push-transfer-protocol-transfer"} <= names["frames"]


def test_cid_of_golden_code_matches_external_digest():
    code = (GOLDEN / "itinerary.toy").read_bytes()
    assert compute_cid(code) == (GOLDEN / "itinerary.cid").read_text().strip()


def test_cid_of_empty_input():
    assert compute_cid(b"") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert is_cid(compute_cid(b"x"))
    assert not is_cid("E3" + "0" * 62)


def test_move_round_trip():
    mad = MobileAgentDescription(BOB, PROFILE, ("push-transfer-protocol-v1",),
                                 agent_version="1", pre_transfer=("hello-v1",))
    parsed = parse_content(build_action("move", mad), MIGRATION_ONTOLOGY)
    assert parsed == Action("move", mad)


def test_mad_without_transfer_list():
    frame = MobileAgentDescription(BOB, PROFILE, ("p",)).to_frame()
    del frame["transfer"]
    with pytest.raises(ValidationFailed) as info:
        parse_content(Content(ContentKind.ACTION, "move", frame), MIGRATION_ONTOLOGY)
    assert "transfer: mandatory parameter missing" in info.value.violations


def test_empty_transfer_list_is_rejected():
    with pytest.raises(DomainMismatch):
        build_action("clone", MobileAgentDescription(BOB, PROFILE, ()))


def test_duplicate_protocol_names():
    frame = SupportedProtocols(("p", "p")).to_frame()
    assert "transfer: duplicate entries" in validate_frame(MIGRATION_ONTOLOGY, "supported-protocols", frame)


def test_register_takes_agent_identifier():
    content = build_action("register", BOB)
    assert parse_content(content, MIGRATION_ONTOLOGY) == Action("register", BOB)
    with pytest.raises(DomainMismatch):
        build_action("register", PROFILE)


def test_bad_agent_name_in_register():
    with pytest.raises(DomainMismatch):
        build_action("register", {"name": "nobody"})


def test_get_supported_protocols_has_no_argument():
    content = build_action("get-supported-protocols")
    assert content.payload == {}
    assert parse_content(content, MIGRATION_ONTOLOGY) == Action("get-supported-protocols", None)


def test_supported_protocols_result_parses_as_predicate():
    sp = SupportedProtocols(("push-transfer-protocol-v1",), post_transfer=("bye-v1",))
    content = build_result("supported-protocols", sp)
    assert content.kind is ContentKind.RESULT
    assert parse_content(content, MIGRATION_ONTOLOGY) == Predicate("supported-protocols", sp)


def test_negotiate_cid_optional():
    assert build_predicate("negotiate", NegotiateFrame()).payload == {}
    cid = compute_cid(b"code")
    content = build_predicate("negotiate", NegotiateFrame(cid))
    assert parse_content(content, PUSH_TRANSFER_ONTOLOGY) == Predicate("negotiate", NegotiateFrame(cid))


def test_negotiate_rejects_malformed_cid():
    with pytest.raises(DomainMismatch):
        build_predicate("negotiate", {"cid": "abc"})


@settings(max_examples=200, deadline=None)
@given(st.binary(min_size=1, max_size=64), st.none() | st.binary(max_size=64),
       st.none() | st.binary(max_size=32))
def test_transfer_frame_round_trip(data, code, state):
    frame = TransferFrame(data, compute_cid(code) if code is not None else None, code, state)
    parsed = parse_content(build_action("transfer", frame), PUSH_TRANSFER_ONTOLOGY)
    assert parsed == Action("transfer", frame)


def test_transfer_requires_data():
    violations = validate_frame(PUSH_TRANSFER_ONTOLOGY, "push-transfer-protocol-transfer", {})
    assert violations == ["data: mandatory parameter missing"]


def test_transfer_code_without_cid():
    frame = {"code": base64.b64encode(b"x").decode(), "data": "eA=="}
    assert "cid: mandatory when code is present" in validate_frame(
        PUSH_TRANSFER_ONTOLOGY, "push-transfer-protocol-transfer", frame)


def test_non_canonical_base64():
    frame = {"data": "eA"}
    problems = validate_frame(PUSH_TRANSFER_ONTOLOGY, "push-transfer-protocol-transfer", frame)
    assert problems and "base64" in problems[0]


def test_unknown_parameter():
    problems = validate_frame(MIGRATION_ONTOLOGY, "mobile-agent-profile",
                              {"system": "s", "language": "l", "colour": "red"})
    assert problems == ["colour: unknown parameter"]


def test_wrong_ontology_for_action():
    with pytest.raises(UnknownFrame):
        parse_content(build_action("register", BOB), PUSH_TRANSFER_ONTOLOGY)
    with pytest.raises(UnknownOntology):
        parse_content(build_action("register", BOB), "weather")
    with pytest.raises(UnknownFrame):
        build_action("teleport", BOB)


def test_other_content_passes_through():
    done = Content(ContentKind.DONE, "transfer")
    assert parse_content(done, PUSH_TRANSFER_ONTOLOGY) is done
