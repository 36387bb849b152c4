import re

import pytest

from agentmobility.acl import AclMessage, AgentIdentifier, Content, ContentKind, Performative
from agentmobility.amm import AGENT_PROFILE, InvalidDescription, SessionStatus, parse_event_line
from agentmobility.host import AgentNotActive, AgentNotFound, Lifecycle, ToyProgram
from agentmobility.ontology import MIGRATION_ONTOLOGY, MobileAgentDescription, build_action
from agentmobility.registry import (
    MAIN_PROTOCOL,
    POWER_UP_PROTOCOL,
    PUSH_TRANSFER_PROTOCOL,
    REGISTRATION_PROTOCOL,
)
from agentmobility.transport import FaultSpec
from conftest import ADDR_A, ADDR_B, ADDR_C

PROGRAM = ToyProgram.of("inc c", "stop")


def conversations(bus, session_id):
    """Protocol of each opening message of a session, in delivery order."""
    out = []
    for env in bus.log:
        text = env.payload.decode()
        if session_id in text and ('"performative":"request"' in text or '"performative":"propose"' in text):
            protocol = re.search(r'"protocol":"([^"]+)"', text).group(1)
            if not out or out[-1] != protocol:
                out.append(protocol)
    return out


def main_request(conversation_id="c" * 32, transfer=(PUSH_TRANSFER_PROTOCOL,), ontology=MIGRATION_ONTOLOGY):
    mad = MobileAgentDescription(AgentIdentifier("bob@A", (ADDR_A,)), AGENT_PROFILE, transfer)
    return AclMessage(Performative.REQUEST, AgentIdentifier("amm@A", (ADDR_A,)),
                      AgentIdentifier(f"amm@{ADDR_B}", (ADDR_B,)), conversation_id,
                      MAIN_PROTOCOL, ontology, build_action("move", mad), reply_with="m")


def test_move_success(pair):
    a, b = pair
    a.create_agent("bob", PROGRAM, {"c": "5"})
    result = a.migrate("bob@A", ADDR_B)
    assert result.ok and result.agent == "bob@A"
    assert re.fullmatch(r"[0-9a-f]{32}", result.session_id)
    assert a.list_agents() == []
    assert b.list_agents() == [("bob@A", Lifecycle.ACTIVE)]
    assert b.host.data_map("bob@A") == {"c": "5"}


def test_exactly_three_sub_conversations(bus, pair):
    a, b = pair
    a.create_agent("bob", PROGRAM)
    result = a.migrate("bob@A", ADDR_B)
    assert conversations(bus, result.session_id) == [
        MAIN_PROTOCOL, PUSH_TRANSFER_PROTOCOL, REGISTRATION_PROTOCOL, POWER_UP_PROTOCOL]


def test_session_id_on_every_message(bus, pair):
    a, b = pair
    a.create_agent("bob", PROGRAM)
    result = a.migrate("bob@A", ADDR_B)
    ids = {re.search(rb'"conversation-id":"([^"]+)"', e.payload).group(1) for e in bus.log}
    assert ids == {result.session_id.encode()}


def test_pre_and_post_protocols_run_in_listed_order(bus, make_node):
    protocols = dict(pre_transfer_protocols=("hello-v1", "auth-v1"), post_transfer_protocols=("bye-v1",))
    a = make_node("A", ADDR_A, **protocols)
    make_node("B", ADDR_B, **protocols)
    a.create_agent("bob", PROGRAM)
    result = a.migrate("bob@A", ADDR_B, pre_transfer=("auth-v1", "hello-v1"), post_transfer=("bye-v1",))
    assert result.ok
    assert conversations(bus, result.session_id) == [
        MAIN_PROTOCOL, "auth-v1", "hello-v1", PUSH_TRANSFER_PROTOCOL, "bye-v1",
        REGISTRATION_PROTOCOL, POWER_UP_PROTOCOL]


def test_unsupported_transfer_is_refused(pair):
    a, b = pair
    a.create_agent("bob", PROGRAM, {"c": "1"})
    before = a.host.agent("bob@A").package
    result = a.migrate("bob@A", ADDR_B, transfer=("pull-transfer-v9",))
    assert result.status is SessionStatus.REFUSED
    assert result.reason == "unsupported-protocols: pull-transfer-v9"
    assert a.host.lifecycle("bob@A") is Lifecycle.ACTIVE
    assert a.host.agent("bob@A").package == before


def test_transfer_failure_skips_later_steps(bus, make_node):
    a = make_node("A", ADDR_A)
    make_node("B", ADDR_B, fault_injections=[FaultSpec("transfer-stage-2", "receive", 1)])
    a.create_agent("bob", PROGRAM)
    result = a.migrate("bob@A", ADDR_B)
    assert (result.status, result.step) == (SessionStatus.FAILED, "transfer")
    assert conversations(bus, result.session_id) == [MAIN_PROTOCOL, PUSH_TRANSFER_PROTOCOL]
    events = [(e.event, e.step) for e in a.events.events(result.session_id)]
    assert ("step-failed", "transfer") in events
    assert not any(step in ("registration", "power-up") for _, step in events)


def test_clone_names_use_smallest_free_index(pair):
    a, b = pair
    a.create_agent("bob", PROGRAM)
    first = a.migrate("bob@A", ADDR_B, kind="clone")
    second = a.migrate("bob@A", ADDR_B, kind="clone")
    assert (first.agent, second.agent) == ("bob-clone-1@B", "bob-clone-2@B")
    assert a.host.lifecycle("bob@A") is Lifecycle.ACTIVE
    assert [n for n, _ in b.list_agents()] == ["bob-clone-1@B", "bob-clone-2@B"]


def test_clone_name_collision(pair):
    a, b = pair
    a.create_agent("bob", PROGRAM)
    b.create_agent("bob-clone-1", PROGRAM)
    result = a.migrate("bob@A", ADDR_B, kind="clone")
    assert (result.step, result.reason) == ("registration", "name-collision")
    assert a.host.lifecycle("bob@A") is Lifecycle.ACTIVE


def test_move_name_collision(pair):
    a, b = pair
    a.create_agent("bob", PROGRAM)
    b.host.install_agent(a.host.agent("bob@A").package, AgentIdentifier("bob@A"))
    result = a.migrate("bob@A", ADDR_B)
    assert (result.step, result.reason) == ("registration", "name-collision")


def test_preconditions(pair):
    a, _ = pair
    with pytest.raises(AgentNotFound):
        a.migrate("ghost@A", ADDR_B)
    a.create_agent("bob", PROGRAM)
    with pytest.raises(InvalidDescription):
        a.migrate("bob@A", ADDR_B, transfer=())
    a.host.suspend_agent("bob@A")
    with pytest.raises(AgentNotActive):
        a.migrate("bob@A", ADDR_B)


def test_unreachable_destination(pair):
    a, _ = pair
    a.create_agent("bob", PROGRAM)
    result = a.migrate("bob@A", "127.0.0.1:1")
    assert (result.status, result.step) == (SessionStatus.FAILED, "main")
    assert result.reason.startswith("transport")
    assert a.host.lifecycle("bob@A") is Lifecycle.ACTIVE


def test_resume_exception_cleans_up(pair):
    a, b = pair

    def explode(name):
        raise RuntimeError("boom")

    b.host.resume_listeners.append(explode)
    a.create_agent("bob", PROGRAM)
    result = a.migrate("bob@A", ADDR_B)
    assert result.step == "power-up" and result.reason.startswith("resume-error")
    assert b.list_agents() == []
    assert a.host.lifecycle("bob@A") is Lifecycle.ACTIVE


def test_event_log_lines_parse(pair):
    a, _ = pair
    a.create_agent("bob", PROGRAM)
    result = a.migrate("bob@A", ADDR_B)
    parsed = [parse_event_line(line) for line in a.events.lines()]
    assert {p["session"] for p in parsed} == {result.session_id}
    final = parsed[-1]
    assert final["event"] == "finalized" and final["status"] == "succeeded"
    total = a.counters()[ADDR_B]
    assert int(final["bytes_sent"]) == total.bytes_sent
    assert int(final["bytes_received"]) == total.bytes_received


# responder side, driven directly


def test_agree_then_duplicate_refused(pair):
    _, b = pair
    first = b.amm.handle(main_request())
    assert [m.performative for m in first] == [Performative.AGREE]
    assert first[0].sender == b.me
    again = b.amm.handle(main_request())
    assert again[0].performative is Performative.REFUSE
    assert again[0].content.reason.startswith("invalid-description")


def test_missing_transfer_list_refused(pair):
    _, b = pair
    msg = main_request()
    payload = dict(msg.content.payload)
    del payload["transfer"]
    bad = AclMessage(msg.performative, msg.sender, msg.receiver, msg.conversation_id, msg.protocol,
                     msg.ontology, Content(ContentKind.ACTION, "move", payload), reply_with="m")
    reply = b.amm.handle(bad)[0]
    assert reply.performative is Performative.REFUSE
    assert reply.content.reason.startswith("invalid-description")


def test_overloaded(make_node):
    b = make_node("B", ADDR_B, max_sessions=1)
    assert b.amm.handle(main_request("1" * 32))[0].performative is Performative.AGREE
    reply = b.amm.handle(main_request("2" * 32))[0]
    assert (reply.performative, reply.content.reason) == (Performative.REFUSE, "overloaded")


def step_request(protocol, action, aid, conversation_id="c" * 32):
    return AclMessage(Performative.REQUEST, AgentIdentifier("amm@A", (ADDR_A,)),
                      AgentIdentifier("amm@B", (ADDR_B,)), conversation_id, protocol,
                      MIGRATION_ONTOLOGY, build_action(action, aid), reply_with="s")


def test_out_of_order_registration_aborts(pair):
    _, b = pair
    b.amm.handle(main_request())
    # transfer is skipped: registration arrives out of order
    replies = b.amm.handle(step_request(REGISTRATION_PROTOCOL, "register", AgentIdentifier("bob@A")))
    assert replies[0].performative is Performative.FAILURE
    assert replies[1].performative is Performative.FAILURE  # Main closed
    assert replies[1].in_reply_to == "m"


def test_register_reaches_handler_without_package(pair):
    _, b = pair
    b.amm.handle(main_request())
    session = b.amm.session("c" * 32)
    session.cursor = 0  # pretend the transfer step ran but staged nothing
    perf, content = b.amm.handle_register(
        session, step_request(REGISTRATION_PROTOCOL, "register", AgentIdentifier("bob@A")))
    assert (perf, content.reason) == (Performative.FAILURE, "no-staged-package")


def test_power_up_unregistered(pair):
    _, b = pair
    b.amm.handle(main_request())
    session = b.amm.session("c" * 32)
    perf, content = b.amm.handle_power_up(
        session, step_request(POWER_UP_PROTOCOL, "power-up", AgentIdentifier("bob@A")))
    assert content.reason == "not-registered"


def test_unknown_session(pair):
    _, b = pair
    reply = b.amm.handle(step_request(POWER_UP_PROTOCOL, "power-up", AgentIdentifier("bob@A")))[0]
    assert (reply.performative, reply.content.reason) == (Performative.FAILURE, "no-session")


def test_idle_responder_session_expires(make_node):
    b = make_node("B", ADDR_B)
    b.amm.session_timeout = 0.0
    b.amm.handle(main_request())
    replies = b.amm.expire_sessions()
    assert replies and replies[0].content.reason == "session-timeout"
    assert b.amm.session("c" * 32).status is SessionStatus.FAILED


def test_discovery_between_nodes(make_node):
    a = make_node("A", ADDR_A)
    make_node("C", ADDR_C, post_transfer_protocols=("bye-v1",))
    sp = a.query_protocols(ADDR_C)
    assert sp.transfer == (PUSH_TRANSFER_PROTOCOL,)
    assert sp.post_transfer == ("bye-v1",)
