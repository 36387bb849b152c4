import itertools

import pytest

from agentmobility.acl import Performative as P
from agentmobility.interaction import (
    ConversationState,
    Direction,
    Pattern,
    Phase,
    ProtocolViolation,
    Role,
    advance,
    legal_next,
    pattern_for,
)

S, R = Direction.SENT, Direction.RECEIVED

# Complete conversations as seen by the initiator, written out by hand.
INITIATOR_TRACES = {
    Pattern.REQUEST: [
        ((S, P.REQUEST), (R, P.AGREE), (R, P.INFORM)),
        ((S, P.REQUEST), (R, P.AGREE), (R, P.FAILURE)),
        ((S, P.REQUEST), (R, P.REFUSE)),
    ],
    Pattern.REQUEST_SIMPLIFIED: [
        ((S, P.REQUEST), (R, P.INFORM)),
        ((S, P.REQUEST), (R, P.FAILURE)),
    ],
    Pattern.PROPOSE: [
        ((S, P.PROPOSE), (R, P.ACCEPT_PROPOSAL)),
        ((S, P.PROPOSE), (R, P.REJECT_PROPOSAL)),
    ],
}

FINAL_PHASE = {
    P.INFORM: Phase.TERMINAL_OK,
    P.ACCEPT_PROPOSAL: Phase.TERMINAL_OK,
    P.FAILURE: Phase.TERMINAL_FAILED,
    P.REFUSE: Phase.TERMINAL_REFUSED,
    P.REJECT_PROPOSAL: Phase.TERMINAL_REFUSED,
}


def flip(trace):
    return tuple((R if d is S else S, p) for d, p in trace)


def oracle_prefixes(pattern, role):
    traces = INITIATOR_TRACES[pattern]
    if role is Role.RESPONDER:
        traces = [flip(t) for t in traces]
    return {t[:n] for t in traces for n in range(len(t) + 1)}


def fsm_accepts(pattern, role, seq):
    state = ConversationState(pattern, role)
    try:
        for d, p in seq:
            state = advance(state, d, p)
    except ProtocolViolation:
        return False
    return True


SYMBOLS = [(d, p) for d in Direction for p in P]


def disagreements(pattern, role, max_len=4):
    legal = oracle_prefixes(pattern, role)
    out = []
    for n in range(max_len + 1):
        for seq in itertools.product(SYMBOLS, repeat=n):
            if fsm_accepts(pattern, role, seq) != (seq in legal):
                out.append(seq)
    return out


@pytest.mark.parametrize("role", list(Role))
@pytest.mark.parametrize("pattern", list(Pattern))
def test_exhaustive_against_oracle(pattern, role):
    assert disagreements(pattern, role) == []


@pytest.mark.parametrize("pattern", list(Pattern))
def test_complete_traces_end_terminal(pattern):
    for trace in INITIATOR_TRACES[pattern]:
        state = ConversationState(pattern, Role.INITIATOR)
        for d, p in trace:
            state = advance(state, d, p)
        assert state.terminal
        assert state.phase is FINAL_PHASE[trace[-1][1]]
        assert legal_next(state) == set()


def test_request_then_agree_awaits_result():
    st = advance(ConversationState(Pattern.REQUEST, Role.INITIATOR), S, P.REQUEST)
    st = advance(st, R, P.AGREE)
    assert legal_next(st) == {(R, P.INFORM), (R, P.FAILURE)}


def test_inform_before_agree_is_violation():
    st = advance(ConversationState(Pattern.REQUEST, Role.INITIATOR), S, P.REQUEST)
    with pytest.raises(ProtocolViolation):
        advance(st, R, P.INFORM)


def test_accept_after_reject_is_violation():
    st = advance(ConversationState(Pattern.PROPOSE, Role.RESPONDER), R, P.PROPOSE)
    st = advance(st, S, P.REJECT_PROPOSAL)
    assert st.phase is Phase.TERMINAL_REFUSED
    with pytest.raises(ProtocolViolation):
        advance(st, S, P.ACCEPT_PROPOSAL)


def test_pattern_for():
    assert pattern_for(P.PROPOSE) is Pattern.PROPOSE
    assert pattern_for(P.REQUEST) is Pattern.REQUEST_SIMPLIFIED
    assert pattern_for(P.REQUEST, main=True) is Pattern.REQUEST
