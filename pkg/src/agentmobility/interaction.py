"""State machines for the interaction patterns used by every migration exchange.

Three patterns are supported:

* ``fipa-request``: request, then agree or refuse; after agree, inform or failure.
* ``fipa-request-simplified``: request, then inform or failure (no agree/refuse).
* ``fipa-propose``: propose, then accept-proposal or reject-proposal.

States are immutable; :func:`advance` returns the successor or raises
:class:`ProtocolViolation`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from .acl import Performative


class Pattern(str, Enum):
    REQUEST = "fipa-request"
    REQUEST_SIMPLIFIED = "fipa-request-simplified"
    PROPOSE = "fipa-propose"


class Role(str, Enum):
    INITIATOR = "initiator"
    RESPONDER = "responder"


class Direction(str, Enum):
    SENT = "sent"
    RECEIVED = "received"


class Phase(str, Enum):
    START = "start"
    AWAITING_AGREEMENT = "awaiting-agreement"
    AGREED = "agreed"
    AWAITING_RESULT = "awaiting-result"
    TERMINAL_OK = "terminal-ok"
    TERMINAL_REFUSED = "terminal-refused"
    TERMINAL_FAILED = "terminal-failed"

    @property
    def terminal(self) -> bool:
        return self in (Phase.TERMINAL_OK, Phase.TERMINAL_REFUSED, Phase.TERMINAL_FAILED)


P = Performative

# (pattern, phase) -> {performative spoken: next phase}; who speaks is fixed by
# the performative: request/propose come from the initiator, everything else
# from the responder.
_TABLE: dict[tuple[Pattern, Phase], dict[Performative, Phase]] = {
    (Pattern.REQUEST, Phase.START): {P.REQUEST: Phase.AWAITING_AGREEMENT},
    (Pattern.REQUEST, Phase.AWAITING_AGREEMENT): {
        P.AGREE: Phase.AGREED,
        P.REFUSE: Phase.TERMINAL_REFUSED,
    },
    (Pattern.REQUEST, Phase.AGREED): {
        P.INFORM: Phase.TERMINAL_OK,
        P.FAILURE: Phase.TERMINAL_FAILED,
    },
    (Pattern.REQUEST_SIMPLIFIED, Phase.START): {P.REQUEST: Phase.AWAITING_RESULT},
    (Pattern.REQUEST_SIMPLIFIED, Phase.AWAITING_RESULT): {
        P.INFORM: Phase.TERMINAL_OK,
        P.FAILURE: Phase.TERMINAL_FAILED,
    },
    (Pattern.PROPOSE, Phase.START): {P.PROPOSE: Phase.AWAITING_RESULT},
    (Pattern.PROPOSE, Phase.AWAITING_RESULT): {
        P.ACCEPT_PROPOSAL: Phase.TERMINAL_OK,
        P.REJECT_PROPOSAL: Phase.TERMINAL_REFUSED,
    },
}

_INITIATOR_SPEAKS = frozenset({P.REQUEST, P.PROPOSE})


class ProtocolViolation(Exception):
    def __init__(self, state: ConversationState, direction: Direction, performative: Performative):
        self.state = state
        self.direction = direction
        self.performative = performative
        super().__init__(
            f"{state.pattern.value}/{state.role.value} in phase {state.phase.value}: "
            f"{direction.value} {performative.value} is not allowed"
        )


@dataclass(frozen=True)
class ConversationState:
    pattern: Pattern
    role: Role
    conversation_id: str = ""
    phase: Phase = Phase.START

    @property
    def terminal(self) -> bool:
        return self.phase.terminal


def _direction_for(role: Role, performative: Performative) -> Direction:
    initiator_spoke = performative in _INITIATOR_SPEAKS
    if (role is Role.INITIATOR) == initiator_spoke:
        return Direction.SENT
    return Direction.RECEIVED


def legal_next(state: ConversationState) -> set[tuple[Direction, Performative]]:
    moves = _TABLE.get((state.pattern, state.phase), {})
    return {(_direction_for(state.role, p), p) for p in moves}


def advance(state: ConversationState, direction: Direction | str,
            performative: Performative | str) -> ConversationState:
    direction = Direction(direction)
    performative = Performative(performative)
    if (direction, performative) not in legal_next(state):
        raise ProtocolViolation(state, direction, performative)
    return replace(state, phase=_TABLE[(state.pattern, state.phase)][performative])


def pattern_for(opening: Performative, main: bool = False) -> Pattern:
    """Pick the pattern governing an exchange from its opening performative."""
    if opening is P.PROPOSE:
        return Pattern.PROPOSE
    return Pattern.REQUEST if main else Pattern.REQUEST_SIMPLIFIED
