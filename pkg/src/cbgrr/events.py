"""Inputs to and outputs from a protocol state machine.

Durations are integers in microseconds throughout.
"""
import enum
from dataclasses import dataclass, field


class MemberState(enum.Enum):
    NORMAL = "NORMAL"
    JOIN = "JOIN"
    LEAVE = "LEAVE"
    LEFT = "LEFT"


class RoundKind(enum.Enum):
    IDLE = "IDLE"
    APP_RR = "APP_RR"
    VIEW_PUSH = "VIEW_PUSH"
    JOIN_POLL = "JOIN_POLL"
    LEAVE_POLL = "LEAVE_POLL"


class TimerKind(enum.Enum):
    RETRANSMIT = "RETRANSMIT"
    SLOT = "SLOT"
    POLL_WAIT = "POLL_WAIT"
    JOIN_BACKOFF = "JOIN_BACKOFF"


class Via(enum.Enum):
    BROADCAST = "BROADCAST"
    UNICAST = "UNICAST"


# events

@dataclass(frozen=True, slots=True)
class MsgRecv:
    msg: object
    via: Via = Via.BROADCAST


@dataclass(frozen=True, slots=True)
class TimerFired:
    epoch: int
    kind: TimerKind


@dataclass(frozen=True, slots=True)
class FaultNotify:
    pid: int


@dataclass(frozen=True, slots=True)
class AppReply:
    """The application's answer to a DeliverRequest."""
    k: int
    data: bytes


@dataclass(frozen=True, slots=True)
class AppCall:
    op: str
    args: tuple = ()


# actions

@dataclass(frozen=True, slots=True)
class Broadcast:
    msg: object


@dataclass(frozen=True, slots=True)
class Unicast:
    dst: int
    msg: object


@dataclass(frozen=True, slots=True)
class SetTimer:
    epoch: int
    kind: TimerKind
    delay: int


@dataclass(frozen=True, slots=True)
class CancelTimers:
    epoch: int


@dataclass(frozen=True, slots=True)
class DeliverRequest:
    coord: int
    k: int
    data: bytes


@dataclass(frozen=True, slots=True)
class NotifyBecameCoord:
    pids: frozenset


@dataclass(frozen=True, slots=True)
class NotifyGroupChanged:
    pids: frozenset


@dataclass(frozen=True, slots=True)
class RoundComplete:
    kind: RoundKind
    result: dict = field(default_factory=dict)
