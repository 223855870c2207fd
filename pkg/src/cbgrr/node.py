"""CBGRR protocol state machine.

A ``Node`` never touches a clock or a socket. Every entry point consumes one
input and returns the list of actions the host must carry out. Timers are
tagged with ``round_epoch``; a fired timer from an older epoch is ignored.
"""
from dataclasses import dataclass

from . import bits
from .bits import clear_bit, is_bit_set, nxt_bit, popcount, pos_bit, set_bits
from .events import (
    AppCall, AppReply, Broadcast, CancelTimers, DeliverRequest, FaultNotify,
    MemberState, MsgRecv, NotifyBecameCoord, NotifyGroupChanged, RoundComplete,
    RoundKind, SetTimer, TimerFired, TimerKind, Unicast,
)
from .messages import AREQ, ARPL, JOIN, JPOLL, LEFT, LPOLL, MAX_PAYLOAD, VACK, VPUSH
from .view import GroupView, initial_view

NORMAL, JOINING, LEAVING, GONE = (
    MemberState.NORMAL, MemberState.JOIN, MemberState.LEAVE, MemberState.LEFT)

# A newly elected coordinator moves its sequence numbers this far past anything
# it has seen, so replies still in flight for the old coordinator's last round
# cannot be mistaken for replies to the new one.
TAKEOVER_SEQNO_GAP = 1 << 16


APP_OPS = frozenset({
    "init", "start_request_reply", "request_join", "request_leave",
    "check_joins", "check_leaves", "start_view_push", "app_reply",
})


class ProtocolError(Exception):
    """An application call was rejected; the state machine is unchanged."""


@dataclass(frozen=True)
class Config:
    msg_t: int = 10_000
    fault_detect_t: int = 100_000
    proc_t: int = 1_000
    max_payload: int = MAX_PAYLOAD
    join_backoff: int = 0

    def __post_init__(self):
        if self.msg_t <= 0:
            raise ValueError("msg_t must be positive")
        if self.fault_detect_t < self.msg_t:
            raise ValueError("fault_detect_t must be >= msg_t")
        if self.proc_t < 0 or self.join_backoff < 0:
            raise ValueError("durations must be non-negative")
        if not 0 <= self.max_payload <= MAX_PAYLOAD:
            raise ValueError(f"max_payload must be within [0, {MAX_PAYLOAD}]")


@dataclass
class _SlotWait:
    """An ordinary process waiting for its turn to send an ARPL or VACK."""
    kind: type
    rmask: int
    armed: bool = False


class Node:

    def __init__(self, myid, config=None, rng=None):
        self.myid = bits.check_pid(myid)
        self.config = config or Config()
        self.rng = rng
        self.state = GONE
        self.coordid = None
        self.grp = GroupView()
        self.seqno = 0
        self.rmask = 0
        self.replies = {}
        self.reply = None
        self.myturn = False
        self.round = RoundKind.IDLE
        self.round_epoch = 0

        self._data = b""
        self._proc_t = 0
        self._push_queue = []
        self._push_origin = None
        self._push_clears = False
        self._wait = None
        self._poller = None
        self._max_seen = 0
        self._departed = set()
        self._absent = set()

    def __repr__(self):
        return (f"Node({self.myid}, {self.state.value}, coord={self.coordid}, "
                f"round={self.round.value}, {self.grp!r})")

    # -- queries --

    @property
    def is_coordinator(self):
        return self.state is NORMAL and self.coordid == self.myid

    @property
    def is_member(self):
        return self.state is NORMAL or self.state is LEAVING

    def members(self):
        return self.grp.members()

    # -- application calls --

    def init(self, pids):
        pids = frozenset(pids)
        if len(pids) > bits.MAX_PID:
            raise ProtocolError("a group holds at most 64 processes")
        for p in pids:
            bits.check_pid(p)
        if pids and self.myid not in pids:
            raise ProtocolError(f"{self.myid} is not among the initial members")
        self.seqno = 0
        if not pids:
            self.state = GONE
            self.coordid = None
            self.grp = GroupView()
            return []
        self.state = NORMAL
        self.grp = initial_view(pids)
        self.coordid = self.grp.min_ticket()
        if self.coordid == self.myid:
            return [NotifyBecameCoord(self.members())]
        return []

    def start_request_reply(self, dsts, data, proc_t=None):
        self._require_idle_coordinator()
        dsts = frozenset(dsts)
        unknown = dsts - self.grp.members()
        if unknown:
            raise ProtocolError(f"unknown destinations {sorted(unknown)}")
        if len(data) > self.config.max_payload:
            raise ProtocolError(f"payload of {len(data)} bytes exceeds {self.config.max_payload}")
        self.seqno += 1
        self.replies = {}
        self.rmask = set_bits(dsts - {self.myid})
        if not self.rmask:
            return [RoundComplete(RoundKind.APP_RR, {})]
        self._data = bytes(data)
        self._proc_t = self.config.proc_t if proc_t is None else proc_t
        self.round = RoundKind.APP_RR
        self.round_epoch += 1
        return self._send_areq([])

    def app_reply(self, k, data):
        """The application finished processing request ``k``."""
        if k != self.seqno or not self.is_member:
            return []
        self.reply = bytes(data)
        w = self._wait
        if w is not None and w.kind is ARPL and not w.armed:
            return self._arm_slot([])
        return []

    def request_join(self):
        if self.state is not GONE:
            raise ProtocolError(f"join requires state LEFT, not {self.state.value}")
        self._reset()
        self.state = JOINING
        return []

    def request_leave(self):
        if self.state is not NORMAL:
            raise ProtocolError(f"leave requires state NORMAL, not {self.state.value}")
        if self.coordid == self.myid:
            return self._leave_now()
        self.state = LEAVING
        return []

    def check_joins(self, join_t):
        self._require_idle_coordinator()
        self.round = RoundKind.JOIN_POLL
        self.round_epoch += 1
        return [Broadcast(JPOLL(self.myid)),
                SetTimer(self.round_epoch, TimerKind.POLL_WAIT, 2 * self.config.msg_t + join_t)]

    def check_leaves(self, leave_t):
        self._require_idle_coordinator()
        self.round = RoundKind.LEAVE_POLL
        self.round_epoch += 1
        return [Broadcast(LPOLL()),
                SetTimer(self.round_epoch, TimerKind.POLL_WAIT, 2 * self.config.msg_t + leave_t)]

    def start_view_push(self, pids):
        self._require_idle_coordinator()
        pids = frozenset(pids)
        unknown = pids - self.grp.members()
        if unknown:
            raise ProtocolError(f"unknown push targets {sorted(unknown)}")
        self._push_queue = [pids]
        self._push_origin = RoundKind.VIEW_PUSH
        self._push_clears = False
        return self._next_push([])

    # -- event dispatch --

    def handle(self, event):
        t = type(event)
        if t is MsgRecv:
            return self.on_message(event.msg)
        if t is TimerFired:
            return self.on_timer(event.epoch, event.kind)
        if t is FaultNotify:
            return self.on_process_failure(event.pid)
        if t is AppReply:
            return self.app_reply(event.k, event.data)
        if t is AppCall:
            if event.op not in APP_OPS:
                raise ProtocolError(f"unknown application call {event.op!r}")
            return getattr(self, event.op)(*event.args)
        raise TypeError(f"unknown event {event!r}")

    def on_message(self, msg):
        handler = self._handlers.get(type(msg))
        if handler is None:
            return []
        if self._absent:
            # a failed process that speaks again is a later incarnation
            self._absent.discard(getattr(msg, "pid", None))
        return getattr(self, handler)(msg)

    def on_timer(self, epoch, kind):
        if epoch != self.round_epoch or self.state is GONE:
            return []
        if kind is TimerKind.RETRANSMIT:
            return self.on_rr_timeout()
        if kind is TimerKind.SLOT:
            w = self._wait
            if w is not None and w.armed:
                return self._send_turn([])
            return []
        if kind is TimerKind.POLL_WAIT:
            return self._poll_expired()
        if kind is TimerKind.JOIN_BACKOFF:
            if self.state is JOINING and self._poller is not None:
                dst, self._poller = self._poller, None
                return [Unicast(dst, JOIN(self.myid))]
        return []

    # -- request-reply --

    def _send_areq(self, actions):
        actions.append(Broadcast(AREQ(self.myid, self.seqno, self.rmask, self._data)))
        m = self.config.msg_t
        actions.append(SetTimer(self.round_epoch, TimerKind.RETRANSMIT,
                                m + self._proc_t + popcount(self.rmask) * m))
        return actions

    def on_rr_timeout(self):
        if not self.is_coordinator or not self.rmask:
            return []
        if self.round is RoundKind.APP_RR:
            return self._send_areq([])
        if self.round is RoundKind.VIEW_PUSH:
            return self._send_vpush([])
        return []

    def on_areq(self, msg):
        if not self.is_member:
            return []
        if msg.k > self._max_seen:
            self._max_seen = msg.k
        if msg.pid == self.myid or not is_bit_set(msg.rmask, self.myid):
            return []
        actions = []
        if msg.k != self.seqno:
            self.seqno = msg.k
            self.reply = None
            actions.append(DeliverRequest(msg.pid, msg.k, msg.data))
        self._begin_wait(ARPL, msg.rmask)
        if self.reply is not None:
            self._arm_slot(actions)
        return actions

    def on_arpl(self, msg):
        if not self.is_member:
            return []
        if msg.k > self._max_seen:
            self._max_seen = msg.k
        if msg.k != self.seqno:
            return []
        if self.coordid == self.myid:
            if self.round is not RoundKind.APP_RR or not is_bit_set(self.rmask, msg.pid):
                return []
            self.replies[msg.pid] = msg.data
            self.rmask = clear_bit(self.rmask, msg.pid)
            if not self.rmask:
                return self._finish_rr([])
            return []
        return self._overheard(ARPL, msg.pid)

    def _finish_rr(self, actions):
        actions.append(CancelTimers(self.round_epoch))
        self.round = RoundKind.IDLE
        actions.append(RoundComplete(RoundKind.APP_RR, dict(self.replies)))
        return actions

    # -- ordinary-side slot scheduling --

    def _begin_wait(self, kind, rmask):
        self.round_epoch += 1
        self.myturn = False
        self._wait = _SlotWait(kind, rmask)

    def _arm_slot(self, actions):
        w = self._wait
        slot = pos_bit(w.rmask, self.myid)
        if slot == 0 or self.myturn:
            return self._send_turn(actions)
        w.armed = True
        actions.append(SetTimer(self.round_epoch, TimerKind.SLOT, slot * self.config.msg_t))
        return actions

    def _send_turn(self, actions):
        w, self._wait = self._wait, None
        if w.armed:
            actions.append(CancelTimers(self.round_epoch))
        self.myturn = True
        if w.kind is ARPL:
            actions.append(Broadcast(ARPL(self.myid, self.seqno, self.reply)))
        else:
            actions.append(Broadcast(VACK(self.myid)))
        return actions

    def _overheard(self, kind, sender):
        w = self._wait
        if w is None or w.kind is not kind or not nxt_bit(w.rmask, sender, self.myid):
            return []
        self.myturn = True
        if kind is VACK or self.reply is not None:
            return self._send_turn([])
        return []

    # -- join --

    def on_jpoll(self, msg):
        if self.state is not JOINING:
            return []
        backoff = self.config.join_backoff
        if backoff and self.rng is not None:
            self.round_epoch += 1
            self._poller = msg.pid
            return [SetTimer(self.round_epoch, TimerKind.JOIN_BACKOFF,
                             self.rng.randint(0, backoff))]
        return [Unicast(msg.pid, JOIN(self.myid))]

    def on_join(self, msg):
        if not self.is_coordinator or self.round is not RoundKind.JOIN_POLL:
            return []
        if msg.pid in self.grp:
            return []
        self.grp.add(msg.pid, self.grp.nxt_ticket(), is_new=True)
        return [NotifyGroupChanged(self.members())]

    def _poll_expired(self):
        if self.round is RoundKind.JOIN_POLL and self.grp.new():
            return self._start_push_sequence(RoundKind.JOIN_POLL)
        kind, self.round = self.round, RoundKind.IDLE
        return [RoundComplete(kind, {})]

    # -- leave --

    def on_lpoll(self, msg):
        if self.state is not LEAVING:
            return []
        return self._leave_now()

    def on_left(self, msg):
        return self.on_process_failure(msg.pid)

    def _leave_now(self):
        epoch = self.round_epoch
        self._reset()
        self.state = GONE
        self.round_epoch = epoch + 1
        return [CancelTimers(epoch), Broadcast(LEFT(self.myid))]

    def _reset(self):
        self.coordid = None
        self.grp = GroupView()
        self.seqno = 0
        self.rmask = 0
        self.replies = {}
        self.reply = None
        self.myturn = False
        self.round = RoundKind.IDLE
        self._push_queue = []
        self._wait = None
        self._poller = None
        self._max_seen = 0
        self._departed = set()
        self._absent = set()

    # -- view push --

    def _start_push_sequence(self, origin):
        old = self.grp.old()
        new = sorted(self.grp.new(), key=self.grp.ticket)
        self._push_queue = [old] + [frozenset([p]) for p in new]
        self._push_origin = origin
        self._push_clears = True
        return self._next_push([])

    def _next_push(self, actions):
        members = self.grp.members()
        while self._push_queue:
            targets = (self._push_queue.pop(0) & members) - {self.myid}
            if targets:
                self.rmask = set_bits(targets)
                self.round = RoundKind.VIEW_PUSH
                self.round_epoch += 1
                return self._send_vpush(actions)
        if self._push_clears:
            self.grp.clear_new()
        self.rmask = 0
        self.round = RoundKind.IDLE
        actions.append(RoundComplete(self._push_origin, {}))
        return actions

    def _send_vpush(self, actions):
        actions.append(Broadcast(VPUSH(self.myid, self.rmask, self.grp.entries())))
        m = self.config.msg_t
        actions.append(SetTimer(self.round_epoch, TimerKind.RETRANSMIT, m + popcount(self.rmask) * m))
        return actions

    def on_vpush(self, msg):
        if self.state is GONE or msg.pid == self.myid:
            return []
        if not is_bit_set(msg.rmask, self.myid):
            return []
        joined = False
        if msg.pid != self.coordid:
            self.coordid = msg.pid
            self.seqno = 0
            self.round = RoundKind.IDLE
            self.rmask = 0
            self._push_queue = []
            if self.state is JOINING:
                self.state = NORMAL
                self._poller = None
                joined = True
        for e in msg.grpc:
            if (e.pid, e.ticket) not in self._departed:
                self.grp.put(e)
        self._begin_wait(VACK, msg.rmask)
        actions = self._arm_slot([])
        if joined and self._absent:
            # failures announced while still joining apply to the view just received
            absent, self._absent = self._absent, set()
            for p in sorted(absent):
                actions.extend(self.on_process_failure(p))
        return actions

    def on_vack(self, msg):
        if self.coordid == self.myid:
            if (self.state is not NORMAL or self.round is not RoundKind.VIEW_PUSH
                    or not is_bit_set(self.rmask, msg.pid)):
                return []
            self.rmask = clear_bit(self.rmask, msg.pid)
            if not self.rmask:
                return self._next_push([CancelTimers(self.round_epoch)])
            return []
        if not self.is_member:
            return []
        return self._overheard(VACK, msg.pid)

    # -- faults and election --

    def on_process_failure(self, pid):
        if self.state is JOINING and pid != self.myid:
            self._absent.add(pid)
            return []
        if not self.is_member or pid == self.myid:
            return []
        entry = self.grp.remove(pid)
        if entry is not None:
            self._departed.add((pid, entry.ticket))
        if self.coordid == self.myid:
            if entry is None:
                return []
            actions = [NotifyGroupChanged(self.members())]
            self._push_queue = [q - {pid} for q in self._push_queue]
            if self.rmask and is_bit_set(self.rmask, pid) and self.round in (
                    RoundKind.APP_RR, RoundKind.VIEW_PUSH):
                self.rmask = clear_bit(self.rmask, pid)
                if not self.rmask:
                    actions.append(CancelTimers(self.round_epoch))
                    if self.round is RoundKind.APP_RR:
                        self.round = RoundKind.IDLE
                        actions.append(RoundComplete(RoundKind.APP_RR, dict(self.replies)))
                    else:
                        self._next_push(actions)
            return actions
        if pid != self.coordid:
            return []
        # coordinator gone: the smallest remaining ticket takes over
        self.coordid = self.grp.min_ticket()
        self._wait = None
        self.round_epoch += 1
        if self.coordid != self.myid:
            return []
        if self.state is LEAVING:
            return self._leave_now()
        return self._take_over()

    def _take_over(self):
        self.round = RoundKind.IDLE
        self.rmask = 0
        self.replies = {}
        self.seqno = max(self.seqno, self._max_seen) + TAKEOVER_SEQNO_GAP
        actions = [NotifyBecameCoord(self.members())]
        if self.grp.new():
            actions.extend(self._start_push_sequence(RoundKind.VIEW_PUSH))
        return actions

    def _require_idle_coordinator(self):
        if not self.is_coordinator:
            raise ProtocolError(f"process {self.myid} is not the coordinator")
        if self.round is not RoundKind.IDLE:
            raise ProtocolError(f"round {self.round.value} still in progress")

    _handlers = {
        AREQ: "on_areq",
        ARPL: "on_arpl",
        JPOLL: "on_jpoll",
        JOIN: "on_join",
        LPOLL: "on_lpoll",
        LEFT: "on_left",
        VPUSH: "on_vpush",
        VACK: "on_vack",
    }
