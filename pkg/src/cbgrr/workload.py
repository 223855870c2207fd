"""Application drivers that feed calls into simulated protocol instances."""
from collections import deque
from dataclasses import dataclass, field

from .events import RoundKind
from .node import ProtocolError

COORD_OPS = ("rr", "checkjoins", "checkleaves", "push")


@dataclass
class RoundRecord:
    coord: int
    kind: RoundKind
    start: int
    end: int = None
    seqno: int = None
    targets: frozenset = frozenset()
    replies: dict = field(default_factory=dict)
    aborted: bool = False

    @property
    def latency(self):
        return None if self.end is None else self.end - self.start


class GroupApp:
    """One logical application driving whichever process is coordinator.

    Scripted coordinator operations are queued and run in order whenever the
    coordinator is idle; ``rounds`` further request-reply interactions to every
    member follow at full speed (or ``think_time`` apart). ``rounds=None``
    keeps issuing requests until the simulation ends.
    """

    def __init__(self, rounds=0, payload=b"", think_time=0, proc_t=None):
        self.pending = deque()
        self.rounds_left = rounds
        self.payload = payload
        self.think_time = think_time
        self.proc_t = proc_t
        self.records = []
        self.rejected = []
        self.active = None
        self._not_before = 0
        self._wake_at = None

    def submit(self, op, pid=None, args=()):
        if op not in COORD_OPS:
            raise ValueError(f"not a coordinator operation: {op}")
        self.pending.append((op, pid, args))

    @property
    def rr_records(self):
        return [r for r in self.records if r.kind is RoundKind.APP_RR]

    def completed_rr(self):
        return [r for r in self.records if r.kind is RoundKind.APP_RR and not r.aborted]

    # hooks called by the simulator

    def on_round_complete(self, sim, pid, action):
        r = self.active
        if r is not None and r.coord == pid:
            r.end = sim.now
            r.replies = action.result
            self.active = None
            if r.kind is RoundKind.APP_RR and self.think_time:
                self._not_before = sim.now + self.think_time
        sim.wake_app()

    def on_coordinator_lost(self, sim, pid):
        r = self.active
        if r is not None and r.coord == pid:
            r.aborted = True
            r.end = sim.now
            self.active = None
        sim.wake_app()

    def pump(self, sim):
        if self.active is not None:
            return
        host = sim.coordinator()
        if host is None or host.node.round is not RoundKind.IDLE:
            return
        node = host.node
        while self.pending:
            op, pid, args = self.pending.popleft()
            if pid is not None and pid != node.myid:
                self._reject(sim, op, pid, "not the coordinator")
                continue
            if self._start(sim, host, op, args):
                return
        if self.rounds_left is None or self.rounds_left > 0:
            if sim.now < self._not_before:
                if self._wake_at != self._not_before:
                    self._wake_at = self._not_before
                    sim.schedule_wake(self._not_before)
                return
            if self.rounds_left is not None:
                self.rounds_left -= 1
            self._start(sim, host, "rr", ("all", self.payload))

    def _start(self, sim, host, op, args):
        node = host.node
        try:
            if op == "rr":
                dsts, data = args
                if dsts == "all":
                    dsts = node.members() - {node.myid}
                rec = RoundRecord(node.myid, RoundKind.APP_RR, sim.now,
                                  targets=frozenset(dsts) - {node.myid})
                self.active = rec
                self.records.append(rec)
                actions = node.start_request_reply(dsts, data, self.proc_t)
                rec.seqno = node.seqno
            elif op == "checkjoins":
                rec = self.active = RoundRecord(node.myid, RoundKind.JOIN_POLL, sim.now)
                self.records.append(rec)
                actions = node.check_joins(args[0])
            elif op == "checkleaves":
                rec = self.active = RoundRecord(node.myid, RoundKind.LEAVE_POLL, sim.now)
                self.records.append(rec)
                actions = node.check_leaves(args[0])
            else:
                rec = self.active = RoundRecord(node.myid, RoundKind.VIEW_PUSH, sim.now,
                                                targets=frozenset(args[0]))
                self.records.append(rec)
                actions = node.start_view_push(args[0])
        except ProtocolError as exc:
            self.records.pop()
            self.active = None
            self._reject(sim, op, node.myid, str(exc))
            return False
        sim.apply(host, actions)
        return True

    def _reject(self, sim, op, pid, why):
        self.rejected.append((sim.now, op, pid, why))
        sim.trace.add(sim.now, pid if pid is not None else 0, "APP_CALL", f"REJECT {op} {why}")
