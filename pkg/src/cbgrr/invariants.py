"""Run-time checks of the group-management and request-reply guarantees."""
from collections import Counter
from dataclasses import dataclass

from .bits import pids_of, set_bits
from .events import DeliverRequest, MemberState, RoundComplete, RoundKind
from .messages import AREQ, VPUSH
from .sim import Monitor

NORMAL, JOIN, LEAVE, LEFT = MemberState.NORMAL, MemberState.JOIN, MemberState.LEAVE, MemberState.LEFT


@dataclass(frozen=True)
class Violation:
    time: int
    prop: str
    detail: str

    def __str__(self):
        return f"t={self.time} {self.prop}: {self.detail}"


class PropertyMonitor(Monitor):
    """Checks STA, GM1-GM3, exactly-once, shrinking recovery and stop-and-wait.

    ``settle`` is the slack allowed beyond fault_detect_t for a coordinator to
    re-appear after the last crash or departure. ``stuck_polls`` is how many
    completed join polls a live joiner may sit through before it counts as stuck.
    ``per_event=False`` skips the STA and GM1 scans after every event, which
    dominate the cost of long fault-free runs.
    """

    def __init__(self, settle=None, stuck_polls=6, per_event=True):
        self.per_event = per_event
        self.violations = []
        self.settle = settle
        self.stuck_polls = stuck_polls
        self._delivered = Counter()
        self._areq = {}
        self._round_open = {}
        self._round_start = {}
        self._joined_at = {}
        self._join_requested = {}
        self._polls_done = []
        self._coord_since = None
        self._last_fault = None
        self.checks = Counter()

    def _fail(self, sim, prop, detail):
        self.violations.append(Violation(sim.now, prop, detail))

    # -- request-reply --

    def on_send(self, sim, src, msg, dst):
        t = type(msg)
        if t is AREQ:
            self._check_areq(sim, src, msg)
        elif t is VPUSH:
            self.checks["push"] += 1

    def _check_areq(self, sim, src, msg):
        host = sim.hosts[src]
        key = (src, host.incarnation)
        rkey = key + (msg.k,)
        prev = self._areq.get(rkey)
        if prev is None:
            if self._round_open.get(key):
                self._fail(sim, "stop-and-wait", f"p{src} opened round {msg.k} before the previous one completed")
            self._round_open[key] = True
            self._round_start[rkey] = (sim.now, msg.rmask)
        else:
            self.checks["retransmit"] += 1
            if msg.rmask & ~prev:
                self._fail(sim, "shrinking-recovery", f"round {msg.k} mask {msg.rmask:#x} not within {prev:#x}")
            replied = set_bits(host.node.replies)
            if msg.rmask & replied:
                self._fail(sim, "shrinking-recovery", f"round {msg.k} re-addresses processes that replied")
        self._areq[rkey] = msg.rmask
        for p in pids_of(msg.rmask):
            h = sim.hosts.get(p)
            if h is not None and h.alive and h.node.state is JOIN:
                self._fail(sim, "GM3", f"p{p} addressed by AREQ {msg.k} while still joining")

    def on_recv(self, sim, pid, msg):
        if type(msg) is AREQ and sim.hosts[pid].node.state is JOIN and (msg.rmask >> (pid - 1)) & 1:
            self._fail(sim, "GM3", f"p{pid} received AREQ {msg.k} addressed to it while joining")

    def on_action(self, sim, pid, action):
        t = type(action)
        if t is DeliverRequest:
            inc = sim.hosts[pid].incarnation
            key = (pid, inc, action.coord, action.k)
            self._delivered[key] += 1
            if self._delivered[key] > 1:
                self._fail(sim, "at-most-once", f"p{pid} got request {action.coord}/{action.k} twice")
        elif t is RoundComplete:
            host = sim.hosts[pid]
            if action.kind is RoundKind.APP_RR:
                self._close_round(sim, host, action)
            elif action.kind is RoundKind.JOIN_POLL:
                self._polls_done.append(sim.now)

    def _close_round(self, sim, host, action):
        key = (host.pid, host.incarnation)
        self._round_open[key] = False
        k = host.node.seqno
        start = self._round_start.get(key + (k,))
        if start is None:
            return
        t0, mask = start
        self.checks["rounds"] += 1
        for p in pids_of(mask):
            h = sim.hosts[p]
            stayed = h.alive and h.node.is_member and (h.crashed_at is None or h.crashed_at < t0) \
                and (h.departed_at is None or h.departed_at < t0)
            n = self._delivered[(p, h.incarnation, host.pid, k)]
            if p in action.result and n != 1:
                self._fail(sim, "exactly-once", f"p{p} replied to {host.pid}/{k} after {n} deliveries")
            if stayed and p not in action.result:
                self._fail(sim, "exactly-once", f"correct p{p} missing from replies of {host.pid}/{k}")

    # -- membership --

    def on_state_change(self, sim, pid, before, after):
        if after is JOIN:
            if before in (NORMAL, LEAVE):
                self._fail(sim, "GM3", f"p{pid} fell back from {before.value} to JOIN")
            self._join_requested[pid] = sim.now
            self._joined_at.pop(pid, None)
        elif after is NORMAL and before is JOIN:
            self._joined_at[pid] = sim.now
            self._join_requested.pop(pid, None)

    def on_departure(self, sim, pid, reason):
        self._last_fault = sim.now
        self._join_requested.pop(pid, None)

    def after_event(self, sim):
        tickets = {}
        coords = []
        for h in sim.hosts.values():
            if not h.alive:
                continue
            node = h.node
            if node.is_coordinator:
                coords.append(h.pid)
            if not node.is_member:
                continue
            for e in node.grp.entries():
                t = tickets.setdefault(e.pid, e.ticket)
                if t != e.ticket:
                    self._fail(sim, "STA", f"p{e.pid} holds tickets {t} and {e.ticket} in different views")
        if len(coords) > 1:
            self._fail(sim, "GM1", f"several coordinators: {coords}")
        if coords:
            if self._coord_since is None:
                self._coord_since = sim.now
        else:
            self._coord_since = None

    def finish(self, sim):
        live_members = [h for h in sim.hosts.values() if h.alive and h.node.is_member]
        if not live_members:
            return
        self.checks["gm2"] += 1
        coord = sim.coordinator()
        if coord is None:
            self._fail(sim, "GM2", "live members remain but no process is coordinator")
            return
        for h in live_members:
            c = sim.hosts.get(h.node.coordid)
            if c is None or not c.alive or not c.node.is_member:
                self._fail(sim, "GM2", f"p{h.pid} follows p{h.node.coordid}, which is not a live member")
        if self._last_fault is not None and self.settle is not None:
            deadline = self._last_fault + sim.config.fault_detect_t + self.settle
            if self._coord_since is not None and self._coord_since > deadline:
                self._fail(sim, "GM2", f"coordinator only re-established at t={self._coord_since}, "
                                       f"deadline {deadline}")
        for pid, t in self._join_requested.items():
            h = sim.hosts[pid]
            if h.alive and h.node.state is JOIN:
                polls = sum(1 for p in self._polls_done if p > t)
                if polls >= self.stuck_polls:
                    self._fail(sim, "GM2", f"p{pid} still joining after {polls} join polls")

    def summary(self):
        return Counter(v.prop for v in self.violations)
