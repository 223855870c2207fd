"""Deterministic discrete-event simulation of N processes on one broadcast medium.

Virtual time is an integer number of microseconds. Events are ordered by
(time, node id, insertion counter), so a run is a pure function of its
configuration and seed.
"""
import hashlib
import heapq
import itertools
import random
import zlib
from dataclasses import dataclass, field

from . import codec
from .events import (
    AppReply, Broadcast, CancelTimers, DeliverRequest, FaultNotify, MemberState,
    MsgRecv, NotifyBecameCoord, NotifyGroupChanged, RoundComplete, SetTimer,
    TimerFired, Unicast, Via,
)
from .messages import MESSAGE_TYPES
from .node import Config, Node, ProtocolError
from .workload import COORD_OPS, GroupApp

_DELIVER, _TIMER, _FAULT, _APP_REPLY, _CALL, _WAKE = range(6)
_CBGRR_TYPES = frozenset(MESSAGE_TYPES)
_MEMBER = (MemberState.NORMAL, MemberState.LEAVE)


class SimConfigError(ValueError):
    pass


@dataclass
class DropRule:
    """Force-drop matching transmissions, for scripted adversarial runs."""
    kind: str = None
    src: int = None
    dst: int = None
    count: int = 1
    after: int = 0

    def matches(self, name, src, dst, now):
        return ((self.count is None or self.count > 0) and now >= self.after
                and (self.kind is None or self.kind == name)
                and (self.src is None or self.src == src)
                and (self.dst is None or self.dst == dst))


@dataclass
class ScriptEvent:
    time: int
    op: str
    pid: int = None
    args: tuple = ()


@dataclass
class SimConfig:
    n: int = 3
    members: tuple = None
    msg_t: int = 10_000
    fault_detect_t: int = 100_000
    proc_t: int = 1_000
    proc_delay: int = 0
    bitrate: int = 1_000_000
    airtime: int = None
    max_delay: int = None
    serialize: bool = True
    loss: float = 0.0
    seed: int = 0
    join_backoff: int = None
    fault_latency: int = None
    payload: int = 0
    reply_size: int = 0
    rounds: int = 0
    think_time: int = 0
    end_time: int = None
    events: list = field(default_factory=list)
    drops: list = field(default_factory=list)

    def initial_members(self):
        if self.members is None:
            return tuple(range(1, self.n + 1))
        return tuple(self.members)

    def validate(self):
        if not 1 <= self.n <= 64:
            raise SimConfigError(f"n must be in [1, 64], got {self.n}")
        pids = range(1, self.n + 1)
        for p in self.initial_members():
            if p not in pids:
                raise SimConfigError(f"initial member {p} is not a simulated process")
        if self.msg_t <= 0 or self.fault_detect_t < self.msg_t:
            raise SimConfigError("need msg_t > 0 and fault_detect_t >= msg_t")
        if not 0.0 <= self.loss <= 1.0:
            raise SimConfigError(f"loss probability out of range: {self.loss}")
        if self.proc_delay > self.proc_t:
            raise SimConfigError("proc_delay may not exceed proc_t")
        if self.airtime is not None and not 0 < self.airtime <= self.msg_t:
            raise SimConfigError("airtime must be in (0, msg_t]")
        if self.max_delay is not None and not 0 < self.max_delay <= self.msg_t:
            raise SimConfigError("max_delay must be in (0, msg_t]")
        if self.bitrate <= 0:
            raise SimConfigError("bitrate must be positive")
        if self.fault_latency is not None and not 0 < self.fault_latency <= self.fault_detect_t:
            raise SimConfigError("fault_latency must be in (0, fault_detect_t]")
        for ev in self.events:
            if ev.pid is not None and ev.pid not in pids:
                raise SimConfigError(f"event {ev.op} at t={ev.time} names unknown process {ev.pid}")
            if ev.op not in COORD_OPS + ("join", "leave", "crash"):
                raise SimConfigError(f"unknown event operation {ev.op!r}")
            if ev.op in ("join", "leave", "crash") and ev.pid is None:
                raise SimConfigError(f"{ev.op} needs a process id")
        for d in self.drops:
            for p in (d.src, d.dst):
                if p is not None and p not in pids:
                    raise SimConfigError(f"drop rule names unknown process {p}")

    def core_config(self):
        backoff = self.join_backoff if self.join_backoff is not None else 0
        return Config(msg_t=self.msg_t, fault_detect_t=self.fault_detect_t,
                      proc_t=self.proc_t, join_backoff=backoff)


class SimTrace:
    """Ordered log of (time, node, kind, detail) records."""

    KINDS = ("SEND", "RECV", "DROP", "TIMER", "FAULT", "APP_DELIVER",
             "ROUND_DONE", "STATE_CHANGE", "APP_CALL")

    def __init__(self):
        self.records = []

    def add(self, time, node, kind, detail=""):
        self.records.append((time, node, kind, detail))

    def __len__(self):
        return len(self.records)

    def lines(self):
        for t, n, k, d in self.records:
            yield f"{t} {n} {k} {d}"

    def digest(self):
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def export(self, path):
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    def count(self, kind, name=None):
        if name is None:
            return sum(1 for r in self.records if r[2] == kind)
        return sum(1 for r in self.records if r[2] == kind and r[3].split(" ", 2)[1] == name)


class Monitor:
    """Observation hooks; subclasses check properties over a run."""

    def on_send(self, sim, src, msg, dst):
        pass

    def on_recv(self, sim, pid, msg):
        pass

    def on_action(self, sim, pid, action):
        pass

    def on_state_change(self, sim, pid, before, after):
        pass

    def on_departure(self, sim, pid, reason):
        pass

    def after_event(self, sim):
        pass

    def finish(self, sim):
        pass


class _Host:
    __slots__ = ("pid", "node", "alive", "incarnation", "cancelled",
                 "crashed_at", "departed_at")

    def __init__(self, pid, node):
        self.pid = pid
        self.node = node
        self.alive = True
        self.incarnation = 0
        self.cancelled = set()
        self.crashed_at = None
        self.departed_at = None


def reply_payload(pid, k, size):
    return (b"%d:%d" % (pid, k)).ljust(size, b".")


def default_factory(sim, pid):
    return Node(pid, sim.config.core_config(), rng=sim.node_rng(pid))


class Simulator:

    def __init__(self, config, factory=None, app=None, monitor=None):
        config.validate()
        self.config = config
        self.factory = factory or default_factory
        self.monitor = monitor or Monitor()
        self.trace = SimTrace()
        self.now = 0
        self._queue = []
        self._counter = itertools.count()
        master = random.Random(config.seed)
        self._loss_rng = random.Random(master.getrandbits(64))
        self._delay_rng = random.Random(master.getrandbits(64))
        self._fault_rng = random.Random(master.getrandbits(64))
        self._node_seed = master.getrandbits(64)
        self._medium_free = 0
        self._last_delivery = {}
        self._drops = [DropRule(**vars(d)) for d in config.drops]
        self.sends = []
        self.deliveries = []
        self.departures = []
        self.state_log = []
        self._app_dirty = True
        self._cbgrr = True
        if app is None:
            app = GroupApp(config.rounds, bytes(config.payload), config.think_time)
        self.app = app

        pids = range(1, config.n + 1)
        self._others = {p: tuple(q for q in pids if q != p) for p in pids}
        self.hosts = {}
        for p in pids:
            self.hosts[p] = _Host(p, self.factory(self, p))
        self._cbgrr = all(isinstance(h.node, Node) for h in self.hosts.values())
        for ev in sorted(config.events, key=lambda e: e.time):
            self._push(ev.time, ev.pid or 0, _CALL, ev)
        members = config.initial_members()
        for p in pids:
            host = self.hosts[p]
            if hasattr(host.node, "init"):
                self.invoke(host, host.node.init, members if p in members else ())

    def node_rng(self, pid, incarnation=0):
        return random.Random(f"{self._node_seed}/{pid}/{incarnation}")

    # -- scheduling --

    def _push(self, time, node, kind, payload):
        heapq.heappush(self._queue, (time, node, next(self._counter), kind, payload))

    def schedule_wake(self, time):
        self._push(time, 0, _WAKE, None)

    def wake_app(self):
        self._app_dirty = True

    def run(self, until=None):
        until = self.config.end_time if until is None else until
        q = self._queue
        dispatch = (self._on_deliver, self._on_timer, self._on_fault,
                    self._on_app_reply, self._on_call, self._on_wake)
        monitor = self.monitor
        check = (getattr(monitor, "per_event", True)
                 and type(monitor).after_event is not Monitor.after_event)
        while True:
            if self._app_dirty:
                self._app_dirty = False
                self.app.pump(self)
                if check:
                    monitor.after_event(self)
            if not q or (until is not None and q[0][0] > until):
                break
            t, node, _, kind, payload = heapq.heappop(q)
            self.now = t
            dispatch[kind](node, payload)
            if check:
                monitor.after_event(self)
        if until is not None and self.now < until:
            self.now = until
        monitor.finish(self)
        return self.trace

    # -- queries --

    def coordinator(self):
        for h in self.hosts.values():
            if h.alive and getattr(h.node, "is_coordinator", False):
                return h
        return None

    def alive(self):
        return [h for h in self.hosts.values() if h.alive]

    # -- node invocation --

    def invoke(self, host, fn, *args):
        node = host.node
        before = getattr(node, "state", None)
        was_coord = getattr(node, "is_coordinator", False)
        actions = fn(*args)
        self.apply(host, actions)
        after = getattr(node, "state", None)
        if before is not after:
            self._state_changed(host, before, after)
        if was_coord and not node.is_coordinator:
            self.app.on_coordinator_lost(self, host.pid)
        return actions

    def _state_changed(self, host, before, after):
        self.trace.add(self.now, host.pid, "STATE_CHANGE",
                       f"{before.value if before else '-'}>{after.value}")
        self.state_log.append((self.now, host.pid, before, after))
        self.monitor.on_state_change(self, host.pid, before, after)
        if after is MemberState.LEFT and before in _MEMBER:
            host.departed_at = self.now
            self._depart(host.pid, "leave")
        self._app_dirty = True

    def apply(self, host, actions):
        pid = host.pid
        for a in actions:
            t = type(a)
            if t is Broadcast:
                self.transmit(pid, a.msg, None)
            elif t is Unicast:
                self.transmit(pid, a.msg, a.dst)
            elif t is SetTimer:
                self._push(self.now + a.delay, pid, _TIMER, (host.incarnation, a.epoch, a.kind))
            elif t is CancelTimers:
                host.cancelled.add(a.epoch)
            elif t is DeliverRequest:
                self.trace.add(self.now, pid, "APP_DELIVER", f"{a.coord} {a.k}")
                self.deliveries.append((self.now, pid, host.incarnation, a.coord, a.k))
                self.monitor.on_action(self, pid, a)
                reply = reply_payload(pid, a.k, self.config.reply_size)
                self._push(self.now + self.config.proc_delay, pid, _APP_REPLY,
                           (host.incarnation, a.k, reply))
            elif t is RoundComplete:
                self.trace.add(self.now, pid, "ROUND_DONE",
                               f"{a.kind.value} {','.join(map(str, sorted(a.result)))}")
                self.monitor.on_action(self, pid, a)
                self.app.on_round_complete(self, pid, a)
            elif t is NotifyBecameCoord or t is NotifyGroupChanged:
                self.monitor.on_action(self, pid, a)
                self._app_dirty = True
            else:
                self.monitor.on_action(self, pid, a)

    # -- medium --

    def airtime(self, size):
        if self.config.airtime is not None:
            return self.config.airtime
        return max(1, -(-size * 8 * 1_000_000 // self.config.bitrate))

    def transmit(self, src, msg, dst=None):
        """Put one frame on the medium; returns the per-receiver delivery plan."""
        cfg = self.config
        name = type(msg).__name__
        air = self.airtime(msg.wire_size())
        now = self.now
        start = now
        if cfg.serialize:
            if self._medium_free > now:
                start = self._medium_free
            self._medium_free = start + air
        sid = len(self.sends)
        self.sends.append((name, src, dst, start, start + air))
        if type(msg) in _CBGRR_TYPES:
            fp = zlib.crc32(codec.encode(msg))
        else:
            fp = zlib.crc32(repr(msg).encode())
        self.trace.add(now, src, "SEND",
                       f"{sid} {name} {'*' if dst is None else dst} {start} {fp:08x}")
        self.monitor.on_send(self, src, msg, dst)
        via = Via.BROADCAST if dst is None else Via.UNICAST
        targets = self._others[src] if dst is None else (dst,)
        loss = cfg.loss
        plan = []
        for r in targets:
            if r not in self.hosts:
                self.trace.add(now, r, "DROP", f"{sid} nohost")
                plan.append((r, None))
                continue
            forced = self._forced_drop(name, src, r)
            if forced or (loss and self._loss_rng.random() < loss):
                self.trace.add(now, r, "DROP", f"{sid}")
                plan.append((r, None))
                continue
            if cfg.max_delay is None or cfg.max_delay <= air:
                at = start + air
            else:
                at = start + self._delay_rng.randint(air, cfg.max_delay)
            self._push(at, r, _DELIVER, (msg, via, src, sid))
            key = (src, r)
            if at > self._last_delivery.get(key, -1):
                self._last_delivery[key] = at
            plan.append((r, at))
        return plan

    def _forced_drop(self, name, src, dst):
        for d in self._drops:
            if d.matches(name, src, dst, self.now):
                if d.count is not None:
                    d.count -= 1
                return True
        return False

    # -- faults --

    def crash(self, pid):
        host = self.hosts[pid]
        if not host.alive:
            return
        was_coord = getattr(host.node, "is_coordinator", False)
        host.alive = False
        host.crashed_at = self.now
        self.trace.add(self.now, pid, "STATE_CHANGE", "CRASH")
        self._depart(pid, "crash")
        if was_coord:
            self.app.on_coordinator_lost(self, pid)
        self._app_dirty = True

    def _depart(self, pid, reason):
        """Schedule FaultNotify(pid) at every live process."""
        self.departures.append((self.now, pid, reason))
        self.monitor.on_departure(self, pid, reason)
        fdt = self.config.fault_detect_t
        hi = self.now + fdt
        for q, host in self.hosts.items():
            if q == pid or not host.alive:
                continue
            lo = max(self.now, self._last_delivery.get((pid, q), -1))
            if self.config.fault_latency is not None:
                at = max(self.now + self.config.fault_latency, lo + 1)
            elif lo + 1 >= hi:
                at = lo + 1
            else:
                at = self._fault_rng.randint(lo + 1, hi)
            self._push(at, q, _FAULT, (pid, host.incarnation))

    # -- event handlers --

    def _on_deliver(self, pid, payload):
        host = self.hosts[pid]
        if not host.alive:
            return
        msg, via, src, sid = payload
        self.trace.add(self.now, pid, "RECV", f"{sid}")
        self.monitor.on_recv(self, pid, msg)
        self.invoke(host, host.node.handle, MsgRecv(msg, via))

    def _on_timer(self, pid, payload):
        host = self.hosts[pid]
        inc, epoch, kind = payload
        if not host.alive or inc != host.incarnation or epoch in host.cancelled:
            return
        self.trace.add(self.now, pid, "TIMER", f"{kind.value} {epoch}")
        self.invoke(host, host.node.handle, TimerFired(epoch, kind))

    def _on_fault(self, pid, payload):
        host = self.hosts[pid]
        failed, inc = payload
        if not host.alive or inc != host.incarnation:
            return
        self.trace.add(self.now, pid, "FAULT", f"{failed}")
        self.invoke(host, host.node.handle, FaultNotify(failed))

    def _on_app_reply(self, pid, payload):
        host = self.hosts[pid]
        inc, k, data = payload
        if not host.alive or inc != host.incarnation:
            return
        self.invoke(host, host.node.handle, AppReply(k, data))

    def _on_wake(self, pid, payload):
        self._app_dirty = True

    def _on_call(self, pid, ev):
        if ev.op in COORD_OPS:
            self.app.submit(ev.op, ev.pid, ev.args)
            self._app_dirty = True
        elif ev.op == "crash":
            self.crash(ev.pid)
        elif ev.op == "join":
            self.join(ev.pid)
        elif ev.op == "leave":
            self._node_call(ev.pid, "leave")

    def join(self, pid):
        host = self.hosts[pid]
        fdt = self.config.fault_detect_t
        if not host.alive:
            if self.now - host.crashed_at < fdt:
                return self._reject(pid, "join", "re-join within fault_detect_t of crash")
            host.incarnation += 1
            host.cancelled = set()
            host.alive = True
            host.node = self.factory(self, pid)
            if hasattr(host.node, "rng"):
                host.node.rng = self.node_rng(pid, host.incarnation)
            self.trace.add(self.now, pid, "STATE_CHANGE", "RESTART")
        elif host.departed_at is not None and self.now - host.departed_at < fdt:
            return self._reject(pid, "join", "re-join within fault_detect_t of leaving")
        return self._node_call(pid, "join")

    def _node_call(self, pid, op):
        host = self.hosts[pid]
        if not host.alive:
            return self._reject(pid, op, "process crashed")
        fn = host.node.request_join if op == "join" else host.node.request_leave
        try:
            self.invoke(host, fn)
        except ProtocolError as exc:
            return self._reject(pid, op, str(exc))
        self.trace.add(self.now, pid, "APP_CALL", op)
        return True

    def _reject(self, pid, op, why):
        self.trace.add(self.now, pid, "APP_CALL", f"REJECT {op} {why}")
        return False


def run(config, **kw):
    return Simulator(config, **kw).run()
