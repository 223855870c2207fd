"""Point-to-point reference protocols run on the same simulated medium.

RUP ("reliable unicast protocol") sends each request as a datagram to one peer
and retransmits until the reply arrives; the reply doubles as the ack. Each
peer pair runs an alternating bit so duplicates are answered from cache and
never re-delivered. SEQ serves one peer at a time, PAR sends every request
first and then collects. UUP sends unicasts without any recovery.

The node classes expose the same surface GroupApp drives on a CBGRR node
(``is_coordinator``, ``round``, ``members``, ``start_request_reply``), so a
single workload driver measures all of them.
"""
from dataclasses import dataclass

from .events import (
    AppReply, CancelTimers, DeliverRequest, FaultNotify, MsgRecv, RoundComplete,
    RoundKind, SetTimer, TimerFired, TimerKind, Unicast,
)
from .messages import HEADER
from .node import Config, ProtocolError


@dataclass(frozen=True, slots=True)
class RupReq:
    pid: int
    bit: int
    data: bytes = b""

    def wire_size(self):
        return HEADER + 4 + len(self.data)


@dataclass(frozen=True, slots=True)
class RupRpl:
    pid: int
    bit: int
    data: bytes = b""

    def wire_size(self):
        return HEADER + 4 + len(self.data)


@dataclass(frozen=True, slots=True)
class RupData:
    """One-way message of the N-1 stream, acknowledged by RupAck."""
    pid: int
    bit: int
    data: bytes = b""

    def wire_size(self):
        return HEADER + 4 + len(self.data)


@dataclass(frozen=True, slots=True)
class RupAck:
    pid: int
    bit: int

    def wire_size(self):
        return HEADER + 2


@dataclass(frozen=True, slots=True)
class UupData:
    pid: int
    seq: int
    data: bytes = b""

    def wire_size(self):
        return HEADER + 7 + len(self.data)


class _Base:
    is_coordinator = False
    round = RoundKind.IDLE
    state = None

    def __init__(self, myid, config=None):
        self.myid = myid
        self.config = config or Config()
        self.peers = frozenset()
        self._epoch = 0

    def init(self, pids):
        self.peers = frozenset(pids) - {self.myid}
        return []

    def members(self):
        return self.peers | {self.myid}

    def _timer(self, delay):
        self._epoch += 1
        return self._epoch, SetTimer(self._epoch, TimerKind.RETRANSMIT, delay)

    def handle(self, event):
        t = type(event)
        if t is MsgRecv:
            return self.on_message(event.msg)
        if t is TimerFired:
            return self.on_timer(event.epoch)
        if t is AppReply:
            return self.app_reply(event.k, event.data)
        if t is FaultNotify:
            return self.on_process_failure(event.pid)
        return []

    def on_message(self, msg):
        return []

    def on_timer(self, epoch):
        return []

    def app_reply(self, k, data):
        return []

    def on_process_failure(self, pid):
        self.peers = self.peers - {pid}
        return []


class RupRequester(_Base):
    """Coordinator side of RUP-SEQ (``parallel=False``) or RUP-PAR."""

    is_coordinator = True

    def __init__(self, myid, config=None, parallel=False):
        super().__init__(myid, config)
        self.parallel = parallel
        self.round = RoundKind.IDLE
        self.seqno = 0
        self.replies = {}
        self._bit = {}
        self._todo = []
        self._outstanding = {}   # peer -> timer epoch
        self._data = b""
        self._proc_t = 0

    def timeout(self, outstanding):
        # one request/reply exchange per outstanding peer may be queued ahead on the medium
        m = self.config.msg_t
        return 2 * outstanding * m + self._proc_t

    def start_request_reply(self, dsts, data, proc_t=None):
        if self.round is not RoundKind.IDLE:
            raise ProtocolError("round in progress")
        self.seqno += 1
        self.replies = {}
        self._data = bytes(data)
        self._proc_t = self.config.proc_t if proc_t is None else proc_t
        self._todo = sorted(set(dsts) & self.peers)
        if not self._todo:
            return [RoundComplete(RoundKind.APP_RR, {})]
        self.round = RoundKind.APP_RR
        actions = []
        if self.parallel:
            batch, self._todo = self._todo, []
            for p in batch:
                self._send(p, actions, len(batch))
        else:
            self._send(self._todo.pop(0), actions, 1)
        return actions

    def _send(self, peer, actions, outstanding):
        epoch, timer = self._timer(self.timeout(outstanding))
        self._outstanding[peer] = epoch
        actions.append(Unicast(peer, RupReq(self.myid, self._bit.get(peer, 0), self._data)))
        actions.append(timer)

    def on_message(self, msg):
        if type(msg) is not RupRpl or msg.pid not in self._outstanding:
            return []
        if msg.bit != self._bit.get(msg.pid, 0):
            return []
        self._bit[msg.pid] = 1 - msg.bit
        self.replies[msg.pid] = msg.data
        return self._settle(msg.pid)

    def _settle(self, peer):
        actions = [CancelTimers(self._outstanding.pop(peer))]
        if self._todo:
            self._send(self._todo.pop(0), actions, 1)
        elif not self._outstanding:
            self.round = RoundKind.IDLE
            actions.append(RoundComplete(RoundKind.APP_RR, dict(self.replies)))
        return actions

    def on_timer(self, epoch):
        for peer, e in self._outstanding.items():
            if e == epoch:
                actions = []
                self._send(peer, actions, len(self._outstanding))
                return actions
        return []

    def on_process_failure(self, pid):
        super().on_process_failure(pid)
        self._todo = [p for p in self._todo if p != pid]
        if pid in self._outstanding:
            return self._settle(pid)
        return []


class RupResponder(_Base):
    """Peer side of RUP: delivers each request once, answers duplicates from cache."""

    def __init__(self, myid, config=None):
        super().__init__(myid, config)
        self._expect = {}
        self._cache = {}
        self._pending = {}
        self._k = 0

    def on_message(self, msg):
        if type(msg) is not RupReq:
            return []
        src = msg.pid
        if msg.bit != self._expect.get(src, 0):
            cached = self._cache.get(src)
            if cached is not None:
                return [Unicast(src, cached)]
            return []
        if src in self._pending.values():
            return []   # still processing this request
        self._k += 1
        self._pending[self._k] = src
        return [DeliverRequest(src, self._k, msg.data)]

    def app_reply(self, k, data):
        src = self._pending.pop(k, None)
        if src is None:
            return []
        bit = self._expect.get(src, 0)
        self._expect[src] = 1 - bit
        self._cache[src] = RupRpl(self.myid, bit, bytes(data))
        return [Unicast(src, self._cache[src])]


# -- one-way N-1 streams --

class StreamSink(_Base):
    """Coordinator end of an N-1 stream; new messages surface as DeliverRequest."""

    def __init__(self, myid, config=None, reliable=True):
        super().__init__(myid, config)
        self.reliable = reliable
        self._expect = {}
        self.received = 0

    def on_message(self, msg):
        t = type(msg)
        if t is UupData:
            self.received += 1
            return [DeliverRequest(msg.pid, msg.seq, msg.data)]
        if t is not RupData:
            return []
        src = msg.pid
        ack = Unicast(src, RupAck(self.myid, msg.bit))
        if msg.bit != self._expect.get(src, 0):
            return [ack]
        self._expect[src] = 1 - msg.bit
        self.received += 1
        return [ack, DeliverRequest(src, self.received, msg.data)]


class RupStreamSender(_Base):
    """Sends ``count`` messages to ``sink`` one at a time, alternating bit with retransmission."""

    def __init__(self, myid, config=None, sink=1, count=0, size=0, timeout=None):
        super().__init__(myid, config)
        self.sink = sink
        self.left = count
        self.size = size
        self.bit = 0
        self.sent = 0
        self.timeout_us = timeout or 2 * self.config.msg_t
        self._live = None

    def init(self, pids):
        super().init(pids)
        if self.myid == self.sink or self.sink not in self.peers or self.left <= 0:
            return []
        return self._send([])

    def _send(self, actions):
        epoch, timer = self._timer(self.timeout_us)
        self._live = epoch
        self.sent += 1
        data = (b"%d" % self.myid).ljust(self.size, b".")[:max(self.size, 1)]
        actions.append(Unicast(self.sink, RupData(self.myid, self.bit, data)))
        actions.append(timer)
        return actions

    def on_message(self, msg):
        if type(msg) is not RupAck or msg.bit != self.bit or self._live is None:
            return []
        actions = [CancelTimers(self._live)]
        self._live = None
        self.bit = 1 - self.bit
        self.left -= 1
        if self.left > 0:
            self._send(actions)
        return actions

    def on_timer(self, epoch):
        if epoch != self._live:
            return []
        return self._send([])

    def on_process_failure(self, pid):
        super().on_process_failure(pid)
        if pid == self.sink:
            self.left = 0
            self._live = None
        return []


class UupSender(_Base):
    """Fire-and-forget unicasts paced at ``interval`` microseconds."""

    def __init__(self, myid, config=None, sink=1, count=0, size=0, interval=1):
        super().__init__(myid, config)
        self.sink = sink
        self.left = count
        self.size = size
        self.interval = interval
        self.seq = 0

    def init(self, pids):
        super().init(pids)
        if self.myid == self.sink or self.sink not in self.peers or self.left <= 0:
            return []
        return self._send()

    def _send(self):
        self.seq += 1
        self.left -= 1
        data = (b"%d" % self.myid).ljust(self.size, b".")[:max(self.size, 1)]
        actions = [Unicast(self.sink, UupData(self.myid, self.seq, data))]
        if self.left > 0:
            actions.append(self._timer(self.interval)[1])
        return actions

    def on_timer(self, epoch):
        if epoch != self._epoch or self.left <= 0:
            return []
        return self._send()


PROTOCOLS = ("cbgrr", "rup-seq", "rup-par", "uup-par")


def rr_factory(protocol, coordinator=1):
    """Node factory for request-reply comparisons."""
    if protocol == "cbgrr":
        return None
    if protocol not in ("rup-seq", "rup-par"):
        raise ValueError(f"{protocol} does not run request-reply rounds")
    parallel = protocol == "rup-par"

    def make(sim, pid):
        cfg = sim.config.core_config()
        if pid == coordinator:
            return RupRequester(pid, cfg, parallel=parallel)
        return RupResponder(pid, cfg)
    return make


def stream_factory(protocol, count, size, interval=None, sink=1):
    """Node factory for the N-1 stream: every non-sink process sends ``count`` messages."""
    if protocol not in ("rup-par", "uup-par"):
        raise ValueError(f"{protocol} has no one-way stream variant")

    def make(sim, pid):
        cfg = sim.config.core_config()
        if pid == sink:
            return StreamSink(pid, cfg, reliable=protocol == "rup-par")
        if protocol == "rup-par":
            return RupStreamSender(pid, cfg, sink, count, size,
                                   timeout=2 * (sim.config.n - 1) * cfg.msg_t)
        gap = interval or (sim.config.n - 1) * sim.airtime(UupData(pid, 0, b"x" * max(size, 1)).wire_size())
        return UupSender(pid, cfg, sink, count, size, gap)
    return make

