"""Run a protocol node over real UDP sockets.

Broadcast is realised as one datagram per peer address, so a whole group can
run on loopback with one port per process. A transport-level heartbeat
(message type 0x10, outside the protocol's type range) drives a simple fault
detector: a peer silent for three heartbeat periods is declared failed. Real
networks give no delivery bound, so this detector is only an approximation of
the synchronous one the protocol assumes; a false suspicion can break
coordinator uniqueness until the group settles.

Each node also listens on a local TCP control port for newline-delimited
commands::

    join | leave | req <hex-payload> <pid,pid,...|all> | checkjoins <ms> |
    checkleaves <ms> | status | quit

Set CBGRR_LOG=debug (or info, warning) to control log output.
"""
import asyncio
import json
import logging
import os
import struct
import time
from dataclasses import dataclass

from . import codec
from .events import (
    AppReply, Broadcast, CancelTimers, DeliverRequest, FaultNotify, MemberState,
    MsgRecv, RoundComplete, RoundKind, SetTimer, TimerFired, Unicast, Via,
)
from .node import Config, Node, ProtocolError

log = logging.getLogger("cbgrr.udp")

HEARTBEAT = 0x10
_HB = struct.Struct(">2sBBB")


def configure_logging():
    level = os.environ.get("CBGRR_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(message)s")


def heartbeat_frame(pid):
    return _HB.pack(codec.MAGIC, codec.VERSION, HEARTBEAT, pid)


@dataclass
class TransportConfig:
    pid: int
    peers: dict                      # pid -> (host, port), including this node
    members: tuple = ()
    heartbeat: float = 0.05          # seconds
    msg_t: int = 20_000              # microseconds
    proc_t: int = 1_000
    control_port: int = None
    misses: int = 3

    @property
    def fault_detect_t(self):
        return round(self.misses * self.heartbeat * 1e6)

    def core_config(self):
        return Config(msg_t=self.msg_t, fault_detect_t=max(self.fault_detect_t, self.msg_t),
                      proc_t=self.proc_t)


def loopback_peers(n, base_port):
    return {p: ("127.0.0.1", base_port + p) for p in range(1, n + 1)}


def echo_app(pid):
    def app(coord, k, data):
        return (b"%d:" % pid + data)[:1024]
    return app


class _Datagrams(asyncio.DatagramProtocol):
    def __init__(self, runner):
        self.runner = runner

    def datagram_received(self, data, addr):
        self.runner.on_datagram(data, addr)

    def error_received(self, exc):
        log.debug("p%d socket error: %s", self.runner.pid, exc)


class NodeRunner:
    """One protocol node bound to a UDP port; all events run on one asyncio loop."""

    def __init__(self, config, app=None, node=None):
        self.config = config
        self.pid = config.pid
        self.node = node or Node(config.pid, config.core_config())
        self.app = app or echo_app(config.pid)
        self.malformed = 0
        self.sent = 0
        self.last_result = None
        self.results = []
        self._transport = None
        self._server = None
        self._tasks = []
        self._timers = {}
        self._heard = {}
        self._suspected = set()
        self._waiters = []
        self._running = False
        self.exit_requested = False
        self.tap = None   # optional callable(frame, addr) for every datagram sent

    # -- lifecycle --

    async def start(self):
        loop = asyncio.get_running_loop()
        host, port = self.config.peers[self.pid]
        self._transport, _ = await loop.create_datagram_endpoint(
            lambda: _Datagrams(self), local_addr=(host, port))
        self._running = True
        now = time.monotonic()
        self._heard = {p: now for p in self.config.peers if p != self.pid}
        members = self.config.members
        self._execute(self.node.init(members if self.pid in members else ()))
        self._tasks.append(asyncio.ensure_future(self._heartbeat_loop()))
        if self.config.control_port is not None:
            self._server = await asyncio.start_server(
                self._control_client, "127.0.0.1", self.config.control_port)
        log.info("p%d up on %s:%d", self.pid, host, port)

    async def stop(self):
        """Stop abruptly, as a crash would: no goodbye message is sent."""
        self._running = False
        for t in self._tasks:
            t.cancel()
        for handles in self._timers.values():
            for h in handles:
                h.cancel()
        self._timers.clear()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        if self._transport is not None:
            self._transport.close()
        for fut in self._waiters:
            if not fut.done():
                fut.set_exception(ConnectionAbortedError("node stopped"))

    # -- inbound --

    def on_datagram(self, data, addr):
        if not self._running:
            return
        if len(data) == _HB.size and data[3:4] == bytes([HEARTBEAT]):
            magic, version, _, sender = _HB.unpack(data)
            if magic == codec.MAGIC and version == codec.VERSION:
                self._alive(sender)
                return
        try:
            msg = codec.decode(data)
        except codec.CodecError as exc:
            self.malformed += 1
            log.debug("p%d dropped malformed frame from %s: %s", self.pid, addr, exc)
            return
        sender = getattr(msg, "pid", None)
        if sender is not None:
            self._alive(sender)
        self.dispatch(MsgRecv(msg, Via.BROADCAST))

    def _alive(self, pid):
        if pid in self._heard:
            self._heard[pid] = time.monotonic()
            if pid in self._suspected:
                self._suspected.discard(pid)
                log.info("p%d hears p%d again", self.pid, pid)

    # -- state machine plumbing --

    def dispatch(self, event):
        if not self._running:
            return []
        actions = self.node.handle(event)
        self._execute(actions)
        return actions

    def _execute(self, actions):
        loop = asyncio.get_event_loop()
        for a in actions:
            t = type(a)
            if t is Broadcast:
                frame = codec.encode(a.msg)
                for p, addr in self.config.peers.items():
                    if p != self.pid:
                        self._send(frame, addr)
            elif t is Unicast:
                addr = self.config.peers.get(a.dst)
                if addr is not None:
                    self._send(codec.encode(a.msg), addr)
            elif t is SetTimer:
                h = loop.call_later(a.delay / 1e6, self.dispatch, TimerFired(a.epoch, a.kind))
                self._timers.setdefault(a.epoch, []).append(h)
            elif t is CancelTimers:
                for h in self._timers.pop(a.epoch, ()):
                    h.cancel()
            elif t is DeliverRequest:
                reply = self.app(a.coord, a.k, a.data)
                loop.call_soon(self.dispatch, AppReply(a.k, reply))
            elif t is RoundComplete:
                self.last_result = (a.kind.value, {p: d.hex() for p, d in sorted(a.result.items())})
                self.results.append(self.last_result)
                waiters, self._waiters = self._waiters, []
                for fut in waiters:
                    if not fut.done():
                        fut.set_result(self.last_result)
        # drop handles of epochs the node has moved past
        for e in [e for e in self._timers if e < self.node.round_epoch - 8]:
            del self._timers[e]

    def _send(self, frame, addr):
        if self._transport is None or self._transport.is_closing():
            return
        self.sent += 1
        if self.tap is not None:
            self.tap(frame, addr)
        self._transport.sendto(frame, addr)

    # -- fault detector --

    async def _heartbeat_loop(self):
        period = self.config.heartbeat
        limit = self.config.misses * period
        frame = heartbeat_frame(self.pid)
        while self._running:
            if self.node.state is not MemberState.LEFT:
                for p, addr in self.config.peers.items():
                    if p != self.pid:
                        self._send(frame, addr)
            now = time.monotonic()
            for p, seen in self._heard.items():
                if p not in self._suspected and now - seen > limit:
                    self._suspected.add(p)
                    log.info("p%d suspects p%d", self.pid, p)
                    self.dispatch(FaultNotify(p))
            await asyncio.sleep(period)

    # -- application calls --

    def _wait_round(self):
        fut = asyncio.get_running_loop().create_future()
        self._waiters.append(fut)
        return fut

    async def command(self, line, timeout=5.0):
        """Execute one control command; returns the response line."""
        parts = line.split()
        if not parts:
            return "err empty command"
        op, args = parts[0], parts[1:]
        try:
            if op == "join":
                self.dispatch_call(self.node.request_join)
                return "ok"
            if op == "leave":
                self.dispatch_call(self.node.request_leave)
                return "ok"
            if op == "status":
                return "ok " + json.dumps(self.status(), sort_keys=True)
            if op in ("req", "checkjoins", "checkleaves"):
                await self._until_idle(timeout)
                fut = self._wait_round()
                if op == "req":
                    data = bytes.fromhex(args[0]) if args else b""
                    if len(args) < 2 or args[1] == "all":
                        dsts = self.node.members() - {self.pid}
                    else:
                        dsts = {int(p) for p in args[1].split(",")}
                    self.dispatch_call(self.node.start_request_reply, dsts, data)
                else:
                    ms = int(args[0]) if args else 50
                    fn = self.node.check_joins if op == "checkjoins" else self.node.check_leaves
                    self.dispatch_call(fn, ms * 1000)
                kind, result = await asyncio.wait_for(fut, timeout)
                return "ok " + json.dumps({"kind": kind, "replies": result}, sort_keys=True)
            return f"err unknown command {op}"
        except ProtocolError as exc:
            self._waiters = [w for w in self._waiters if not w.done()]
            return f"err {exc}"
        except (ValueError, IndexError) as exc:
            return f"err bad arguments: {exc}"
        except asyncio.TimeoutError:
            return "err timed out"

    async def _until_idle(self, timeout):
        # a coordinator finishing a view push after takeover accepts calls once idle
        deadline = time.monotonic() + timeout
        while self.node.is_coordinator and self.node.round is not RoundKind.IDLE:
            await asyncio.wait_for(self._wait_round(), max(0.0, deadline - time.monotonic()))

    def dispatch_call(self, fn, *args):
        try:
            actions = fn(*args)
        except ProtocolError:
            for fut in self._waiters:
                fut.cancel()
            self._waiters = []
            raise
        self._execute(actions)

    def status(self):
        n = self.node
        return {"pid": self.pid, "state": n.state.value, "coord": n.coordid,
                "members": sorted(n.members()), "round": n.round.value,
                "malformed": self.malformed, "suspected": sorted(self._suspected)}

    async def _control_client(self, reader, writer):
        try:
            while True:
                raw = await reader.readline()
                if not raw:
                    break
                line = raw.decode(errors="replace").strip()
                if line == "quit":
                    writer.write(b"ok\n")
                    await writer.drain()
                    asyncio.get_running_loop().call_soon(self._request_exit)
                    break
                writer.write((await self.command(line)).encode() + b"\n")
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()

    def _request_exit(self):
        self._running = False
        self.exit_requested = True


async def serve(config, stop_event=None):
    """Run one node until ``stop_event`` is set or ``quit`` arrives on the control port."""
    runner = NodeRunner(config)
    await runner.start()
    try:
        while runner._running and not (stop_event and stop_event.is_set()):
            await asyncio.sleep(0.05)
    finally:
        await runner.stop()
    return runner


def run_node(config):
    configure_logging()
    try:
        asyncio.run(serve(config))
    except KeyboardInterrupt:
        pass
    except OSError as exc:
        raise SystemExit(f"p{config.pid}: socket error: {exc}")


__all__ = ["HEARTBEAT", "NodeRunner", "TransportConfig", "echo_app", "heartbeat_frame",
           "loopback_peers", "run_node", "serve"]
