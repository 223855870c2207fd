"""Point-to-point reference protocols."""
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from cbgrr.baselines import (
    RupAck, RupData, RupReq, RupRequester, RupResponder, RupRpl, StreamSink, UupData,
    rr_factory, stream_factory,
)
from cbgrr.events import CancelTimers, DeliverRequest, RoundComplete, SetTimer, Unicast
from cbgrr.messages import HEADER
from cbgrr.node import Config, ProtocolError
from cbgrr.sim import SimConfig, Simulator

CFG = Config(msg_t=10, fault_detect_t=100, proc_t=5)


def run(protocol, **kw):
    cfg = dict(n=4, msg_t=2000, fault_detect_t=20_000, proc_t=500, airtime=400, rounds=10)
    cfg.update(kw)
    sim = Simulator(SimConfig(**cfg), factory=rr_factory(protocol))
    sim.run()
    return sim


def sent(actions):
    return [(a.dst, a.msg) for a in actions if isinstance(a, Unicast)]


class TestRupUnits:
    def test_sequential_one_at_a_time(self):
        c = RupRequester(1, CFG)
        c.init({1, 2, 3})
        acts = c.start_request_reply({2, 3}, b"q")
        assert sent(acts) == [(2, RupReq(1, 0, b"q"))]
        assert [a.delay for a in acts if isinstance(a, SetTimer)] == [2 * 10 + 5]
        acts = c.on_message(RupRpl(2, 0, b"a"))
        assert sent(acts) == [(3, RupReq(1, 0, b"q"))]
        acts = c.on_message(RupRpl(3, 0, b"b"))
        (done,) = [a for a in acts if isinstance(a, RoundComplete)]
        assert done.result == {2: b"a", 3: b"b"}
        c.start_request_reply({2}, b"")
        with pytest.raises(ProtocolError):
            c.start_request_reply({2}, b"")

    def test_parallel_sends_all(self):
        c = RupRequester(1, CFG, parallel=True)
        c.init({1, 2, 3, 4})
        acts = c.start_request_reply({2, 3, 4}, b"")
        assert [d for d, _ in sent(acts)] == [2, 3, 4]
        assert {a.delay for a in acts if isinstance(a, SetTimer)} == {2 * 3 * 10 + 5}

    def test_bit_alternates_per_peer(self):
        c = RupRequester(1, CFG)
        c.init({1, 2})
        c.start_request_reply({2}, b"")
        c.on_message(RupRpl(2, 0, b""))
        assert sent(c.start_request_reply({2}, b"")) == [(2, RupReq(1, 1, b""))]
        assert c.on_message(RupRpl(2, 0, b"stale")) == []

    def test_timeout_resends(self):
        c = RupRequester(1, CFG)
        c.init({1, 2})
        (timer,) = [a for a in c.start_request_reply({2}, b"x") if isinstance(a, SetTimer)]
        assert sent(c.on_timer(timer.epoch)) == [(2, RupReq(1, 0, b"x"))]

    def test_failed_peer_settles(self):
        c = RupRequester(1, CFG)
        c.init({1, 2})
        c.start_request_reply({2}, b"")
        acts = c.on_process_failure(2)
        assert any(isinstance(a, CancelTimers) for a in acts)
        assert [a.result for a in acts if isinstance(a, RoundComplete)] == [{}]

    def test_responder_delivers_once(self):
        r = RupResponder(2, CFG)
        assert r.on_message(RupReq(1, 0, b"q")) == [DeliverRequest(1, 1, b"q")]
        assert r.on_message(RupReq(1, 0, b"q")) == []          # still processing
        assert sent(r.app_reply(1, b"a")) == [(1, RupRpl(2, 0, b"a"))]
        assert sent(r.on_message(RupReq(1, 0, b"q"))) == [(1, RupRpl(2, 0, b"a"))]
        assert r.on_message(RupReq(1, 1, b"n")) == [DeliverRequest(1, 2, b"n")]

    def test_sink_acks_and_dedupes(self):
        s = StreamSink(1, CFG)
        acts = s.on_message(RupData(2, 0, b"m"))
        assert sent(acts) == [(2, RupAck(1, 0))] and s.received == 1
        assert sent(s.on_message(RupData(2, 0, b"m"))) == [(2, RupAck(1, 0))]
        assert s.received == 1
        s.on_message(UupData(3, 1, b"u"))
        assert s.received == 2

    def test_wire_sizes(self):
        assert RupReq(1, 0, b"abc").wire_size() == HEADER + 4 + 3
        assert RupAck(1, 0).wire_size() == HEADER + 2
        assert UupData(1, 0, b"").wire_size() == HEADER + 7


class TestRupRuns:
    @pytest.mark.parametrize("protocol", ["rup-seq", "rup-par"])
    @pytest.mark.parametrize("n", [2, 4, 7])
    def test_lossless_counts(self, protocol, n):
        sim = run(protocol, n=n, rounds=25)
        c = Counter(s[0] for s in sim.sends)
        assert c == {"RupReq": 25 * (n - 1), "RupRpl": 25 * (n - 1)}
        assert len(sim.app.completed_rr()) == 25

    @settings(max_examples=25)
    @given(st.sampled_from(["rup-seq", "rup-par"]), st.integers(0, 10**6), st.floats(0.0, 0.3))
    def test_exactly_once_under_loss(self, protocol, seed, loss):
        sim = run(protocol, loss=loss, seed=seed, rounds=12, n=5)
        done = sim.app.completed_rr()
        assert len(done) == 12
        assert all(set(r.replies) == {2, 3, 4, 5} for r in done)
        per = Counter(d[1] for d in sim.deliveries)
        assert per == {p: 12 for p in range(2, 6)}

    def test_factory_rejects_stream_only(self):
        assert rr_factory("cbgrr") is None
        with pytest.raises(ValueError):
            rr_factory("uup-par")
        with pytest.raises(ValueError):
            stream_factory("rup-seq", 1, 1)


class TestStreams:
    def stream(self, protocol, loss=0.0, seed=0, n=5, count=40):
        cfg = SimConfig(n=n, msg_t=2000, fault_detect_t=20_000, airtime=400, loss=loss, seed=seed)
        sim = Simulator(cfg, factory=stream_factory(protocol, count, 32))
        sim.run()
        return sim

    def test_reliable_stream_under_loss(self):
        sim = self.stream("rup-par", loss=0.2, seed=4)
        assert sim.hosts[1].node.received == 4 * 40

    def test_unreliable_stream_lossless(self):
        sim = self.stream("uup-par")
        assert sim.hosts[1].node.received == 4 * 40
        spans = sorted((s[3], s[4]) for s in sim.sends)
        assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))

    def test_unreliable_stream_loses(self):
        sim = self.stream("uup-par", loss=0.2, seed=4, count=200)
        got = sim.hosts[1].node.received
        assert 0.7 * 800 < got < 0.9 * 800
