"""Simulator semantics: determinism, medium, fault detector, scripted drops."""
from collections import defaultdict

import pytest
from hypothesis import given, settings, strategies as st

from cbgrr.events import RoundKind
from cbgrr.properties import CampaignConfig, random_scenario
from cbgrr.sim import DropRule, ScriptEvent, SimConfig, SimConfigError, Simulator

MS = 1000


def rr_config(**kw):
    base = dict(n=4, msg_t=2 * MS, fault_detect_t=20 * MS, proc_t=500, airtime=400,
                rounds=20, payload=16, reply_size=16)
    base.update(kw)
    return SimConfig(**base)


def run(cfg, **kw):
    sim = Simulator(cfg, **kw)
    sim.run()
    return sim


def parse(sim):
    """Split the trace into sends {sid: (time, src)}, receipts and faults."""
    sends, recvs, faults = {}, [], []
    for t, node, kind, detail in sim.trace.records:
        if kind == "SEND":
            sends[int(detail.split()[0])] = (t, node)
        elif kind == "RECV":
            recvs.append((t, node, int(detail)))
        elif kind == "FAULT":
            faults.append((t, node, int(detail)))
    return sends, recvs, faults


class TestDeterminism:
    def test_same_seed_same_trace(self):
        cfg = lambda: rr_config(loss=0.2, seed=11)
        assert run(cfg()).trace.digest() == run(cfg()).trace.digest()

    def test_seed_changes_lossy_trace(self):
        assert run(rr_config(loss=0.2, seed=1)).trace.digest() != \
            run(rr_config(loss=0.2, seed=2)).trace.digest()

    def test_random_scenarios_repeat(self):
        cc = CampaignConfig()
        for seed in range(5):
            a = run(random_scenario(seed, cc)).trace.digest()
            b = run(random_scenario(seed, cc)).trace.digest()
            assert a == b


class TestMedium:
    def test_sends_never_overlap(self):
        sim = run(rr_config(loss=0.1, seed=3, max_delay=1500))
        spans = sorted((s[3], s[4]) for s in sim.sends)
        assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))

    def test_delivery_within_msg_t(self):
        cfg = rr_config(max_delay=1500, seed=5)
        sim = run(cfg)
        sends, recvs, _ = parse(sim)
        assert recvs
        assert all(0 < t - sends[sid][0] <= cfg.msg_t for t, _, sid in recvs)

    def test_replies_are_contention_free(self):
        sim = run(rr_config(n=8))
        sends, _, _ = parse(sim)
        for sid, (name, src, _, start, _) in enumerate(sim.sends):
            if name == "ARPL":
                assert start == sends[sid][0], "a reply waited for the medium"
        by_round = defaultdict(list)
        k = 0
        for name, src, _, start, _ in sim.sends:
            if name == "AREQ":
                k += 1
            elif name == "ARPL":
                by_round[k].append((start, src))
        for replies in by_round.values():
            assert [s for _, s in replies] == list(range(2, 9))
            starts = [t for t, _ in replies]
            assert starts == sorted(set(starts))

    def test_airtime_from_bitrate(self):
        sim = Simulator(SimConfig(bitrate=1_000_000))
        assert sim.airtime(125) == 1000
        assert sim.airtime(1) == 8

    def test_total_loss_with_crashes_completes_through_faults(self):
        cfg = SimConfig(n=3, loss=1.0, rounds=1,
                        events=[ScriptEvent(1 * MS, "crash", 2), ScriptEvent(1 * MS, "crash", 3)])
        sim = run(cfg)
        (rec,) = sim.app.rr_records
        assert rec.end is not None and rec.replies == {}
        assert rec.end <= 1 * MS + cfg.fault_detect_t


class TestFaultDetector:
    @settings(max_examples=25)
    @given(st.integers(0, 10_000))
    def test_notifications_follow_last_delivery_and_deadline(self, seed):
        cfg = random_scenario(seed, CampaignConfig())
        sim = run(cfg)
        sends, recvs, faults = parse(sim)
        fdt = cfg.fault_detect_t
        for t0, pid, _ in sim.departures:
            first = {}
            for tf, q, p in faults:
                if p == pid and tf > t0 and q not in first:
                    first[q] = tf
            for q, tf in first.items():
                if tf > t0 + fdt:
                    continue  # a later departure of the same pid
                assert tf - t0 <= fdt
                for tr, r, sid in recvs:
                    t_send, src = sends[sid]
                    if r == q and src == pid and t_send <= t0:
                        assert tr < tf, "fault reported before the last delivery"

    def test_every_live_process_notified(self):
        cfg = SimConfig(n=4, events=[ScriptEvent(5 * MS, "crash", 3)])
        sim = run(cfg)
        _, _, faults = parse(sim)
        assert sorted(q for _, q, p in faults if p == 3) == [1, 2, 4]

    def test_fixed_latency(self):
        cfg = SimConfig(n=3, fault_latency=7 * MS, events=[ScriptEvent(5 * MS, "crash", 2)])
        _, _, faults = parse(run(cfg))
        assert {t for t, _, _ in faults} == {12 * MS}

    def test_rejoin_guard(self):
        cfg = SimConfig(n=3, events=[ScriptEvent(1 * MS, "crash", 2),
                                     ScriptEvent(5 * MS, "join", 2)])
        sim = run(cfg)
        assert any("REJECT join" in d for _, _, k, d in sim.trace.records if k == "APP_CALL")
        assert not sim.hosts[2].alive

    def test_restart_after_detection(self):
        cfg = SimConfig(n=3, end_time=400 * MS,
                        events=[ScriptEvent(1 * MS, "crash", 2), ScriptEvent(150 * MS, "join", 2),
                                ScriptEvent(160 * MS, "checkjoins", None, (5 * MS,))])
        sim = run(cfg)
        assert sim.hosts[2].incarnation == 1
        assert sim.hosts[2].node.members() == {1, 2, 3}


class TestDrops:
    def test_forced_drop_counted(self):
        cfg = rr_config(rounds=3, drops=[DropRule("ARPL", src=2, count=1)])
        sim = run(cfg)
        assert sim.trace.count("DROP") == 1
        assert len(sim.app.completed_rr()) == 3
        assert sum(1 for s in sim.sends if s[0] == "AREQ") == 4

    def test_unlimited_drop_until_fault(self):
        cfg = rr_config(rounds=1, drops=[DropRule("ARPL", src=3, count=None)],
                        events=[ScriptEvent(10 * MS, "crash", 3)])
        sim = run(cfg)
        (rec,) = sim.app.rr_records
        assert set(rec.replies) == {2, 4}


class TestValidation:
    @pytest.mark.parametrize("kw", [
        dict(members=(1, 9)),
        dict(events=[ScriptEvent(0, "crash", 9)]),
        dict(events=[ScriptEvent(0, "explode", 1)]),
        dict(events=[ScriptEvent(0, "crash", None)]),
        dict(drops=[DropRule(src=9)]),
        dict(loss=1.5),
        dict(fault_detect_t=5),
        dict(airtime=0),
        dict(proc_delay=5000),
        dict(n=0),
    ])
    def test_rejected(self, kw):
        with pytest.raises(SimConfigError):
            Simulator(SimConfig(**kw))

    def test_coordinator_op_for_wrong_pid_is_rejected(self):
        cfg = SimConfig(events=[ScriptEvent(0, "rr", 2, ("all", b""))])
        sim = run(cfg)
        assert sim.app.rejected and sim.app.rejected[0][1] == "rr"


def test_view_push_round_recorded():
    cfg = SimConfig(n=4, members=(1, 2, 3), end_time=200 * MS,
                    events=[ScriptEvent(1 * MS, "join", 4),
                            ScriptEvent(2 * MS, "checkjoins", None, (3 * MS,))])
    sim = run(cfg)
    (poll,) = sim.app.records
    assert poll.kind is RoundKind.JOIN_POLL and poll.end is not None
    assert all(h.node.members() == {1, 2, 3, 4} for h in sim.hosts.values())
