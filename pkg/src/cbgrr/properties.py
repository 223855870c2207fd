"""Randomised fault campaigns and scripted adversarial runs checked by PropertyMonitor."""
import random
from collections import Counter
from dataclasses import dataclass, field, replace

from .events import MemberState
from .invariants import PropertyMonitor
from .node import Node
from .sim import ScriptEvent, SimConfig, Simulator

MS = 1000


@dataclass
class CampaignConfig:
    seeds: int = 500
    first_seed: int = 0
    n: int = 6
    initial: int = 4
    max_crashes: int = 3
    max_joins: int = 3
    max_leaves: int = 2
    loss: float = 0.05
    msg_t: int = 1 * MS
    fault_detect_t: int = 20 * MS
    proc_t: int = 500
    proc_delay: int = 200
    payload: int = 8
    think_time: int = 2 * MS
    join_every: int = 20 * MS
    join_t: int = 3 * MS
    leave_every: int = 30 * MS
    leave_t: int = 3 * MS
    fault_window: int = 300 * MS
    end_time: int = 510 * MS


@dataclass
class CampaignReport:
    runs: int = 0
    violations: list = field(default_factory=list)
    checks: Counter = field(default_factory=Counter)
    faults: Counter = field(default_factory=Counter)

    @property
    def ok(self):
        return not self.violations

    def by_property(self):
        return Counter(v.prop for _, v in self.violations)


def random_scenario(seed, cc=None):
    """Build one randomised run: periodic polls plus random crashes, joins and leaves."""
    cc = cc or CampaignConfig()
    rng = random.Random(seed)
    pids = list(range(1, cc.n + 1))
    initial = tuple(pids[:cc.initial])
    events = []
    for t in range(cc.join_every, cc.end_time, cc.join_every):
        events.append(ScriptEvent(t, "checkjoins", None, (cc.join_t,)))
    for t in range(cc.leave_every, cc.end_time, cc.leave_every):
        events.append(ScriptEvent(t, "checkleaves", None, (cc.leave_t,)))

    def when():
        return rng.randint(1 * MS, cc.fault_window)

    crashed = {}
    for p in rng.sample(pids, rng.randint(0, cc.max_crashes)):
        crashed[p] = when()
        events.append(ScriptEvent(crashed[p], "crash", p))
    for _ in range(rng.randint(0, cc.max_leaves)):
        events.append(ScriptEvent(when(), "leave", rng.choice(initial)))
    outsiders = [p for p in pids if p not in initial]
    for _ in range(rng.randint(0, cc.max_joins)):
        p = rng.choice(outsiders + list(crashed))
        if p in crashed:
            t = crashed[p] + cc.fault_detect_t + rng.randint(1, 50 * MS)
        else:
            t = when()
        events.append(ScriptEvent(min(t, cc.fault_window + cc.fault_detect_t + 50 * MS), "join", p))
    return SimConfig(
        n=cc.n, members=initial, msg_t=cc.msg_t, fault_detect_t=cc.fault_detect_t,
        proc_t=cc.proc_t, proc_delay=cc.proc_delay, loss=cc.loss, seed=seed,
        payload=cc.payload, reply_size=cc.payload, rounds=None, think_time=cc.think_time,
        end_time=cc.end_time, events=sorted(events, key=lambda e: e.time))


def run_checked(config, factory=None, settle=None):
    mon = PropertyMonitor(settle=config.msg_t if settle is None else settle)
    sim = Simulator(config, factory=factory, monitor=mon)
    sim.run()
    return sim, mon


def run_properties(cc=None, progress=None):
    cc = cc or CampaignConfig()
    report = CampaignReport()
    for seed in range(cc.first_seed, cc.first_seed + cc.seeds):
        sim, mon = run_checked(random_scenario(seed, cc))
        report.runs += 1
        report.checks.update(mon.checks)
        report.faults.update(reason for _, _, reason in sim.departures)
        report.violations.extend((seed, v) for v in mon.violations)
        if progress:
            progress(seed, mon)
    return report


# -- scripted adversarial runs --

class DescendingPushNode(Node):
    """Pushes new members in descending ticket order; a negative control only."""

    def _start_push_sequence(self, origin):
        old = self.grp.old()
        new = sorted(self.grp.new(), key=self.grp.ticket, reverse=True)
        self._push_queue = [old] + [frozenset([p]) for p in new]
        self._push_origin = origin
        self._push_clears = True
        return self._next_push([])


def _factory(node_cls):
    def make(sim, pid):
        return node_cls(pid, sim.config.core_config(), rng=sim.node_rng(pid))
    return make


def _base(**kw):
    cfg = dict(msg_t=2 * MS, fault_detect_t=20 * MS, proc_t=1 * MS, airtime=1 * MS,
               end_time=200 * MS, rounds=None, think_time=5 * MS)
    cfg.update(kw)
    return SimConfig(**cfg)


def _first_recv_time(sim, name, src, dst):
    """Arrival time at ``dst`` of the first ``name`` sent by ``src``."""
    sids = {i for i, s in enumerate(sim.sends) if s[0] == name and s[1] == src}
    for t, node, kind, detail in sim.trace.records:
        if kind == "RECV" and node == dst and int(detail) in sids:
            return t
    raise LookupError(f"{name} from p{src} never reached p{dst}")


def _crash_after(config, factory, name, src, dst, victims):
    """Re-run ``config`` with ``victims`` crashing just after a chosen reception."""
    probe = replace(config, end_time=60 * MS, events=list(config.events))
    sim = Simulator(probe, factory=factory)
    sim.run()
    t = _first_recv_time(sim, name, src, dst)
    events = list(config.events) + [ScriptEvent(t, "crash", v) for v in victims]
    return replace(config, events=events)


def scenario_joiner_stranded(descending=False):
    """Two joiners admitted in one poll; the coordinator dies mid push sequence.

    p1 is the only old member. Whichever joiner is pushed first holds the view
    when p1 crashes right after acknowledging it. With ascending tickets that is
    p2, which becomes coordinator and finishes the push to p3. Descending order
    leaves p3 electing p2, which never left JOIN.
    """
    node_cls = DescendingPushNode if descending else Node
    factory = _factory(node_cls)
    cfg = _base(n=3, members=(1,), rounds=0, events=[
        ScriptEvent(1 * MS, "join", 2),
        ScriptEvent(1 * MS, "join", 3),
        ScriptEvent(2 * MS, "checkjoins", None, (3 * MS,)),
        ScriptEvent(80 * MS, "rr", None, ("all", b"x")),
    ])
    first = 3 if descending else 2
    return _crash_after(cfg, factory, "VACK", first, 1, victims=[1]), factory


def scenario_partial_push():
    """The coordinator crashes after only some old members acknowledged a new view."""
    factory = _factory(Node)
    cfg = _base(n=4, members=(1, 2, 3), events=[
        ScriptEvent(1 * MS, "join", 4),
        ScriptEvent(2 * MS, "checkjoins", None, (3 * MS,)),
    ])
    return _crash_after(cfg, factory, "VACK", 2, 1, victims=[1]), factory


def scenario_leaving_successor():
    """The next coordinator in ticket order has asked to leave when the coordinator fails."""
    factory = _factory(Node)
    cfg = _base(n=3, members=(1, 2, 3), events=[
        ScriptEvent(3 * MS, "leave", 2),
        ScriptEvent(10 * MS, "crash", 1),
    ])
    return cfg, factory


ADVERSARIAL = {
    "joiner-stranded": lambda: scenario_joiner_stranded(False),
    "partial-push": scenario_partial_push,
    "leaving-successor": scenario_leaving_successor,
}


def run_adversarial(name):
    cfg, factory = ADVERSARIAL[name]()
    return run_checked(cfg, factory=factory)


def final_states(sim):
    return {p: (h.node.state if h.alive else None) for p, h in sim.hosts.items()}


__all__ = [
    "ADVERSARIAL", "CampaignConfig", "CampaignReport", "DescendingPushNode", "MemberState",
    "final_states", "random_scenario", "run_adversarial", "run_checked", "run_properties",
]
