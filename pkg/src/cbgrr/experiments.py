"""Desk-scale experiment scenarios producing plot-ready CSV rows."""
import csv
import io
import statistics
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

from .baselines import PROTOCOLS, rr_factory, stream_factory
from .events import MemberState, RoundKind
from .invariants import PropertyMonitor
from .properties import CampaignConfig, random_scenario, run_checked
from .sim import Monitor, ScriptEvent, SimConfig, Simulator

SCENARIOS = ("rr-throughput", "n1-polling", "join-cost", "fault-properties")
SUPPORTED = {
    "rr-throughput": ("cbgrr", "rup-seq", "rup-par"),
    "n1-polling": ("cbgrr", "rup-par", "uup-par"),
    "join-cost": ("cbgrr",),
    "fault-properties": ("cbgrr",),
}


class SpecError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    scenario: str = "rr-throughput"
    protocol: str = "cbgrr"
    n: int = 3
    rounds: int = 1000
    loss: float = 0.0
    seeds: tuple = (0,)
    msg_t: int = 10_000
    fault_detect_t: int = 100_000
    proc_t: int = 1_000
    proc_delay: int = 0
    airtime: int = None
    bitrate: int = 1_000_000
    payload: int = 1024
    reply_size: int = 1024
    initial: int = 3
    join_t: int = 5_000
    out: str = None

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise SpecError(f"unknown scenario {self.scenario!r}")
        if self.protocol not in PROTOCOLS:
            raise SpecError(f"unknown protocol {self.protocol!r}")
        if self.protocol not in SUPPORTED[self.scenario]:
            raise SpecError(f"{self.scenario} does not support protocol {self.protocol}")
        if not 2 <= self.n <= 64:
            raise SpecError("n must be within [2, 64]")
        if self.rounds < 1:
            raise SpecError("rounds must be at least 1")
        if not 0.0 <= self.loss < 1.0:
            raise SpecError("loss must be within [0, 1)")
        if not self.seeds:
            raise SpecError("at least one seed is required")
        if self.scenario == "join-cost" and not 1 <= self.initial < self.n:
            raise SpecError("join-cost needs 1 <= initial < n")
        if not 0 <= self.payload <= 1024 or not 0 <= self.reply_size <= 1024:
            raise SpecError("payload sizes must be within [0, 1024]")

    def sim_config(self, seed, **kw):
        cfg = dict(n=self.n, msg_t=self.msg_t, fault_detect_t=self.fault_detect_t,
                   proc_t=self.proc_t, proc_delay=self.proc_delay, airtime=self.airtime,
                   bitrate=self.bitrate, loss=self.loss, seed=seed, payload=self.payload,
                   reply_size=self.reply_size, rounds=self.rounds)
        cfg.update(kw)
        return SimConfig(**cfg)


@dataclass
class MetricsRow:
    scenario: str
    protocol: str
    n: int
    seed: int
    rounds: int = 0
    loss: float = 0.0
    transmissions: int = 0
    frames_by_type: str = ""
    duration_us: int = 0
    throughput_Bps: float = 0.0
    lat_min_us: float = None
    lat_mean_us: float = None
    lat_max_us: float = None
    lat_std_us: float = None
    node_delay_us: float = None
    join_delay_us: float = None
    update_delay_us: float = None
    delivered_fraction: float = None
    violations: int = 0

    def key(self):
        return (self.scenario, self.protocol, self.n, self.seed)


HEADER = [f.name for f in fields(MetricsRow)]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}".rstrip("0").rstrip(".") if v == v else "nan"
    return str(v)


def write_csv(rows, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(HEADER)
    for r in sorted(rows, key=MetricsRow.key):
        d = asdict(r)
        w.writerow([_fmt(d[h]) for h in HEADER])


def to_csv(rows):
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def read_csv(fh):
    return list(csv.DictReader(fh))


def _frames(sim):
    c = Counter(s[0] for s in sim.sends)
    return ";".join(f"{k}={c[k]}" for k in sorted(c))


def _latency(row, lat):
    if lat:
        row.lat_min_us = float(min(lat))
        row.lat_max_us = float(max(lat))
        row.lat_mean_us = statistics.fmean(lat)
        row.lat_std_us = statistics.pstdev(lat)


def _node_delay(sim, names, skip):
    """Mean gap between consecutive data transmissions of each non-coordinator process."""
    per = {}
    for name, src, _, start, _ in sim.sends:
        if name in names and src != skip:
            per.setdefault(src, []).append(start)
    gaps = [b - a for ts in per.values() for a, b in zip(ts, ts[1:])]
    return statistics.fmean(gaps) if gaps else None


def rr_throughput(spec, seed):
    mon = PropertyMonitor(per_event=False) if spec.protocol == "cbgrr" else Monitor()
    sim = Simulator(spec.sim_config(seed), factory=rr_factory(spec.protocol), monitor=mon)
    sim.run()
    row = MetricsRow(spec.scenario, spec.protocol, spec.n, seed, spec.rounds, spec.loss)
    row.transmissions = len(sim.sends)
    row.frames_by_type = _frames(sim)
    done = sim.app.completed_rr()
    _latency(row, [r.latency for r in done])
    if sim.sends and done:
        row.duration_us = done[-1].end - sim.sends[0][3]
        moved = sum(len(r.replies) for r in done) * (spec.payload + spec.reply_size)
        row.throughput_Bps = moved * 1e6 / row.duration_us if row.duration_us else 0.0
    row.delivered_fraction = sum(len(r.replies) for r in done) / (spec.rounds * (spec.n - 1))
    row.violations = len(getattr(mon, "violations", ())) + _rup_violations(sim, spec, done)
    return row


def _rup_violations(sim, spec, done):
    if spec.protocol == "cbgrr":
        return 0
    # alternating bit: each responder delivers exactly once per completed round
    per = Counter(d[1] for d in sim.deliveries)
    return sum(1 for p in range(2, spec.n + 1) if per[p] != len(done))


def n1_polling(spec, seed):
    row = MetricsRow(spec.scenario, spec.protocol, spec.n, seed, spec.rounds, spec.loss)
    expected = spec.rounds * (spec.n - 1)
    if spec.protocol == "cbgrr":
        mon = PropertyMonitor(per_event=False)
        sim = Simulator(spec.sim_config(seed, payload=0), monitor=mon)
        sim.run()
        done = sim.app.completed_rr()
        got = sum(len(r.replies) for r in done)
        arrivals = [r.end for r in done]
        row.violations = len(mon.violations)
        row.node_delay_us = _node_delay(sim, {"ARPL"}, 1)
        _latency(row, [r.latency for r in done])
    else:
        factory = stream_factory(spec.protocol, spec.rounds, spec.reply_size)
        sim = Simulator(spec.sim_config(seed, rounds=0), factory=factory)
        sim.run()
        got = sim.hosts[1].node.received
        arrivals = [d[0] for d in sim.deliveries if d[1] == 1]
        row.node_delay_us = _node_delay(sim, {"RupData", "UupData"}, 1)
    row.transmissions = len(sim.sends)
    row.frames_by_type = _frames(sim)
    row.delivered_fraction = got / expected
    if len(arrivals) > 1:
        row.duration_us = arrivals[-1] - sim.sends[0][3]
        row.throughput_Bps = got * spec.reply_size * 1e6 / row.duration_us
    return row


def join_config(spec, seed):
    """Initial group of ``spec.initial`` processes; the rest ask to join, then one poll."""
    ms = 1000
    joiners = range(spec.initial + 1, spec.n + 1)
    events = [ScriptEvent(1 * ms, "join", p) for p in joiners]
    events.append(ScriptEvent(2 * ms, "checkjoins", None, (spec.join_t,)))
    return spec.sim_config(seed, members=tuple(range(1, spec.initial + 1)), rounds=0,
                           events=events)


def join_cost(spec, seed):
    cfg = join_config(spec, seed)
    sim, mon = run_checked(cfg)
    row = MetricsRow(spec.scenario, spec.protocol, spec.n, seed, 1, spec.loss)
    row.transmissions = len(sim.sends)
    row.frames_by_type = _frames(sim)
    asked = {p: t for t, p, before, after in sim.state_log if after is MemberState.JOIN}
    joined = {p: t for t, p, before, after in sim.state_log
              if before is MemberState.JOIN and after is MemberState.NORMAL}
    delays = [joined[p] - asked[p] for p in joined if p in asked]
    if delays:
        row.join_delay_us = statistics.fmean(delays)
    polls = [r for r in sim.app.records if r.end is not None and r.kind is RoundKind.JOIN_POLL]
    if polls:
        row.update_delay_us = float(polls[0].latency)
        row.duration_us = polls[0].latency
    row.delivered_fraction = len(joined) / (spec.n - spec.initial)
    row.violations = len(mon.violations)
    return row


def fault_properties(spec, seed):
    cc = CampaignConfig(n=spec.n, initial=max(1, spec.n - 2), loss=spec.loss)
    sim, mon = run_checked(random_scenario(seed, cc))
    row = MetricsRow(spec.scenario, spec.protocol, spec.n, seed, 0, spec.loss)
    row.transmissions = len(sim.sends)
    row.frames_by_type = _frames(sim)
    done = sim.app.completed_rr()
    _latency(row, [r.latency for r in done])
    row.rounds = len(done)
    row.violations = len(mon.violations)
    return row


RUNNERS = {
    "rr-throughput": rr_throughput,
    "n1-polling": n1_polling,
    "join-cost": join_cost,
    "fault-properties": fault_properties,
}


def _one(args):
    spec, seed = args
    return RUNNERS[spec.scenario](spec, seed)


def run_experiment(spec, jobs=1):
    """Run every seed of ``spec``; rows come back sorted so output is order-independent."""
    spec.validate()
    work = [(spec, s) for s in spec.seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_one, work))
    else:
        rows = [_one(w) for w in work]
    rows.sort(key=MetricsRow.key)
    if spec.out:
        with open(spec.out, "w", newline="") as fh:
            write_csv(rows, fh)
    return rows
