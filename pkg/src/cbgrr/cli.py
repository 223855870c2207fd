"""Command-line entry point: experiments, property campaigns, scripted runs, UDP nodes.

Exit codes: 0 success, 1 a checked property was violated, 2 usage or configuration error.
"""
import argparse
import sys
from dataclasses import fields

from .experiments import SCENARIOS, ExperimentSpec, SpecError, run_experiment, write_csv
from .baselines import PROTOCOLS
from .invariants import PropertyMonitor
from .properties import ADVERSARIAL, CampaignConfig, run_adversarial, run_checked, random_scenario, run_properties
from .script import load_script, parse_duration
from .sim import SimConfigError, Simulator

OK, VIOLATION, USAGE = 0, 1, 2


def _seeds(text):
    """``7`` or ``0-9`` or ``1,4,9``."""
    out = []
    for part in text.split(","):
        lo, sep, hi = part.partition("-")
        if sep:
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _read_config(path):
    """key = value lines naming ExperimentSpec fields."""
    known = {f.name: f for f in fields(ExperimentSpec)}
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep or key not in known:
                raise SpecError(f"{path}:{lineno}: unknown setting {key!r}")
            if key == "seeds":
                values[key] = _seeds(value)
            elif key in ("scenario", "protocol", "out"):
                values[key] = value
            elif key == "loss":
                values[key] = float(value)
            elif value.lower() == "none":
                values[key] = None
            else:
                values[key] = parse_duration(value)
    return values


_EXP_FLAGS = {
    "scenario": "scenario", "protocol": "protocol", "n": "n", "rounds": "rounds",
    "loss": "loss", "seed": "seeds", "msgt": "msg_t", "faultdetectt": "fault_detect_t",
    "proct": "proc_t", "procdelay": "proc_delay", "airtime": "airtime", "bitrate": "bitrate",
    "payload": "payload", "replysize": "reply_size", "initial": "initial", "joint": "join_t",
    "out": "out",
}


def cmd_exp(args):
    values = _read_config(args.config) if args.config else {}
    for flag, key in _EXP_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    spec = ExperimentSpec(**values)
    rows = run_experiment(spec, jobs=args.jobs)
    if not spec.out:
        write_csv(rows, sys.stdout)
    bad = sum(r.violations for r in rows)
    if bad:
        print(f"{bad} property violations", file=sys.stderr)
        return VIOLATION
    return OK


def cmd_props(args):
    cc = CampaignConfig(seeds=args.seeds, first_seed=args.first_seed, n=args.n, loss=args.loss,
                        max_crashes=args.crashes, max_joins=args.joins, max_leaves=args.leaves)
    failed = False
    if not args.skip_adversarial:
        for name in ADVERSARIAL:
            _, mon = run_adversarial(name)
            status = "ok" if not mon.violations else f"{len(mon.violations)} violations"
            print(f"adversarial {name}: {status}")
            failed |= bool(mon.violations)
    report = run_properties(cc)
    print(f"random runs: {report.runs}, faults: {dict(report.faults)}, checks: {dict(report.checks)}")
    for seed, v in report.violations[:20]:
        print(f"  seed {seed}: {v}")
    if report.violations and args.dump:
        seed = report.violations[0][0]
        sim, _ = run_checked(random_scenario(seed, cc))
        sim.trace.export(args.dump)
        print(f"trace of seed {seed} written to {args.dump}")
    print("violations:", dict(report.by_property()) or 0)
    return VIOLATION if failed or report.violations else OK


def cmd_sim(args):
    cfg = load_script(args.script)
    mon = PropertyMonitor()
    sim = Simulator(cfg, monitor=mon)
    trace = sim.run()
    if args.trace:
        trace.export(args.trace)
    elif args.print:
        for line in trace.lines():
            print(line)
    print(f"records {len(trace)} sends {len(sim.sends)} sha256 {trace.digest()}")
    for v in mon.violations:
        print(f"violation: {v}")
    return VIOLATION if mon.violations else OK


def cmd_node(args):
    from .udp import TransportConfig, loopback_peers, run_node
    members = tuple(int(p) for p in args.members.split(",")) if args.members else ()
    cfg = TransportConfig(pid=args.pid, peers=loopback_peers(args.n, args.base_port),
                          members=members, heartbeat=args.heartbeat, msg_t=args.msgt,
                          control_port=args.control_port)
    if args.pid not in cfg.peers:
        raise SpecError(f"pid {args.pid} is not in 1..{args.n}")
    run_node(cfg)
    return OK


def build_parser():
    p = argparse.ArgumentParser(prog="cbgrr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("exp", help="run an experiment scenario and write CSV")
    e.add_argument("--config", help="key = value file; explicit flags take precedence")
    e.add_argument("--scenario", choices=SCENARIOS)
    e.add_argument("--protocol", choices=PROTOCOLS)
    e.add_argument("-n", type=int)
    e.add_argument("--rounds", type=int)
    e.add_argument("--loss", type=float)
    e.add_argument("--seed", type=_seeds, help="seed, range a-b, or list a,b,c")
    for flag in ("msgt", "faultdetectt", "proct", "procdelay", "airtime", "joint"):
        e.add_argument(f"--{flag}", type=parse_duration, help="microseconds, or with us/ms/s suffix")
    e.add_argument("--bitrate", type=int)
    e.add_argument("--payload", type=int)
    e.add_argument("--replysize", type=int)
    e.add_argument("--initial", type=int, help="join-cost: size of the starting group")
    e.add_argument("--out")
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(fn=cmd_exp)

    r = sub.add_parser("props", help="randomised fault campaign plus adversarial scenarios")
    r.add_argument("--seeds", type=int, default=500)
    r.add_argument("--first-seed", type=int, default=0)
    r.add_argument("-n", type=int, default=6)
    r.add_argument("--loss", type=float, default=0.05)
    r.add_argument("--crashes", type=int, default=3)
    r.add_argument("--joins", type=int, default=3)
    r.add_argument("--leaves", type=int, default=2)
    r.add_argument("--skip-adversarial", action="store_true")
    r.add_argument("--dump", help="write the trace of the first failing seed here")
    r.set_defaults(fn=cmd_props)

    s = sub.add_parser("sim", help="run a scenario script")
    s.add_argument("script")
    s.add_argument("--trace", help="export the trace to this file")
    s.add_argument("--print", action="store_true", help="print the trace")
    s.set_defaults(fn=cmd_sim)

    nd = sub.add_parser("node", help="run one node over UDP on loopback")
    nd.add_argument("--pid", type=int, required=True)
    nd.add_argument("-n", type=int, default=3, help="group address space 1..n")
    nd.add_argument("--base-port", type=int, default=47000)
    nd.add_argument("--members", default="", help="initial members, e.g. 1,2")
    nd.add_argument("--heartbeat", type=float, default=0.05, help="seconds")
    nd.add_argument("--msgt", type=parse_duration, default=20_000)
    nd.add_argument("--control-port", type=int)
    nd.set_defaults(fn=cmd_node)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (SpecError, SimConfigError, ValueError, OSError) as exc:
        print(f"cbgrr: error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
