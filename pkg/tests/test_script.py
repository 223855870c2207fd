"""Scenario script parsing."""
from pathlib import Path

import pytest

from cbgrr.script import load_script, parse_duration, parse_script
from cbgrr.sim import DropRule, ScriptEvent, SimConfigError, Simulator

EXAMPLE = Path(__file__).parent.parent / "scenarios" / "join-then-crash.txt"


@pytest.mark.parametrize("text,us", [("250", 250), ("250us", 250), ("2ms", 2000),
                                     ("1.5ms", 1500), ("3s", 3_000_000)])
def test_durations(text, us):
    assert parse_duration(text) == us


def test_bad_duration():
    with pytest.raises(ValueError):
        parse_duration("2 minutes")


def test_full_script():
    cfg = parse_script("""
        # comment
        n = 4
        members = 1,2,3
        msg_t = 2ms
        loss = 0.1
        serialize = no
        end_time = none

        [events]
        1ms 4 join
        2ms - checkjoins 3ms
        3ms coord rr all 6869
        4ms 1 rr 2,3
        5ms 2 leave
        6ms - checkleaves 1ms
        7ms - push 2,3
        8ms 1 crash

        [drops]
        VACK src=2 dst=1 count=1
        * src=3 count=inf after=5ms
    """)
    assert cfg.n == 4 and cfg.members == (1, 2, 3) and cfg.msg_t == 2000
    assert cfg.loss == 0.1 and cfg.serialize is False and cfg.end_time is None
    assert cfg.events[0] == ScriptEvent(1000, "join", 4)
    assert cfg.events[1] == ScriptEvent(2000, "checkjoins", None, (3000,))
    assert cfg.events[2] == ScriptEvent(3000, "rr", None, ("all", b"hi"))
    assert cfg.events[3] == ScriptEvent(4000, "rr", 1, (frozenset({2, 3}), b""))
    assert cfg.events[6] == ScriptEvent(7000, "push", None, (frozenset({2, 3}),))
    assert cfg.drops == [DropRule("VACK", 2, 1, 1, 0), DropRule(None, 3, None, None, 5000)]


@pytest.mark.parametrize("text,where", [
    ("bogus = 1", ":1"),
    ("n = 3\nmsg_t = soon", ":2"),
    ("[nothing]", ":1"),
    ("[events]\n1ms 9 crash", None),
    ("[events]\n1ms 1 explode", ":2"),
    ("[events]\nlater 1 crash", ":2"),
    ("[events]\n1ms x crash", ":2"),
    ("[events]\n1ms - rr", ":2"),
    ("[events]\n1ms - rr 2 zz", ":2"),
    ("[events]\n1ms 1", ":2"),
    ("[drops]\nPING src=1", ":2"),
    ("[drops]\nAREQ src=one", ":2"),
    ("[drops]\nAREQ colour=red", ":2"),
    ("serialize = maybe", ":1"),
])
def test_errors_name_the_line(text, where):
    with pytest.raises(SimConfigError) as exc:
        parse_script(text, name="s.txt")
    if where:
        assert f"s.txt{where}" in str(exc.value)


def test_example_script_runs_deterministically():
    cfg = load_script(EXAMPLE)
    a = Simulator(cfg).run().digest()
    b = Simulator(load_script(EXAMPLE)).run().digest()
    assert a == b
