"""Plain-text scenario scripts for the simulator.

A script is ``key = value`` settings followed by optional ``[events]`` and
``[drops]`` sections. Blank lines and ``#`` comments are ignored. Durations
are microseconds unless suffixed with ``us``, ``ms`` or ``s``::

    n = 4
    members = 1,2,3
    msg_t = 2ms
    end_time = 200ms

    [events]
    # time  pid   op          args
    1ms     4     join
    2ms     -     checkjoins  3ms
    40ms    -     rr          all 68656c6c6f
    60ms    1     crash

    [drops]
    VACK src=2 dst=1 count=1

In events, ``-`` (or ``coord``) stands for whichever process is coordinator.
"""
import dataclasses

from .messages import MESSAGE_TYPES
from .sim import DropRule, ScriptEvent, SimConfig, SimConfigError

_UNITS = (("us", 1), ("ms", 1000), ("s", 1_000_000))
_DURATIONS = {"msg_t", "fault_detect_t", "proc_t", "proc_delay", "airtime", "max_delay",
              "join_backoff", "fault_latency", "think_time", "end_time"}
_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}
_SETTINGS = set(_FIELDS) - {"events", "drops"}
_MSG_NAMES = {cls.__name__ for cls in MESSAGE_TYPES}


def parse_duration(text):
    text = text.strip()
    for suffix, scale in sorted(_UNITS, key=lambda u: -len(u[0])):
        if text.endswith(suffix) and text[:-len(suffix)].replace(".", "", 1).isdigit():
            return round(float(text[:-len(suffix)]) * scale)
    return int(text)


def _value(key, text, where):
    if text.lower() == "none":
        return None
    try:
        if key in _DURATIONS:
            return parse_duration(text)
        if key == "members":
            return tuple(int(p) for p in text.replace(",", " ").split())
        if key == "serialize":
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if key == "loss":
            return float(text)
        return int(text)
    except ValueError:
        raise SimConfigError(f"{where}: bad value for {key}: {text!r}") from None


def _pid(text, where):
    if text in ("-", "coord"):
        return None
    try:
        return int(text)
    except ValueError:
        raise SimConfigError(f"{where}: bad process id {text!r}") from None


def _event(parts, where):
    if len(parts) < 3:
        raise SimConfigError(f"{where}: expected '<time> <pid> <op> [args]'")
    try:
        t = parse_duration(parts[0])
    except ValueError:
        raise SimConfigError(f"{where}: bad time {parts[0]!r}") from None
    pid, op, rest = _pid(parts[1], where), parts[2], parts[3:]
    try:
        if op == "rr":
            if not rest:
                raise ValueError("rr needs destinations")
            dsts = "all" if rest[0] == "all" else frozenset(int(p) for p in rest[0].split(","))
            data = bytes.fromhex(rest[1]) if len(rest) > 1 else b""
            args = (dsts, data)
        elif op in ("checkjoins", "checkleaves"):
            args = (parse_duration(rest[0]),)
        elif op in ("push",):
            args = (frozenset(int(p) for p in rest[0].split(",")),)
        elif op in ("join", "leave", "crash"):
            args = ()
        else:
            raise SimConfigError(f"{where}: unknown operation {op!r}")
    except (ValueError, IndexError) as exc:
        raise SimConfigError(f"{where}: bad arguments for {op}: {exc}") from None
    return ScriptEvent(t, op, pid, args)


def _drop(parts, where):
    name, opts = parts[0], {}
    if name != "*" and name not in _MSG_NAMES:
        raise SimConfigError(f"{where}: unknown message type {name!r}")
    for p in parts[1:]:
        k, sep, v = p.partition("=")
        if not sep or k not in ("src", "dst", "count", "after"):
            raise SimConfigError(f"{where}: bad drop option {p!r}")
        try:
            if k == "count" and v == "inf":
                opts[k] = None
            elif k == "after":
                opts[k] = parse_duration(v)
            else:
                opts[k] = int(v)
        except ValueError:
            raise SimConfigError(f"{where}: bad drop option {p!r}") from None
    return DropRule(kind=None if name == "*" else name, **opts)


def parse_script(text, name="<script>"):
    """Parse a scenario script into a validated SimConfig."""
    settings, events, drops = {}, [], []
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        where = f"{name}:{lineno}"
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in ("events", "drops"):
                raise SimConfigError(f"{where}: unknown section [{section}]")
            continue
        if section == "events":
            events.append(_event(line.split(), where))
        elif section == "drops":
            drops.append(_drop(line.split(), where))
        else:
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in _SETTINGS:
                raise SimConfigError(f"{where}: unknown setting {key!r}")
            settings[key] = _value(key, value.strip(), where)
    cfg = SimConfig(**settings, events=events, drops=drops)
    cfg.validate()
    return cfg


def load_script(path):
    with open(path) as fh:
        return parse_script(fh.read(), name=str(path))
