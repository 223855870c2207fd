"""The eight protocol messages, in wire-type order."""
from dataclasses import dataclass

from .bits import WORD, check_pid
from .view import Entry

MAX_PAYLOAD = 1024
HEADER = 4  # magic(2) version(1) type(1)


def _check_mask(rmask):
    if type(rmask) is not int or not 0 < rmask <= WORD:
        raise ValueError(f"rmask must be a nonzero 64-bit word, got {rmask!r}")


def _check_seqno(k):
    if type(k) is not int or not 0 <= k <= 0xFFFFFFFF:
        raise ValueError(f"sequence number must fit 32 bits, got {k!r}")


def _check_data(data):
    if not isinstance(data, bytes):
        raise TypeError("payload must be bytes")
    if len(data) > MAX_PAYLOAD:
        raise ValueError(f"payload of {len(data)} bytes exceeds {MAX_PAYLOAD}")


@dataclass(frozen=True, slots=True)
class AREQ:
    pid: int
    k: int
    rmask: int
    data: bytes = b""
    code = 1

    def __post_init__(self):
        check_pid(self.pid)
        _check_seqno(self.k)
        _check_mask(self.rmask)
        _check_data(self.data)

    def wire_size(self):
        return HEADER + 1 + 4 + 8 + 2 + len(self.data)


@dataclass(frozen=True, slots=True)
class ARPL:
    pid: int
    k: int
    data: bytes = b""
    code = 2

    def __post_init__(self):
        check_pid(self.pid)
        _check_seqno(self.k)
        _check_data(self.data)

    def wire_size(self):
        return HEADER + 1 + 4 + 2 + len(self.data)


@dataclass(frozen=True, slots=True)
class JPOLL:
    pid: int
    code = 3

    def __post_init__(self):
        check_pid(self.pid)

    def wire_size(self):
        return HEADER + 1


@dataclass(frozen=True, slots=True)
class JOIN:
    pid: int
    code = 4

    def __post_init__(self):
        check_pid(self.pid)

    def wire_size(self):
        return HEADER + 1


@dataclass(frozen=True, slots=True)
class LPOLL:
    code = 5

    def wire_size(self):
        return HEADER


@dataclass(frozen=True, slots=True)
class LEFT:
    pid: int
    code = 6

    def __post_init__(self):
        check_pid(self.pid)

    def wire_size(self):
        return HEADER + 1


@dataclass(frozen=True, slots=True)
class VPUSH:
    pid: int
    rmask: int
    grpc: tuple = ()
    code = 7

    def __post_init__(self):
        check_pid(self.pid)
        _check_mask(self.rmask)
        entries = tuple(sorted(Entry(int(p), int(t), bool(n)) for p, t, n in self.grpc))
        seen_p, seen_t = set(), set()
        for e in entries:
            check_pid(e.pid)
            if not 1 <= e.ticket <= 0xFFFFFFFF:
                raise ValueError(f"ticket out of range: {e.ticket}")
            if e.pid in seen_p or e.ticket in seen_t:
                raise ValueError("view carries a duplicate pid or ticket")
            seen_p.add(e.pid)
            seen_t.add(e.ticket)
        object.__setattr__(self, "grpc", entries)

    def wire_size(self):
        return HEADER + 1 + 8 + 1 + 6 * len(self.grpc)


@dataclass(frozen=True, slots=True)
class VACK:
    pid: int
    code = 8

    def __post_init__(self):
        check_pid(self.pid)

    def wire_size(self):
        return HEADER + 1


MESSAGE_TYPES = (AREQ, ARPL, JPOLL, JOIN, LPOLL, LEFT, VPUSH, VACK)
BY_CODE = {cls.code: cls for cls in MESSAGE_TYPES}
