"""Binary frames for the eight protocol messages.

Layout (all integers big-endian, fixed width)::

    magic 0xCB 0x6E | version 0x01 | type (1..8) | body

    AREQ   pid:1 seqno:4 rmask:8 len:2 payload
    ARPL   pid:1 seqno:4 len:2 payload
    JPOLL  pid:1
    JOIN   pid:1
    LPOLL  (empty)
    LEFT   pid:1
    VPUSH  pid:1 rmask:8 count:1 {pid:1 ticket:4 flags:1}*count   (flags bit0 = is_new)
    VACK   pid:1
"""
import struct

from .messages import AREQ, ARPL, BY_CODE, JOIN, JPOLL, LEFT, LPOLL, MAX_PAYLOAD, VACK, VPUSH

MAGIC = b"\xcb\x6e"
VERSION = 1
MAX_FRAME = 1500

_HDR = struct.Struct(">2sBB")
_AREQ = struct.Struct(">BIQH")
_ARPL = struct.Struct(">BIH")
_PID = struct.Struct(">B")
_VPUSH = struct.Struct(">BQB")
_ENTRY = struct.Struct(">BIB")


class CodecError(ValueError):
    pass


class MagicError(CodecError):
    pass


class VersionError(CodecError):
    pass


class UnknownTypeError(CodecError):
    pass


class TruncationError(CodecError):
    pass


class LengthError(CodecError):
    """Bytes left over after a complete message."""


class FieldError(CodecError):
    """A field decoded cleanly but holds an invalid value."""


def encode(msg):
    t = type(msg)
    if t not in BY_CODE.values():
        raise TypeError(f"cannot encode {msg!r}")
    head = _HDR.pack(MAGIC, VERSION, msg.code)
    if t is AREQ:
        body = _AREQ.pack(msg.pid, msg.k, msg.rmask, len(msg.data)) + msg.data
    elif t is ARPL:
        body = _ARPL.pack(msg.pid, msg.k, len(msg.data)) + msg.data
    elif t is LPOLL:
        body = b""
    elif t is VPUSH:
        body = _VPUSH.pack(msg.pid, msg.rmask, len(msg.grpc)) + b"".join(
            _ENTRY.pack(e.pid, e.ticket, 1 if e.is_new else 0) for e in msg.grpc)
    elif t in (JPOLL, JOIN, LEFT, VACK):
        body = _PID.pack(msg.pid)
    else:
        raise TypeError(f"cannot encode {msg!r}")
    frame = head + body
    if len(frame) > MAX_FRAME:
        raise CodecError(f"frame of {len(frame)} bytes exceeds {MAX_FRAME}")
    return frame


def _need(buf, off, n):
    if len(buf) - off < n:
        raise TruncationError(f"need {n} bytes at offset {off}, have {len(buf) - off}")


def decode(buf):
    buf = bytes(buf)
    _need(buf, 0, _HDR.size)
    magic, version, code = _HDR.unpack_from(buf, 0)
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic.hex()}")
    if version != VERSION:
        raise VersionError(f"unsupported version {version}")
    cls = BY_CODE.get(code)
    if cls is None:
        raise UnknownTypeError(f"unknown message type {code}")
    off = _HDR.size
    try:
        if cls is AREQ:
            _need(buf, off, _AREQ.size)
            pid, k, rmask, n = _AREQ.unpack_from(buf, off)
            off += _AREQ.size
            data, off = _payload(buf, off, n)
            msg = AREQ(pid, k, rmask, data)
        elif cls is ARPL:
            _need(buf, off, _ARPL.size)
            pid, k, n = _ARPL.unpack_from(buf, off)
            off += _ARPL.size
            data, off = _payload(buf, off, n)
            msg = ARPL(pid, k, data)
        elif cls is LPOLL:
            msg = LPOLL()
        elif cls is VPUSH:
            _need(buf, off, _VPUSH.size)
            pid, rmask, count = _VPUSH.unpack_from(buf, off)
            off += _VPUSH.size
            _need(buf, off, count * _ENTRY.size)
            entries = []
            for _ in range(count):
                p, ticket, flags = _ENTRY.unpack_from(buf, off)
                off += _ENTRY.size
                if flags & ~1:
                    raise FieldError(f"reserved flag bits set: {flags:#x}")
                entries.append((p, ticket, bool(flags)))
            msg = VPUSH(pid, rmask, tuple(entries))
            if list(msg.grpc) != entries:
                raise FieldError("view entries not in canonical pid order")
        else:
            _need(buf, off, 1)
            (pid,) = _PID.unpack_from(buf, off)
            off += 1
            msg = cls(pid)
    except CodecError:
        raise
    except (ValueError, TypeError) as exc:
        raise FieldError(str(exc)) from None
    if off != len(buf):
        raise LengthError(f"{len(buf) - off} trailing bytes after {cls.__name__}")
    return msg


def _payload(buf, off, n):
    if n > MAX_PAYLOAD:
        raise FieldError(f"declared payload of {n} bytes exceeds {MAX_PAYLOAD}")
    _need(buf, off, n)
    return buf[off:off + n], off + n


def frame_size(msg):
    return msg.wire_size()
