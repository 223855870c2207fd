"""Reply-mask helpers.

Process ``pid`` owns bit ``pid - 1`` of a 64-bit word. The rank of a set bit
among all set bits (ascending) is the transmission slot of that process.
"""

MAX_PID = 64
WORD = (1 << MAX_PID) - 1


def check_pid(pid):
    if type(pid) is not int or not 1 <= pid <= MAX_PID:
        raise ValueError(f"process id must be an int in [1, {MAX_PID}], got {pid!r}")
    return pid


def bit(pid):
    return 1 << (pid - 1)


def set_bits(pids):
    mask = 0
    for pid in pids:
        mask |= 1 << (check_pid(pid) - 1)
    return mask


def clear_bit(mask, pid):
    return mask & ~(1 << (pid - 1))


def is_bit_set(mask, pid):
    return bool(mask >> (pid - 1) & 1)


def popcount(mask):
    return mask.bit_count()


def pos_bit(mask, pid):
    """0-based slot of ``pid`` in ``mask``; the bit must be set."""
    if not is_bit_set(mask, pid):
        raise ValueError(f"pid {pid} is not addressed by mask {mask:#x}")
    return (mask & ((1 << (pid - 1)) - 1)).bit_count()


def nxt_bit(mask, prev, myid):
    """True iff myid's bit is the lowest set bit strictly above prev's bit."""
    above = mask >> prev << prev
    return above != 0 and (above & -above) == 1 << (myid - 1)


def pids_of(mask):
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length())
        mask ^= low
    return out
