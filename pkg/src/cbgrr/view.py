from typing import NamedTuple

from .bits import check_pid


class Entry(NamedTuple):
    pid: int
    ticket: int
    is_new: bool = False


class GroupView:
    """Local group view: pid -> (ticket, is_new).

    ``max_ticket`` remembers the highest ticket ever seen, so tickets of
    departed members are never handed out again.
    """

    __slots__ = ("_entries", "max_ticket")

    def __init__(self, entries=()):
        self._entries = {}
        self.max_ticket = 0
        for e in entries:
            self.put(Entry(*e))

    def __len__(self):
        return len(self._entries)

    def __contains__(self, pid):
        return pid in self._entries

    def __iter__(self):
        return iter(self.entries())

    def __eq__(self, other):
        if not isinstance(other, GroupView):
            return NotImplemented
        return self._entries == other._entries

    def __repr__(self):
        inner = ", ".join(f"{e.pid}:{e.ticket}{'*' if e.is_new else ''}" for e in self.entries())
        return f"GroupView({inner})"

    def get(self, pid):
        return self._entries.get(pid)

    def ticket(self, pid):
        e = self._entries.get(pid)
        return None if e is None else e.ticket

    def entries(self):
        return tuple(sorted(self._entries.values()))

    def members(self):
        return frozenset(self._entries)

    def old(self):
        return frozenset(p for p, e in self._entries.items() if not e.is_new)

    def new(self):
        return frozenset(p for p, e in self._entries.items() if e.is_new)

    def put(self, entry):
        """Insert or overwrite by pid. Any other pid holding the same ticket is evicted."""
        check_pid(entry.pid)
        if entry.ticket < 1:
            raise ValueError(f"ticket must be positive, got {entry.ticket}")
        for p, e in list(self._entries.items()):
            if e.ticket == entry.ticket and p != entry.pid:
                del self._entries[p]
        self._entries[entry.pid] = entry
        if entry.ticket > self.max_ticket:
            self.max_ticket = entry.ticket

    def add(self, pid, ticket, is_new=False):
        self.put(Entry(pid, ticket, is_new))

    def remove(self, pid):
        return self._entries.pop(pid, None)

    def clear_new(self):
        for p, e in self._entries.items():
            if e.is_new:
                self._entries[p] = e._replace(is_new=False)

    def min_ticket(self):
        if not self._entries:
            return None
        return min(self._entries.values(), key=lambda e: e.ticket).pid

    def nxt_ticket(self):
        return self.max_ticket + 1

    def copy(self):
        v = GroupView()
        v._entries = dict(self._entries)
        v.max_ticket = self.max_ticket
        return v


def initial_view(pids):
    """Tickets 1..N in ascending pid order."""
    return GroupView(Entry(p, t) for t, p in enumerate(sorted(pids), start=1))


min_ticket = GroupView.min_ticket
nxt_ticket = GroupView.nxt_ticket
