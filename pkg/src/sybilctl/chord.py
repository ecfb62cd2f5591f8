"""Chord ring arithmetic and ground-truth ring bookkeeping.

Identifiers live on a 2**64 ring.  Interval membership is the usual Chord
modular-interval test; all wrap-around cases are handled here so the rest
of the code never does modular arithmetic inline.

``SortedRing`` keeps a sorted list of ids with bisect lookups.  The engine
uses one instance as ground truth for the currently-live membership (key
ownership, replica holder sets); tests use it as the brute-force routing
oracle.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right, insort

RING_BITS = 64
RING = 1 << RING_BITS


def in_open_closed(x: int, a: int, b: int) -> bool:
    """x in (a, b] on the ring; a == b means the full ring."""
    if a < b:
        return a < x <= b
    return x > a or x <= b


def in_open_open(x: int, a: int, b: int) -> bool:
    """x in (a, b) on the ring; empty when a == b."""
    if a == b:
        return False
    if a < b:
        return a < x < b
    return x > a or x < b


def clockwise_distance(a: int, b: int) -> int:
    return (b - a) % RING


def finger_target(node_id: int, i: int) -> int:
    return (node_id + (1 << i)) % RING


class SortedRing:
    """Sorted id set with clockwise-successor queries."""

    def __init__(self, ids=()):
        self.ids = sorted(ids)

    def __len__(self):
        return len(self.ids)

    def __contains__(self, nid):
        i = bisect_left(self.ids, nid)
        return i < len(self.ids) and self.ids[i] == nid

    def add(self, nid: int):
        insort(self.ids, nid)

    def remove(self, nid: int):
        i = bisect_left(self.ids, nid)
        if i < len(self.ids) and self.ids[i] == nid:
            self.ids.pop(i)
        else:
            raise KeyError(nid)

    def successor(self, key: int) -> int:
        """First id clockwise from key (key itself counts), i.e. the key's owner."""
        ids = self.ids
        if not ids:
            raise LookupError("empty ring")
        i = bisect_left(ids, key)
        return ids[i] if i < len(ids) else ids[0]

    def successors(self, key: int, count: int) -> list:
        """First ``count`` distinct ids clockwise from key (owner first)."""
        ids = self.ids
        if not ids:
            raise LookupError("empty ring")
        count = min(count, len(ids))
        i = bisect_left(ids, key)
        out = []
        for k in range(count):
            out.append(ids[(i + k) % len(ids)])
        return out

    def predecessor(self, key: int) -> int:
        """Last id strictly before key, clockwise."""
        ids = self.ids
        if not ids:
            raise LookupError("empty ring")
        i = bisect_left(ids, key)
        return ids[i - 1] if i > 0 else ids[-1]

    def next_after(self, nid: int) -> int:
        """First id strictly after nid clockwise."""
        ids = self.ids
        i = bisect_right(ids, nid)
        return ids[i] if i < len(ids) else ids[0]


def closest_preceding(sorted_ids: list, self_id: int, key: int, exclude=frozenset()) -> int | None:
    """Largest id in (self_id, key) from a sorted candidate list, skipping excluded.

    This is the verified-neighbor scan behind next-hop selection: walk
    counter-clockwise from just below the key until the interval is
    exhausted.  Returns None when no usable candidate precedes the key.
    """
    n = len(sorted_ids)
    if n == 0:
        return None
    start = bisect_left(sorted_ids, key) - 1  # may be -1: wraps to end
    for off in range(n):
        cand = sorted_ids[(start - off) % n]
        if not in_open_open(cand, self_id, key):
            return None  # stepped out of the interval: nothing usable left
        if cand not in exclude:
            return cand
    return None
