"""Per-node state: challenge machinery plus ring neighbor bookkeeping.

Neighbor state is organized around one invariant: ``established`` holds
exactly the peers this node has verified and currently uses.  The
successor chain and the finger cover are *derived* from that set (plus the
explicit predecessor), so promotion, eviction and repair all reduce to
"change the established set, then recompute the cover".  Peers that fall
out of the cover retire to the backup list (capacity-bounded, re-verified
at insertion); backups get rescued back into service when an eviction
opens a hole they can fill.

Pings are modeled by a pull: every sender keeps (prev challenge, current
challenge, arrival time of the current one); receivers read those triples
at their own regeneration, which is message-equivalent to per-ping
delivery because delivery latency is asserted to stay below the ping
period.  ``in_edges`` tracks who is pinging this node and is maintained by
the senders.
"""

from __future__ import annotations

from bisect import bisect_left, insort

from .chord import RING_BITS, closest_preceding, finger_target, in_open_closed, in_open_open
from .protocol import ChallengeStore
from .puzzle_core import PuzzleState, StateRecord, node_id_bytes, solve_puzzle


class InEdges:
    """Senders currently pinging this node, kept sorted by node id."""

    __slots__ = ("ids", "nodes")

    def __init__(self):
        self.ids = []
        self.nodes = []

    def add(self, node):
        i = bisect_left(self.ids, node.nid)
        if i < len(self.ids) and self.ids[i] == node.nid:
            return
        self.ids.insert(i, node.nid)
        self.nodes.insert(i, node)

    def discard(self, node):
        i = bisect_left(self.ids, node.nid)
        if i < len(self.ids) and self.ids[i] == node.nid:
            self.ids.pop(i)
            self.nodes.pop(i)

    def clear(self):
        self.ids.clear()
        self.nodes.clear()


class UntrustedEntry:
    __slots__ = ("added_at", "fails")

    def __init__(self, added_at: float):
        self.added_at = added_at
        self.fails = 0


class Node:
    __slots__ = (
        "nid", "id8", "alive", "is_sybil", "drops_lookups", "solves", "promoted_once",
        "user", "joined_at", "timer_epoch",
        "prev_chal", "cur_chal", "chal_avail",
        "store", "cur_puzzle", "next_puzzle", "solve_time",
        "in_edges", "out_targets", "stop_after_promotion",
        "established", "est_ids", "backups", "untrusted",
        "succ_list", "routing_ids", "needed",
        "sweep_pool", "sweep_pos", "sweep_dirty", "next_finger_i", "r",
    )

    def __init__(self, nid: int, r: int, user=None):
        self.nid = nid
        self.id8 = node_id_bytes(nid)
        self.alive = True
        self.is_sybil = False
        self.drops_lookups = False
        self.solves = True
        self.promoted_once = False
        self.user = user
        self.joined_at = 0.0
        self.timer_epoch = 0
        self.prev_chal = b""
        self.cur_chal = b""
        self.chal_avail = 0.0
        self.store = ChallengeStore()
        self.cur_puzzle = None
        self.next_puzzle = None
        self.solve_time = 0.0
        self.in_edges = InEdges()
        self.out_targets = {}
        self.stop_after_promotion = False
        self.established = {}
        self.est_ids = []
        self.backups = {}
        self.untrusted = {}
        self.succ_list = []
        self.routing_ids = []
        self.needed = frozenset()
        self.sweep_pool = []
        self.sweep_pos = 0
        self.sweep_dirty = True
        self.next_finger_i = 0
        self.r = r

    # ---------------- challenge / puzzle machinery ----------------

    def on_challenge_regen(self, now: float, retention: float) -> StateRecord:
        """Aggregate the latest arrived challenge of every live in-sender.

        Entries come out ascending by id because in_edges is sorted, so the
        canonical serialization can be built in the same pass.
        """
        entries = []
        pieces = []
        stale = None
        for a in self.in_edges.nodes:
            if a.alive:
                c = a.cur_chal if a.chal_avail <= now else a.prev_chal
                entries.append((a.nid, c))
                pieces.append(a.id8)
                pieces.append(c)
            else:
                if stale is None:
                    stale = []
                stale.append(a)
        if stale:
            for a in stale:
                self.in_edges.discard(a)
        old = self.cur_chal
        pieces.append(old)
        blob = b"".join(pieces)
        from .puzzle_core import _sha  # local import keeps the hot path short

        new = _sha(blob)
        rec = StateRecord(new, old, tuple(entries), now)
        rec.__dict__["canonical"] = blob  # pre-seed the cached serialization
        self.store.add_record(rec)
        self.store.expire(now, retention)
        self.prev_chal = old
        self.cur_chal = new
        return rec

    def on_ping_timer(self, now: float, latency: float):
        """Mark this round's challenge as delivered after ``latency``.

        The actual per-target state transfer happens when receivers pull at
        their own regeneration; see the module docstring.
        """
        self.chal_avail = now + latency

    def ping_target_ids(self):
        return list(self.out_targets)

    def on_puzzle_timer(self, now: float, difficulty_bits: int):
        nxt = self.next_puzzle
        if nxt is not None and nxt.solved_at <= now:
            self.cur_puzzle = nxt  # finished earlier but never queried since
            self.next_puzzle = None
        if not self.solves:
            return None
        rec = self.store.newest
        if rec is None:
            return None
        nonce = solve_puzzle(self.nid, rec.new_challenge, difficulty_bits) if difficulty_bits else 0
        self.next_puzzle = PuzzleState(nonce, rec.new_challenge, rec, now + self.solve_time, self.nid)
        return self.next_puzzle

    def presentation(self, now: float):
        """Newest solved puzzle presentable right now."""
        nxt = self.next_puzzle
        if nxt is not None and nxt.solved_at <= now:
            self.cur_puzzle = nxt
            self.next_puzzle = None
        return self.cur_puzzle

    # ---------------- membership primitives ----------------

    def _establish(self, nid: int, now: float):
        if nid in self.established:
            self.established[nid] = now
            return
        self.backups.pop(nid, None)
        self.untrusted.pop(nid, None)
        self.established[nid] = now
        insort(self.est_ids, nid)
        self.sweep_dirty = True

    def _drop_established(self, nid: int):
        if nid in self.established:
            del self.established[nid]
            i = bisect_left(self.est_ids, nid)
            self.est_ids.pop(i)
            self.sweep_dirty = True

    def derived_pred(self):
        """Closest counter-clockwise established peer, if any."""
        est = self.est_ids
        if not est:
            return None
        i = bisect_left(est, self.nid)
        return est[i - 1] if i else est[-1]

    def compute_needed(self, est_ids) -> set:
        """Slot cover over a sorted candidate id list: first r+1 clockwise
        (successor chain), the first candidate at or past every finger
        target beyond the immediate successor, and the predecessor."""
        needed = set()
        n = len(est_ids)
        if n == 0:
            return needed
        start = bisect_left(est_ids, self.nid)
        succ0 = None
        for k in range(min(self.r + 1, n)):
            sid = est_ids[(start + k) % n]
            if succ0 is None:
                succ0 = sid
            needed.add(sid)
        for i in range(RING_BITS):
            t = finger_target(self.nid, i)
            if in_open_closed(t, self.nid, succ0):
                continue
            j = bisect_left(est_ids, t)
            needed.add(est_ids[j if j < n else 0])
        needed.add(est_ids[start - 1] if start else est_ids[-1])
        return needed

    def rebuild_views(self):
        est = self.est_ids
        n = len(est)
        succ = []
        if n:
            start = bisect_left(est, self.nid)
            for k in range(min(self.r + 1, n)):
                succ.append(est[(start + k) % n])
        self.succ_list = succ
        self.needed = self.compute_needed(est)
        self.routing_ids = sorted(self.needed)
        self.sweep_dirty = True

    # ---------------- advertisement (delayed adding aware) ----------------

    def advertised_pred(self):
        """Best known predecessor, counting not-yet-verified candidates."""
        best = self.derived_pred()
        for u in self.untrusted:
            if u == self.nid:
                continue
            if best is None or in_open_open(u, best, self.nid):
                best = u
        return best

    def advertised_succ_chain(self):
        """Successor chain with a pending closer candidate prepended."""
        chain = self.succ_list
        best = None
        head = chain[0] if chain else None
        for u in self.untrusted:
            if u == self.nid:
                continue
            if head is not None and not in_open_open(u, self.nid, head):
                continue
            if best is None or in_open_open(u, self.nid, best):
                best = u
        if best is None:
            return list(chain)
        return [best] + list(chain)

    def lookup_chain(self):
        """Successor chain served to lookups: established neighbors only.

        Pending candidates are advertised to ring maintenance so it keeps
        converging, but they are not viable lookup targets until verified.
        """
        return self.succ_list

    # ---------------- routing ----------------

    def closest_preceding_verified(self, key: int, contacted) -> int | None:
        return closest_preceding(self.routing_ids, self.nid, key, contacted)

    def sweep_targets(self):
        if self.sweep_dirty:
            self.sweep_pool = self.est_ids + sorted(self.backups)
            self.sweep_dirty = False
            if self.sweep_pos >= len(self.sweep_pool):
                self.sweep_pos = 0
        return self.sweep_pool

    # ---------------- lifecycle ----------------

    def reset_state(self):
        """Wipe protocol state for a (re)join; identity and in_edges persist
        (in_edges belongs to the senders, who clean up on their own)."""
        self.store.clear()
        self.cur_puzzle = None
        self.next_puzzle = None
        self.established.clear()
        self.est_ids = []
        self.backups.clear()
        self.untrusted.clear()
        self.out_targets = {}
        self.succ_list = []
        self.routing_ids = []
        self.needed = frozenset()
        self.sweep_pool = []
        self.sweep_pos = 0
        self.sweep_dirty = True
        self.next_finger_i = 0
        self.promoted_once = False
