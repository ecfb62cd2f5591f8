"""Ring maintenance: stabilize / notify, finger repair, join walks.

Maintenance exchanges are short query/reply pairs and are executed inline
(zero latency) against the peers' current views; only measured lookups go
through the event-driven latency/timeout machinery.  Every inline contact
is still counted as messages, and dead or lookup-dropping peers simply
fail to answer, so routing around them costs extra contacts exactly like
it would on the wire.
"""

from __future__ import annotations

from .chord import RING_BITS, finger_target, in_open_closed, in_open_open
from .node import Node
from .protection import evict_peer, on_discover, on_notify
from .protocol import Verdict


def inline_find_owner(engine, via: Node, key: int, budget: int = 64,
                      exclude=frozenset()):
    """Walk toward key's owner starting from ``via``'s view.

    Returns the owner id, or None if the walk ran out of budget or
    candidates.  Dead and lookup-dropping hops are skipped (with
    backtracking), so the result is an id some cooperative node actually
    advertised.
    """
    contacted = set(exclude)
    stack = []
    cur = via
    used = 0
    while used < budget:
        chain = cur.advertised_succ_chain()
        if chain and in_open_closed(key, cur.nid, chain[-1]):
            # the first chain entry at or past the key owns it
            own = next(c for c in chain if in_open_closed(key, cur.nid, c))
            if own not in exclude:
                return own
        cand = cur.closest_preceding_verified(key, contacted)
        if cand is None:
            if stack:
                cur = stack.pop()
                continue
            return None
        contacted.add(cand)
        used += 1
        engine.msgs_maint += 1
        nxt = engine.nodes[cand]
        if not nxt.alive or nxt.drops_lookups:
            continue
        stack.append(cur)
        cur = nxt
    return None


def stabilize(engine, node: Node, now: float):
    """Check the successor, adopt a closer predecessor claim, pull chain
    knowledge, and notify the successor about us."""
    while node.succ_list:
        sid = node.succ_list[0]
        engine.msgs_maint += 1
        if engine.nodes[sid].alive:
            break
        evict_peer(engine, node, sid, now, Verdict.UNRESPONSIVE)
    if not node.succ_list:
        attempt_join(engine, node, now)
        return
    succ = engine.nodes[node.succ_list[0]]
    x = succ.advertised_pred()
    if x is not None and x != node.nid and in_open_open(x, node.nid, succ.nid):
        on_discover(engine, node, x, now)
    tail = node.succ_list[-1]
    for cid in succ.advertised_succ_chain()[: node.r + 2]:
        if cid == node.nid or cid in node.established or cid in node.untrusted:
            continue
        if len(node.succ_list) <= node.r or in_open_open(cid, node.nid, tail):
            on_discover(engine, node, cid, now)
    engine.msgs_maint += 1
    on_notify(engine, succ, node.nid, now)


def fix_fingers(engine, node: Node, now: float):
    """Resolve one finger target per call, skipping targets the successor
    already covers (those need no dedicated finger)."""
    if not node.succ_list:
        return
    succ0 = node.succ_list[0]
    for _ in range(RING_BITS):
        i = node.next_finger_i
        node.next_finger_i = (node.next_finger_i + 1) % RING_BITS
        t = finger_target(node.nid, i)
        if not in_open_closed(t, node.nid, succ0):
            owner = inline_find_owner(engine, node, t,
                                      exclude=frozenset((node.nid,)))
            if owner is not None and owner != node.nid:
                on_discover(engine, node, owner, now)
            return


def attempt_join(engine, node: Node, now: float):
    """Find our successor through a random live bootstrap node."""
    boot = engine.random_bootstrap(node)
    if boot is None:
        engine.schedule_join_retry(node, now)
        return
    engine.msgs_maint += 1
    if not boot.alive or boot.drops_lookups:
        engine.schedule_join_retry(node, now)
        return
    key = (node.nid + 1) % (1 << 64)
    owner = inline_find_owner(engine, boot, key,
                              exclude=frozenset((node.nid,)))
    if owner is None or owner == node.nid:
        engine.schedule_join_retry(node, now)
        return
    on_discover(engine, node, owner, now)
    on_notify(engine, engine.nodes[owner], node.nid, now)
