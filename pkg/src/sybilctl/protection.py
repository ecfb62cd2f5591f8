"""Admission control around the ring: delayed adding, backups, sweeps.

Newly discovered peers sit in the untrusted list and receive pings (so
they can start aggregating the discoverer's challenges) but are never
routed through or advertised as established.  Once an entry is old enough
to have provably done work bound to our challenges (one puzzle period plus
one ping period), promotion verifies it directly; two failed attempts
evict it.

Eviction of an in-service peer triggers repair: backup-list members that
would fill the hole are re-verified and put back into service, and the
slot cover is recomputed from the established set.
"""

from __future__ import annotations

from math import ceil

from .chord import in_open_open
from .node import Node, UntrustedEntry
from .protocol import Verdict


def on_discover(engine, node: Node, nid: int, now: float):
    """A peer id surfaced through maintenance or a lookup result."""
    if nid == node.nid or nid in node.established or nid in node.untrusted:
        return
    if not engine.cfg.sybilcontrol:
        # plain ring: contact the peer and adopt it on response
        if engine.check_direct(node, engine.nodes[nid], now).ok:
            node._establish(nid, now)
            recompute(engine, node, now)
        return
    if nid in node.backups:
        # already verified recently; re-check and put back into service
        if engine.check_direct(node, engine.nodes[nid], now).ok:
            node._establish(nid, now)
            recompute(engine, node, now)
        else:
            node.backups.pop(nid, None)
            node.sweep_dirty = True
            sync_targets(engine, node)
        return
    node.untrusted[nid] = UntrustedEntry(now)
    # start pinging so the candidate aggregates our challenges
    tgt = engine.nodes[nid]
    node.out_targets[nid] = tgt
    tgt.in_edges.add(node)
    if engine.trace is not None:
        engine.trace.emit(now, "discover", src=node.nid, dst=nid)


def on_notify(engine, node: Node, claimant: int, now: float):
    """Someone claims to be our predecessor; consider it if it improves."""
    if claimant == node.nid:
        return
    pred = node.derived_pred()
    if pred is None or in_open_open(claimant, pred, node.nid):
        on_discover(engine, node, claimant, now)


def try_promote_untrusted(engine, node: Node, now: float):
    if not node.untrusted:
        return
    changed = False
    for nid in list(node.untrusted):
        entry = node.untrusted[nid]
        if now - entry.added_at < engine.promote_age:
            continue
        target = engine.nodes[nid]
        outcome = engine.check_direct(node, target, now)
        if outcome.ok:
            del node.untrusted[nid]
            node._establish(nid, now)
            engine.note_promotion(node, target, now)
            changed = True
        else:
            entry.fails += 1
            if entry.fails >= engine.cfg.promote_grace_fails:
                del node.untrusted[nid]
                changed = True
                if engine.trace is not None:
                    engine.trace.emit(now, "reject", src=node.nid, dst=nid,
                                      verdict=outcome.verdict.value)
    if changed:
        recompute(engine, node, now)


def periodic_neighbor_verification(engine, node: Node, now: float):
    """Verify a fraction of (established + backup) peers, round robin."""
    pool = node.sweep_targets()
    if not pool:
        return
    count = min(len(pool), max(1, ceil(len(pool) * engine.cfg.sweep_fraction)))
    evicted = False
    for _ in range(count):
        if node.sweep_pos >= len(pool):
            node.sweep_pos = 0
        tid = pool[node.sweep_pos]
        node.sweep_pos += 1
        if tid not in node.established and tid not in node.backups:
            continue  # pool entry went stale mid-cycle
        outcome = engine.check_direct(node, engine.nodes[tid], now)
        if outcome.ok:
            if tid in node.established:
                node.established[tid] = now
            else:
                node.backups[tid] = now
        else:
            evict_peer(engine, node, tid, now, outcome.verdict)
            evicted = True
            pool = node.sweep_targets()
            if not pool:
                return
    if evicted:
        node.sweep_dirty = True


def evict_peer(engine, node: Node, tid: int, now: float, verdict: Verdict):
    """Drop a peer from service and repair the cover."""
    was_needed = tid in node.needed
    node._drop_established(tid)
    node.backups.pop(tid, None)
    node.untrusted.pop(tid, None)
    engine.note_eviction(node, tid, verdict, now)
    if was_needed and node.backups:
        rescue_from_backups(engine, node, now)
    recompute(engine, node, now)


def rescue_from_backups(engine, node: Node, now: float):
    """Re-verify backups that would fill holes in the current cover."""
    cand = sorted(set(node.est_ids) | set(node.backups))
    would_need = node.compute_needed(cand)
    for b in list(node.backups):
        if b not in would_need:
            continue
        if engine.check_direct(node, engine.nodes[b], now).ok:
            node._establish(b, now)
        else:
            node.backups.pop(b, None)
            node.sweep_dirty = True


def recompute(engine, node: Node, now: float):
    """Recompute the derived cover, retiring peers that fell out of it."""
    node.rebuild_views()
    extra = [e for e in node.est_ids if e not in node.needed]
    if extra:
        for nid in extra:
            retire_to_backup(engine, node, nid, now)
        node.rebuild_views()
    sync_targets(engine, node)


def retire_to_backup(engine, node: Node, nid: int, now: float):
    node._drop_established(nid)
    if not engine.cfg.sybilcontrol:
        return
    if not engine.check_direct(node, engine.nodes[nid], now).ok:
        return
    node.backups[nid] = now
    cap = engine.cfg.backup_capacity
    while len(node.backups) > cap:
        stalest = min(node.backups.items(), key=lambda kv: (kv[1], kv[0]))[0]
        del node.backups[stalest]
    node.sweep_dirty = True


def sync_targets(engine, node: Node):
    """Make the ping audience match established + backup + untrusted."""
    if not engine.cfg.sybilcontrol:
        return
    desired = node.established.keys() | node.backups.keys() | node.untrusted.keys()
    cur = node.out_targets
    for nid in list(cur):
        if nid not in desired:
            cur.pop(nid).in_edges.discard(node)
    for nid in desired:
        if nid not in cur:
            tgt = engine.nodes[nid]
            cur[nid] = tgt
            tgt.in_edges.add(node)


def provision_virtual_nodes(user_count: int, q_choices, rng):
    """Draw the per-user virtual node count; returns a list of q values."""
    return [rng.choice(q_choices) for _ in range(user_count)]
