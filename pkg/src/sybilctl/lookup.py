"""Measured lookups: iterative walks with per-hop verification.

Unlike maintenance traffic these go through the event queue with drawn
latencies and timeouts.  An attempt contacts one node at a time; a reply
carries the hop's puzzle presentation and record history, which the
initiator verifies against the trust chain built along the path (its own
live challenges for the first hop, trusted record prefixes after that).
Unverifiable, silent, or dead hops cost a contact and are never
revisited; the walk backtracks to the last verified hop that still has
an untried candidate, and only gives up when the whole explored frontier
is exhausted or the attempt's contact budget (TTL) runs out.  A hop's
reply carries one next-hop suggestion; squeezing further candidates out
of an already-answered hop takes one more round trip each, so those
re-queries count against the budget and the hop tally too.

When a frontier's successor chain covers the key, the chain nodes at or
past the key are probed for the value, nearest first, one probe per
replica deep; a fetch succeeds only from a live, verified node that
actually holds a replica (ground truth).  If the primary attempt
dies, two redundant attempts run in parallel.  All attempts of a lookup
share one contacted list, so redundant walks are pushed onto paths and
holder candidates the failed primary never tried.  The hop count of a
successful lookup includes every contact made on its behalf, failed and
redundant ones too.
"""

from __future__ import annotations

from .chord import in_open_closed
from .protocol import Verdict, check_presentation_via, own_trusted_challenges

LK_REPLY = 100
LK_TIMEOUT = 101

ROUTE = 0
FETCH = 1


class Attempt:
    __slots__ = ("lk", "frontier", "trusted", "stack", "used",
                 "fetch_queue", "fetched", "purpose", "done", "fresh")

    def __init__(self, lk):
        self.lk = lk
        self.frontier = lk.initiator
        self.trusted = None  # None = frontier is the initiator itself
        self.stack = []
        self.used = 0
        self.fetch_queue = []
        self.fetched = set()
        self.purpose = ROUTE
        self.done = False
        self.fresh = True  # frontier's first suggestion rode in on its reply


class Lookup:
    __slots__ = ("initiator", "key", "phase", "contacted",
                 "primary_used", "shared_used", "live_attempts", "closed")

    def __init__(self, initiator, key: int):
        self.initiator = initiator
        self.key = key
        self.phase = 0
        self.contacted = {initiator.nid}
        self.primary_used = 0
        self.shared_used = 0
        self.live_attempts = 1
        self.closed = False


def issue(engine, initiator, key: int, now: float):
    """Start one measured lookup, if the initiator can route at all."""
    if not initiator.alive or not initiator.succ_list:
        engine.lk_skipped += 1
        engine.lookup_closed()
        return
    engine.lk_attempted += 1
    if engine.trace is not None:
        engine.trace.emit(now, "lookup", src=initiator.nid, key=key)
    if engine.is_holder(initiator.nid, key):
        finish(engine, Lookup(initiator, key), now, success=True)
        return
    lk = Lookup(initiator, key)
    step(engine, Attempt(lk), now)


def step(engine, att: Attempt, now: float):
    """Drive one attempt until it has an outstanding contact or ends."""
    lk = att.lk
    while True:
        if lk.closed or att.done:
            return
        if att.used >= engine.cfg.lookup_ttl:
            fail_attempt(engine, att, now)
            return
        while att.fetch_queue:
            h = att.fetch_queue.pop(0)
            if h not in lk.contacted:
                contact(engine, att, h, FETCH, now)
                return
        f = att.frontier
        chain = f.lookup_chain()
        if chain and f.nid not in att.fetched and in_open_closed(lk.key, f.nid, chain[-1]):
            # key falls inside the frontier's successor window: the chain
            # entries at or past the key hold the replicas, nearest first
            att.fetched.add(f.nid)
            own = next(j for j, c in enumerate(chain)
                       if in_open_closed(lk.key, f.nid, c))
            att.fetch_queue = chain[own:own + engine.cfg.replicas + 1]
            continue
        cand = f.closest_preceding_verified(lk.key, lk.contacted)
        was_fresh = att.fresh
        att.fresh = False
        if cand is not None:
            if not was_fresh and f is not lk.initiator:
                # the frontier's piggybacked suggestion is spent: getting
                # another candidate out of it is a real round trip, and it
                # counts against the budget like any other contact
                att.used += 1
                if lk.phase == 0:
                    lk.primary_used += 1
                else:
                    lk.shared_used += 1
                engine.msgs_lookup += 2
            contact(engine, att, cand, ROUTE, now)
            return
        if att.stack:
            att.frontier, att.trusted = att.stack.pop()
            att.fresh = False
            continue
        fail_attempt(engine, att, now)
        return


def contact(engine, att: Attempt, nid: int, purpose: int, now: float):
    lk = att.lk
    lk.contacted.add(nid)
    att.used += 1
    if lk.phase == 0:
        lk.primary_used += 1
    else:
        lk.shared_used += 1
    att.purpose = purpose
    target = engine.nodes[nid]
    engine.msgs_lookup += 1  # request
    if target.alive and not target.drops_lookups:
        engine.msgs_lookup += 1  # reply
        rtt = engine.draw_latency() + engine.draw_latency()
        engine.push(now + rtt, LK_REPLY, att, (target, target.timer_epoch))
    else:
        engine.push(now + engine.cfg.timeout, LK_TIMEOUT, att, None)
    if engine.trace is not None:
        engine.trace.emit(now, "contact", src=lk.initiator.nid, dst=nid,
                          key=lk.key, purpose="fetch" if purpose == FETCH else "route")


def verify_reply(engine, att: Attempt, target, now: float):
    """Check the hop's piggybacked presentation along the trust chain."""
    if not engine.cfg.sybilcontrol:
        return True, None
    lk = att.lk
    if att.trusted is None:
        trusted = own_trusted_challenges(lk.initiator.store, now, engine.retention)
    else:
        trusted = att.trusted
    verdict, new_trusted = check_presentation_via(
        att.frontier.nid, trusted, target.presentation(now),
        target.store.records, now, engine.retention, engine.fresh_window,
        engine.cfg.difficulty_bits, engine.cfg.check_hashes,
    )
    if verdict is Verdict.VERIFIED:
        engine.assert_fresh(target, now)
        return True, new_trusted
    if engine.trace is not None:
        engine.trace.emit(now, "hop-rejected", src=lk.initiator.nid,
                          dst=target.nid, verdict=verdict.value)
    return False, None


def on_reply(engine, att: Attempt, aux, now: float):
    lk = att.lk
    if lk.closed or att.done:
        return
    if not lk.initiator.alive:
        finish(engine, lk, now, voided=True)
        return
    target, epoch = aux
    if not target.alive or target.timer_epoch != epoch:
        step(engine, att, now)  # died while the reply was in flight
        return
    ok, new_trusted = verify_reply(engine, att, target, now)
    if att.purpose == FETCH:
        if ok and engine.is_holder(target.nid, lk.key):
            finish(engine, lk, now, success=True)
            return
    elif ok:
        att.stack.append((att.frontier, att.trusted))
        att.frontier = target
        att.trusted = new_trusted
        att.fresh = True
    step(engine, att, now)


def on_timeout(engine, att: Attempt, now: float):
    lk = att.lk
    if lk.closed or att.done:
        return
    if not lk.initiator.alive:
        finish(engine, lk, now, voided=True)
        return
    step(engine, att, now)


def fail_attempt(engine, att: Attempt, now: float):
    att.done = True
    lk = att.lk
    if lk.phase == 0:
        n_extra = engine.cfg.redundant_lookups
        if n_extra > 0:
            lk.phase = 1
            lk.live_attempts = n_extra
            for fresh in [Attempt(lk) for _ in range(n_extra)]:
                step(engine, fresh, now)
            return
        finish(engine, lk, now, success=False)
        return
    lk.live_attempts -= 1
    if lk.live_attempts <= 0 and not lk.closed:
        finish(engine, lk, now, success=False)


def finish(engine, lk: Lookup, now: float, success: bool = False, voided: bool = False):
    lk.closed = True
    if voided:
        engine.lk_voided += 1
    elif success:
        engine.lk_success += 1
        engine.hops_list.append(lk.primary_used + lk.shared_used)
        engine.hops_all.append(lk.primary_used + lk.shared_used)
    else:
        engine.lk_fail += 1
        engine.hops_all.append(lk.primary_used + lk.shared_used)
    if engine.trace is not None:
        engine.trace.emit(now, "lookup-done", src=lk.initiator.nid, key=lk.key,
                          outcome="void" if voided else ("ok" if success else "fail"),
                          hops=lk.primary_used + lk.shared_used)
    engine.lookup_closed()
