"""Discrete-event simulator for a ring overlay under churn and Sybil attack.

One Engine instance owns a node population, a single seeded RNG, and an
event heap.  Protocol work (challenge regeneration, puzzle solving,
verification sweeps, ring maintenance) runs on per-node timers; measured
lookups run through drawn latencies and timeouts.  Ground truth about
liveness and replica placement lives in a sorted ring the event handlers
keep up to date, so success checks never depend on any node's possibly
stale view.

Two global modeling shortcuts, both asserted where they matter:

* Challenge delivery is pulled by the receiver at its own regeneration
  instead of being delivered per ping message.  This is equivalent as long
  as every latency draw stays below the ping period, which run() asserts.
* Maintenance round trips execute inline at zero latency but are counted
  as messages, and dead or lookup-dropping peers still cost the contact.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, fields

from . import lookup as lookup_mod
from .chord import SortedRing
from .maintenance import attempt_join, fix_fingers, stabilize
from .node import Node
from .protection import (
    periodic_neighbor_verification,
    provision_virtual_nodes,
    sync_targets,
    try_promote_untrusted,
)
from .protocol import Verdict, VerificationOutcome, check_presentation, freshness_window
from .puzzle_core import (
    PuzzleState,
    TimingParams,
    default_diameter,
    hash_invocations,
    make_record,
    solve_puzzle,
)

# event codes
PING = 0
PUZZLE = 1
SWEEP = 2
MAINT = 3
DEATH = 4
REJOIN = 5
JOIN_TRY = 6
MEASURE = 7
LK_ISSUE = 8

SYBIL_BEHAVIORS = ("consistent", "initial", "never")
SESSION_DISTS = ("pareto", "exp")


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    # population
    n_honest: int = 1000
    virtual_nodes: bool = False
    q_choices: tuple = (1, 2, 3)
    sybil_fraction: float = 0.0
    sybil_behavior: str = "consistent"
    sybil_churn: bool = True
    # work protocol timing (seconds)
    ping_interval: float = 5.0
    puzzle_interval: float = 20.0
    diameter: int = 0  # 0 = derive from population size
    difficulty_bits: int = 0
    check_hashes: bool = True
    solve_time_min: float = 1.0
    solve_time_max: float = 10.0
    promote_age: float = 0.0  # 0 = derive: puzzle_interval + ping_interval
    promote_grace_fails: int = 2
    sweep_interval: float = 20.0
    sweep_fraction: float = 1.0 / 3.0
    backup_capacity: int = 8
    # ring and data placement
    succ_list_len: int = 4
    replicas: int = 2  # extra copies; holders = replicas + 1
    maint_interval: float = 30.0
    # churn
    churn: bool = True
    session_mean: float = 3600.0
    downtime_mean: float = 3600.0
    session_dist: str = "pareto"
    pareto_alpha: float = 2.0
    join_retry: float = 10.0
    # network
    latency_min: float = 0.010
    latency_max: float = 0.200
    timeout: float = 1.0
    # measurement
    warmup: float = 10000.0
    measure_window: float = 500.0
    lookups_per_node: int = 10
    lookup_ttl: int = 30
    redundant_lookups: int = 2
    # mode / instrumentation
    sybilcontrol: bool = True  # False = plain ring, no work protocol
    trace_path: str = ""
    track_provenance: bool = False

    def validate(self):
        c = self
        if c.n_honest < 2:
            raise ConfigError("n_honest must be at least 2")
        if not 0.0 <= c.sybil_fraction < 1.0:
            raise ConfigError("sybil_fraction must be in [0, 1)")
        if c.sybil_behavior not in SYBIL_BEHAVIORS:
            raise ConfigError(f"sybil_behavior must be one of {SYBIL_BEHAVIORS}")
        if not c.sybilcontrol and c.sybil_fraction > 0:
            raise ConfigError("the plain ring has no admission control; "
                              "sybil_fraction must be 0 when sybilcontrol is off")
        if c.ping_interval <= 0 or c.puzzle_interval < c.ping_interval:
            raise ConfigError("need 0 < ping_interval <= puzzle_interval")
        if c.diameter < 0:
            raise ConfigError("diameter must be >= 0 (0 derives it)")
        if not 0 <= c.difficulty_bits <= 64:
            raise ConfigError("difficulty_bits must be in [0, 64]")
        if c.difficulty_bits > 0 and not c.check_hashes:
            raise ConfigError("difficulty_bits > 0 requires check_hashes")
        if not 0 < c.solve_time_min <= c.solve_time_max:
            raise ConfigError("need 0 < solve_time_min <= solve_time_max")
        if c.solve_time_max >= c.puzzle_interval:
            raise ConfigError("solve_time_max must stay below puzzle_interval")
        if c.promote_age < 0 or c.promote_grace_fails < 1:
            raise ConfigError("bad promotion parameters")
        if not 0 < c.sweep_fraction <= 1 or c.sweep_interval <= 0:
            raise ConfigError("bad sweep parameters")
        if c.backup_capacity < 0:
            raise ConfigError("backup_capacity must be >= 0")
        if c.replicas < 0 or c.succ_list_len < c.replicas + 1:
            raise ConfigError("need succ_list_len >= replicas + 1 >= 1")
        if c.maint_interval <= 0:
            raise ConfigError("maint_interval must be positive")
        if c.session_dist not in SESSION_DISTS:
            raise ConfigError(f"session_dist must be one of {SESSION_DISTS}")
        if c.session_mean <= 0 or c.downtime_mean <= 0 or c.pareto_alpha <= 1:
            raise ConfigError("bad churn parameters")
        if not 0 < c.latency_min <= c.latency_max:
            raise ConfigError("need 0 < latency_min <= latency_max")
        if c.latency_max >= c.ping_interval:
            raise ConfigError("latency_max must stay below ping_interval")
        if 2 * c.latency_max >= c.timeout:
            raise ConfigError("timeout must exceed a round trip")
        if c.warmup <= 0 or c.measure_window <= 0:
            raise ConfigError("warmup and measure_window must be positive")
        if c.lookups_per_node < 1 or c.lookup_ttl < 1:
            raise ConfigError("lookups_per_node and lookup_ttl must be >= 1")
        if c.redundant_lookups < 0:
            raise ConfigError("redundant_lookups must be >= 0")

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        if "q_choices" in kw:
            kw["q_choices"] = tuple(kw["q_choices"])
        return cls(**kw)


class TraceWriter:
    """JSON-lines event trace, one object per line, keys sorted."""

    def __init__(self, path: str):
        self.fh = open(path, "w")

    def emit(self, t: float, kind: str, **fields_):
        rec = {"t": round(t, 6), "ev": kind}
        rec.update(fields_)
        self.fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")

    def close(self):
        self.fh.close()


class Engine:
    def __init__(self, cfg: SimConfig, seed: int):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = 0.0
        self.heap = []
        self.seq = 0
        self.done = False

        self.n_sybil = 0
        if cfg.sybil_fraction > 0:
            f = cfg.sybil_fraction
            self.n_sybil = round(cfg.n_honest * f / (1.0 - f))
        expected = cfg.n_honest * (2 if cfg.virtual_nodes else 1) + self.n_sybil
        d = cfg.diameter or default_diameter(expected, cfg.ping_interval, cfg.puzzle_interval)
        self.timing = TimingParams(cfg.ping_interval, cfg.puzzle_interval, d,
                                   cfg.difficulty_bits)
        self.retention = self.timing.record_retention
        self.fresh_window = freshness_window(self.timing, cfg.solve_time_max)
        self.promote_age = cfg.promote_age or (cfg.puzzle_interval + cfg.ping_interval)

        self.nodes = {}
        self.users = []  # list of node lists; virtual nodes share a user
        self.honest_nodes = []
        self.sybil_nodes = []
        self.live = SortedRing()

        # counters
        self.msgs_ping = 0
        self.msgs_verify = 0
        self.msgs_maint = 0
        self.msgs_lookup = 0
        self.promotions = 0
        self.evictions = 0
        self.solve_count = 0
        self.fresh_checks = 0
        self.promoted_ids = set()
        self.true_avail = {}  # ground-truth newest solve completion per node
        self.drawn_sessions = []
        self.max_latency = 0.0
        self.hash_ops_start = hash_invocations()

        # lookup stats
        self.lk_planned = None
        self.lk_closed = 0
        self.lk_attempted = 0
        self.lk_success = 0
        self.lk_fail = 0
        self.lk_voided = 0
        self.lk_skipped = 0
        self.hops_list = []
        self.hops_all = []
        self.honest_alive_at_measure = 0
        self.sybil_live_share_at_measure = 0.0

        self.trace = TraceWriter(cfg.trace_path) if cfg.trace_path else None
        self.prov = {} if cfg.track_provenance else None
        self.chal_meta = {} if cfg.track_provenance else None

    # ---------------- plumbing ----------------

    def push(self, t: float, code: int, obj, aux=None):
        heapq.heappush(self.heap, (t, self.seq, code, obj, aux))
        self.seq += 1

    def draw_latency(self) -> float:
        d = self.rng.uniform(self.cfg.latency_min, self.cfg.latency_max)
        if d > self.max_latency:
            self.max_latency = d
        return d

    def draw_session(self) -> float:
        c = self.cfg
        if c.session_dist == "pareto":
            xmin = c.session_mean * (c.pareto_alpha - 1.0) / c.pareto_alpha
            dur = xmin * self.rng.paretovariate(c.pareto_alpha)
        else:
            dur = self.rng.expovariate(1.0 / c.session_mean)
        self.drawn_sessions.append(dur)
        return dur

    def is_holder(self, nid: int, key: int) -> bool:
        """Ground truth: nid holds a replica of key right now."""
        return nid in self.live.successors(key, self.cfg.replicas + 1)

    def random_bootstrap(self, node: Node):
        ids = self.live.ids
        if len(ids) < 2:
            return None
        for _ in range(8):
            cand = ids[self.rng.randrange(len(ids))]
            if cand != node.nid:
                return self.nodes[cand]
        return None

    def schedule_join_retry(self, node: Node, now: float):
        self.push(now + self.cfg.join_retry, JOIN_TRY, node, node.timer_epoch)

    def lookup_closed(self):
        self.lk_closed += 1
        if self.lk_planned is not None and self.lk_closed >= self.lk_planned:
            self.done = True

    # ---------------- verification entry points ----------------

    def assert_fresh(self, target: Node, now: float):
        """Invariant net: a VERIFIED node must have a recent solve in the
        engine's own solve log, independent of what it presented."""
        last = self.true_avail.get(target.nid)
        assert last is not None and now - last <= self.fresh_window + 1e-9, (
            f"node {target.nid} verified without a fresh solve")
        self.fresh_checks += 1

    def check_direct(self, node: Node, target: Node, now: float) -> VerificationOutcome:
        """Dedicated challenge-response check of a neighbor (sweeps, promotion)."""
        if not self.cfg.sybilcontrol:
            self.msgs_maint += 1
            v = Verdict.VERIFIED if target.alive else Verdict.UNRESPONSIVE
            return VerificationOutcome(target.nid, v, now)
        self.msgs_verify += 1  # request
        if not target.alive:
            return VerificationOutcome(target.nid, Verdict.UNRESPONSIVE, now)
        self.msgs_verify += 1  # reply
        v = check_presentation(node.nid, node.store, target.presentation(now),
                               now, self.retention, self.fresh_window,
                               self.cfg.difficulty_bits, self.cfg.check_hashes)
        if v is Verdict.VERIFIED:
            self.assert_fresh(target, now)
        return VerificationOutcome(target.nid, v, now)

    def note_promotion(self, node: Node, target: Node, now: float):
        self.promotions += 1
        self.promoted_ids.add(target.nid)
        target.promoted_once = True
        if target.stop_after_promotion:
            target.solves = False
        if self.trace is not None:
            self.trace.emit(now, "promote", src=node.nid, dst=target.nid)

    def note_eviction(self, node: Node, tid: int, verdict: Verdict, now: float):
        self.evictions += 1
        if self.trace is not None:
            self.trace.emit(now, "evict", src=node.nid, dst=tid, verdict=verdict.value)

    # ---------------- population build ----------------

    def _new_node(self, user: int) -> Node:
        while True:
            nid = self.rng.getrandbits(64)
            if nid not in self.nodes and nid > 0:
                break
        node = Node(nid, self.cfg.succ_list_len - 1, user)
        node.solve_time = self.rng.uniform(self.cfg.solve_time_min,
                                           self.cfg.solve_time_max)
        self.nodes[nid] = node
        return node

    def _genesis(self, node: Node, tag: bytes):
        # the first challenge is a record with no inputs, so it indexes into
        # store.own and expires like any other
        material = tag + node.id8 + self.seq.to_bytes(8, "big")
        self.seq += 1
        rec = make_record((), material, self.now)
        node.store.add_record(rec)
        c = rec.new_challenge
        node.prev_chal = node.cur_chal = c
        if self.chal_meta is not None:
            self.chal_meta[c] = (node.nid, self.now)
            self.prov[c] = {node.nid: self.now}

    def build(self):
        cfg = self.cfg
        if cfg.virtual_nodes:
            qs = provision_virtual_nodes(cfg.n_honest, cfg.q_choices, self.rng)
        else:
            qs = [1] * cfg.n_honest
        for u, q in enumerate(qs):
            group = [self._new_node(u) for _ in range(q)]
            self.users.append(group)
            self.honest_nodes.extend(group)
        for _ in range(self.n_sybil):
            node = self._new_node(len(self.users))
            node.is_sybil = True
            node.drops_lookups = True
            if cfg.sybil_behavior == "never":
                node.solves = False
            elif cfg.sybil_behavior == "initial":
                node.stop_after_promotion = True
            self.users.append([node])
            self.sybil_nodes.append(node)

        ids_sorted = sorted(self.nodes)
        for nid in ids_sorted:
            self.live.add(nid)

        # perfect initial cover, worst case for the defense: attackers start
        # fully placed in every table
        for i, nid in enumerate(ids_sorted):
            node = self.nodes[nid]
            others = ids_sorted[:i] + ids_sorted[i + 1:]
            for need in node.compute_needed(others):
                node._establish(need, 0.0)
            node.rebuild_views()
        for nid in ids_sorted:
            sync_targets(self, self.nodes[nid])

        if cfg.sybilcontrol:
            for nid in ids_sorted:
                self._genesis(self.nodes[nid], b"genesis")
            for nid in ids_sorted:
                node = self.nodes[nid]
                rec = node.on_challenge_regen(0.0, self.retention)
                if self.prov is not None:
                    self._track_prov(node, rec)
                node.on_ping_timer(0.0, self.draw_latency())
                self.msgs_ping += len(node.out_targets)
                if node.solves:
                    nonce = (solve_puzzle(node.nid, rec.new_challenge, cfg.difficulty_bits)
                             if cfg.difficulty_bits else 0)
                    node.cur_puzzle = PuzzleState(nonce, rec.new_challenge, rec, 0.0, node.nid)
                    self.true_avail[node.nid] = 0.0
                    self.solve_count += 1

        rng = self.rng
        for nid in ids_sorted:
            node = self.nodes[nid]
            ep = node.timer_epoch
            if cfg.sybilcontrol:
                self.push(rng.uniform(0.0, cfg.ping_interval), PING, node, ep)
                self.push(rng.uniform(0.0, cfg.puzzle_interval), PUZZLE, node, ep)
            self.push(rng.uniform(0.0, cfg.sweep_interval), SWEEP, node, ep)
            self.push(rng.uniform(0.0, cfg.maint_interval), MAINT, node, ep)
        if cfg.churn:
            for uidx, group in enumerate(self.users):
                if group[0].is_sybil and not cfg.sybil_churn:
                    continue
                self.push(self.draw_session(), DEATH, uidx, group[0].timer_epoch)
        self.push(cfg.warmup, MEASURE, None, None)

    def _track_prov(self, node: Node, rec):
        # ancestry summarized as newest embedded issue time per issuer
        anc = {}
        inputs = [c for _, c in rec.received]
        if rec.old_challenge:
            inputs.append(rec.old_challenge)
        for c in inputs:
            for nid, t in self.prov.get(c, {}).items():
                if t > anc.get(nid, -1.0):
                    anc[nid] = t
        anc[node.nid] = self.now
        self.prov[rec.new_challenge] = anc
        self.chal_meta[rec.new_challenge] = (node.nid, self.now)

    # ---------------- churn ----------------

    def kill_user(self, uidx: int, now: float):
        for node in self.users[uidx]:
            node.alive = False
            node.timer_epoch += 1
            self.live.remove(node.nid)
            for tgt in node.out_targets.values():
                tgt.in_edges.discard(node)
            node.reset_state()
            if self.trace is not None:
                self.trace.emit(now, "leave", node=node.nid)
        if self.cfg.churn:
            downtime = self.rng.expovariate(1.0 / self.cfg.downtime_mean)
            self.push(now + downtime, REJOIN, uidx, self.users[uidx][0].timer_epoch)

    def revive_user(self, uidx: int, now: float):
        cfg = self.cfg
        group = self.users[uidx]
        for node in group:
            node.alive = True
            node.timer_epoch += 1
            node.joined_at = now
            node.solves = (not node.is_sybil) or cfg.sybil_behavior != "never"
            self._genesis(node, b"rejoin")
            node.chal_avail = now
            self.live.add(node.nid)
            if self.trace is not None:
                self.trace.emit(now, "join", node=node.nid)
            ep = node.timer_epoch
            if cfg.sybilcontrol:
                self.push(now + self.rng.uniform(0.0, cfg.ping_interval), PING, node, ep)
                self.push(now + self.rng.uniform(0.0, cfg.puzzle_interval), PUZZLE, node, ep)
            self.push(now + self.rng.uniform(0.0, cfg.sweep_interval), SWEEP, node, ep)
            self.push(now + self.rng.uniform(0.0, cfg.maint_interval), MAINT, node, ep)
        self.push(now + self.draw_session(), DEATH, uidx, group[0].timer_epoch)
        for node in group:
            attempt_join(self, node, now)

    # ---------------- measurement ----------------

    def schedule_measurement(self, now: float):
        cfg = self.cfg
        planned = 0
        for node in self.honest_nodes:
            if not node.alive:
                continue
            self.honest_alive_at_measure += 1
            for _ in range(cfg.lookups_per_node):
                key = self.rng.getrandbits(64)
                self.push(now + self.rng.uniform(0.0, cfg.measure_window),
                          LK_ISSUE, node, key)
                planned += 1
        self.lk_planned = planned
        live_sybils = sum(1 for s in self.sybil_nodes if s.alive)
        if len(self.live):
            self.sybil_live_share_at_measure = live_sybils / len(self.live)
        if planned == 0:
            self.done = True

    # ---------------- main loop ----------------

    def run(self) -> dict:
        self.build()
        cfg = self.cfg
        hard_end = cfg.warmup + cfg.measure_window + 2 * cfg.timeout * cfg.lookup_ttl + 60.0
        heap = self.heap
        retention = self.retention
        while heap and not self.done:
            t, _, code, obj, aux = heapq.heappop(heap)
            if t > hard_end:
                break
            self.now = t
            if code == PING:
                node = obj
                if not node.alive or node.timer_epoch != aux:
                    continue
                rec = node.on_challenge_regen(t, retention)
                if self.prov is not None:
                    self._track_prov(node, rec)
                node.on_ping_timer(t, self.draw_latency())
                self.msgs_ping += len(node.out_targets)
                if self.trace is not None:
                    for tid in sorted(node.out_targets):
                        self.trace.emit(t, "ping", src=node.nid, dst=tid,
                                        challenge=rec.new_challenge.hex()[:16])
                self.push(t + cfg.ping_interval, PING, node, aux)
            elif code == MAINT:
                node = obj
                if not node.alive or node.timer_epoch != aux:
                    continue
                try_promote_untrusted(self, node, t)
                stabilize(self, node, t)
                fix_fingers(self, node, t)
                self.push(t + cfg.maint_interval, MAINT, node, aux)
            elif code == PUZZLE:
                node = obj
                if not node.alive or node.timer_epoch != aux:
                    continue
                ps = node.on_puzzle_timer(t, cfg.difficulty_bits)
                if ps is not None:
                    self.solve_count += 1
                    self.true_avail[node.nid] = ps.solved_at
                    if self.trace is not None:
                        self.trace.emit(t, "solve", node=node.nid,
                                        challenge=ps.challenge.hex()[:16],
                                        ready=round(ps.solved_at, 6))
                self.push(t + cfg.puzzle_interval, PUZZLE, node, aux)
            elif code == SWEEP:
                node = obj
                if not node.alive or node.timer_epoch != aux:
                    continue
                periodic_neighbor_verification(self, node, t)
                self.push(t + cfg.sweep_interval, SWEEP, node, aux)
            elif code == lookup_mod.LK_REPLY:
                lookup_mod.on_reply(self, obj, aux, t)
            elif code == lookup_mod.LK_TIMEOUT:
                lookup_mod.on_timeout(self, obj, t)
            elif code == LK_ISSUE:
                lookup_mod.issue(self, obj, aux, t)
            elif code == DEATH:
                group = self.users[obj]
                if group[0].alive and group[0].timer_epoch == aux:
                    self.kill_user(obj, t)
            elif code == REJOIN:
                group = self.users[obj]
                if not group[0].alive and group[0].timer_epoch == aux:
                    self.revive_user(obj, t)
            elif code == JOIN_TRY:
                node = obj
                if node.alive and node.timer_epoch == aux and not node.succ_list:
                    attempt_join(self, node, t)
            elif code == MEASURE:
                self.schedule_measurement(t)
        assert self.max_latency < cfg.ping_interval, "pull model needs latency < ping period"
        if self.trace is not None:
            self.trace.close()
        return self.result()

    def result(self) -> dict:
        completed = self.lk_success + self.lk_fail
        hops = self.hops_list
        hops_all = self.hops_all
        return {
            "seed": self.seed,
            "config": self.cfg.to_dict(),
            "n_nodes": len(self.nodes),
            "n_sybil": self.n_sybil,
            "diameter": self.timing.diameter_d,
            "attempted": self.lk_attempted,
            "completed": completed,
            "successes": self.lk_success,
            "failures": self.lk_fail,
            "voided": self.lk_voided,
            "skipped": self.lk_skipped,
            "success_rate": (self.lk_success / completed) if completed else 0.0,
            "mean_hops": (sum(hops) / len(hops)) if hops else None,
            "mean_hops_completed": (sum(hops_all) / len(hops_all)) if hops_all else None,
            "messages": {
                "ping": self.msgs_ping,
                "verify": self.msgs_verify,
                "maint": self.msgs_maint,
                "lookup": self.msgs_lookup,
            },
            "promotions": self.promotions,
            "evictions": self.evictions,
            "solves": self.solve_count,
            "fresh_checks": self.fresh_checks,
            "hash_ops": hash_invocations() - self.hash_ops_start,
            "honest_alive_at_measure": self.honest_alive_at_measure,
            "sybil_live_share_at_measure": round(self.sybil_live_share_at_measure, 6),
            "max_latency": round(self.max_latency, 6),
            "sim_end": round(self.now, 3),
        }


def run_simulation(cfg: SimConfig, seed: int) -> dict:
    return Engine(cfg, seed).run()
