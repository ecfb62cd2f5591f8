"""Shared helpers: small engines for unit tests, fully built but not run."""

from sybilctl.engine import Engine, SimConfig, run_simulation

STATIC = dict(
    n_honest=64,
    churn=False,
    warmup=60.0,
    measure_window=30.0,
    lookups_per_node=1,
    latency_min=0.005,
    latency_max=0.05,
)


def static_config(**over) -> SimConfig:
    kw = dict(STATIC)
    kw.update(over)
    cfg = SimConfig(**kw)
    cfg.validate()
    return cfg


def fresh_engine(seed=5, **over) -> Engine:
    eng = Engine(static_config(**over), seed)
    eng.build()
    return eng


def run_static(seed=5, **over) -> dict:
    return run_simulation(static_config(**over), seed)


def solve_and_log(engine, node, now: float):
    """Run one puzzle tick by hand and keep the ground-truth log in step."""
    ps = node.on_puzzle_timer(now, engine.cfg.difficulty_bits)
    if ps is not None:
        engine.solve_count += 1
        engine.true_avail[node.nid] = ps.solved_at
    return ps


def warm_ring(engine, seconds=95.0, latency=0.01):
    """Advance every node through a stretch of challenge generations.

    A freshly built ring is one generation deep, which is not enough
    history for chained path verification; this replays what the ping
    and puzzle timers produce during a real run, at their real cadence.
    """
    period = engine.cfg.ping_interval
    puzzle_every = engine.cfg.puzzle_interval
    t = 0.0
    while t + period <= seconds:
        t += period
        run_puzzles = (t % puzzle_every) == 0
        for nid in sorted(engine.nodes):
            node = engine.nodes[nid]
            if not node.alive:
                continue
            node.on_challenge_regen(t, engine.retention)
            node.on_ping_timer(t, latency)
            if run_puzzles:
                ps = node.on_puzzle_timer(t, engine.cfg.difficulty_bits)
                if ps is not None:
                    engine.solve_count += 1
                    engine.true_avail[node.nid] = ps.solved_at
    engine.now = t
    return t


def outsider_for(engine, node):
    """Some live node the given node has no relationship with."""
    for nid in engine.nodes:
        if nid == node.nid:
            continue
        if nid in node.established or nid in node.untrusted or nid in node.backups:
            continue
        return engine.nodes[nid]
    raise AssertionError("node already knows the whole ring")
