"""Collective verification: challenge stores, freshness rules, verification checks.

A node proves ongoing work by presenting its newest solved puzzle together
with the state record of the challenge generation the puzzle was solved
over.  A verifier accepts when

  * its own challenge appears in the record and is still within its own
    retention window (so the record provably postdates a challenge the
    verifier issued recently),
  * the record's aggregation recomputes to the record's new challenge,
  * the puzzle digest meets the difficulty, and
  * the solution is recent (a live solver produces one every puzzle period).

Staleness is always decided before solution validity: an expired-but-valid
solution is reported as StaleSolution, never BadSolution.

For nodes further than one hop away the verifier cannot find its own
challenge in the record, so verification chains through the path that
discovered the node: each hop's trusted record prefix yields a set of
trusted challenge values, and the next node's records must embed one of
them under the previous hop's id.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum

from .puzzle_core import (
    PuzzleState,
    StateRecord,
    TimingParams,
    make_record,
    verify_puzzle_solution,
)


class Verdict(Enum):
    VERIFIED = "verified"
    STALE_SOLUTION = "stale_solution"
    BAD_SOLUTION = "bad_solution"
    UNRESPONSIVE = "unresponsive"


@dataclass(frozen=True)
class VerificationOutcome:
    target: int
    verdict: Verdict
    checked_at: float

    @property
    def ok(self) -> bool:
        return self.verdict is Verdict.VERIFIED


class ChallengeStore:
    """Per-node record history plus an index of the node's own challenges.

    Records are appended once per challenge regeneration and expire after
    the retention window 2s + p(d+2).  ``own`` maps each challenge this
    node has issued (i.e. every record's new_challenge) to its issue time,
    which is exactly what the freshness side of direct verification needs.
    """

    __slots__ = ("records", "own")

    def __init__(self):
        self.records = deque()
        self.own = {}

    @property
    def newest(self) -> StateRecord | None:
        return self.records[-1] if self.records else None

    def add_record(self, rec: StateRecord):
        self.records.append(rec)
        self.own[rec.new_challenge] = rec.created_at

    def expire(self, now: float, retention: float):
        cutoff = now - retention
        records = self.records
        while records and records[0].created_at < cutoff:
            rec = records.popleft()
            self.own.pop(rec.new_challenge, None)

    def own_issued_at(self, challenge) -> float | None:
        return self.own.get(challenge)

    def clear(self):
        self.records.clear()
        self.own.clear()


def freshness_window(timing: TimingParams, solve_time_max: float) -> float:
    """Max believable age of a presented solution.

    A live solver's worst legitimate gap between presentable solutions is
    one puzzle period plus its solve time; 2p covers ping/check phase skew.
    """
    return timing.puzzle_interval_s + solve_time_max + 2 * timing.ping_interval_p


def check_presentation(
    verifier_id: int,
    own_store: ChallengeStore,
    puzzle: PuzzleState | None,
    now: float,
    retention: float,
    fresh_window: float,
    difficulty_bits: int = 0,
    check_hashes: bool = True,
) -> Verdict:
    """Direct verification of a neighbor's presented puzzle.

    The caller is responsible for mapping "no reply at all" to UNRESPONSIVE;
    a reply that carries no (or only outdated) work is STALE_SOLUTION.
    """
    if puzzle is None:
        return Verdict.STALE_SOLUTION
    if puzzle.solved_at < now - fresh_window:
        return Verdict.STALE_SOLUTION
    rec = puzzle.record
    mine = rec.received_map.get(verifier_id)
    if mine is None:
        return Verdict.STALE_SOLUTION
    issued = own_store.own_issued_at(mine)
    if issued is None or issued < now - retention:
        return Verdict.STALE_SOLUTION
    return _check_solution(puzzle, rec, difficulty_bits, check_hashes)


def _check_solution(puzzle: PuzzleState, rec: StateRecord, difficulty_bits: int, check_hashes: bool) -> Verdict:
    if puzzle.challenge != rec.new_challenge:
        return Verdict.BAD_SOLUTION
    if check_hashes:
        if rec.recompute() != rec.new_challenge:
            return Verdict.BAD_SOLUTION
        if not verify_puzzle_solution(puzzle.solver, puzzle.challenge, puzzle.nonce, difficulty_bits):
            return Verdict.BAD_SOLUTION
    return Verdict.VERIFIED


def trusted_challenges_via(
    prev_id: int,
    trusted: set,
    records,
    now: float,
    retention: float,
    check_hashes: bool = True,
) -> set:
    """Challenge values of ``records`` whose aggregation embeds a trusted
    challenge under prev_id.  This is the verified prefix handed to the next
    hop of a path verification."""
    out = set()
    cutoff = now - retention
    for rec in records:
        if rec.created_at < cutoff:
            continue
        mine = rec.received_map.get(prev_id)
        if mine is None or mine not in trusted:
            continue
        if check_hashes and rec.recompute() != rec.new_challenge:
            continue
        out.add(rec.new_challenge)
    return out


def check_presentation_via(
    prev_id: int,
    trusted: set,
    puzzle: PuzzleState | None,
    records,
    now: float,
    retention: float,
    fresh_window: float,
    difficulty_bits: int = 0,
    check_hashes: bool = True,
) -> tuple:
    """One hop of path verification.

    Returns (verdict, trusted_set_for_this_node).  The trusted set is only
    meaningful on VERIFIED and feeds the next hop's check.
    """
    if puzzle is None:
        return Verdict.STALE_SOLUTION, set()
    if puzzle.solved_at < now - fresh_window:
        return Verdict.STALE_SOLUTION, set()
    rec = puzzle.record
    mine = rec.received_map.get(prev_id)
    if mine is None or mine not in trusted:
        return Verdict.STALE_SOLUTION, set()
    verdict = _check_solution(puzzle, rec, difficulty_bits, check_hashes)
    if verdict is not Verdict.VERIFIED:
        return verdict, set()
    new_trusted = trusted_challenges_via(prev_id, trusted, records, now, retention, check_hashes)
    return Verdict.VERIFIED, new_trusted


def own_trusted_challenges(store: ChallengeStore, now: float, retention: float) -> set:
    """A node trusts every challenge it issued itself within retention."""
    cutoff = now - retention
    return {c for c, t in store.own.items() if t >= cutoff}


@dataclass(frozen=True)
class Ping:
    """One challenge-bearing keepalive."""

    sender: int
    target: int
    challenge: bytes
    sent_at: float
    arrive_at: float


def build_pings(sender_id: int, challenge, target_ids, sent_at: float, arrive_at: float):
    return [Ping(sender_id, t, challenge, sent_at, arrive_at) for t in target_ids]


def regenerate(store: ChallengeStore, received, old_challenge, now: float, retention: float) -> StateRecord:
    """Aggregate the latest received challenges into a new record and index it."""
    rec = make_record(received, old_challenge, now)
    store.add_record(rec)
    store.expire(now, retention)
    return rec
