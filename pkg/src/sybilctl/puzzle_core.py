"""Hash puzzles and challenge aggregation.

Every node periodically combines the challenges it has heard from its
neighbors into a single new challenge and solves a hashcash-style puzzle
over it.  The aggregation is order-independent (entries are serialized in
ascending node-id order) so that any neighbor can later recompute it from
the node's state record.

All hashing is SHA-256.  A puzzle solution for node ``solver`` is a nonce
such that sha256(solver_id_8B || challenge || nonce_8B) has at least
``difficulty_bits`` leading zero bits.  Simulated networks run with
difficulty 0 (real hashing, trivially satisfied); positive difficulties
are exercised by unit tests and small demos.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property
from math import ceil, log2

NodeId = int
Challenge = bytes

CHALLENGE_BYTES = 32
ID_BYTES = 8
NONCE_BYTES = 8

# Counts every SHA-256 invocation made through this module; tests use it to
# pin down verification cost (exactly one hash per solution check).
_hash_invocations = 0


def _sha(data: bytes) -> bytes:
    global _hash_invocations
    _hash_invocations += 1
    return hashlib.sha256(data).digest()


def hash_invocations() -> int:
    return _hash_invocations


def node_id_bytes(node_id: NodeId) -> bytes:
    return node_id.to_bytes(ID_BYTES, "big")


def canonical_record_bytes(received, old_challenge: Challenge) -> bytes:
    """Serialize a received-challenge table plus the previous own challenge.

    ``received`` is an iterable of (node_id, challenge) pairs; they are
    sorted by node id here so callers need not pre-sort.  Layout per entry
    is 8-byte big-endian id followed by the 32-byte challenge, with the old
    challenge appended last.
    """
    pieces = []
    for nid, chal in sorted(received):
        pieces.append(node_id_bytes(nid))
        pieces.append(chal)
    pieces.append(old_challenge)
    return b"".join(pieces)


def compute_new_challenge(received, old_challenge: Challenge) -> Challenge:
    """Aggregate received challenges and the old own challenge into a new one."""
    return _sha(canonical_record_bytes(received, old_challenge))


@dataclass(frozen=True)
class TimingParams:
    """Protocol timing knobs.

    p: ping interval (challenge distribution period)
    s: puzzle-solving interval; must cover challenge propagation (s >= p*d)
    d: bound on the hop diameter of the challenge-flow overlay
    difficulty_bits: leading zero bits required of puzzle digests
    """

    ping_interval_p: float
    puzzle_interval_s: float
    diameter_d: int
    difficulty_bits: int = 0

    def __post_init__(self):
        if self.ping_interval_p <= 0:
            raise ValueError("ping interval must be positive")
        if self.diameter_d < 1:
            raise ValueError("diameter bound must be >= 1")
        if self.puzzle_interval_s < self.ping_interval_p * self.diameter_d:
            raise ValueError(
                "puzzle interval %.3g violates s >= p*d (p=%.3g, d=%d)"
                % (self.puzzle_interval_s, self.ping_interval_p, self.diameter_d)
            )
        if not 0 <= self.difficulty_bits <= 64:
            raise ValueError("difficulty out of range")

    @property
    def record_retention(self) -> float:
        """How long state records (and own challenges) stay usable.

        2s covers two full puzzle periods, p*(d+2) covers propagation of a
        challenge across the overlay plus ping jitter on both ends.
        """
        return 2 * self.puzzle_interval_s + self.ping_interval_p * (self.diameter_d + 2)


def default_diameter(expected_size: int, p: float, s: float) -> int:
    """Diameter bound for a network of the given size, capped so s >= p*d holds.

    The challenge-flow graph has out-degree ~(fingers + successors + backups),
    so its diameter is far below log2(N); log2(N) is kept as a conservative
    ceiling for small networks and the s/p cap keeps the timing invariant.
    """
    raw = max(1, ceil(log2(max(2, expected_size))))
    return max(1, min(raw, int(s // p)))


@dataclass(frozen=True)
class StateRecord:
    """Everything needed to recompute one challenge generation.

    new_challenge = sha256(serialized received table || old_challenge); a
    verifier that finds its own challenge in ``received`` can recompute the
    aggregation and thereby trust ``new_challenge``.
    """

    new_challenge: Challenge
    old_challenge: Challenge
    received: tuple  # ((node_id, challenge), ...) ascending by node id
    created_at: float

    @cached_property
    def received_map(self) -> dict:
        return dict(self.received)

    @cached_property
    def canonical(self) -> bytes:
        return canonical_record_bytes(self.received, self.old_challenge)

    def recompute(self) -> Challenge:
        return _sha(self.canonical)

    def fresh_at(self, now: float, retention: float) -> bool:
        return self.created_at >= now - retention


def make_record(received, old_challenge: Challenge, created_at: float) -> StateRecord:
    new = compute_new_challenge(received, old_challenge)
    return StateRecord(new, old_challenge, tuple(sorted(received)), created_at)


@dataclass
class PuzzleState:
    """A solved puzzle bound to the record of the challenge it was solved over."""

    nonce: int
    challenge: Challenge
    record: StateRecord
    solved_at: float
    solver: NodeId


def _digest_meets(digest: bytes, difficulty_bits: int) -> bool:
    if difficulty_bits == 0:
        return True
    return int.from_bytes(digest, "big") >> (256 - difficulty_bits) == 0


def puzzle_digest(solver: NodeId, challenge: Challenge, nonce: int) -> bytes:
    return _sha(node_id_bytes(solver) + challenge + nonce.to_bytes(NONCE_BYTES, "big"))


def solve_puzzle(solver: NodeId, challenge: Challenge, difficulty_bits: int) -> int:
    """Return the smallest nonce whose digest meets the difficulty."""
    nonce = 0
    while not _digest_meets(puzzle_digest(solver, challenge, nonce), difficulty_bits):
        nonce += 1
    return nonce


def verify_puzzle_solution(
    solver: NodeId, challenge: Challenge, nonce: int, difficulty_bits: int
) -> bool:
    """Check a claimed solution.  Costs exactly one hash invocation."""
    return _digest_meets(puzzle_digest(solver, challenge, nonce), difficulty_bits)
