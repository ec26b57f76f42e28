#!/usr/bin/env python3
"""
Prefix agreement over candidate continuations
LCP commits what every candidate agrees on; RALCP relaxes that to a vote with threshold gamma
"""

import math
from collections import Counter
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from errors import InvalidInputError
from text_stream import TargetToken


@dataclass(frozen=True)
class BeamCandidate:
    """
    One scored candidate continuation

    Args:
        tokens: Continuation tokens (an EOS token ends a finished candidate)
        score: Cumulative log-probability
        finished: True when the candidate ended with EOS
    """

    tokens: Tuple[TargetToken, ...]
    score: float
    finished: bool = False

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise InvalidInputError(f"candidate score must be finite, got {self.score}")
        if not self.finished and not self.visible_tokens():
            raise InvalidInputError("unfinished candidate must have at least one token")

    def visible_tokens(self) -> Tuple[TargetToken, ...]:
        return tuple(t for t in self.tokens if not t.is_eos)


@dataclass(frozen=True)
class AgreementConfig:
    """
    Args:
        gamma: Fraction of B that must propose a token for it to be committed
        strip_eos: Remove EOS tokens before voting
        filter_disagreeing: Drop candidates from the vote once they disagree with an accepted token
    """

    gamma: float = 0.6
    strip_eos: bool = False
    filter_disagreeing: bool = True

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise InvalidInputError(f"gamma must be in (0, 1], got {self.gamma}")


@dataclass(frozen=True)
class AcceptedPosition:
    token: TargetToken
    votes: int
    voters: Tuple[int, ...]


@dataclass(frozen=True)
class AgreementResult:
    """Committed prefix plus the per-position vote record"""

    prefix: Tuple[TargetToken, ...]
    positions: Tuple[AcceptedPosition, ...]
    beam: int


def _check(candidates: Sequence[BeamCandidate]):
    if not candidates:
        raise InvalidInputError("candidate list is empty")


def lcp(candidates: Sequence[BeamCandidate]) -> List[TargetToken]:
    """Longest token sequence that prefixes every candidate"""
    _check(candidates)
    prefix = list(candidates[0].tokens)
    for cand in candidates[1:]:
        limit = min(len(prefix), len(cand.tokens))
        i = 0
        while i < limit and prefix[i] == cand.tokens[i]:
            i += 1
        del prefix[i:]
        if not prefix:
            break
    return prefix


def ralcp_votes(
    candidates: Sequence[BeamCandidate],
    config: AgreementConfig,
    beam: Optional[int] = None,
) -> AgreementResult:
    """
    Position-wise plurality vote with threshold gamma

    Args:
        candidates: Candidate continuations
        config: Threshold and voting switches
        beam: Vote denominator B; defaults to len(candidates). A backend returning fewer
            than the configured beam still votes against the configured B

    Returns:
        AgreementResult holding the accepted prefix and, per position, the winning
        token, its vote count and the indices of the candidates that voted for it
    """
    _check(candidates)
    total = beam if beam is not None else len(candidates)
    if total < len(candidates):
        raise InvalidInputError(f"beam {total} smaller than candidate count {len(candidates)}")

    if config.strip_eos:
        seqs = [tuple(c.visible_tokens()) for c in candidates]
    else:
        seqs = [tuple(c.tokens) for c in candidates]

    active = list(range(len(candidates)))
    prefix = []
    positions = []
    i = 0
    while True:
        voting = [c for c in active if i < len(seqs[c])]
        if not voting:
            break
        counts = Counter(seqs[c][i] for c in voting)
        best = max(counts.values())
        # tie: token of the highest-scoring voter, then earliest candidate
        winner = None
        winner_score = -math.inf
        for c in voting:
            tok = seqs[c][i]
            if counts[tok] == best and candidates[c].score > winner_score:
                winner, winner_score = tok, candidates[c].score
        if best / total < config.gamma:
            break
        voters = tuple(c for c in voting if seqs[c][i] == winner)
        prefix.append(winner)
        positions.append(AcceptedPosition(token=winner, votes=best, voters=voters))
        if config.filter_disagreeing:
            active = list(voters)
        i += 1

    return AgreementResult(prefix=tuple(prefix), positions=tuple(positions), beam=total)


def ralcp(
    candidates: Sequence[BeamCandidate],
    config: AgreementConfig,
    beam: Optional[int] = None,
) -> List[TargetToken]:
    """Relaxed-agreement longest common prefix; gamma=1.0 coincides with lcp()"""
    return list(ralcp_votes(candidates, config, beam).prefix)
