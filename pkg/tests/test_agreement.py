"""LCP and relaxed agreement voting"""

import random

import pytest

from agreement import AgreementConfig, BeamCandidate, lcp, ralcp, ralcp_votes
from errors import InvalidInputError
from text_stream import EOS, TargetToken


def cand(pieces, score=-1.0, finished=False):
    tokens = tuple(TargetToken(p) for p in pieces)
    if finished:
        tokens += (EOS,)
    return BeamCandidate(tokens=tokens, score=score, finished=finished)


def texts(tokens):
    return [t.text for t in tokens]


def brute_force_common_prefix(candidates):
    seqs = [c.tokens for c in candidates]
    length = 0
    while all(len(s) > length for s in seqs) and len({s[length] for s in seqs}) == 1:
        length += 1
    return list(seqs[0][:length])


def random_candidates(rng):
    alphabet = "ABCDEFGH"[:rng.randint(2, 8)]
    stem = [rng.choice(alphabet) for _ in range(rng.randint(0, 6))]
    out = []
    for i in range(rng.randint(2, 10)):
        tail = [rng.choice(alphabet) for _ in range(rng.randint(0, 6))]
        pieces = stem[:rng.randint(0, len(stem))] + tail
        if not pieces:
            pieces = [rng.choice(alphabet)]
        out.append(cand(pieces, score=-rng.random() * 5 - i * 1e-3))
    return out


@pytest.mark.parametrize("pieces, expected", [
    ([["A", "B", "C"], ["A", "B", "D"]], ["A", "B"]),
    ([["A", "B"], ["A", "B"]], ["A", "B"]),
    ([["A"], ["B"]], []),
])
def test_lcp_examples(pieces, expected):
    assert texts(lcp([cand(p) for p in pieces])) == expected


def test_empty_candidate_list():
    with pytest.raises(InvalidInputError):
        lcp([])
    with pytest.raises(InvalidInputError):
        ralcp([], AgreementConfig())


def test_eighty_percent_of_five_agree():
    candidates = [cand(["A", "B"])] * 4 + [cand(["A", "C"])]
    assert texts(ralcp(candidates, AgreementConfig(gamma=0.8))) == ["A", "B"]


def test_two_of_three_then_split_vote():
    candidates = [cand(["A", "B"], -0.1), cand(["A", "C"], -0.2), cand(["D", "E"], -0.3)]
    assert texts(ralcp(candidates, AgreementConfig(gamma=0.6))) == ["A"]


def test_tie_goes_to_the_highest_scoring_candidate():
    candidates = [cand(["A", "C"], -0.9), cand(["A", "B"], -0.2), cand(["A", "C"], -1.5), cand(["A", "B"], -1.1)]
    result = ralcp(candidates, AgreementConfig(gamma=0.5))
    assert texts(result) == ["A", "B"]


def test_votes_are_normalized_by_the_configured_beam():
    candidates = [cand(["A", "B"]), cand(["A", "B"]), cand(["A", "C"])]
    assert texts(ralcp(candidates, AgreementConfig(gamma=0.6))) == ["A", "B"]
    # the same three candidates out of a requested five: A has 3/5, B only 2/5
    assert texts(ralcp(candidates, AgreementConfig(gamma=0.6), beam=5)) == ["A"]
    result = ralcp_votes(candidates, AgreementConfig(gamma=0.6), beam=5)
    assert result.beam == 5
    assert [p.votes for p in result.positions] == [3]
    assert ralcp_votes(candidates, AgreementConfig(gamma=0.6)).beam == 3


def test_exhausted_candidates_stop_voting():
    candidates = [cand(["A"]), cand(["A", "B"]), cand(["A", "B"])]
    assert texts(ralcp(candidates, AgreementConfig(gamma=0.6))) == ["A", "B"]
    assert texts(ralcp(candidates, AgreementConfig(gamma=1.0))) == ["A"]


def test_eos_is_stripped_before_voting():
    candidates = [cand(["A"], finished=True), cand(["A"], finished=True), cand(["A", "B"])]
    stripped = ralcp(candidates, AgreementConfig(gamma=0.6, strip_eos=True))
    assert texts(stripped) == ["A"]
    assert not any(t.is_eos for t in stripped)

    kept = ralcp(candidates, AgreementConfig(gamma=0.6))
    assert kept[-1].is_eos


def test_unfiltered_voting_keeps_disagreeing_candidates():
    candidates = [
        cand(["A", "X"], -0.1),
        cand(["A", "X"], -0.2),
        cand(["A", "X"], -0.3),
        cand(["B", "X"], -0.4),
        cand(["B", "Y"], -0.5),
    ]
    filtered = ralcp(candidates, AgreementConfig(gamma=0.6))
    unfiltered = ralcp(candidates, AgreementConfig(gamma=0.6, filter_disagreeing=False))
    assert texts(filtered) == ["A", "X"]
    assert texts(unfiltered) == ["A", "X"]

    # the filtered vote drops the B-candidates, the unfiltered one lets them add to X
    candidates[2] = cand(["A", "Z"], -0.3)
    assert texts(ralcp(candidates, AgreementConfig(gamma=0.6))) == ["A"]
    assert texts(ralcp(candidates, AgreementConfig(gamma=0.6, filter_disagreeing=False))) == ["A", "X"]


def test_candidate_invariants():
    with pytest.raises(InvalidInputError):
        BeamCandidate(tokens=(TargetToken("a"),), score=float("nan"))
    with pytest.raises(InvalidInputError):
        BeamCandidate(tokens=(TargetToken("a"),), score=float("-inf"))
    with pytest.raises(InvalidInputError):
        BeamCandidate(tokens=(), score=-1.0, finished=False)
    assert BeamCandidate(tokens=(EOS,), score=-1.0, finished=True).visible_tokens() == ()


def test_gamma_bounds():
    for gamma in (0.0, -0.1, 1.01):
        with pytest.raises(InvalidInputError):
            AgreementConfig(gamma=gamma)


def test_unanimous_vote_equals_lcp_and_oracle():
    rng = random.Random(1234)
    for _ in range(1000):
        candidates = random_candidates(rng)
        expected = brute_force_common_prefix(candidates)
        assert lcp(candidates) == expected
        assert ralcp(candidates, AgreementConfig(gamma=1.0)) == expected


def test_lcp_length_is_the_minimum_pairwise_prefix():
    rng = random.Random(99)
    for _ in range(300):
        candidates = random_candidates(rng)
        pairwise = [
            len(brute_force_common_prefix([a, b]))
            for i, a in enumerate(candidates) for b in candidates[i:]
        ]
        assert len(lcp(candidates)) == min(pairwise)


def test_output_shrinks_as_gamma_grows():
    rng = random.Random(7)
    gammas = [round(0.1 * i, 1) for i in range(1, 11)]
    for _ in range(1000):
        candidates = random_candidates(rng)
        outputs = [ralcp(candidates, AgreementConfig(gamma=g)) for g in gammas]
        for looser, stricter in zip(outputs, outputs[1:]):
            assert stricter == looser[:len(stricter)]


def test_accepted_tokens_are_sound():
    rng = random.Random(42)
    for _ in range(1000):
        candidates = random_candidates(rng)
        gamma = rng.choice([0.2, 0.4, 0.5, 0.6, 0.8, 1.0])
        beam = len(candidates) + rng.choice([0, 0, 1, 3])
        result = ralcp_votes(candidates, AgreementConfig(gamma=gamma), beam=beam)
        assert result.beam == beam
        active = set(range(len(candidates)))
        for i, position in enumerate(result.positions):
            assert position.votes / result.beam >= gamma
            recount = [c for c in active if len(candidates[c].tokens) > i
                       and candidates[c].tokens[i] == position.token]
            assert sorted(recount) == sorted(position.voters)
            active = set(position.voters)
        if result.prefix:
            assert any(c.tokens[:len(result.prefix)] == result.prefix for c in candidates)
