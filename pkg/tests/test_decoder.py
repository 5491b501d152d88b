"""Tests for beam search, expansion scoring, and selection utilities."""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from tokenwise.decoder import (
    DecodeConfig,
    DecodeTrace,
    NBestList,
    add_and_merge,
    blank_run,
    choose_n_best,
    choose_n_best_expansions,
    choose_nth_score,
    decode_segment,
    decode_utterance_standard,
    decode_utterance_tokenwise,
    expand_blank,
    expand_nonblank,
    mass_conservation_check,
)
from tokenwise.logmath import LOG_ZERO, log_sum
from tokenwise.model import JoinerCounters, SeededModel
from tokenwise.types import Beam, Hypothesis, SegmentLattice


def _random_lattice(rng: np.random.Generator, frames: int, symbols: int) -> SegmentLattice:
    logits = rng.uniform(-3.0, 3.0, size=(frames, symbols))
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return SegmentLattice(np.log(probs))


def _random_mass(rng: np.random.Generator, frames: int) -> np.ndarray:
    mass = rng.uniform(-6.0, -0.5, size=frames)
    mass[rng.uniform(size=frames) < 0.3] = LOG_ZERO
    if (mass == LOG_ZERO).all():
        mass[0] = -1.0
    return mass


def _expand_nonblank_direct(mass: np.ndarray, lattice: SegmentLattice, token: int) -> np.ndarray:
    frames = lattice.frames
    out = np.full(frames, LOG_ZERO)
    for t in range(frames):
        terms = []
        for origin in range(t + 1):
            run = float(np.sum(lattice.scores[origin:t, -1]))
            terms.append(mass[origin] + run + lattice.scores[t, token])
        out[t] = log_sum(terms)
    return out


def test_expand_nonblank_matches_double_sum() -> None:
    rng = np.random.default_rng(31)
    for _ in range(60):
        frames = int(rng.integers(1, 7))
        symbols = int(rng.integers(2, 6))
        lattice = _random_lattice(rng, frames, symbols)
        mass = _random_mass(rng, frames)
        token = int(rng.integers(0, symbols - 1))
        new_mass, score = expand_nonblank(mass, lattice, token)
        direct = _expand_nonblank_direct(mass, lattice, token)
        with np.errstate(invalid="ignore"):
            diff = new_mass - direct
        diff = np.where(np.isneginf(new_mass) & np.isneginf(direct), 0.0, diff)
        assert np.abs(diff).max() < 1e-12
        assert abs(score - log_sum(direct.tolist())) < 1e-12


def test_expand_nonblank_score_is_mass_total() -> None:
    rng = np.random.default_rng(32)
    lattice = _random_lattice(rng, 5, 4)
    mass = _random_mass(rng, 5)
    new_mass, score = expand_nonblank(mass, lattice, 1)
    assert abs(score - log_sum(new_mass.tolist())) < 1e-12


def test_expand_blank_matches_double_sum() -> None:
    rng = np.random.default_rng(33)
    for _ in range(60):
        frames = int(rng.integers(1, 7))
        lattice = _random_lattice(rng, frames, 4)
        mass = _random_mass(rng, frames)
        direct = log_sum(
            [
                float(mass[origin] + np.sum(lattice.scores[origin:, -1]))
                for origin in range(frames)
            ]
        )
        assert abs(expand_blank(mass, lattice) - direct) < 1e-12


def test_expand_validates_shapes_and_tokens() -> None:
    rng = np.random.default_rng(34)
    lattice = _random_lattice(rng, 3, 4)
    with pytest.raises(ValueError):
        expand_nonblank(np.zeros(2), lattice, 0)
    with pytest.raises(ValueError):
        expand_nonblank(np.zeros(3), lattice, 3)
    with pytest.raises(ValueError):
        expand_blank(np.zeros(2), lattice)


def test_blank_run_exact_composition() -> None:
    scores = np.full((4, 3), -1.25)
    scores[:, -1] = -0.5
    lattice = SegmentLattice(scores)
    assert blank_run(lattice, 1, 1) == 0.0
    assert blank_run(lattice, 1, 5) == -2.0
    for split in range(1, 6):
        assert blank_run(lattice, 1, split) + blank_run(lattice, split, 5) == -2.0


def test_blank_run_general_lattices() -> None:
    rng = np.random.default_rng(35)
    for _ in range(40):
        frames = int(rng.integers(1, 8))
        lattice = _random_lattice(rng, frames, 3)
        start = int(rng.integers(1, frames + 2))
        end = int(rng.integers(1, frames + 2))
        got = blank_run(lattice, start, end)
        if start > end:
            assert got == LOG_ZERO
        else:
            want = float(np.sum(lattice.scores[start - 1 : end - 1, -1]))
            assert abs(got - want) < 1e-12


def test_blank_run_rejects_out_of_range() -> None:
    lattice = SegmentLattice(np.full((2, 3), math.log(1 / 3)))
    with pytest.raises(ValueError):
        blank_run(lattice, 0, 2)
    with pytest.raises(ValueError):
        blank_run(lattice, 1, 4)


def test_mass_conservation_check_on_consistent_hypothesis() -> None:
    rng = np.random.default_rng(36)
    for _ in range(30):
        frames = int(rng.integers(1, 7))
        lattice = _random_lattice(rng, frames, 4)
        mass = _random_mass(rng, frames)
        hyp = Hypothesis((0,), score=log_sum(mass.tolist()), emission_mass=mass)
        assert mass_conservation_check(hyp, lattice) < 1e-12


def test_mass_conservation_check_requires_mass() -> None:
    lattice = SegmentLattice(np.full((2, 3), math.log(1 / 3)))
    with pytest.raises(ValueError):
        mass_conservation_check(Hypothesis((), score=0.0), lattice)


def test_add_and_merge_adds_log_scores() -> None:
    base = Beam((Hypothesis((1,), score=math.log(0.25)),), capacity=4)
    merged = add_and_merge(base, Hypothesis((1,), score=math.log(0.25)))
    assert len(merged) == 1
    assert abs(merged.hypotheses[0].score - math.log(0.5)) < 1e-12
    grown = add_and_merge(merged, Hypothesis((2,), score=-1.0))
    assert len(grown) == 2


def test_add_and_merge_combines_emission_mass() -> None:
    mass_a = np.array([math.log(0.25), LOG_ZERO])
    mass_b = np.array([LOG_ZERO, math.log(0.25)])
    beam = Beam(
        (Hypothesis((1,), score=math.log(0.25), emission_mass=mass_a),), capacity=2
    )
    merged = add_and_merge(beam, Hypothesis((1,), score=math.log(0.25), emission_mass=mass_b))
    out = merged.hypotheses[0]
    assert abs(out.score - math.log(0.5)) < 1e-12
    assert np.abs(out.emission_mass - math.log(0.25)).max() < 1e-12


def test_add_and_merge_rejects_mixed_mass_state() -> None:
    with_mass = Hypothesis((1,), score=-1.0, emission_mass=np.array([-1.0]))
    without = Hypothesis((1,), score=-1.0)
    beam = Beam((with_mass,), capacity=2)
    with pytest.raises(ValueError):
        add_and_merge(beam, without)
    short = Hypothesis((1,), score=-1.0, emission_mass=np.array([-1.0, -2.0]))
    with pytest.raises(ValueError):
        add_and_merge(beam, short)


def test_choose_n_best_returns_all_when_n_large() -> None:
    hyps = [Hypothesis((i,), score=-float(i)) for i in range(3)]
    assert choose_n_best(hyps, 10) == sorted(hyps, key=lambda h: -h.score)


def test_choose_n_best_orders_by_score() -> None:
    hyps = [
        Hypothesis((1,), score=-3.0),
        Hypothesis((2,), score=-1.0),
        Hypothesis((3,), score=-2.0),
    ]
    top = choose_n_best(hyps, 2)
    assert [h.tokens for h in top] == [(2,), (3,)]


def test_choose_n_best_ties_prefer_shorter_then_lexicographic() -> None:
    hyps = [
        Hypothesis((2, 1), score=-1.0),
        Hypothesis((1, 2), score=-1.0),
        Hypothesis((3,), score=-1.0),
    ]
    for ordering in itertools.permutations(hyps):
        top = choose_n_best(list(ordering), 3)
        assert [h.tokens for h in top] == [(3,), (1, 2), (2, 1)]


def test_choose_n_best_rejects_bad_n() -> None:
    with pytest.raises(ValueError):
        choose_n_best([], 0)


def test_choose_nth_score_handles_short_lists() -> None:
    hyps = [Hypothesis((1,), score=-1.0), Hypothesis((2,), score=-2.0)]
    assert choose_nth_score(hyps, 1) == -1.0
    assert choose_nth_score(hyps, 2) == -2.0
    assert choose_nth_score(hyps, 3) == LOG_ZERO
    assert choose_nth_score([], 1) == LOG_ZERO


def test_choose_n_best_expansions_matches_full_sort() -> None:
    rng = np.random.default_rng(37)
    for _ in range(500):
        hyps = int(rng.integers(1, 5))
        vocab = int(rng.integers(1, 5))
        scores = {}
        for i in range(hyps):
            for k in range(vocab):
                scores[(i, k)] = float(rng.choice([-1.0, -2.0, rng.uniform(-5.0, 0.0)]))
        n = int(rng.integers(1, hyps * vocab + 1))
        got = choose_n_best_expansions(scores, n)
        want = sorted(scores, key=lambda pair: (-scores[pair], pair[0], pair[1]))[:n]
        assert got == want


def test_nbest_list_rejects_duplicates_and_indexes() -> None:
    with pytest.raises(ValueError):
        NBestList((((1,), -1.0), ((1,), -2.0)))
    out = NBestList((((1,), -1.0), ((2,), -2.0)))
    assert out.top == (1,)
    assert out.score_of((2,)) == -2.0
    assert out.sequences() == [(1,), (2,)]
    with pytest.raises(KeyError):
        out.score_of((9,))
    with pytest.raises(IndexError):
        NBestList(()).top


def test_decode_config_validation() -> None:
    with pytest.raises(ValueError):
        DecodeConfig(beam_size=0)
    with pytest.raises(ValueError):
        DecodeConfig(beam_size=1, segment_size=0)
    with pytest.raises(ValueError):
        DecodeConfig(beam_size=1, nbest=2)
    with pytest.raises(ValueError):
        DecodeConfig(beam_size=1, max_rounds_per_segment=0)
    config = DecodeConfig(beam_size=2, segment_size=3)
    assert config.rounds_cap() == 48
    assert config.rounds_cap(1) == 16
    assert DecodeConfig(beam_size=2, max_rounds_per_segment=7).rounds_cap(9) == 7


def test_trace_rejects_nan() -> None:
    trace = DecodeTrace()
    with pytest.raises(FloatingPointError):
        trace.record(
            np.array([0.0]), np.array([[float("nan")]]), np.array([-1.0])
        )


def test_trace_accumulates_counts() -> None:
    trace = DecodeTrace()
    trace.record(np.array([0.0]), np.array([[-1.0, -2.0]]), np.array([-0.8]))
    trace.record(np.array([-1.0, -2.0]), np.full((2, 2), -3.0), np.array([-1.5, -2.5]))
    assert trace.rounds == 2
    assert trace.mass_checks == 3


def test_decode_segment_rejects_live_mass_and_bad_ranges() -> None:
    model = SeededModel(vocab_size=3, frames=5, seed=44)
    encoder = model.encode(uid="seg")
    config = DecodeConfig(beam_size=2, segment_size=2)
    carrying = Beam(
        (Hypothesis((), 0.0, model.init_predictor(), emission_mass=np.array([0.0])),), 2
    )
    with pytest.raises(ValueError):
        decode_segment(model, encoder, carrying, (0, 2), config, JoinerCounters())
    clean = Beam((Hypothesis((), 0.0, model.init_predictor()),), 2)
    with pytest.raises(ValueError):
        decode_segment(model, encoder, clean, (3, 3), config, JoinerCounters())
    with pytest.raises(ValueError):
        decode_segment(model, encoder, clean, (4, 6), config, JoinerCounters())


def test_decode_segment_strips_mass_from_result() -> None:
    model = SeededModel(vocab_size=3, frames=5, seed=45)
    encoder = model.encode(uid="strip")
    clean = Beam((Hypothesis((), 0.0, model.init_predictor()),), 2)
    out = decode_segment(
        model, encoder, clean, (0, 3), DecodeConfig(beam_size=2, segment_size=3), JoinerCounters()
    )
    assert all(h.emission_mass is None for h in out)
    assert len(out) <= 2


def test_round_cap_forces_finalization() -> None:
    model = SeededModel(vocab_size=4, frames=6, seed=46, blank_prior=0.1)
    encoder = model.encode(uid="cap")
    config = DecodeConfig(beam_size=2, segment_size=3, max_rounds_per_segment=1)
    counters = JoinerCounters()
    result, _ = decode_utterance_tokenwise(model, encoder, config, counters)
    assert counters.forced_finalizations > 0
    assert len(result) >= 1
    relaxed = JoinerCounters()
    decode_utterance_tokenwise(model, encoder, DecodeConfig(beam_size=2, segment_size=3), relaxed)
    assert relaxed.forced_finalizations == 0


def test_empty_utterance_decodes_to_empty_sequence() -> None:
    model = SeededModel(vocab_size=3, frames=4, seed=47)
    encoder = model.encode(frames=0)
    for decode in (decode_utterance_tokenwise, decode_utterance_standard):
        counters = JoinerCounters()
        result, _ = decode(model, encoder, DecodeConfig(beam_size=2, nbest=1), counters)
        assert result.entries == (((), 0.0),)
        assert counters.calls == 0


def test_tokenwise_equals_standard_at_segment_one() -> None:
    rng = np.random.default_rng(48)
    for _ in range(40):
        frames = int(rng.integers(1, 18))
        vocab = int(rng.integers(2, 7))
        beam = int(rng.choice([1, 2, 4]))
        model = SeededModel(vocab_size=vocab, frames=frames, seed=int(rng.integers(1, 2**31)))
        encoder = model.encode(uid="eq")
        config = DecodeConfig(beam_size=beam, segment_size=1, nbest=beam)
        tokenwise, tw_counters = decode_utterance_tokenwise(model, encoder, config)
        standard, st_counters = decode_utterance_standard(model, encoder, config)
        assert tokenwise.sequences() == standard.sequences()
        gaps = [abs(a[1] - b[1]) for a, b in zip(tokenwise.entries, standard.entries)]
        assert max(gaps, default=0.0) == 0.0
        assert tw_counters.calls == st_counters.calls
        assert tw_counters.frame_joins == st_counters.frame_joins


def test_larger_segments_use_fewer_calls() -> None:
    model = SeededModel(vocab_size=6, frames=40, seed=49)
    encoder = model.encode(uid="cost")
    calls = []
    for segment in (1, 4, 10):
        counters = JoinerCounters()
        decode_utterance_tokenwise(
            model, encoder, DecodeConfig(beam_size=2, segment_size=segment), counters
        )
        calls.append(counters.calls)
        assert counters.frame_joins <= counters.calls * segment
    assert calls[0] > calls[1] > calls[2]


def test_nbest_is_trimmed_and_sorted() -> None:
    model = SeededModel(vocab_size=4, frames=8, seed=50)
    encoder = model.encode(uid="trim")
    result, _ = decode_utterance_tokenwise(
        model, encoder, DecodeConfig(beam_size=4, segment_size=2, nbest=3)
    )
    assert len(result) <= 3
    scores = [score for _, score in result.entries]
    assert scores == sorted(scores, reverse=True)
