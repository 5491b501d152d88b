"""Beam search decoding for transducer models.

Two interchangeable strategies over the same model interface:

* :func:`decode_utterance_standard` walks the utterance frame by frame,
  expanding every surviving hypothesis against one frame at a time.
* :func:`decode_utterance_tokenwise` walks it in segments of several frames.
  One joiner call covers the whole segment for every expandable hypothesis,
  and each hypothesis carries a per-frame distribution over where inside the
  segment its most recent token was emitted. Expanding by a token or by
  closing the segment sums over every blank run that connects those emission
  frames, so path merging is exact while the joiner is invoked far less
  often per frame.

Both strategies share the selection utilities below (merging, ranking,
pruning), so with a segment size of one they make identical decisions and
produce identical beams.

Scores are natural-log probabilities throughout. A hypothesis score is the
sum of the probabilities of every alignment of its token sequence that the
search has explored, never a Viterbi maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .logmath import LOG_ONE, LOG_ZERO, log_add, log_sum_array
from .model import EncoderOutput, JoinerCounters, TransducerModel
from .types import Beam, Hypothesis, SegmentLattice

UNBOUNDED_BEAM = 1_000_000_000
DEFAULT_ROUNDS_PER_FRAME = 16


@dataclass(frozen=True)
class DecodeConfig:
    """Search-time knobs shared by both decoding strategies."""

    beam_size: int
    segment_size: int = 1
    nbest: int = 1
    max_rounds_per_segment: Optional[int] = None
    mass_tolerance: float = 1e-9

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam size must be positive")
        if self.segment_size < 1:
            raise ValueError("segment size must be positive")
        if not (1 <= self.nbest <= self.beam_size):
            raise ValueError("nbest must lie in 1..beam_size")
        if self.max_rounds_per_segment is not None and self.max_rounds_per_segment < 1:
            raise ValueError("round cap must be positive")

    def rounds_cap(self, segment_size: Optional[int] = None) -> int:
        """Emission-round budget for one segment of ``segment_size`` frames."""
        if self.max_rounds_per_segment is not None:
            return self.max_rounds_per_segment
        width = self.segment_size if segment_size is None else segment_size
        return DEFAULT_ROUNDS_PER_FRAME * width


@dataclass(frozen=True)
class NBestList:
    """Ranked decode output: ``(token_sequence, log_score)`` pairs."""

    entries: tuple[tuple[tuple[int, ...], float], ...]

    def __post_init__(self) -> None:
        seen = set()
        for tokens, _ in self.entries:
            if tokens in seen:
                raise ValueError("duplicate sequence in n-best list")
            seen.add(tokens)

    @classmethod
    def from_hypotheses(cls, hypotheses: Iterable[Hypothesis], n: int) -> "NBestList":
        top = choose_n_best(list(hypotheses), n)
        return cls(tuple((hyp.tokens, hyp.score) for hyp in top))

    def sequences(self) -> list[tuple[int, ...]]:
        return [tokens for tokens, _ in self.entries]

    def score_of(self, tokens: tuple[int, ...]) -> float:
        for seq, score in self.entries:
            if seq == tokens:
                return score
        raise KeyError(f"sequence {tokens} not in n-best list")

    @property
    def top(self) -> tuple[int, ...]:
        if not self.entries:
            raise IndexError("empty n-best list")
        return self.entries[0][0]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass
class DecodeTrace:
    """Optional per-round instrumentation used by invariant checks."""

    rounds: int = 0
    mass_checks: int = 0
    max_mass_defect: float = 0.0

    def record(
        self,
        scores: np.ndarray,
        token_scores: np.ndarray,
        blank_scores: np.ndarray,
    ) -> None:
        """Compare each hypothesis score against its total expansion mass.

        Exact arithmetic gives ``exp(score) == exp(blank) + sum(exp(tokens))``
        for every expandable hypothesis; the recorded defect is the absolute
        difference of the two sides in the linear domain.
        """
        self.rounds += 1
        with np.errstate(invalid="ignore", over="ignore"):
            totals = np.logaddexp(blank_scores, log_sum_array(token_scores, axis=1))
            defects = np.abs(np.exp(scores) * np.expm1(totals - scores))
        defects = np.where(np.isneginf(scores) & np.isneginf(totals), 0.0, defects)
        if np.isnan(defects).any():
            raise FloatingPointError("mass check produced NaN")
        self.mass_checks += defects.size
        self.max_mass_defect = max(self.max_mass_defect, float(defects.max()))


def _carried_mass(emission_mass: np.ndarray, blank_scores: np.ndarray) -> np.ndarray:
    """Fold emission mass forward through blank runs, along the last axis.

    Output entry ``t`` is the log-mass of paths whose latest token was
    emitted at some frame ``t' <= t`` and that then emitted blanks at frames
    ``t'..t-1``, i.e. paths currently positioned at frame ``t``.
    """
    carry = np.empty_like(emission_mass)
    carry[..., 0] = emission_mass[..., 0]
    for t in range(1, emission_mass.shape[-1]):
        carry[..., t] = np.logaddexp(
            emission_mass[..., t], carry[..., t - 1] + blank_scores[..., t - 1]
        )
    return carry


def _batch_expansions(
    mass: np.ndarray, grids: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All expansion scores for a batch of hypotheses.

    ``mass`` is (batch, frames); ``grids`` is (batch, frames, symbols) with
    blank last. Returns the per-token shifted emission masses
    (batch, frames, tokens), the non-blank expansion scores (batch, tokens),
    and the segment-closing blank scores (batch,).
    """
    blanks = grids[:, :, -1]
    carry = _carried_mass(mass, blanks)
    token_mass = carry[:, :, None] + grids[:, :, :-1]
    token_scores = log_sum_array(token_mass, axis=1)
    blank_scores = carry[:, -1] + blanks[:, -1]
    return token_mass, token_scores, blank_scores


def blank_run(lattice: SegmentLattice, start_frame: int, end_frame: int) -> float:
    """Log-probability of emitting only blanks at frames start..end_frame-1.

    Frames are 1-based within the lattice; ``end_frame`` may be ``frames+1``
    to cover a run that exits the segment. Equal endpoints give certainty,
    a start beyond the end gives probability zero.
    """
    frames = lattice.frames
    if not (1 <= start_frame <= frames + 1) or not (1 <= end_frame <= frames + 1):
        raise ValueError(
            f"blank run [{start_frame}, {end_frame}) outside 1..{frames + 1}"
        )
    if start_frame > end_frame:
        return LOG_ZERO
    return math.fsum(lattice.scores[start_frame - 1 : end_frame - 1, -1])


def expand_nonblank(
    emission_mass: np.ndarray, lattice: SegmentLattice, token: int
) -> tuple[np.ndarray, float]:
    """Expand one hypothesis by one non-blank token.

    Each entry of the returned mass sums, over every emission frame of the
    parent and the blank run connecting it forward, the probability of
    emitting ``token`` at that frame; its log-sum is the expansion score.
    """
    mass = np.asarray(emission_mass, dtype=np.float64)
    if mass.shape != (lattice.frames,):
        raise ValueError("emission mass length does not match lattice frames")
    if not (0 <= token < lattice.num_symbols - 1):
        raise ValueError(f"token {token} outside lattice vocabulary")
    carry = _carried_mass(mass, lattice.scores[:, -1])
    new_mass = carry + lattice.scores[:, token]
    return new_mass, float(log_sum_array(new_mass))


def expand_blank(emission_mass: np.ndarray, lattice: SegmentLattice) -> float:
    """Score of finishing the segment with blanks only from here on."""
    mass = np.asarray(emission_mass, dtype=np.float64)
    if mass.shape != (lattice.frames,):
        raise ValueError("emission mass length does not match lattice frames")
    carry = _carried_mass(mass, lattice.scores[:, -1])
    return float(carry[-1] + lattice.scores[-1, -1])


def mass_conservation_check(hyp: Hypothesis, lattice: SegmentLattice) -> float:
    """Linear-domain defect between a hypothesis score and its expansion mass.

    The blank expansion plus every non-blank expansion partition the paths
    the hypothesis stands for, so the two sides agree in exact arithmetic.
    """
    if hyp.emission_mass is None:
        raise ValueError("hypothesis carries no emission mass to check")
    mass = np.asarray(hyp.emission_mass, dtype=np.float64)
    if mass.shape != (lattice.frames,):
        raise ValueError("emission mass length does not match lattice frames")
    carry = _carried_mass(mass, lattice.scores[:, -1])
    token_total = float(log_sum_array(carry[:, None] + lattice.scores[:, :-1]))
    blank_total = float(carry[-1] + lattice.scores[-1, -1])
    total = log_add(blank_total, token_total)
    if hyp.score == LOG_ZERO:
        return math.exp(total)
    return abs(math.exp(hyp.score) * math.expm1(total - hyp.score))


def _merge_pair(a: Hypothesis, b: Hypothesis) -> Hypothesis:
    """Merge two hypotheses over the same token sequence by adding mass."""
    if a.tokens != b.tokens:
        raise ValueError("cannot merge different token sequences")
    if (a.emission_mass is None) != (b.emission_mass is None):
        raise ValueError("cannot merge a segment-active hypothesis with a finished one")
    mass = None
    if a.emission_mass is not None:
        if a.emission_mass.shape != b.emission_mass.shape:
            raise ValueError("emission mass lengths differ")
        mass = np.logaddexp(a.emission_mass, b.emission_mass)
    return Hypothesis(
        tokens=a.tokens,
        score=log_add(a.score, b.score),
        predictor_state=a.predictor_state,
        emission_mass=mass,
        done_in_segment=a.done_in_segment,
    )


def _merge_entry(entries: dict, hyp: Hypothesis) -> None:
    existing = entries.get(hyp.tokens)
    entries[hyp.tokens] = hyp if existing is None else _merge_pair(existing, hyp)


def add_and_merge(beam: Beam, hyp: Hypothesis) -> Beam:
    """Insert ``hyp`` into ``beam``, merging with an equal token sequence.

    Merging adds scores in the log domain and, when both sides carry
    emission mass for the same segment, merges the masses elementwise.
    The beam is not trimmed here.
    """
    entries = {h.tokens: h for h in beam.hypotheses}
    _merge_entry(entries, hyp)
    return Beam(tuple(entries.values()), beam.capacity)


def _hypothesis_rank(hyp: Hypothesis):
    return (-hyp.score, len(hyp.tokens), hyp.tokens)


def choose_n_best(hypotheses: Sequence[Hypothesis], n: int) -> list[Hypothesis]:
    """Top ``n`` hypotheses by score; ties prefer shorter, then lexicographic.

    The ordering is total, so the result is independent of input order.
    Fewer than ``n`` inputs are all returned.
    """
    if n < 1:
        raise ValueError("n must be positive")
    return sorted(hypotheses, key=_hypothesis_rank)[:n]


def choose_nth_score(hypotheses: Iterable[Hypothesis], n: int) -> float:
    """Score of the ``n``-th best hypothesis, or ``LOG_ZERO`` if fewer exist."""
    if n < 1:
        raise ValueError("n must be positive")
    scores = sorted((hyp.score for hyp in hypotheses), reverse=True)
    if len(scores) < n:
        return LOG_ZERO
    return scores[n - 1]


def choose_n_best_expansions(
    scores: Mapping[tuple[int, int], float], n: int
) -> list[tuple[int, int]]:
    """Top ``n`` (hypothesis index, token) pairs by score.

    Ties break on hypothesis index, then token id, matching the row-major
    order the batch decoders use.
    """
    if n < 1:
        raise ValueError("n must be positive")
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0][0], item[0][1]))
    return [pair for pair, _ in ranked[:n]]


def _enter_segment(hyp: Hypothesis, width: int) -> Hypothesis:
    """Concentrate all incoming mass on the first frame of a new segment."""
    mass = np.full(width, LOG_ZERO)
    mass[0] = hyp.score
    return Hypothesis(hyp.tokens, hyp.score, hyp.predictor_state, emission_mass=mass)


def decode_segment(
    model: TransducerModel,
    encoder: EncoderOutput,
    beam_in: Beam,
    frame_range: tuple[int, int],
    config: DecodeConfig,
    counters: JoinerCounters,
    trace: Optional[DecodeTrace] = None,
) -> Beam:
    """Advance a beam across one segment of frames.

    Hypotheses split into an expandable group (still eligible to emit
    tokens inside the segment, carrying emission mass) and a finished group
    (already scored through the end of the segment). Every emission round
    makes exactly one batched joiner call for the expandable group, moves
    each member's blank-finalized form into the finished group, prunes
    non-blank expansions against the finished scores, and keeps the best
    ``beam_size`` expansions as the next expandable group.

    The round cap bounds joiner rounds per segment. When it is reached the
    surviving expandable hypotheses contribute only their blank-finalized
    forms (already merged this round) and ``counters.forced_finalizations``
    grows by their number; nothing is dropped silently.
    """
    t_begin, t_end = int(frame_range[0]), int(frame_range[1])
    if not (0 <= t_begin < t_end <= encoder.frames):
        raise ValueError(f"segment [{t_begin}, {t_end}) outside utterance")
    width = t_end - t_begin
    for hyp in beam_in:
        if hyp.emission_mass is not None:
            raise ValueError("incoming beam must not carry live emission mass")

    cap = config.rounds_cap()
    vocab_size = model.vocab.size
    active = [_enter_segment(hyp, width) for hyp in beam_in]
    finished: dict[tuple[int, ...], Hypothesis] = {}
    rounds = 0
    while active:
        rounds += 1
        lattices = model.join(
            encoder, (t_begin, t_end), [h.predictor_state for h in active], counters
        )
        grids = np.stack([lat.scores for lat in lattices])
        mass = np.stack([h.emission_mass for h in active])
        token_mass, token_scores, blank_scores = _batch_expansions(mass, grids)
        if trace is not None:
            trace.record(
                np.array([h.score for h in active]), token_scores, blank_scores
            )
        for hyp, closed_score in zip(active, blank_scores):
            _merge_entry(
                finished,
                Hypothesis(
                    hyp.tokens,
                    float(closed_score),
                    hyp.predictor_state,
                    done_in_segment=True,
                ),
            )
        threshold = choose_nth_score(finished.values(), config.beam_size)
        flat = token_scores.ravel()
        alive = np.flatnonzero(flat > threshold)
        if alive.size == 0:
            break
        if rounds >= cap:
            counters.forced_finalizations += len(active)
            break
        order = alive[np.argsort(-flat[alive], kind="stable")]
        next_active: dict[tuple[int, ...], Hypothesis] = {}
        for flat_index in order[: config.beam_size]:
            parent_index, token = divmod(int(flat_index), vocab_size)
            parent = active[parent_index]
            child = Hypothesis(
                parent.tokens + (token,),
                float(flat[flat_index]),
                model.advance_predictor(parent.predictor_state, token),
                emission_mass=token_mass[parent_index, :, token].copy(),
            )
            _merge_entry(next_active, child)
        active = list(next_active.values())

    top = choose_n_best(list(finished.values()), config.beam_size)
    cleaned = tuple(
        Hypothesis(h.tokens, h.score, h.predictor_state) for h in top
    )
    return Beam(cleaned, config.beam_size)


def decode_utterance_tokenwise(
    model: TransducerModel,
    encoder: EncoderOutput,
    config: DecodeConfig,
    counters: Optional[JoinerCounters] = None,
    trace: Optional[DecodeTrace] = None,
) -> tuple[NBestList, JoinerCounters]:
    """Decode an utterance segment by segment.

    Segments have ``config.segment_size`` frames, except a shorter final
    one when the utterance length is not a multiple. An empty utterance
    yields the empty sequence with certainty and no joiner calls.
    """
    counters = JoinerCounters() if counters is None else counters
    counters.frames_decoded += encoder.frames
    beam = Beam(
        (Hypothesis((), LOG_ONE, model.init_predictor()),), config.beam_size
    )
    start = 0
    while start < encoder.frames:
        stop = min(start + config.segment_size, encoder.frames)
        beam = decode_segment(model, encoder, beam, (start, stop), config, counters, trace)
        start = stop
    return NBestList.from_hypotheses(beam.hypotheses, config.nbest), counters


def decode_utterance_standard(
    model: TransducerModel,
    encoder: EncoderOutput,
    config: DecodeConfig,
    counters: Optional[JoinerCounters] = None,
    trace: Optional[DecodeTrace] = None,
) -> tuple[NBestList, JoinerCounters]:
    """Frame-synchronous breadth-first decode, one joiner call per round.

    The reference strategy: scores accumulate as direct products along each
    path, merged per token sequence. ``config.segment_size`` is ignored;
    every joiner call covers exactly one frame.
    """
    counters = JoinerCounters() if counters is None else counters
    counters.frames_decoded += encoder.frames
    cap = config.rounds_cap(1)
    vocab_size = model.vocab.size
    beam_hyps: list[Hypothesis] = [Hypothesis((), LOG_ONE, model.init_predictor())]
    for t in range(encoder.frames):
        active = list(beam_hyps)
        finished: dict[tuple[int, ...], Hypothesis] = {}
        rounds = 0
        while active:
            rounds += 1
            lattices = model.join(
                encoder, (t, t + 1), [h.predictor_state for h in active], counters
            )
            rows = np.stack([lat.scores[0] for lat in lattices])
            scores = np.array([h.score for h in active])
            token_scores = scores[:, None] + rows[:, :vocab_size]
            blank_scores = scores + rows[:, vocab_size]
            if trace is not None:
                trace.record(scores, token_scores, blank_scores)
            for hyp, closed_score in zip(active, blank_scores):
                _merge_entry(
                    finished,
                    Hypothesis(
                        hyp.tokens,
                        float(closed_score),
                        hyp.predictor_state,
                        done_in_segment=True,
                    ),
                )
            threshold = choose_nth_score(finished.values(), config.beam_size)
            flat = token_scores.ravel()
            alive = np.flatnonzero(flat > threshold)
            if alive.size == 0:
                break
            if rounds >= cap:
                counters.forced_finalizations += len(active)
                break
            order = alive[np.argsort(-flat[alive], kind="stable")]
            next_active: dict[tuple[int, ...], Hypothesis] = {}
            for flat_index in order[: config.beam_size]:
                parent_index, token = divmod(int(flat_index), vocab_size)
                parent = active[parent_index]
                child = Hypothesis(
                    parent.tokens + (token,),
                    float(flat[flat_index]),
                    model.advance_predictor(parent.predictor_state, token),
                )
                _merge_entry(next_active, child)
            active = list(next_active.values())
        top = choose_n_best(list(finished.values()), config.beam_size)
        beam_hyps = [Hypothesis(h.tokens, h.score, h.predictor_state) for h in top]
    return NBestList.from_hypotheses(beam_hyps, config.nbest), counters
