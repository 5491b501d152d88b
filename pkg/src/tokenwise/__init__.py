"""Segment-batched token-wise beam search for sequence transducers."""

from .decoder import (
    UNBOUNDED_BEAM,
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
from .harness import (
    BenchmarkReport,
    Utterance,
    VerificationSummary,
    VerifyLimits,
    generate_corpus,
    load_corpus,
    run_benchmark,
    save_corpus,
    verify,
    verify_files,
)
from .logmath import LOG_ONE, LOG_ZERO, log_add, log_sum
from .metrics import (
    EfficiencyStats,
    ErrorCounts,
    corpus_oracle_wer,
    corpus_wer,
    edit_distance,
    efficiency_stats,
)
from .model import (
    EncoderOutput,
    JoinerCounters,
    ModelSpec,
    PredictorState,
    SeededModel,
    TabularModel,
    TokenCapModel,
    TransducerModel,
    load_model,
    load_model_file,
    read_model_spec,
    write_model_spec,
)
from .oracle import (
    AlignmentPath,
    ExactMarginals,
    enumerate_alignment_paths,
    exact_marginals,
    exact_marginals_dp,
    exact_nbest,
    exact_sequence_marginal,
)
from .types import Beam, Hypothesis, SegmentLattice, Vocabulary

__version__ = "0.1.0"
