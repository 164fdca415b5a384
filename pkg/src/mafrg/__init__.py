"""Batch evaluation engine and naive-baseline harness for multiple
appropriate facial reaction generation (MAFRG)."""

from .errors import (
    CausalityViolation,
    DataError,
    GeneratorCrash,
    GeneratorError,
    GeneratorTimeout,
    MafrgError,
    SubmissionError,
)
from .evaluation import (
    ClipScores,
    LeaderboardRow,
    MetricConfig,
    binarize_aus,
    evaluate_assignments,
    evaluate_submission,
    fr_corr,
    fr_dist,
    fr_div,
    fr_dvs,
    fr_rea,
    fr_syn,
    fr_var,
)
from .generators import (
    GeneratorContract,
    GuardReport,
    OnlineStepInput,
    ReactionGenerator,
    b_mean_fr,
    b_mean_seq,
    b_mime,
    b_random,
    causal_guard_check,
    gt_passthrough,
    run_offline,
    run_online,
    run_subprocess_generator,
)
from .schema import (
    AppropriatenessMap,
    ChannelSchema,
    ClipPair,
    DatasetManifest,
    DEFAULT_SCHEMA,
    GenerationSet,
    ManifestClip,
    Participant,
    ReactionSequence,
    SpeakerBehaviour,
    SpeakerListenerAssignment,
    STANDARD_FRAME_COUNT,
    ValidationReport,
    enumerate_assignments,
    validate_sequence,
)
from .seqmetrics import (
    DtwConfig,
    GaussianSummary,
    ccc,
    ccc_channels,
    dtw,
    fit_gaussian,
    frechet_distance,
    lagged_correlation,
    tlcc_offset,
)

__version__ = "0.1.0"
