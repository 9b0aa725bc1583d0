"""Trace analytics for mixture-of-experts routing.

The package reads routing traces (which experts fired for each token at
each layer), measures how temporally clustered each expert's activations
are, simulates expert-parameter caches over those traces, and relates
clustering to load balance and specialization.  A binary trace format,
JSONL interchange, synthetic generators, and a CLI round it out.
"""

from ._version import __version__
from .cache import (
    CacheConfig,
    CachePolicy,
    CacheResult,
    CapacityPoint,
    CapacitySweep,
    capacity_sweep,
    lru_hit_rate,
    sch_oracle,
)
from .codec import (
    TraceReader,
    TraceWriter,
    decode_binary,
    dump_jsonl,
    encode_binary,
    load_jsonl,
    read_trace,
    scan_binary,
    write_trace,
)
from .errors import (
    BadMagic,
    BudgetExceeded,
    DegenerateInput,
    EmptyGroup,
    EmptyTrace,
    ExpertOutOfRange,
    InvalidSegmentLength,
    InvariantViolation,
    MissingTokenStream,
    MoelabError,
    ParseError,
    Truncated,
    UndefinedCV,
    UndefinedScore,
    UndefinedSrp,
    UnsupportedVersion,
)
from .oracle import (
    BruteCacheResult,
    EnumerationBudget,
    EnumResult,
    binomial_srp,
    brute_force_cache,
    brute_force_srp_enum,
    enumerate_group_thresholds,
)
from .report import (
    PipelineConfig,
    ReportBundle,
    aggregate_file,
    aggregate_trace,
    build_report,
    write_report,
)
from .specialization import (
    LoadBalanceReport,
    SpecializationProfile,
    activation_frequency,
    correlate,
    domain_specialization,
    load_balance_sd,
    max_lift,
    profile,
    vocab_specialization,
)
from .srp import (
    SegmentHistogram,
    SrpResult,
    build_segment_histogram,
    srp_group,
    srp_layer,
    srp_model,
    srp_per_position,
    srp_scan,
    srp_single,
    window_count,
)
from .synth import (
    GeneratorConfig,
    gen_domain,
    gen_iid_topk,
    gen_sticky,
    write_synthetic,
)
from .trace import (
    ExpertKey,
    RoutingTrace,
    Sequence,
    StreamKind,
    TraceHeader,
    Violation,
    corpus_stats,
    validate,
)

__all__ = [
    "__version__",
    # trace model
    "ExpertKey", "RoutingTrace", "Sequence", "StreamKind", "TraceHeader",
    "Violation", "corpus_stats", "validate",
    # codec
    "TraceReader", "TraceWriter", "decode_binary", "encode_binary",
    "dump_jsonl", "load_jsonl", "read_trace", "scan_binary", "write_trace",
    # SRP
    "SegmentHistogram", "SrpResult", "build_segment_histogram", "srp_scan",
    "srp_single", "srp_group", "srp_layer", "srp_model", "srp_per_position",
    "window_count",
    # caches
    "CacheConfig", "CachePolicy", "CacheResult", "CapacityPoint",
    "CapacitySweep", "capacity_sweep", "lru_hit_rate", "sch_oracle",
    # specialization
    "LoadBalanceReport", "SpecializationProfile", "activation_frequency",
    "correlate", "domain_specialization", "load_balance_sd", "max_lift",
    "profile", "vocab_specialization",
    # oracles
    "BruteCacheResult", "EnumResult", "EnumerationBudget", "binomial_srp",
    "brute_force_cache", "brute_force_srp_enum", "enumerate_group_thresholds",
    # synthetic data
    "GeneratorConfig", "gen_iid_topk", "gen_sticky", "gen_domain",
    "write_synthetic",
    # pipeline
    "PipelineConfig", "ReportBundle", "aggregate_file", "aggregate_trace",
    "build_report", "write_report",
    # errors
    "MoelabError", "BadMagic", "UnsupportedVersion", "Truncated",
    "ParseError", "InvariantViolation", "InvalidSegmentLength",
    "ExpertOutOfRange", "UndefinedSrp", "EmptyGroup", "EmptyTrace",
    "UndefinedCV", "MissingTokenStream", "UndefinedScore", "DegenerateInput",
    "BudgetExceeded",
]
