"""Load-balance and expert-specialization statistics.

Activation rates are per-token frequencies.  Load balance is the population
standard deviation of the per-expert rates, reported per layer, averaged
across layers, and pooled over all experts of the model.

Domain specialization compares an expert's activation rate across domain
labels via the coefficient of variation; the per-domain rate divides by that
domain's token count, so unevenly sized domains stay comparable.

Vocabulary specialization scores how much a single token id concentrates an
expert's activations: lift(v) = P(active | token v) / P(active), maximized
over token ids that occur at least `min_support` times.  A score of 1 means
no preference.  The token stream can be the input ids, the model's predicted
ids, or the ground-truth ids when the trace carries them.

Undefined values stay None and are dropped pairwise by `correlate`; they are
never silently folded into aggregates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateInput,
    EmptyTrace,
    MissingTokenStream,
    UndefinedCV,
    UndefinedScore,
)
from .trace import ExpertKey, RoutingTrace

VOCAB_KINDS = ("input", "predicted", "ground_truth")


@dataclass
class SpecializationProfile:
    expert: ExpertKey
    activation_rate: float
    domain_rates: dict[str, float] | None
    domain_cv: float | None
    vocab_scores: dict[str, float | None]


@dataclass
class LoadBalanceReport:
    per_layer_sd: list[float]
    mean_sd: float
    pooled_sd: float  # over all experts of all layers at once
    per_expert_rates: dict[ExpertKey, float]


def _expert_activation_count(trace: RoutingTrace, expert: ExpertKey) -> int:
    n = 0
    for seq in trace.sequences:
        for acts in seq.activations[expert.layer]:
            if expert.index in acts:
                n += 1
    return n


def activation_frequency(trace: RoutingTrace, expert: ExpertKey) -> float:
    expert.check(trace.header)
    total = trace.num_tokens
    if total == 0:
        raise EmptyTrace("trace has no tokens")
    return _expert_activation_count(trace, expert) / total


def layer_activation_rates(trace: RoutingTrace, layer: int) -> np.ndarray:
    total = trace.num_tokens
    if total == 0:
        raise EmptyTrace("trace has no tokens")
    return _layer_activation_counts(trace, layer) / total


def load_balance_from_counts(
    per_layer_counts: list[np.ndarray], total_tokens: int
) -> LoadBalanceReport:
    if total_tokens == 0:
        raise EmptyTrace("trace has no tokens")
    per_layer_sd = []
    rates: dict[ExpertKey, float] = {}
    all_rates = []
    for layer, counts in enumerate(per_layer_counts):
        r = counts / total_tokens
        per_layer_sd.append(float(np.std(r)))
        all_rates.append(r)
        for i, v in enumerate(r):
            rates[ExpertKey(layer, i)] = float(v)
    pooled = np.concatenate(all_rates)
    return LoadBalanceReport(
        per_layer_sd=per_layer_sd,
        mean_sd=float(np.mean(per_layer_sd)),
        pooled_sd=float(np.std(pooled)),
        per_expert_rates=rates,
    )


def _layer_activation_counts(trace: RoutingTrace, layer: int) -> np.ndarray:
    counts = np.zeros(trace.header.experts_per_layer[layer], dtype=np.int64)
    for seq in trace.sequences:
        for acts in seq.activations[layer]:
            for e in acts:
                counts[e] += 1
    return counts


def load_balance_sd(trace: RoutingTrace) -> LoadBalanceReport:
    counts = [
        _layer_activation_counts(trace, layer) for layer in range(trace.header.num_layers)
    ]
    return load_balance_from_counts(counts, trace.num_tokens)


def cv_from_counts(
    active_by_domain: dict[str, int], tokens_by_domain: dict[str, int]
) -> tuple[dict[str, float], float]:
    """Per-domain rates (sorted by domain) and their coefficient of variation."""
    rates = {
        d: active_by_domain.get(d, 0) / tokens_by_domain[d]
        for d in sorted(tokens_by_domain)
        if tokens_by_domain[d] > 0
    }
    if len(rates) < 2:
        raise UndefinedCV(f"need >= 2 domains, got {len(rates)}")
    vals = np.array(list(rates.values()))
    mean = vals.mean()
    if mean == 0:
        raise UndefinedCV("expert never activated in any domain")
    return rates, float(np.std(vals) / mean)


def domain_specialization(
    trace: RoutingTrace, expert: ExpertKey
) -> tuple[dict[str, float], float]:
    expert.check(trace.header)
    tokens: dict[str, int] = {}
    active: dict[str, int] = {}
    for seq in trace.sequences:
        tokens[seq.domain] = tokens.get(seq.domain, 0) + len(seq)
        got = sum(1 for acts in seq.activations[expert.layer] if expert.index in acts)
        active[seq.domain] = active.get(seq.domain, 0) + got
    return cv_from_counts(active, tokens)


def _token_stream(seq, kind: str):
    if kind == "input":
        return seq.token_ids
    if kind == "predicted":
        return seq.predicted_ids
    if kind == "ground_truth":
        return seq.ground_truth_ids
    raise ValueError(f"unknown token stream kind {kind!r} (one of {VOCAB_KINDS})")


def vocab_specialization(
    trace: RoutingTrace, expert: ExpertKey, kind: str = "input", min_support: int = 16
) -> float:
    expert.check(trace.header)
    occurrences: dict[int, int] = {}
    active: dict[int, int] = {}
    total = 0
    total_active = 0
    for si, seq in enumerate(trace.sequences):
        stream = _token_stream(seq, kind)
        if stream is None:
            raise MissingTokenStream(f"sequence {si} has no {kind!r} token stream")
        total += len(seq)
        for t, v in enumerate(stream):
            occurrences[v] = occurrences.get(v, 0) + 1
            if expert.index in seq.activations[expert.layer][t]:
                active[v] = active.get(v, 0) + 1
                total_active += 1
    return max_lift(active, occurrences, total_active, total, min_support)


def max_lift(
    active_by_token: dict[int, int],
    occurrences: dict[int, int],
    total_active: int,
    total_tokens: int,
    min_support: int,
) -> float:
    if total_active == 0:
        raise UndefinedScore("expert is never activated")
    base_rate = total_active / total_tokens
    best = None
    for v, occ in occurrences.items():
        if occ < min_support:
            continue
        lift = (active_by_token.get(v, 0) / occ) / base_rate
        if best is None or lift > best:
            best = lift
    if best is None:
        raise UndefinedScore(f"no token id occurs >= {min_support} times")
    return best


def profile(trace: RoutingTrace, expert: ExpertKey, min_support: int = 16) -> SpecializationProfile:
    """Assemble one expert's row; unavailable statistics come back as None."""
    rate = activation_frequency(trace, expert)
    try:
        domain_rates, domain_cv = domain_specialization(trace, expert)
    except UndefinedCV:
        domain_rates, domain_cv = None, None
    vocab: dict[str, float | None] = {}
    for kind in VOCAB_KINDS:
        try:
            vocab[kind] = vocab_specialization(trace, expert, kind, min_support)
        except (MissingTokenStream, UndefinedScore):
            vocab[kind] = None
    return SpecializationProfile(
        expert=expert,
        activation_rate=rate,
        domain_rates=domain_rates,
        domain_cv=domain_cv,
        vocab_scores=vocab,
    )


def _average_ranks(a: np.ndarray) -> np.ndarray:
    """Ranks starting at 1; tied values share the mean of their rank span."""
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a))
    sa = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sa[j + 1] == sa[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def correlate(xs, ys, method: str = "pearson") -> float:
    if method not in ("pearson", "spearman"):
        raise ValueError(f"unknown method {method!r}")
    pairs = [
        (x, y)
        for x, y in zip(xs, ys, strict=True)
        if x is not None and y is not None and np.isfinite(x) and np.isfinite(y)
    ]
    if len(pairs) < 3:
        raise DegenerateInput(f"need >= 3 defined pairs, got {len(pairs)}")
    x = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    if method == "spearman":
        x = _average_ranks(x)
        y = _average_ranks(y)
    if np.std(x) == 0 or np.std(y) == 0:
        raise DegenerateInput("zero variance on one side")
    return float(np.corrcoef(x, y)[0, 1])
