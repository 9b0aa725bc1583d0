"""Brute-force references used by tests; no threshold assumption anywhere.

`brute_force_srp_enum` maximizes the segment-router F1 over every
active/inactive assignment to (expert, window) pairs, so the scan in
`srp` can be checked against an implementation that shares none of its
structure.  Magnitudes stay tiny (the decision-bit budget caps the search at
2^20), which keeps every comparison exact: distinct candidate F1 ratios with
these denominators differ by far more than float64 resolution, and the final
winners are re-compared as `Fraction`s anyway.

`binomial_srp` runs the same alpha scan on the analytic window-frequency
distribution of an i.i.d. Bernoulli(p) activation stream, entirely in
rational arithmetic.

`brute_force_cache` exhausts all per-segment cache subsets.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

from .errors import BudgetExceeded, EmptyGroup, InvalidSegmentLength, UndefinedSrp
from .trace import ExpertKey, RoutingTrace


@dataclass
class EnumerationBudget:
    max_decision_bits: int = 20


@dataclass
class EnumResult:
    best_f1: Fraction
    # per expert: indices (into that expert's window list) predicted active,
    # from the minimum-cardinality maximizing assignment
    witness: dict[ExpertKey, list[int]]
    window_freqs: dict[ExpertKey, list[int]]
    undefined: bool = False


def _expert_window_freqs(trace: RoutingTrace, expert: ExpertKey, m: int) -> list[int]:
    freqs = []
    for seq in trace.sequences:
        n = len(seq)
        bits = [1 if expert.index in acts else 0 for acts in seq.activations[expert.layer]]
        for p in range(n - m + 1):
            freqs.append(sum(bits[p : p + m]))
    return freqs


def brute_force_srp_enum(
    trace: RoutingTrace,
    experts: ExpertKey | list[ExpertKey],
    m: int,
    budget: EnumerationBudget | None = None,
) -> EnumResult:
    """Exhaustive maximum of segment-router F1 over all prediction assignments.

    Each (expert, window) pair is one independent decision bit (a window is
    predicted either fully active or fully inactive).  Among all maximizing
    assignments the one with the fewest predicted-active windows is returned,
    which is unique: every maximizer contains the strictly-above-threshold
    windows and differs only on borderline ones.
    """
    if m < 1:
        raise InvalidSegmentLength(f"m must be >= 1, got {m}")
    if budget is None:
        budget = EnumerationBudget()
    keys = [experts] if isinstance(experts, ExpertKey) else sorted(set(experts))
    if not keys:
        raise EmptyGroup("need at least one expert")
    for k in keys:
        k.check(trace.header)
    freqs = {k: _expert_window_freqs(trace, k, m) for k in keys}
    f_vec = [f for k in keys for f in freqs[k]]
    bits = len(f_vec)
    if bits > budget.max_decision_bits:
        raise BudgetExceeded(f"{bits} decision bits exceeds budget {budget.max_decision_bits}")
    s_total = sum(f_vec)
    if s_total == 0:
        return EnumResult(
            best_f1=Fraction(0),
            witness={k: [] for k in keys},
            window_freqs=freqs,
            undefined=True,
        )
    # doubling construction: entry i holds (active mass, active count) of mask i
    s_pred = np.zeros(1, dtype=np.int64)
    n_pred = np.zeros(1, dtype=np.int64)
    for f in f_vec:
        s_pred = np.concatenate([s_pred, s_pred + f])
        n_pred = np.concatenate([n_pred, n_pred + 1])
    num = 2 * s_pred
    den = m * n_pred + s_total
    ratio = num / den
    best = ratio.max()
    tied = np.flatnonzero(ratio == best)
    # among ties: fewest active windows, then lowest mask, checked exactly
    order = np.lexsort((tied, n_pred[tied]))
    best_mask = None
    best_frac = Fraction(0)
    for i in tied[order]:
        fr = Fraction(int(num[i]), int(den[i]))
        if best_mask is None or fr > best_frac:
            best_mask, best_frac = int(i), fr
    witness = {}
    pos = 0
    for k in keys:
        w = len(freqs[k])
        witness[k] = [j for j in range(w) if best_mask >> (pos + j) & 1]
        pos += w
    return EnumResult(best_f1=best_frac, witness=witness, window_freqs=freqs)


def enumerate_group_thresholds(
    hist_counts: list[list[int]], m: int
) -> tuple[Fraction, tuple[int, ...]]:
    """Best F1 over independent per-expert thresholds alpha_e in {1..m+1}.

    Exists to check that a single pooled threshold already attains this
    maximum; ties prefer the lexicographically largest alpha tuple.
    """
    if not hist_counts:
        raise EmptyGroup("need at least one histogram")
    s_total = sum(f * c for counts in hist_counts for f, c in enumerate(counts))
    if s_total == 0:
        raise UndefinedSrp("no activations in any histogram")
    best: Fraction | None = None
    best_alphas: tuple[int, ...] = ()
    for alphas in itertools.product(range(1, m + 2), repeat=len(hist_counts)):
        s_ga = n_ga = 0
        for a, counts in zip(alphas, hist_counts):
            for f in range(a, m + 1):
                s_ga += f * counts[f]
                n_ga += counts[f]
        fr = Fraction(2 * s_ga, m * n_ga + s_total)
        if best is None or fr > best or (fr == best and alphas > best_alphas):
            best, best_alphas = fr, alphas
    return best, best_alphas


def binomial_srp(p: float | Fraction, m: int) -> float:
    """SRP of an infinite i.i.d. Bernoulli(p) activation stream, scanned exactly."""
    if m < 1:
        raise InvalidSegmentLength(f"m must be >= 1, got {m}")
    pf = Fraction(p)
    if not 0 <= pf <= 1:
        raise ValueError(f"p must be in [0,1], got {p}")
    if pf == 0:
        raise UndefinedSrp("p = 0 stream is never active")
    q = 1 - pf
    mass = [comb(m, f) * pf**f * q ** (m - f) for f in range(m + 1)]
    s_total = m * pf
    s_ga = n_ga = Fraction(0)
    f1_by_alpha = {m + 1: Fraction(0)}
    for alpha in range(m, 0, -1):
        n_ga += mass[alpha]
        s_ga += alpha * mass[alpha]
        f1_by_alpha[alpha] = 2 * s_ga / (m * n_ga + s_total)
    best = max(f1_by_alpha.values())
    return float(best)


@dataclass
class BruteCacheResult:
    hits: int
    total: int
    no_activations: bool = False

    @property
    def hit_rate(self) -> float:
        return 1.0 if self.no_activations else self.hits / self.total


def brute_force_cache(trace: RoutingTrace, layer: int, capacity: int, m: int) -> BruteCacheResult:
    """Max hit rate over every per-segment cache subset, by exhaustive search."""
    if m < 1:
        raise InvalidSegmentLength(f"m must be >= 1, got {m}")
    nexp = trace.header.experts_per_layer[layer]
    if nexp > 6 or trace.num_tokens > 12:
        raise BudgetExceeded(f"{nexp} experts / {trace.num_tokens} tokens beyond oracle budget")
    size = min(capacity, nexp)
    hits = 0
    total = 0
    for seq in trace.sequences:
        acts = seq.activations[layer]
        total += sum(len(a) for a in acts)
        for start in range(0, len(seq), m):
            segment = acts[start : start + m]
            best = 0
            for cached in itertools.combinations(range(nexp), size):
                got = sum(1 for tok in segment for e in tok if e in cached)
                best = max(best, got)
            hits += best
    if total == 0:
        return BruteCacheResult(hits=0, total=0, no_activations=True)
    return BruteCacheResult(hits=hits, total=total)
