"""Sliding-window activation histograms and the segment-router best-F1 metric.

For one expert and a window length m, every start position inside a sequence
yields a window; counts[f] records how many windows contain exactly f
activated tokens.  A segment router that marks the expert active on all
windows with f >= alpha has

    F1(alpha) = 2 * S_ga / (m * N_ga + S_total)

with S_ga the activated-token mass and N_ga the window count at or above
alpha, and S_total the total mass.  The scan maximizes F1 over
alpha in {1, ..., m+1} using exact integer cross-multiplication; alpha = m+1
means "never predict active" and scores zero.

Group, layer, and model values pool histograms first: both numerator and
denominator are additive across experts, so a single alpha applied to the
pooled histogram is optimal (no per-expert threshold assignment beats it).

The scans here work on materialized traces.  The streaming report pipeline
builds the same histograms through `_kernels` and feeds them to `srp_scan`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import EmptyGroup, InvalidSegmentLength, UndefinedSrp
from .trace import ExpertKey, RoutingTrace


def window_count(seq_len: int, m: int) -> int:
    return max(0, seq_len - m + 1)


@dataclass
class SegmentHistogram:
    """Window-frequency counts for one expert (or a pooled set of experts)."""

    m: int
    counts: np.ndarray  # int64, length m+1

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.m < 1:
            raise InvalidSegmentLength(f"m must be >= 1, got {self.m}")
        if self.counts.shape != (self.m + 1,):
            raise ValueError(f"counts must have length m+1 = {self.m + 1}")

    @property
    def num_windows(self) -> int:
        return int(self.counts.sum())

    @property
    def active_mass(self) -> int:
        return int(np.dot(self.counts, np.arange(self.m + 1)))

    def __add__(self, other: "SegmentHistogram") -> "SegmentHistogram":
        if self.m != other.m:
            raise ValueError("cannot pool histograms with different m")
        return SegmentHistogram(self.m, self.counts + other.counts)


@dataclass
class SrpResult:
    srp: float
    alpha: int
    num_windows: int
    active_mass: int
    f1_num: int  # exact value: srp == f1_num / f1_den
    f1_den: int
    size_ratio: float | None = None
    per_expert_alpha: dict[ExpertKey, int] | None = None
    per_layer: list["SrpResult | None"] | None = None


def srp_scan(hist: SegmentHistogram) -> SrpResult:
    """Maximize F1 over alpha with exact integer arithmetic; ties pick the larger alpha."""
    m = hist.m
    counts = [int(c) for c in hist.counts]
    s_total = sum(f * c for f, c in enumerate(counts))
    if s_total == 0:
        raise UndefinedSrp("expert is never activated within any window")
    best_num = best_den = best_alpha = 0
    n_ga = s_ga = 0
    # walk alpha downward so suffix sums accumulate, then compare all candidates
    cand = []
    for alpha in range(m + 1, 0, -1):
        if alpha <= m:
            n_ga += counts[alpha]
            s_ga += alpha * counts[alpha]
        cand.append((alpha, 2 * s_ga, m * n_ga + s_total))
    for alpha, num, den in reversed(cand):  # ascending alpha
        if best_den == 0 or num * best_den >= best_num * den:
            best_num, best_den, best_alpha = num, den, alpha
    g = math.gcd(best_num, best_den)
    return SrpResult(
        srp=best_num / best_den,
        alpha=best_alpha,
        num_windows=hist.num_windows,
        active_mass=s_total,
        f1_num=best_num // g,
        f1_den=best_den // g,
    )


def suffix_window_count(hist: SegmentHistogram, alpha: int) -> int:
    """Number of windows with frequency >= alpha (the segment router's active set)."""
    return int(hist.counts[alpha:].sum())


# --------------------------------------------------------------------------
# histogram construction from materialized traces

def _activation_bits(trace: RoutingTrace, layer: int) -> list[np.ndarray]:
    """Per sequence: (E, n) 0/1 matrix of expert activations at layer."""
    nexp = trace.header.experts_per_layer[layer]
    out = []
    for seq in trace.sequences:
        n = len(seq)
        bits = np.zeros((nexp, n), dtype=np.uint8)
        for t, acts in enumerate(seq.activations[layer]):
            for e in acts:
                bits[e, t] = 1
        out.append(bits)
    return out


def _window_sums(bits: np.ndarray, m: int) -> np.ndarray:
    """Sliding-window sums along the last axis; empty when the sequence is short."""
    n = bits.shape[-1]
    if n < m:
        return np.zeros(bits.shape[:-1] + (0,), dtype=np.int64)
    c = np.cumsum(bits, axis=-1, dtype=np.int64)
    pad = np.zeros(bits.shape[:-1] + (1,), dtype=np.int64)
    c = np.concatenate([pad, c], axis=-1)
    return c[..., m:] - c[..., :-m]


def layer_histograms(trace: RoutingTrace, layer: int, m: int) -> np.ndarray:
    """(E, m+1) window-frequency counts for every expert of one layer."""
    if m < 1:
        raise InvalidSegmentLength(f"m must be >= 1, got {m}")
    nexp = trace.header.experts_per_layer[layer]
    hists = np.zeros((nexp, m + 1), dtype=np.int64)
    offsets = np.arange(nexp, dtype=np.int64)[:, None] * (m + 1)
    for bits in _activation_bits(trace, layer):
        ws = _window_sums(bits, m)
        if ws.shape[-1] == 0:
            continue
        flat = (ws + offsets).ravel()
        hists += np.bincount(flat, minlength=nexp * (m + 1)).reshape(nexp, m + 1)
    return hists


def build_segment_histogram(trace: RoutingTrace, expert: ExpertKey, m: int) -> SegmentHistogram:
    if m < 1:
        raise InvalidSegmentLength(f"m must be >= 1, got {m}")
    expert.check(trace.header)
    counts = np.zeros(m + 1, dtype=np.int64)
    for seq in trace.sequences:
        n = len(seq)
        if n < m:
            continue
        bits = np.zeros(n, dtype=np.uint8)
        for t, acts in enumerate(seq.activations[expert.layer]):
            if expert.index in acts:
                bits[t] = 1
        ws = _window_sums(bits, m)
        counts += np.bincount(ws, minlength=m + 1)
    return SegmentHistogram(m, counts)


def _layer_token_acts(trace: RoutingTrace, layer: int) -> np.ndarray:
    """Token-level activation count per expert of one layer."""
    nexp = trace.header.experts_per_layer[layer]
    acts = np.zeros(nexp, dtype=np.int64)
    for seq in trace.sequences:
        for token_acts in seq.activations[layer]:
            for e in token_acts:
                acts[e] += 1
    return acts


def total_window_positions(trace: RoutingTrace, m: int) -> int:
    return sum(window_count(len(seq), m) for seq in trace.sequences)


# --------------------------------------------------------------------------
# scoped SRP

def srp_single(trace: RoutingTrace, expert: ExpertKey, m: int) -> SrpResult:
    hist = build_segment_histogram(trace, expert, m)
    res = srp_scan(hist)
    acts = int(_layer_token_acts(trace, expert.layer)[expert.index])
    res.size_ratio = _size_ratio(
        n_ga=suffix_window_count(hist, res.alpha),
        positions=hist.num_windows,
        acts=acts,
        tokens=trace.num_tokens,
    )
    return res


def _size_ratio(n_ga: int, positions: int, acts: int, tokens: int) -> float:
    # predicted-active set size per window position over observed activations per token
    return (n_ga / positions) / (acts / tokens)


def srp_group(trace: RoutingTrace, experts: Iterable[ExpertKey], m: int) -> SrpResult:
    keys = sorted(set(experts))
    if not keys:
        raise EmptyGroup("group must contain at least one expert")
    for k in keys:
        k.check(trace.header)
    if m < 1:
        raise InvalidSegmentLength(f"m must be >= 1, got {m}")
    by_layer: dict[int, list[int]] = {}
    for k in keys:
        by_layer.setdefault(k.layer, []).append(k.index)
    pooled = np.zeros(m + 1, dtype=np.int64)
    pooled_n_ga_by_alpha = None
    acts = 0
    hists_cache: dict[int, np.ndarray] = {}
    for layer, idxs in by_layer.items():
        hists_cache[layer] = layer_histograms(trace, layer, m)
        layer_acts = _layer_token_acts(trace, layer)
        for i in idxs:
            pooled += hists_cache[layer][i]
            acts += int(layer_acts[i])
    hist = SegmentHistogram(m, pooled)
    res = srp_scan(hist)
    positions = total_window_positions(trace, m)
    res.size_ratio = _size_ratio(
        n_ga=suffix_window_count(hist, res.alpha),
        positions=positions,
        acts=acts,
        tokens=trace.num_tokens,
    )
    res.per_expert_alpha = {k: res.alpha for k in keys}
    return res


def srp_layer(trace: RoutingTrace, layer: int, m: int) -> SrpResult:
    nexp = trace.header.experts_per_layer[layer]
    return srp_group(trace, (ExpertKey(layer, i) for i in range(nexp)), m)


def srp_model(trace: RoutingTrace, m: int) -> SrpResult:
    """Pooled over all experts of all layers; also carries the per-layer vector."""
    if m < 1:
        raise InvalidSegmentLength(f"m must be >= 1, got {m}")
    header = trace.header
    positions = total_window_positions(trace, m)
    pooled = np.zeros(m + 1, dtype=np.int64)
    acts = 0
    per_layer: list[SrpResult | None] = []
    keys = []
    for layer in range(header.num_layers):
        layer_hist = SegmentHistogram(m, layer_histograms(trace, layer, m).sum(axis=0))
        layer_acts = int(_layer_token_acts(trace, layer).sum())
        pooled += layer_hist.counts
        acts += layer_acts
        keys.extend(ExpertKey(layer, i) for i in range(header.experts_per_layer[layer]))
        try:
            lr = srp_scan(layer_hist)
            lr.size_ratio = _size_ratio(
                n_ga=suffix_window_count(layer_hist, lr.alpha),
                positions=positions,
                acts=layer_acts,
                tokens=trace.num_tokens,
            )
            per_layer.append(lr)
        except UndefinedSrp:
            per_layer.append(None)
    hist = SegmentHistogram(m, pooled)
    res = srp_scan(hist)
    res.size_ratio = _size_ratio(
        n_ga=suffix_window_count(hist, res.alpha),
        positions=positions,
        acts=acts,
        tokens=trace.num_tokens,
    )
    res.per_expert_alpha = {k: res.alpha for k in keys}
    res.per_layer = per_layer
    return res


def srp_per_position(
    trace: RoutingTrace, experts: ExpertKey | Iterable[ExpertKey], m: int
) -> list[SrpResult | None]:
    """SRP restricted to windows starting at each position p, pooled over `experts`.

    Positions run up to the shortest sequence's last window start, so every
    reported position draws on every (long-enough) sequence.  Positions where
    the pooled mass is zero come back as None.
    """
    if m < 1:
        raise InvalidSegmentLength(f"m must be >= 1, got {m}")
    keys = [experts] if isinstance(experts, ExpertKey) else sorted(set(experts))
    if not keys:
        raise EmptyGroup("group must contain at least one expert")
    for k in keys:
        k.check(trace.header)
    lens = [len(s) for s in trace.sequences if len(s) >= m]
    if not lens:
        return []
    positions = window_count(min(lens), m)
    by_layer: dict[int, list[int]] = {}
    for k in keys:
        by_layer.setdefault(k.layer, []).append(k.index)
    hist = np.zeros((positions, m + 1), dtype=np.int64)
    row = np.arange(positions)
    for layer, idxs in by_layer.items():
        sel = np.asarray(idxs)
        for bits in _activation_bits(trace, layer):
            ws = _window_sums(bits[sel], m)
            if ws.shape[-1] == 0:
                continue
            for e in range(ws.shape[0]):
                np.add.at(hist, (row, ws[e, :positions]), 1)
    out: list[SrpResult | None] = []
    for p in range(positions):
        try:
            out.append(srp_scan(SegmentHistogram(m, hist[p])))
        except UndefinedSrp:
            out.append(None)
    return out
