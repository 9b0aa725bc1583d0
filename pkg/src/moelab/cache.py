"""Expert-cache simulation: a per-segment oracle bound and an LRU baseline.

The oracle models the best a segment-granular prefetcher could do: sequences
split into consecutive non-overlapping segments of m tokens (final partial
segment kept), and at each boundary the cache is wholly replaced by the
`capacity` experts most frequently activated in the upcoming segment.  Hits
are additive across segments, so greedy per-segment selection is globally
optimal; ties go to the lower expert index for determinism.

The LRU baseline is stateful within a sequence (no reset at segment
boundaries) and resets between sequences.  An activation is checked against
the cache before the touch/insert.

Caches are per layer.  Passing layer=None aggregates all layers: summed hits
over summed activations, which equals the activation-weighted mean of the
per-layer rates.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum

from .trace import RoutingTrace


class CachePolicy(Enum):
    ORACLE_SEGMENT = "oracle_segment"
    LRU = "lru"


@dataclass
class CacheConfig:
    capacity: int
    m: int = 1
    policy: CachePolicy = CachePolicy.ORACLE_SEGMENT

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {self.capacity}")
        if self.policy is CachePolicy.ORACLE_SEGMENT and self.m < 1:
            raise ValueError(f"segment length must be >= 1, got {self.m}")


@dataclass
class CacheResult:
    hits: int
    total_activations: int
    per_layer: list["CacheResult"] | None = None

    @property
    def no_activations(self) -> bool:
        return self.total_activations == 0

    @property
    def hit_rate(self) -> float:
        # a cache with nothing to serve never misses; flagged via no_activations
        if self.no_activations:
            return 1.0
        return self.hits / self.total_activations


def _sch_layer(trace: RoutingTrace, layer: int, capacity: int, m: int) -> CacheResult:
    hits = 0
    total = 0
    for seq in trace.sequences:
        acts = seq.activations[layer]
        total += sum(len(a) for a in acts)
        for start in range(0, len(seq), m):
            freq = Counter(e for tok in acts[start : start + m] for e in tok)
            top = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:capacity]
            hits += sum(c for _, c in top)
    return CacheResult(hits=hits, total_activations=total)


def _lru_layer(trace: RoutingTrace, layer: int, capacity: int) -> CacheResult:
    hits = 0
    total = 0
    for seq in trace.sequences:
        cache: list[int] = []  # most recent first
        for tok in seq.activations[layer]:
            for e in tok:
                total += 1
                if e in cache:
                    hits += 1
                    cache.remove(e)
                    cache.insert(0, e)
                elif capacity > 0:
                    cache.insert(0, e)
                    if len(cache) > capacity:
                        cache.pop()
    return CacheResult(hits=hits, total_activations=total)


def _aggregate(per_layer: list[CacheResult]) -> CacheResult:
    return CacheResult(
        hits=sum(r.hits for r in per_layer),
        total_activations=sum(r.total_activations for r in per_layer),
        per_layer=per_layer,
    )


def sch_oracle(trace: RoutingTrace, layer: int | None, capacity: int, m: int) -> CacheResult:
    CacheConfig(capacity=capacity, m=m)
    if layer is not None:
        return _sch_layer(trace, layer, capacity, m)
    return _aggregate(
        [_sch_layer(trace, l, capacity, m) for l in range(trace.header.num_layers)]
    )


def lru_hit_rate(trace: RoutingTrace, layer: int | None, capacity: int) -> CacheResult:
    CacheConfig(capacity=capacity, policy=CachePolicy.LRU)
    if layer is not None:
        return _lru_layer(trace, layer, capacity)
    return _aggregate([_lru_layer(trace, l, capacity) for l in range(trace.header.num_layers)])


@dataclass
class CapacityPoint:
    capacity: int
    sch: float
    lru: float


@dataclass
class CapacitySweep:
    points: list[CapacityPoint]
    full_rate: float
    knee_capacity: int | None  # smallest swept capacity with sch >= 0.95 * full_rate


def capacity_sweep(
    trace: RoutingTrace, layer: int | None, capacities: list[int], m: int
) -> CapacitySweep:
    if not capacities:
        raise ValueError("capacities must be non-empty")
    if sorted(capacities) != list(capacities):
        raise ValueError("capacities must be sorted ascending")
    full_cap = max(trace.header.experts_per_layer)
    full_rate = sch_oracle(trace, layer, full_cap, m).hit_rate
    points = []
    knee = None
    for cap in capacities:
        sch = sch_oracle(trace, layer, cap, m).hit_rate
        lru = lru_hit_rate(trace, layer, cap).hit_rate
        points.append(CapacityPoint(capacity=cap, sch=sch, lru=lru))
        if knee is None and sch >= 0.95 * full_rate:
            knee = cap
    return CapacitySweep(points=points, full_rate=full_rate, knee_capacity=knee)
