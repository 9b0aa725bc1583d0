from fractions import Fraction
from math import comb

import numpy as np
import pytest

from moelab.errors import BudgetExceeded, InvalidSegmentLength, UndefinedSrp
from moelab.oracle import (
    EnumerationBudget,
    binomial_srp,
    brute_force_cache,
    brute_force_srp_enum,
    enumerate_group_thresholds,
)
from moelab.srp import (
    SegmentHistogram,
    build_segment_histogram,
    layer_histograms,
    srp_group,
    srp_scan,
    srp_single,
    suffix_window_count,
)
from moelab.cache import lru_hit_rate, sch_oracle
from moelab.trace import ExpertKey, RoutingTrace, Sequence, TraceHeader

from conftest import make_trace


def exact(result):
    return Fraction(result.f1_num, result.f1_den)


def random_instance(rng, max_experts=2, max_tokens=8):
    E = int(rng.integers(1, max_experts + 1))
    k = int(rng.integers(1, E + 1))
    n = int(rng.integers(1, max_tokens + 1))
    tr = make_trace(rng, num_layers=1, experts=E, top_k=k, num_seqs=1,
                    min_len=n, max_len=n)
    m = int(rng.integers(1, 5))
    group = int(rng.integers(1, E + 1))
    keys = [ExpertKey(0, e) for e in range(group)]
    return tr, keys, m


def test_enum_equals_scan_on_many_instances():
    rng = np.random.default_rng(1234)
    defined = 0
    for _ in range(250):
        tr, keys, m = random_instance(rng)
        enum = brute_force_srp_enum(tr, keys, m)
        if enum.undefined:
            with pytest.raises(UndefinedSrp):
                srp_group(tr, keys, m)
            continue
        defined += 1
        scan = srp_group(tr, keys, m)
        assert exact(scan) == enum.best_f1
    assert defined >= 150


def test_enum_witness_is_threshold_suffix():
    rng = np.random.default_rng(99)
    checked = 0
    for _ in range(120):
        tr, keys, m = random_instance(rng)
        enum = brute_force_srp_enum(tr, keys, m)
        if enum.undefined:
            continue
        scan = srp_group(tr, keys, m)
        pooled = np.zeros(m + 1, dtype=np.int64)
        for key in keys:
            pooled += build_segment_histogram(tr, key, m).counts
        hist = SegmentHistogram(m, pooled)
        # witness picks exactly the windows at or above the scan threshold
        expect = suffix_window_count(hist, scan.alpha)
        got = sum(len(v) for v in enum.witness.values())
        assert got == expect
        for key, wins in enum.witness.items():
            freqs = enum.window_freqs[key]
            on = set(wins)
            for w, f in enumerate(freqs):
                assert (w in on) == (f >= scan.alpha)
        checked += 1
    assert checked >= 60


def test_enum_budget_enforced():
    tr = make_trace(np.random.default_rng(0), num_layers=1, experts=3, top_k=1,
                    num_seqs=4, min_len=8, max_len=8)
    keys = [ExpertKey(0, e) for e in range(3)]
    with pytest.raises(BudgetExceeded):
        brute_force_srp_enum(tr, keys, 1)  # 3 experts x 32 windows >> 2^20
    brute_force_srp_enum(tr, keys[:1], 8, budget=EnumerationBudget(max_decision_bits=25))


def test_enum_undefined_when_group_silent():
    header = TraceHeader(model_id="s", num_layers=1, experts_per_layer=[2], nominal_top_k=[1])
    seq = Sequence(token_ids=[0, 1], activations=[[[1], [1]]])
    tr = RoutingTrace(header=header, sequences=[seq])
    enum = brute_force_srp_enum(tr, [ExpertKey(0, 0)], 1)
    assert enum.undefined


def test_group_threshold_enumeration_matches_pooled_scan():
    rng = np.random.default_rng(7)
    for _ in range(150):
        E = int(rng.integers(2, 4))
        k = int(rng.integers(1, E + 1))
        n = int(rng.integers(2, 9))
        tr = make_trace(rng, num_layers=1, experts=E, top_k=k, num_seqs=1,
                        min_len=n, max_len=n)
        m = int(rng.integers(1, min(4, n) + 1))
        mat = layer_histograms(tr, 0, m)
        per_expert = [mat[e] for e in range(E)]
        if sum(int(np.dot(h, np.arange(m + 1))) for h in per_expert) == 0:
            continue
        best, alphas = enumerate_group_thresholds(per_expert, m)
        scan = srp_group(tr, [ExpertKey(0, e) for e in range(E)], m)
        # per-expert thresholds cannot beat the uniform pooled threshold
        assert best == exact(scan)
        assert len(alphas) == E


def test_binomial_matches_integer_histogram_scan():
    for p, m in [(Fraction(1, 8), 16), (Fraction(1, 8), 6), (Fraction(1, 2), 4),
                 (Fraction(3, 10), 5), (Fraction(1, 1), 3)]:
        ref = binomial_srp(p, m)
        num, den = p.numerator, p.denominator
        counts = [comb(m, f) * num**f * (den - num) ** (m - f) for f in range(m + 1)]
        if sum(f * c for f, c in enumerate(counts)) == 0:
            continue
        scan = srp_scan(SegmentHistogram(m=m, counts=counts))
        assert ref == scan.srp


def test_binomial_endpoints():
    assert binomial_srp(1, 4) == 1.0
    with pytest.raises(UndefinedSrp):
        binomial_srp(0, 4)
    with pytest.raises(InvalidSegmentLength):
        binomial_srp(Fraction(1, 2), 0)
    assert binomial_srp(Fraction(1, 2), 1) == 1.0


def test_binomial_decreases_with_m_for_sparse_stream():
    vals = [binomial_srp(Fraction(1, 8), m) for m in (1, 2, 4, 8, 16)]
    assert vals[0] == 1.0
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_brute_cache_budget():
    tr = make_trace(np.random.default_rng(1), num_layers=1, experts=8, top_k=2,
                    num_seqs=1, min_len=4, max_len=4)
    with pytest.raises(BudgetExceeded):
        brute_force_cache(tr, m=2, capacity=2, layer=0)
    tr2 = make_trace(np.random.default_rng(1), num_layers=1, experts=4, top_k=2,
                     num_seqs=1, min_len=20, max_len=20)
    with pytest.raises(BudgetExceeded):
        brute_force_cache(tr2, m=2, capacity=2, layer=0)


def test_brute_cache_agrees_with_fast_oracle():
    rng = np.random.default_rng(5)
    for _ in range(200):
        E = int(rng.integers(1, 7))
        k = int(rng.integers(1, min(E, 3) + 1))
        n = int(rng.integers(1, 13))
        tr = make_trace(rng, num_layers=1, experts=E, top_k=k, num_seqs=1,
                        min_len=n, max_len=n)
        m = int(rng.integers(1, 6))
        cap = int(rng.integers(1, E + 1))
        bf = brute_force_cache(tr, m=m, capacity=cap, layer=0)
        fast = sch_oracle(tr, layer=0, capacity=cap, m=m)
        assert bf.hits == fast.hits
        assert bf.total == fast.total_activations
        assert bf.hit_rate == fast.hit_rate
        # the oracle never loses to the stateless LRU baseline
        lru = lru_hit_rate(tr, layer=0, capacity=cap)
        assert fast.hit_rate >= lru.hit_rate
