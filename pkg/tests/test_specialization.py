import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moelab.errors import DegenerateInput, UndefinedCV, UndefinedScore
from moelab.specialization import (
    activation_frequency,
    correlate,
    domain_specialization,
    load_balance_sd,
    max_lift,
    profile,
    vocab_specialization,
)
from moelab.trace import ExpertKey, RoutingTrace, Sequence, TraceHeader

from conftest import make_trace


def rate_trace(rates_by_expert, tokens=20):
    """Single layer; expert e activates on the first round(rate*tokens) tokens."""
    E = len(rates_by_expert)
    ons = [round(r * tokens) for r in rates_by_expert]
    acts = [[sorted(e for e in range(E) if t < ons[e]) for t in range(tokens)]]
    header = TraceHeader(model_id="r", num_layers=1, experts_per_layer=[E], nominal_top_k=[0])
    return RoutingTrace(
        header=header,
        sequences=[Sequence(token_ids=list(range(tokens)), activations=acts)],
    )


def test_activation_frequency():
    tr = rate_trace([0.5, 0.25])
    assert activation_frequency(tr, ExpertKey(0, 0)) == 0.5
    assert activation_frequency(tr, ExpertKey(0, 1)) == 0.25


def test_load_balance_sd_known_value():
    # rates 0.5, 0.5, 0, 0 -> population SD = 0.25
    tr = rate_trace([0.5, 0.5, 0.0, 0.0])
    rep = load_balance_sd(tr)
    assert rep.per_layer_sd == [pytest.approx(0.25)]
    assert rep.mean_sd == pytest.approx(0.25)
    assert rep.pooled_sd == pytest.approx(0.25)
    rates = [rep.per_expert_rates[ExpertKey(0, e)] for e in range(4)]
    assert rates == pytest.approx([0.5, 0.5, 0.0, 0.0])


def test_load_balance_uniform_is_zero():
    tr = rate_trace([0.5, 0.5, 0.5])
    rep = load_balance_sd(tr)
    assert rep.per_layer_sd == [0.0]


def test_domain_cv_known_value():
    # two domains, rates 0.2 and 0.0 -> mean 0.1, pop SD 0.1, CV = 1
    header = TraceHeader(model_id="d", num_layers=1, experts_per_layer=[1], nominal_top_k=[0])
    a = Sequence(token_ids=list(range(5)), activations=[[[0]] + [[]] * 4], domain="a")
    b = Sequence(token_ids=list(range(5)), activations=[[[]] * 5], domain="b")
    tr = RoutingTrace(header=header, sequences=[a, b])
    rates, cv = domain_specialization(tr, ExpertKey(0, 0))
    assert rates == {"a": pytest.approx(0.2), "b": 0.0}
    assert cv == pytest.approx(1.0)


def test_domain_cv_needs_two_domains():
    tr = rate_trace([0.5])
    with pytest.raises(UndefinedCV):
        domain_specialization(tr, ExpertKey(0, 0))


def test_domain_cv_undefined_for_silent_expert():
    header = TraceHeader(model_id="d", num_layers=1, experts_per_layer=[2], nominal_top_k=[0])
    seqs = [
        Sequence(token_ids=[0], activations=[[[1]]], domain="a"),
        Sequence(token_ids=[0], activations=[[[1]]], domain="b"),
    ]
    tr = RoutingTrace(header=header, sequences=seqs)
    with pytest.raises(UndefinedCV):
        domain_specialization(tr, ExpertKey(0, 0))


def test_domain_cv_scale_invariant():
    rng = np.random.default_rng(0)
    tr = make_trace(rng, num_layers=1, experts=4, top_k=2, num_seqs=8,
                    min_len=6, max_len=6, domains=("a", "b", "c"))
    _, cv = domain_specialization(tr, ExpertKey(0, 0))
    # doubling every sequence leaves all the rates, and hence the CV, alone
    tr2 = RoutingTrace(header=tr.header, sequences=tr.sequences + tr.sequences)
    _, cv2 = domain_specialization(tr2, ExpertKey(0, 0))
    assert cv2 == pytest.approx(cv)


def test_max_lift_known_value():
    # token 7: expert active every time; base rate 0.1 -> lift 10
    occurrences = {7: 20, 8: 180}
    active = {7: 20, 8: 0}
    lift = max_lift(active, occurrences, total_active=20, total_tokens=200, min_support=16)
    assert lift == pytest.approx(10.0)


def test_max_lift_respects_support():
    occurrences = {7: 3, 8: 50}
    active = {7: 3, 8: 5}
    # token 7 is below support, so only token 8 counts
    lift = max_lift(active, occurrences, total_active=8, total_tokens=100, min_support=16)
    assert lift == pytest.approx((5 / 50) / (8 / 100))


def test_max_lift_undefined_without_support():
    with pytest.raises(UndefinedScore):
        max_lift({1: 2}, {1: 2}, total_active=2, total_tokens=10, min_support=16)


def test_vocab_specialization_over_streams():
    header = TraceHeader(model_id="v", num_layers=1, experts_per_layer=[1],
                         nominal_top_k=[0], vocab_size=4)
    n = 32
    token_ids = [0, 1] * (n // 2)
    pred = [2, 3] * (n // 2)
    acts = [[[0] if t % 2 == 0 else [] for t in range(n)]]
    seq = Sequence(token_ids=token_ids, activations=acts, predicted_ids=pred)
    tr = RoutingTrace(header=header, sequences=[seq])
    # input stream: active exactly on token 0 -> lift = (1.0)/(0.5) = 2
    assert vocab_specialization(tr, ExpertKey(0, 0), kind="input") == pytest.approx(2.0)
    assert vocab_specialization(tr, ExpertKey(0, 0), kind="predicted") == pytest.approx(2.0)


def test_vocab_specialization_missing_stream():
    from moelab.errors import MissingTokenStream

    tr = rate_trace([0.5])
    with pytest.raises(MissingTokenStream):
        vocab_specialization(tr, ExpertKey(0, 0), kind="ground_truth")


def test_profile_collects_available_stats():
    rng = np.random.default_rng(1)
    tr = make_trace(rng, num_layers=1, experts=4, top_k=2, num_seqs=6,
                    min_len=8, max_len=8, domains=("a", "b"))
    p = profile(tr, ExpertKey(0, 0), min_support=4)
    assert p.activation_rate == pytest.approx(
        activation_frequency(tr, ExpertKey(0, 0))
    )
    assert p.domain_cv is not None
    assert p.vocab_scores["ground_truth"] is None  # stream absent


def test_correlate_pearson_exact():
    xs = [1.0, 2.0, 3.0, 4.0]
    ys = [2.0, 4.0, 6.0, 8.0]
    assert correlate(xs, ys, "pearson") == pytest.approx(1.0)
    assert correlate(xs, [-y for y in ys], "pearson") == pytest.approx(-1.0)


def test_correlate_pearson_hand_value():
    xs = [1.0, 2.0, 3.0]
    ys = [1.0, 3.0, 2.0]
    assert correlate(xs, ys, "pearson") == pytest.approx(0.5)


def test_correlate_spearman_ties_use_average_ranks():
    xs = [1.0, 2.0, 2.0, 3.0]
    ys = [10.0, 20.0, 20.0, 30.0]
    assert correlate(xs, ys, "spearman") == pytest.approx(1.0)
    # hand-computed: ranks x = 1, 2.5, 2.5, 4 / ranks y = 1, 3, 2, 4
    xs2 = [1.0, 2.0, 2.0, 3.0]
    ys2 = [1.0, 3.0, 2.0, 4.0]
    got = correlate(xs2, ys2, "spearman")
    rx = np.array([1.0, 2.5, 2.5, 4.0])
    ry = np.array([1.0, 3.0, 2.0, 4.0])
    expect = np.corrcoef(rx, ry)[0, 1]
    assert got == pytest.approx(expect)


def test_correlate_spearman_monotone_invariance():
    rng = np.random.default_rng(2)
    xs = rng.normal(size=30).tolist()
    ys = rng.normal(size=30).tolist()
    base = correlate(xs, ys, "spearman")
    assert correlate([np.exp(x) for x in xs], ys, "spearman") == pytest.approx(base)
    assert correlate([x * 100 + 7 for x in xs], ys, "spearman") == pytest.approx(base)


def test_correlate_pearson_affine_invariance():
    rng = np.random.default_rng(3)
    xs = rng.normal(size=25).tolist()
    ys = rng.normal(size=25).tolist()
    base = correlate(xs, ys, "pearson")
    assert correlate([3 * x + 1 for x in xs], ys, "pearson") == pytest.approx(base)


def test_correlate_drops_undefined_pairwise():
    xs = [1.0, None, 2.0, 3.0, float("nan")]
    ys = [2.0, 5.0, 4.0, 6.0, 1.0]
    assert correlate(xs, ys, "pearson") == pytest.approx(1.0)


def test_correlate_degenerate_inputs():
    with pytest.raises(DegenerateInput):
        correlate([1.0, 2.0], [1.0, 2.0], "pearson")  # fewer than 3 pairs
    with pytest.raises(DegenerateInput):
        correlate([1.0, 1.0, 1.0], [1.0, 2.0, 3.0], "pearson")  # zero variance
    with pytest.raises(ValueError):
        correlate([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], "kendall")


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20)
def test_lb_rates_sum_to_topk(seed):
    tr = make_trace(np.random.default_rng(seed), num_layers=2, experts=5, top_k=2,
                    num_seqs=3, min_len=4, max_len=10)
    rep = load_balance_sd(tr)
    for layer in range(2):
        total = sum(v for k, v in rep.per_expert_rates.items() if k.layer == layer)
        assert total == pytest.approx(2.0)  # exactly top-k activations per token
