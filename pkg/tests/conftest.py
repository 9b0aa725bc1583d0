import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from moelab.trace import RoutingTrace, Sequence, TraceHeader

settings.register_profile(
    "ci", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=60
)
settings.load_profile("ci")


def make_trace(rng, num_layers=1, experts=4, top_k=2, num_seqs=3, max_len=12,
               min_len=1, vocab=64, domains=("unknown",)):
    """Random valid trace with exactly top_k distinct sorted experts per token."""
    top_k = min(top_k, experts)
    header = TraceHeader(
        model_id="rand",
        num_layers=num_layers,
        experts_per_layer=[experts] * num_layers,
        nominal_top_k=[top_k] * num_layers,
        vocab_size=vocab,
    )
    seqs = []
    for s in range(num_seqs):
        n = int(rng.integers(min_len, max_len + 1))
        acts = [
            [sorted(rng.choice(experts, size=top_k, replace=False).tolist()) for _ in range(n)]
            for _ in range(num_layers)
        ]
        seqs.append(
            Sequence(
                token_ids=rng.integers(0, vocab, size=n).tolist(),
                activations=acts,
                domain=domains[s % len(domains)],
            )
        )
    return RoutingTrace(header=header, sequences=seqs)


@st.composite
def trace_strategy(draw, max_layers=2, max_experts=5, max_seqs=3, max_len=10):
    num_layers = draw(st.integers(1, max_layers))
    experts = draw(st.integers(1, max_experts))
    top_k = draw(st.integers(1, experts))
    num_seqs = draw(st.integers(1, max_seqs))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    return make_trace(rng, num_layers=num_layers, experts=experts, top_k=top_k,
                      num_seqs=num_seqs, max_len=max_len)


# ---------------------------------------------------------------------------
# acceptance summary: tests in test_acceptance.py record one line per criterion

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_acceptance(name: str, ok: bool, detail: str = "") -> None:
    _ACCEPTANCE.append((name, bool(ok), detail))


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        status = "PASS" if ok else "FAIL"
        line = f"{status}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
