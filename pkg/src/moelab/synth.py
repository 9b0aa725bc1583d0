"""Deterministic synthetic routing traces with controllable structure.

Three generators share one sampling core (per-expert base logits plus
per-token Gumbel noise, take the top-k):

- iid: every token routed independently; `logit_skew` is the standard
  deviation of the fixed per-expert logits, so 0 gives exchangeable experts
  and larger values give a lopsided load.
- sticky: each token keeps the previous token's expert set with probability
  `persistence`, else resamples; 0 matches iid in distribution, 1 freezes
  routing within each sequence.
- domain: experts are homed to domains round-robin, sequences are labeled
  round-robin, and an expert's logit is boosted by its home domain's boost
  while routing that domain's sequences.  `domain_boost` may be a single
  value or one value per domain; uneven boosts give experts genuinely
  different degrees of specialization.

Randomness comes from numpy's Philox engine keyed by SeedSequence spawn
keys: (0, layer) for base logits, (1, s) for sequence s's token ids,
(2, s, layer) for its routing draws.  Every sequence is therefore
independent of generation order and chunking, and a config always produces
byte-identical traces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence as SequenceOf

import numpy as np

from .codec import ArraySequence
from .trace import RoutingTrace, StreamKind, TraceHeader

DEFAULT_DOMAINS = ("web", "code", "math", "news")

GENERATOR_KINDS = ("iid", "sticky", "domain")


@dataclass
class GeneratorConfig:
    seed: int
    num_layers: int = 1
    experts_per_layer: int = 64
    top_k: int = 8
    num_sequences: int = 64
    seq_len: int = 512
    vocab_size: int = 32000
    logit_skew: float = 0.0
    persistence: float = 0.0
    domains: tuple[str, ...] = DEFAULT_DOMAINS
    domain_boost: float | SequenceOf[float] = 0.0
    model_id: str | None = None

    def __post_init__(self):
        if not 1 <= self.top_k <= self.experts_per_layer:
            raise ValueError(f"top_k {self.top_k} not in [1, {self.experts_per_layer}]")
        if min(self.num_layers, self.num_sequences, self.seq_len, self.vocab_size) < 1:
            raise ValueError("layers, sequences, seq_len, vocab_size must be >= 1")
        if not 0 <= self.persistence <= 1:
            raise ValueError(f"persistence must be in [0,1], got {self.persistence}")
        if self.logit_skew < 0:
            raise ValueError(f"logit_skew must be >= 0, got {self.logit_skew}")
        if len(self.domains) < 1:
            raise ValueError("need at least one domain label")
        self.boosts()  # fail fast on a malformed per-domain boost list

    def boosts(self) -> np.ndarray:
        if np.isscalar(self.domain_boost):
            b = np.full(len(self.domains), float(self.domain_boost))
        else:
            b = np.asarray(self.domain_boost, dtype=float)
            if b.shape != (len(self.domains),):
                raise ValueError(f"need one boost per domain ({len(self.domains)}), got shape {b.shape}")
        if (b < 0).any():
            raise ValueError("domain boosts must be >= 0")
        return b


def _rng(cfg: GeneratorConfig, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed, spawn_key=key)))


def _base_logits(cfg: GeneratorConfig, layer: int) -> np.ndarray:
    if cfg.logit_skew == 0:
        return np.zeros(cfg.experts_per_layer)
    return _rng(cfg, 0, layer).normal(0.0, cfg.logit_skew, cfg.experts_per_layer)


def _topk_sorted(scores: np.ndarray, k: int) -> np.ndarray:
    idx = np.argpartition(-scores, k - 1, axis=1)[:, :k]
    return np.sort(idx, axis=1)


def synth_header(cfg: GeneratorConfig, kind: str) -> TraceHeader:
    if kind not in GENERATOR_KINDS:
        raise ValueError(f"unknown generator kind {kind!r}")
    return TraceHeader(
        model_id=cfg.model_id or f"synth-{kind}-seed{cfg.seed}",
        num_layers=cfg.num_layers,
        experts_per_layer=[cfg.experts_per_layer] * cfg.num_layers,
        nominal_top_k=[cfg.top_k] * cfg.num_layers,
        vocab_size=cfg.vocab_size,
        stream_kind=[StreamKind.DECODER] * cfg.num_layers,
    )


def _route_layer(cfg: GeneratorConfig, kind: str, s: int, layer: int, boost: np.ndarray | None) -> np.ndarray:
    """(seq_len, top_k) sorted expert indices for sequence s at one layer."""
    n, k = cfg.seq_len, cfg.top_k
    rng = _rng(cfg, 2, s, layer)
    base = _base_logits(cfg, layer)
    if boost is not None:
        base = base + boost
    if kind == "sticky" and cfg.persistence > 0:
        keep = rng.random(n) < cfg.persistence
        keep[0] = False
        fresh = np.flatnonzero(~keep)
        seg = np.cumsum(~keep) - 1
        draws = rng.gumbel(size=(len(fresh), cfg.experts_per_layer)) + base
        return _topk_sorted(draws, k)[seg]
    draws = rng.gumbel(size=(n, cfg.experts_per_layer)) + base
    return _topk_sorted(draws, k)


def iter_array_sequences(cfg: GeneratorConfig, kind: str) -> Iterator[ArraySequence]:
    """Generate sequences one at a time; the big-corpus path writes these straight to disk."""
    if kind not in GENERATOR_KINDS:
        raise ValueError(f"unknown generator kind {kind!r}")
    domains = cfg.domains
    boosts = cfg.boosts() if kind == "domain" else None
    if kind == "domain" and len(domains) < 2:
        raise ValueError("domain generator needs >= 2 domains")
    home = np.arange(cfg.experts_per_layer) % len(domains) if kind == "domain" else None
    for s in range(cfg.num_sequences):
        token_ids = _rng(cfg, 1, s).integers(0, cfg.vocab_size, cfg.seq_len, dtype=np.uint32)
        if kind == "domain":
            d = s % len(domains)
            domain = domains[d]
            boost = np.where(home == d, boosts[d], 0.0)
        else:
            domain = "unknown"
            boost = None
        layer_counts, layer_flat = [], []
        for layer in range(cfg.num_layers):
            acts = _route_layer(cfg, kind, s, layer, boost)
            layer_counts.append(np.full(cfg.seq_len, cfg.top_k, dtype=np.uint8))
            layer_flat.append(acts.astype(np.uint32).ravel())
        yield ArraySequence(
            domain=domain,
            token_ids=token_ids,
            layer_counts=layer_counts,
            layer_flat=layer_flat,
        )


def _materialize(cfg: GeneratorConfig, kind: str) -> RoutingTrace:
    seqs = [a.to_sequence() for a in iter_array_sequences(cfg, kind)]
    return RoutingTrace(header=synth_header(cfg, kind), sequences=seqs)


def gen_iid_topk(cfg: GeneratorConfig) -> RoutingTrace:
    return _materialize(cfg, "iid")


def gen_sticky(cfg: GeneratorConfig) -> RoutingTrace:
    return _materialize(cfg, "sticky")


def gen_domain(cfg: GeneratorConfig) -> RoutingTrace:
    return _materialize(cfg, "domain")


def write_synthetic(cfg: GeneratorConfig, kind: str, path: str) -> TraceHeader:
    """Stream a synthetic trace to a binary file without materializing it."""
    from .codec import TraceWriter

    header = synth_header(cfg, kind)
    with TraceWriter(path, header) as w:
        for seq in iter_array_sequences(cfg, kind):
            w.write(seq)
    return header
