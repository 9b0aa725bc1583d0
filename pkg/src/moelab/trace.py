"""Routing-trace data model, validation, and corpus statistics.

A trace records, for every token of every input sequence, which experts
each MoE layer activated.  Sequences carry a free-form domain label so
per-domain statistics can be computed; predicted / ground-truth token
streams are optional.  Encoder layers of encoder-decoder models are
tagged with a stream kind and otherwise treated like any other layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

from .errors import EmptyTrace

DEFAULT_DOMAIN = "unknown"


class StreamKind(IntEnum):
    """Which token stream a layer consumes (binary codes are the wire values)."""

    DECODER = 0
    ENCODER = 1

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "StreamKind":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(f"unknown stream kind {label!r}") from None


@dataclass
class TraceHeader:
    """Model configuration shared by every sequence in a trace.

    ``nominal_top_k[l] == 0`` means the layer's activation count varies
    per token (expert-choice style routing); metrics always use observed
    counts, never the nominal value.  ``vocab_size == 0`` means unknown.
    """

    model_id: str
    num_layers: int
    experts_per_layer: list[int]
    nominal_top_k: list[int]
    vocab_size: int = 0
    stream_kind: list[StreamKind] = field(default_factory=list)
    format_version: int = 1

    def __post_init__(self):
        if not self.stream_kind:
            self.stream_kind = [StreamKind.DECODER] * self.num_layers
        self.stream_kind = [StreamKind(s) for s in self.stream_kind]


@dataclass
class Sequence:
    """One input sample: token ids plus per-layer, per-token expert sets.

    ``activations[layer][token]`` is a strictly increasing list of expert
    indices.  ``predicted_ids`` / ``ground_truth_ids`` are optional parallel
    token streams used only by vocabulary-specialization metrics.
    """

    token_ids: list[int]
    activations: list[list[list[int]]]
    domain: str = DEFAULT_DOMAIN
    predicted_ids: list[int] | None = None
    ground_truth_ids: list[int] | None = None

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass
class RoutingTrace:
    """A header plus its sequences.  Immutable by convention after construction."""

    header: TraceHeader
    sequences: list[Sequence]

    @property
    def num_tokens(self) -> int:
        return sum(len(s) for s in self.sequences)

    def expert_count(self, layer: int) -> int:
        return self.header.experts_per_layer[layer]


@dataclass(frozen=True, order=True)
class ExpertKey:
    """Identifies one expert as (layer, index within layer)."""

    layer: int
    index: int

    def check(self, header: TraceHeader) -> None:
        from .errors import ExpertOutOfRange

        if not 0 <= self.layer < header.num_layers:
            raise ExpertOutOfRange(f"layer {self.layer} not in [0, {header.num_layers})")
        if not 0 <= self.index < header.experts_per_layer[self.layer]:
            raise ExpertOutOfRange(
                f"expert {self.index} not in [0, {header.experts_per_layer[self.layer]}) at layer {self.layer}"
            )


@dataclass
class Violation:
    """One invariant failure with its location; collected by `validate`."""

    kind: str
    message: str
    sequence: int | None = None
    layer: int | None = None
    token: int | None = None

    def __str__(self) -> str:
        loc = [
            f"{name} {val}"
            for name, val in (("sequence", self.sequence), ("layer", self.layer), ("token", self.token))
            if val is not None
        ]
        where = " @ " + ", ".join(loc) if loc else ""
        return f"{self.kind}: {self.message}{where}"


def _validate_header(header: TraceHeader) -> list[Violation]:
    out = []
    L = header.num_layers
    if L < 1:
        out.append(Violation("BadLayerCount", f"num_layers must be >= 1, got {L}"))
    for name, lst in (
        ("experts_per_layer", header.experts_per_layer),
        ("nominal_top_k", header.nominal_top_k),
        ("stream_kind", header.stream_kind),
    ):
        if len(lst) != L:
            out.append(Violation("HeaderShapeMismatch", f"len({name}) = {len(lst)} != num_layers = {L}"))
    if out:
        return out  # per-layer checks need consistent shapes
    for l, (e, k) in enumerate(zip(header.experts_per_layer, header.nominal_top_k)):
        if e < 1:
            out.append(Violation("BadExpertCount", f"experts_per_layer must be positive, got {e}", layer=l))
        if k < 0:
            out.append(Violation("BadTopK", f"nominal_top_k must be >= 0, got {k}", layer=l))
        elif k > e:
            out.append(Violation("TopKExceedsExperts", f"top_k {k} > experts {e}", layer=l))
    if header.vocab_size < 0:
        out.append(Violation("BadVocabSize", f"vocab_size must be >= 0, got {header.vocab_size}"))
    return out


def _validate_sequence(header: TraceHeader, si: int, seq: Sequence) -> list[Violation]:
    out = []
    n = len(seq.token_ids)
    for name, ids in (("predicted_ids", seq.predicted_ids), ("ground_truth_ids", seq.ground_truth_ids)):
        if ids is not None and len(ids) != n:
            out.append(Violation("LengthMismatch", f"{name} has {len(ids)} entries for {n} tokens", sequence=si))
    if any(t < 0 for t in seq.token_ids):
        out.append(Violation("NegativeTokenId", "token ids must be non-negative", sequence=si))
    elif header.vocab_size > 0 and any(t >= header.vocab_size for t in seq.token_ids):
        out.append(
            Violation(
                "TokenIdOutOfRange",
                f"token id >= vocab_size {header.vocab_size}",
                sequence=si,
            )
        )
    if len(seq.activations) != header.num_layers:
        out.append(
            Violation(
                "LayerCountMismatch",
                f"{len(seq.activations)} activation layers for {header.num_layers} model layers",
                sequence=si,
            )
        )
        return out
    for l, layer_acts in enumerate(seq.activations):
        if len(layer_acts) != n:
            out.append(
                Violation(
                    "TokenCountMismatch",
                    f"layer has {len(layer_acts)} activation lists for {n} tokens",
                    sequence=si,
                    layer=l,
                )
            )
            continue
        nexp = header.experts_per_layer[l]
        top_k = header.nominal_top_k[l]
        for t, acts in enumerate(layer_acts):
            if top_k > 0 and len(acts) != top_k:
                out.append(
                    Violation(
                        "TopKMismatch",
                        f"{len(acts)} activations where nominal top_k = {top_k}",
                        sequence=si,
                        layer=l,
                        token=t,
                    )
                )
            bad_order = False
            for a, b in zip(acts, acts[1:]):
                if a == b:
                    out.append(
                        Violation("DuplicateExpert", f"expert {a} listed twice", sequence=si, layer=l, token=t)
                    )
                    bad_order = True
                    break
                if a > b:
                    out.append(
                        Violation(
                            "UnsortedExperts", f"indices not increasing ({a} before {b})", sequence=si, layer=l, token=t
                        )
                    )
                    bad_order = True
                    break
            if not bad_order and acts and (acts[0] < 0 or acts[-1] >= nexp):
                bad = acts[0] if acts[0] < 0 else acts[-1]
                out.append(
                    Violation(
                        "ExpertOutOfRange", f"index {bad} not in [0, {nexp})", sequence=si, layer=l, token=t
                    )
                )
            elif bad_order:
                # still catch range errors on unsorted lists
                for a in acts:
                    if a < 0 or a >= nexp:
                        out.append(
                            Violation("ExpertOutOfRange", f"index {a} not in [0, {nexp})", sequence=si, layer=l, token=t)
                        )
                        break
    return out


def validate(trace: RoutingTrace) -> list[Violation]:
    """Check every invariant; return all violations (empty list = valid).

    Never raises: violations are data, so callers can report them in bulk.
    """
    out = _validate_header(trace.header)
    if out:
        return out
    for si, seq in enumerate(trace.sequences):
        out.extend(_validate_sequence(trace.header, si, seq))
    return out


@dataclass
class StatsReport:
    """Corpus-level totals reported by `corpus_stats`."""

    total_sequences: int
    total_tokens: int
    sequences_per_domain: dict[str, int]
    tokens_per_domain: dict[str, int]
    per_layer_total_activations: list[int]
    per_layer_mean_activations_per_token: list[float]

    def to_dict(self) -> dict:
        return {
            "total_sequences": self.total_sequences,
            "total_tokens": self.total_tokens,
            "sequences_per_domain": dict(sorted(self.sequences_per_domain.items())),
            "tokens_per_domain": dict(sorted(self.tokens_per_domain.items())),
            "per_layer_total_activations": self.per_layer_total_activations,
            "per_layer_mean_activations_per_token": self.per_layer_mean_activations_per_token,
        }


def corpus_stats(trace: RoutingTrace) -> StatsReport:
    """Token, domain, and activation totals for a valid trace."""
    seq_dom: dict[str, int] = {}
    tok_dom: dict[str, int] = {}
    layer_acts = [0] * trace.header.num_layers
    total_tokens = 0
    for seq in trace.sequences:
        n = len(seq)
        total_tokens += n
        seq_dom[seq.domain] = seq_dom.get(seq.domain, 0) + 1
        tok_dom[seq.domain] = tok_dom.get(seq.domain, 0) + n
        for l, layer in enumerate(seq.activations):
            layer_acts[l] += sum(len(a) for a in layer)
    means = [a / total_tokens if total_tokens else 0.0 for a in layer_acts]
    return StatsReport(
        total_sequences=len(trace.sequences),
        total_tokens=total_tokens,
        sequences_per_domain=seq_dom,
        tokens_per_domain=tok_dom,
        per_layer_total_activations=layer_acts,
        per_layer_mean_activations_per_token=means,
    )


def total_tokens_or_raise(trace: RoutingTrace) -> int:
    n = trace.num_tokens
    if n == 0:
        raise EmptyTrace("trace has no tokens")
    return n
