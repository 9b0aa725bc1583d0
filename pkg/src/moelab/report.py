"""One-pass streaming analytics and the combined report bundle.

`aggregate_stream` makes a single pass over a trace (file, generator, or
materialized), chunking sequences and feeding each layer's flattened
activations to the numba kernels.  Everything downstream (SRP at every scope
and m, load balance, the cache sweep, specialization, correlations) derives
from the integer accumulators, so the combined report and the single-purpose
commands cannot disagree: they share the arithmetic to the last bit.

Chunks only merge by integer addition and sequences never span chunks, so
chunk size and worker-thread count cannot change any output.

CSV cells use '.' decimals with 6 significant digits.  JSON carries the
full-precision floats plus exact numerator/denominator pairs for SRP values.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from . import _kernels
from .codec import ArraySequence, TraceReader
from .errors import DegenerateInput, InvalidSegmentLength, UndefinedCV, UndefinedSrp
from .specialization import (
    VOCAB_KINDS,
    LoadBalanceReport,
    correlate,
    cv_from_counts,
    load_balance_from_counts,
)
from .srp import SegmentHistogram, _size_ratio, srp_scan, suffix_window_count
from .trace import RoutingTrace, TraceHeader

DEFAULT_M_LIST = (1, 2, 4, 8, 16, 32)
HEADLINE_M = 16


@dataclass
class PipelineConfig:
    m_list: tuple[int, ...] = DEFAULT_M_LIST
    cache_m: int | None = HEADLINE_M
    capacities: tuple[int, ...] | None = None  # None: powers of two + top-k landmarks
    chunk_sequences: int = 256
    threads: int = 1
    with_vocab: bool = False
    min_support: int = 16

    def __post_init__(self):
        for m in self.m_list:
            if m < 1:
                raise InvalidSegmentLength(f"m must be >= 1, got {m}")
        if self.cache_m is not None and self.cache_m < 1:
            raise InvalidSegmentLength(f"m must be >= 1, got {self.cache_m}")
        if self.capacities is not None:
            if not self.capacities:
                raise ValueError("capacities must be non-empty when given")
            if any(c < 0 for c in self.capacities):
                raise ValueError("capacities must be >= 0")
        if self.chunk_sequences < 1:
            raise ValueError("chunk_sequences must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class StreamAggregates:
    """Integer accumulators from one pass; every report number derives from these."""

    header: TraceHeader
    m_list: tuple[int, ...]
    cache_m: int | None
    num_sequences: int = 0
    total_tokens: int = 0
    min_seq_len: int | None = None
    max_seq_len: int | None = None
    windows: dict[int, int] = field(default_factory=dict)  # m -> total window positions
    short_sequences: dict[int, int] = field(default_factory=dict)  # m -> skipped
    hists: dict[int, list[np.ndarray]] = field(default_factory=dict)  # m -> per layer (E, m+1)
    acts: list[np.ndarray] = field(default_factory=list)  # per layer (E,)
    lru_depth: list[np.ndarray] = field(default_factory=list)  # per layer (E+1,)
    sch_hits: list[np.ndarray] = field(default_factory=list)  # per layer (E+1,)
    domain_sequences: dict[str, int] = field(default_factory=dict)
    domain_tokens: dict[str, int] = field(default_factory=dict)
    domain_acts: list[dict[str, np.ndarray]] = field(default_factory=list)  # per layer
    vocab_occ: dict[str, np.ndarray] = field(default_factory=dict)  # kind -> (V,)
    vocab_votes: dict[str, list[np.ndarray]] = field(default_factory=dict)  # kind -> per layer

    def layer_total_acts(self, layer: int) -> int:
        return int(self.acts[layer].sum())


def _chunks(seqs: Iterable[ArraySequence], size: int) -> Iterator[list[ArraySequence]]:
    batch: list[ArraySequence] = []
    for s in seqs:
        batch.append(s)
        if len(batch) >= size:
            yield batch
            batch = []
    if batch:
        yield batch


def _stream_field(seq: ArraySequence, kind: str) -> np.ndarray | None:
    if kind == "input":
        return seq.token_ids
    if kind == "predicted":
        return seq.predicted_ids
    return seq.ground_truth_ids


def aggregate_stream(
    header: TraceHeader, seqs: Iterable[ArraySequence], cfg: PipelineConfig | None = None
) -> StreamAggregates:
    cfg = cfg or PipelineConfig()
    L = header.num_layers
    agg = StreamAggregates(header=header, m_list=tuple(cfg.m_list), cache_m=cfg.cache_m)
    for m in cfg.m_list:
        agg.windows[m] = 0
        agg.short_sequences[m] = 0
        agg.hists[m] = [
            np.zeros((header.experts_per_layer[l], m + 1), dtype=np.int64) for l in range(L)
        ]
    agg.acts = [np.zeros(header.experts_per_layer[l], dtype=np.int64) for l in range(L)]
    if cfg.cache_m is not None:
        agg.lru_depth = [
            np.zeros(header.experts_per_layer[l] + 1, dtype=np.int64) for l in range(L)
        ]
        agg.sch_hits = [
            np.zeros(header.experts_per_layer[l] + 1, dtype=np.int64) for l in range(L)
        ]
    agg.domain_acts = [{} for _ in range(L)]
    vocab_kinds: list[str] = []
    if cfg.with_vocab:
        if header.vocab_size < 1:
            raise ValueError("vocabulary statistics need a header with vocab_size > 0")
        vocab_kinds = list(VOCAB_KINDS)
        for kind in vocab_kinds:
            agg.vocab_occ[kind] = np.zeros(header.vocab_size, dtype=np.int64)
            agg.vocab_votes[kind] = [
                np.zeros((header.experts_per_layer[l], header.vocab_size), dtype=np.int64)
                for l in range(L)
            ]

    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        for chunk in _chunks(seqs, cfg.chunk_sequences):
            lens = np.array([len(s) for s in chunk], dtype=np.int64)
            seq_off = np.zeros(len(chunk) + 1, dtype=np.int64)
            np.cumsum(lens, out=seq_off[1:])
            agg.num_sequences += len(chunk)
            agg.total_tokens += int(lens.sum())
            lmin, lmax = int(lens.min()), int(lens.max())
            agg.min_seq_len = lmin if agg.min_seq_len is None else min(agg.min_seq_len, lmin)
            agg.max_seq_len = lmax if agg.max_seq_len is None else max(agg.max_seq_len, lmax)
            for m in cfg.m_list:
                agg.windows[m] += int(np.maximum(lens - m + 1, 0).sum())
                agg.short_sequences[m] += int((lens < m).sum())
            for s in chunk:
                agg.domain_sequences[s.domain] = agg.domain_sequences.get(s.domain, 0) + 1
                agg.domain_tokens[s.domain] = agg.domain_tokens.get(s.domain, 0) + len(s)

            # a token-id stream missing in any sequence drops that kind for good
            kind_toks: dict[str, np.ndarray] = {}
            for kind in list(vocab_kinds):
                streams = [_stream_field(s, kind) for s in chunk]
                if any(t is None for t in streams):
                    vocab_kinds.remove(kind)
                    del agg.vocab_occ[kind]
                    del agg.vocab_votes[kind]
                    continue
                toks = np.concatenate(streams).astype(np.uint32)
                kind_toks[kind] = toks
                agg.vocab_occ[kind] += np.bincount(toks, minlength=header.vocab_size).astype(
                    np.int64
                )

            tasks = []
            for l in range(L):
                nexp = header.experts_per_layer[l]
                counts = np.concatenate([s.layer_counts[l] for s in chunk])
                flat = np.concatenate([s.layer_flat[l] for s in chunk])
                for m in cfg.m_list:
                    tasks.append(
                        (_kernels.hist_kernel, (counts, flat, seq_off, m, nexp, agg.hists[m][l]))
                    )
                if cfg.cache_m is not None:
                    tasks.append(
                        (_kernels.lru_depth_kernel, (counts, flat, seq_off, nexp, agg.lru_depth[l]))
                    )
                    tasks.append(
                        (
                            _kernels.sch_kernel,
                            (counts, flat, seq_off, cfg.cache_m, nexp, agg.sch_hits[l]),
                        )
                    )
                for kind in vocab_kinds:
                    tasks.append(
                        (_kernels.vocab_kernel, (counts, flat, kind_toks[kind], agg.vocab_votes[kind][l]))
                    )
                agg.acts[l] += np.bincount(flat, minlength=nexp).astype(np.int64)
                # group per-domain counts without re-flattening: slice by sequence
                act_off = np.zeros(len(chunk) + 1, dtype=np.int64)
                np.cumsum([int(s.layer_counts[l].sum()) for s in chunk], out=act_off[1:])
                for si, s in enumerate(chunk):
                    d = s.domain
                    if d not in agg.domain_acts[l]:
                        agg.domain_acts[l][d] = np.zeros(nexp, dtype=np.int64)
                    agg.domain_acts[l][d] += np.bincount(
                        flat[act_off[si] : act_off[si + 1]], minlength=nexp
                    ).astype(np.int64)
            if pool is None:
                for fn, args in tasks:
                    fn(*args)
            else:
                list(pool.map(lambda t: t[0](*t[1]), tasks))
    finally:
        if pool is not None:
            pool.shutdown()
    return agg


def aggregate_file(path: str, cfg: PipelineConfig | None = None) -> StreamAggregates:
    with TraceReader(path) as r:
        return aggregate_stream(r.header, iter(r), cfg)


def aggregate_trace(trace: RoutingTrace, cfg: PipelineConfig | None = None) -> StreamAggregates:
    arrays = (ArraySequence.from_sequence(s) for s in trace.sequences)
    return aggregate_stream(trace.header, arrays, cfg)


# --------------------------------------------------------------------------
# derivations

@dataclass
class SrpRow:
    scope: str  # model | layer | expert
    layer: int | None
    expert: int | None
    m: int
    srp: float | None
    alpha: int | None
    size_ratio: float | None
    num_windows: int
    active_mass: int
    f1_num: int | None
    f1_den: int | None
    undefined: bool


def _scan_row(
    scope: str,
    layer: int | None,
    expert: int | None,
    counts: np.ndarray,
    m: int,
    positions: int,
    acts: int,
    tokens: int,
) -> SrpRow:
    hist = SegmentHistogram(m, counts)
    try:
        res = srp_scan(hist)
    except UndefinedSrp:
        return SrpRow(
            scope=scope, layer=layer, expert=expert, m=m,
            srp=None, alpha=None, size_ratio=None,
            num_windows=hist.num_windows, active_mass=0,
            f1_num=None, f1_den=None, undefined=True,
        )
    ratio = None
    if acts > 0 and positions > 0 and tokens > 0:
        ratio = _size_ratio(suffix_window_count(hist, res.alpha), positions, acts, tokens)
    return SrpRow(
        scope=scope, layer=layer, expert=expert, m=m,
        srp=res.srp, alpha=res.alpha, size_ratio=ratio,
        num_windows=res.num_windows, active_mass=res.active_mass,
        f1_num=res.f1_num, f1_den=res.f1_den, undefined=False,
    )


def srp_rows(agg: StreamAggregates) -> list[SrpRow]:
    """All scopes and all m, ordered model rows, then layer, then expert rows."""
    rows: list[SrpRow] = []
    L = agg.header.num_layers
    T = agg.total_tokens
    for m in agg.m_list:
        pos = agg.windows[m]
        pooled = sum(h.sum(axis=0) for h in agg.hists[m])
        rows.append(
            _scan_row("model", None, None, pooled, m, pos, sum(map(agg.layer_total_acts, range(L))), T)
        )
    for l in range(L):
        for m in agg.m_list:
            rows.append(
                _scan_row(
                    "layer", l, None, agg.hists[m][l].sum(axis=0), m,
                    agg.windows[m], agg.layer_total_acts(l), T,
                )
            )
    for l in range(L):
        for e in range(agg.header.experts_per_layer[l]):
            for m in agg.m_list:
                rows.append(
                    _scan_row(
                        "expert", l, e, agg.hists[m][l][e], m,
                        agg.windows[m], int(agg.acts[l][e]), T,
                    )
                )
    return rows


def load_balance(agg: StreamAggregates) -> LoadBalanceReport:
    return load_balance_from_counts(agg.acts, agg.total_tokens)


@dataclass
class SweepRow:
    layer: int | None  # None: all layers pooled
    capacity: int
    sch: float
    lru: float
    knee: bool


@dataclass
class SweepTable:
    segment_m: int
    rows: list[SweepRow]
    full_rate: float
    knee_capacity: int | None


def default_capacities(header: TraceHeader) -> tuple[int, ...]:
    emax = max(header.experts_per_layer)
    caps = {1 << i for i in range(emax.bit_length()) if 1 << i <= emax}
    caps.add(emax)
    for k in header.nominal_top_k:
        if k > 0:
            caps.add(k)
            if 2 * k <= emax:
                caps.add(2 * k)
    return tuple(sorted(caps))


def _rate(hits: int, total: int) -> float:
    return 1.0 if total == 0 else hits / total


def cache_sweep(agg: StreamAggregates, capacities: tuple[int, ...] | None = None) -> SweepTable:
    if agg.cache_m is None:
        raise ValueError("aggregation ran without a cache segment length")
    caps = capacities or default_capacities(agg.header)
    L = agg.header.num_layers
    totals = [agg.layer_total_acts(l) for l in range(L)]
    lru_cum = [np.concatenate([[0], np.cumsum(agg.lru_depth[l][:-1])]) for l in range(L)]

    def sch_hits(l: int, cap: int) -> int:
        return int(agg.sch_hits[l][min(cap, agg.header.experts_per_layer[l])])

    def lru_hits(l: int, cap: int) -> int:
        return int(lru_cum[l][min(cap, agg.header.experts_per_layer[l])])

    grand = sum(totals)
    full_rate = _rate(sum(sch_hits(l, agg.header.experts_per_layer[l]) for l in range(L)), grand)
    rows: list[SweepRow] = []
    knee = None
    for cap in caps:
        sch = _rate(sum(sch_hits(l, cap) for l in range(L)), grand)
        lru = _rate(sum(lru_hits(l, cap) for l in range(L)), grand)
        is_knee = knee is None and sch >= 0.95 * full_rate
        if is_knee:
            knee = cap
        rows.append(SweepRow(layer=None, capacity=cap, sch=sch, lru=lru, knee=is_knee))
    for l in range(L):
        for cap in caps:
            rows.append(
                SweepRow(
                    layer=l, capacity=cap,
                    sch=_rate(sch_hits(l, cap), totals[l]),
                    lru=_rate(lru_hits(l, cap), totals[l]),
                    knee=False,
                )
            )
    return SweepTable(segment_m=agg.cache_m, rows=rows, full_rate=full_rate, knee_capacity=knee)


@dataclass
class SpecRow:
    layer: int
    expert: int
    activation_rate: float
    domain_cv: float | None
    vocab: dict[str, float | None]
    srp_headline: float | None
    alpha_headline: int | None


def _max_lift_arrays(
    votes: np.ndarray, occ: np.ndarray, acts: int, tokens: int, min_support: int
) -> float | None:
    if acts == 0:
        return None
    support = occ >= min_support
    if not support.any():
        return None
    lifts = (votes[support] / occ[support]) / (acts / tokens)
    return float(lifts.max())


def specialization_rows(
    agg: StreamAggregates,
    srp_table: list[SrpRow],
    headline_m: int = HEADLINE_M,
    min_support: int = 16,
) -> list[SpecRow]:
    if headline_m not in agg.m_list:
        headline_m = agg.m_list[-1]
    srp_by_expert = {
        (r.layer, r.expert): r for r in srp_table if r.scope == "expert" and r.m == headline_m
    }
    rows = []
    for l in range(agg.header.num_layers):
        for e in range(agg.header.experts_per_layer[l]):
            rate = float(agg.acts[l][e]) / agg.total_tokens
            try:
                _, cv = cv_from_counts(
                    {d: int(v[e]) for d, v in agg.domain_acts[l].items()}, agg.domain_tokens
                )
            except UndefinedCV:
                cv = None
            vocab: dict[str, float | None] = {}
            for kind in VOCAB_KINDS:
                if kind not in agg.vocab_occ:
                    vocab[kind] = None
                    continue
                vocab[kind] = _max_lift_arrays(
                    agg.vocab_votes[kind][l][e],
                    agg.vocab_occ[kind],
                    int(agg.acts[l][e]),
                    agg.total_tokens,
                    min_support,
                )
            srp_row = srp_by_expert.get((l, e))
            rows.append(
                SpecRow(
                    layer=l, expert=e, activation_rate=rate, domain_cv=cv, vocab=vocab,
                    srp_headline=None if srp_row is None or srp_row.undefined else srp_row.srp,
                    alpha_headline=None if srp_row is None or srp_row.undefined else srp_row.alpha,
                )
            )
    return rows


def correlation_summary(spec_table: list[SpecRow], headline_m: int = HEADLINE_M) -> dict:
    """Per-model correlations between specialization measures and per-expert SRP."""
    srp_vals = [r.srp_headline for r in spec_table]
    out: dict = {"m": headline_m, "pairs": {}}
    measures = {"domain_cv": [r.domain_cv for r in spec_table]}
    for kind in VOCAB_KINDS:
        measures[f"vocab_{kind}"] = [r.vocab[kind] for r in spec_table]
    for name, vals in measures.items():
        entry: dict = {"n": sum(1 for v, s in zip(vals, srp_vals) if v is not None and s is not None)}
        for method in ("pearson", "spearman"):
            try:
                entry[method] = correlate(vals, srp_vals, method)
            except DegenerateInput as e:
                entry[method] = None
                entry["reason"] = str(e)
        out["pairs"][f"{name}~srp"] = entry
    return out


# --------------------------------------------------------------------------
# bundle and rendering

@dataclass
class ReportBundle:
    model_id: str
    tool_version: str
    settings: dict
    stats: dict
    srp: list[SrpRow]
    lb: LoadBalanceReport
    spec: list[SpecRow]
    corr: dict
    sweep: SweepTable | None
    headline_m: int


def stats_dict(agg: StreamAggregates) -> dict:
    L = agg.header.num_layers
    return {
        "sequences": agg.num_sequences,
        "tokens": agg.total_tokens,
        "min_seq_len": agg.min_seq_len,
        "max_seq_len": agg.max_seq_len,
        "domains": {
            d: {"sequences": agg.domain_sequences[d], "tokens": agg.domain_tokens[d]}
            for d in sorted(agg.domain_sequences)
        },
        "per_layer_activations": [agg.layer_total_acts(l) for l in range(L)],
        "mean_activations_per_token": [
            agg.layer_total_acts(l) / agg.total_tokens if agg.total_tokens else 0.0
            for l in range(L)
        ],
        "windows": {str(m): agg.windows[m] for m in agg.m_list},
        "short_sequences": {str(m): agg.short_sequences[m] for m in agg.m_list},
    }


def build_report(agg: StreamAggregates, cfg: PipelineConfig | None = None) -> ReportBundle:
    from ._version import __version__

    cfg = cfg or PipelineConfig()
    headline = HEADLINE_M if HEADLINE_M in agg.m_list else agg.m_list[-1]
    table = srp_rows(agg)
    spec = specialization_rows(agg, table, headline, cfg.min_support)
    sweep = cache_sweep(agg, cfg.capacities) if agg.cache_m is not None else None
    settings = {
        "m_list": list(agg.m_list),
        "headline_m": headline,
        "cache_segment_m": agg.cache_m,
        "capacities": None if sweep is None else sorted({r.capacity for r in sweep.rows}),
        "min_support": cfg.min_support,
        "vocab_stats": bool(agg.vocab_occ),
    }
    return ReportBundle(
        model_id=agg.header.model_id,
        tool_version=__version__,
        settings=settings,
        stats=stats_dict(agg),
        srp=table,
        lb=load_balance(agg),
        spec=spec,
        corr=correlation_summary(spec, headline),
        sweep=sweep,
        headline_m=headline,
    )


def fmt_cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return format(x, ".6g")
    return str(x)


def _csv(header: list[str], rows: list[list]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt_cell(c) for c in row))
    return "\n".join(lines) + "\n"


def srp_csv(rows: list[SrpRow]) -> str:
    return _csv(
        ["scope", "layer", "expert", "m", "srp", "alpha", "size_ratio",
         "num_windows", "active_mass", "undefined"],
        [
            [r.scope, r.layer, r.expert, r.m, r.srp, r.alpha, r.size_ratio,
             r.num_windows, r.active_mass, r.undefined]
            for r in rows
        ],
    )


def lb_csv(lb: LoadBalanceReport) -> str:
    rows = [[str(l), sd] for l, sd in enumerate(lb.per_layer_sd)]
    rows.append(["mean", lb.mean_sd])
    rows.append(["pooled", lb.pooled_sd])
    return _csv(["layer", "activation_rate_sd"], rows)


def spec_csv(rows: list[SpecRow], headline_m: int) -> str:
    return _csv(
        ["layer", "expert", "activation_rate", "domain_cv",
         "vocab_input", "vocab_predicted", "vocab_ground_truth",
         f"srp_m{headline_m}", f"alpha_m{headline_m}"],
        [
            [r.layer, r.expert, r.activation_rate, r.domain_cv,
             r.vocab["input"], r.vocab["predicted"], r.vocab["ground_truth"],
             r.srp_headline, r.alpha_headline]
            for r in rows
        ],
    )


def sweep_csv(table: SweepTable) -> str:
    return _csv(
        ["layer", "capacity", "sch", "lru", "knee"],
        [[r.layer, r.capacity, r.sch, r.lru, r.knee] for r in table.rows],
    )


def _srp_row_json(r: SrpRow) -> dict:
    return {
        "scope": r.scope,
        "layer": r.layer,
        "expert": r.expert,
        "m": r.m,
        "srp": r.srp,
        "srp_frac": None if r.f1_num is None else [r.f1_num, r.f1_den],
        "alpha": r.alpha,
        "size_ratio": r.size_ratio,
        "num_windows": r.num_windows,
        "active_mass": r.active_mass,
        "undefined": r.undefined,
    }


def bundle_json(bundle: ReportBundle) -> dict:
    out = {
        "model_id": bundle.model_id,
        "tool_version": bundle.tool_version,
        "settings": bundle.settings,
        "stats": bundle.stats,
        "srp": [_srp_row_json(r) for r in bundle.srp],
        "load_balance": {
            "per_layer_sd": bundle.lb.per_layer_sd,
            "mean_sd": bundle.lb.mean_sd,
            "pooled_sd": bundle.lb.pooled_sd,
        },
        "specialization": [
            {
                "layer": r.layer,
                "expert": r.expert,
                "activation_rate": r.activation_rate,
                "domain_cv": r.domain_cv,
                "vocab_input": r.vocab["input"],
                "vocab_predicted": r.vocab["predicted"],
                "vocab_ground_truth": r.vocab["ground_truth"],
                "srp": r.srp_headline,
                "alpha": r.alpha_headline,
            }
            for r in bundle.spec
        ],
        "correlation": bundle.corr,
    }
    if bundle.sweep is not None:
        out["cache_sweep"] = {
            "segment_m": bundle.sweep.segment_m,
            "full_rate": bundle.sweep.full_rate,
            "knee_capacity": bundle.sweep.knee_capacity,
            "rows": [
                {"layer": r.layer, "capacity": r.capacity, "sch": r.sch,
                 "lru": r.lru, "knee": r.knee}
                for r in bundle.sweep.rows
            ],
        }
    return out


def write_report(bundle: ReportBundle, outdir: str) -> list[str]:
    import os

    os.makedirs(outdir, exist_ok=True)
    files = {
        "report.json": json.dumps(bundle_json(bundle), indent=2) + "\n",
        "srp.csv": srp_csv(bundle.srp),
        "lb.csv": lb_csv(bundle.lb),
        "spec.csv": spec_csv(bundle.spec, bundle.headline_m),
    }
    if bundle.sweep is not None:
        files["sweep.csv"] = sweep_csv(bundle.sweep)
    paths = []
    for name, text in files.items():
        p = os.path.join(outdir, name)
        with open(p, "w", encoding="utf-8") as f:
            f.write(text)
        paths.append(p)
    return paths
