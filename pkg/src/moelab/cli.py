"""Command-line entry point.

Subcommands cover ingestion (convert, validate, stats), metrics (srp, sch,
lb, spec, corr), generation (synth), and the combined report.  Every
analytics subcommand funnels through the same streaming aggregation as
`report`, so values agree across commands by construction.

Exit codes: 0 success, 1 invariant violations or analysis errors, 2 usage.
Outputs are deterministic for a fixed command line; worker threads
(--threads, falling back to MOELAB_THREADS, then CPU count) never affect
emitted bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import report as rp
from ._version import __version__
from .codec import read_trace, scan_binary, write_trace
from .errors import MoelabError
from .srp import srp_per_position
from .synth import GENERATOR_KINDS, DEFAULT_DOMAINS, GeneratorConfig, write_synthetic
from .trace import ExpertKey, validate


def _default_threads() -> int:
    env = os.environ.get("MOELAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _write_out(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


def _aggregate(args, m_list, cache_m, with_vocab=False, min_support=16):
    cfg = rp.PipelineConfig(
        m_list=tuple(m_list),
        cache_m=cache_m,
        threads=args.threads,
        with_vocab=with_vocab,
        min_support=min_support,
    )
    if args.trace.endswith(".jsonl"):
        return rp.aggregate_trace(read_trace(args.trace), cfg), cfg
    return rp.aggregate_file(args.trace, cfg), cfg


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moelab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"moelab {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--trace", required=True, help="input trace (.moet or .jsonl)")
    common.add_argument("--threads", type=int, default=_default_threads(),
                        help="worker threads (default: MOELAB_THREADS or CPU count)")

    c = sub.add_parser("convert", help="re-encode a trace; format chosen by file extension")
    c.add_argument("--in", dest="src", required=True)
    c.add_argument("--out", required=True)

    v = sub.add_parser("validate", help="check a trace against every format invariant")
    v.add_argument("--trace", required=True)
    v.add_argument("--max-violations", type=int, default=50)

    s = sub.add_parser("stats", help="corpus totals per domain and layer", parents=[common])
    s.add_argument("--out", default=None)

    r = sub.add_parser("srp", help="segment routing best performance", parents=[common])
    r.add_argument("--m", type=_int_list, default=list(rp.DEFAULT_M_LIST),
                   help="comma-separated segment lengths")
    r.add_argument("--scope", choices=["model", "layer", "expert", "all"], default="model")
    r.add_argument("--per-position", action="store_true",
                   help="per window start position instead of pooled (model scope)")
    r.add_argument("--out", default=None)

    h = sub.add_parser("sch", help="segment-cache and LRU hit-rate sweep", parents=[common])
    h.add_argument("--m", type=int, default=rp.HEADLINE_M, help="cache segment length")
    h.add_argument("--capacities", type=_int_list, default=None)
    h.add_argument("--out", default=None)

    b = sub.add_parser("lb", help="load balance: activation-rate SD", parents=[common])
    b.add_argument("--out", default=None)

    e = sub.add_parser("spec", help="per-expert specialization table", parents=[common])
    e.add_argument("--m", type=int, default=rp.HEADLINE_M)
    e.add_argument("--vocab", action="store_true", help="include per-token-id lift scores")
    e.add_argument("--min-support", type=int, default=16)
    e.add_argument("--out", default=None)

    k = sub.add_parser("corr", help="specialization vs SRP correlation", parents=[common])
    k.add_argument("--m", type=int, default=rp.HEADLINE_M)
    k.add_argument("--vocab", action="store_true")
    k.add_argument("--min-support", type=int, default=16)
    k.add_argument("--out", default=None)

    g = sub.add_parser("synth", help="generate a synthetic trace")
    g.add_argument("--config", default=None, help="JSON file with defaults for these flags")
    g.add_argument("--gen", choices=list(GENERATOR_KINDS), default="iid")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--experts", type=int, default=64)
    g.add_argument("--topk", type=int, default=8)
    g.add_argument("--layers", type=int, default=1)
    g.add_argument("--seqs", type=int, default=64)
    g.add_argument("--len", dest="seq_len", type=int, default=512)
    g.add_argument("--vocab-size", type=int, default=32000)
    g.add_argument("--sigma", type=float, default=0.0, help="per-expert logit spread")
    g.add_argument("--rho", type=float, default=0.0, help="sticky persistence")
    g.add_argument("--domains", default=",".join(DEFAULT_DOMAINS))
    g.add_argument("--boost", type=_float_list, default=[0.0],
                   help="domain logit boost: one value, or one per domain")
    g.add_argument("--model-id", default=None)
    g.add_argument("--out", required=True)

    t = sub.add_parser("report", help="full analytics bundle into a directory", parents=[common])
    t.add_argument("--m", type=_int_list, default=list(rp.DEFAULT_M_LIST))
    t.add_argument("--cache-m", type=int, default=rp.HEADLINE_M)
    t.add_argument("--capacities", type=_int_list, default=None)
    t.add_argument("--vocab", action="store_true")
    t.add_argument("--min-support", type=int, default=16)
    t.add_argument("--out", required=True, help="output directory")

    o = sub.add_parser("oracle-check", parents=[common])  # debugging aid, not in docs
    o.add_argument("--m", type=int, default=2)
    o.add_argument("--experts", default="0:0", help="comma-separated layer:index pairs")
    return p


def _cmd_convert(args) -> int:
    write_trace(args.out, read_trace(args.src))
    return 0


def _cmd_validate(args) -> int:
    if args.trace.endswith(".jsonl"):
        trace = read_trace(args.trace)  # raises on first violation
        bad = validate(trace)
    else:
        _, bad = scan_binary(args.trace)
    if not bad:
        print("ok")
        return 0
    for v in bad[: args.max_violations]:
        print(str(v), file=sys.stderr)
    if len(bad) > args.max_violations:
        print(f"... and {len(bad) - args.max_violations} more", file=sys.stderr)
    print(f"{len(bad)} violation(s)", file=sys.stderr)
    return 1


def _cmd_stats(args) -> int:
    agg, _ = _aggregate(args, m_list=(), cache_m=None)
    _write_out(args.out, json.dumps(rp.stats_dict(agg), indent=2) + "\n")
    return 0


def _cmd_srp(args) -> int:
    if args.per_position:
        trace = read_trace(args.trace)
        keys = [
            ExpertKey(l, i)
            for l in range(trace.header.num_layers)
            for i in range(trace.header.experts_per_layer[l])
        ]
        if len(args.m) != 1:
            raise MoelabError("--per-position expects a single --m value")
        res = srp_per_position(trace, keys, args.m[0])
        rows = [
            [p, None if r is None else r.srp, None if r is None else r.alpha, r is None]
            for p, r in enumerate(res)
        ]
        _write_out(args.out, rp._csv(["position", "srp", "alpha", "undefined"], rows))
        return 0
    agg, _ = _aggregate(args, m_list=args.m, cache_m=None)
    rows = rp.srp_rows(agg)
    if args.scope != "all":
        rows = [r for r in rows if r.scope == args.scope]
    if args.out and args.out.endswith(".json"):
        _write_out(args.out, json.dumps([rp._srp_row_json(r) for r in rows], indent=2) + "\n")
    else:
        _write_out(args.out, rp.srp_csv(rows))
    return 0


def _cmd_sch(args) -> int:
    agg, _ = _aggregate(args, m_list=(), cache_m=args.m)
    table = rp.cache_sweep(agg, tuple(args.capacities) if args.capacities else None)
    if args.out and args.out.endswith(".json"):
        payload = {
            "segment_m": table.segment_m,
            "full_rate": table.full_rate,
            "knee_capacity": table.knee_capacity,
            "rows": [
                {"layer": r.layer, "capacity": r.capacity, "sch": r.sch, "lru": r.lru,
                 "knee": r.knee}
                for r in table.rows
            ],
        }
        _write_out(args.out, json.dumps(payload, indent=2) + "\n")
    else:
        _write_out(args.out, rp.sweep_csv(table))
    return 0


def _cmd_lb(args) -> int:
    agg, _ = _aggregate(args, m_list=(), cache_m=None)
    _write_out(args.out, rp.lb_csv(rp.load_balance(agg)))
    return 0


def _cmd_spec(args) -> int:
    agg, _ = _aggregate(
        args, m_list=(args.m,), cache_m=None, with_vocab=args.vocab, min_support=args.min_support
    )
    rows = rp.specialization_rows(agg, rp.srp_rows(agg), args.m, args.min_support)
    _write_out(args.out, rp.spec_csv(rows, args.m))
    return 0


def _cmd_corr(args) -> int:
    agg, _ = _aggregate(
        args, m_list=(args.m,), cache_m=None, with_vocab=args.vocab, min_support=args.min_support
    )
    rows = rp.specialization_rows(agg, rp.srp_rows(agg), args.m, args.min_support)
    _write_out(args.out, json.dumps(rp.correlation_summary(rows, args.m), indent=2) + "\n")
    return 0


def _cmd_synth(args) -> int:
    domains = tuple(d for d in args.domains.split(",") if d)
    boost = args.boost[0] if len(args.boost) == 1 else args.boost
    cfg = GeneratorConfig(
        seed=args.seed,
        num_layers=args.layers,
        experts_per_layer=args.experts,
        top_k=args.topk,
        num_sequences=args.seqs,
        seq_len=args.seq_len,
        vocab_size=args.vocab_size,
        logit_skew=args.sigma,
        persistence=args.rho,
        domains=domains,
        domain_boost=boost,
        model_id=args.model_id,
    )
    write_synthetic(cfg, args.gen, args.out)
    return 0


def _cmd_report(args) -> int:
    cfg = rp.PipelineConfig(
        m_list=tuple(args.m),
        cache_m=args.cache_m,
        capacities=tuple(args.capacities) if args.capacities else None,
        threads=args.threads,
        with_vocab=args.vocab,
        min_support=args.min_support,
    )
    if args.trace.endswith(".jsonl"):
        agg = rp.aggregate_trace(read_trace(args.trace), cfg)
    else:
        agg = rp.aggregate_file(args.trace, cfg)
    for path in rp.write_report(rp.build_report(agg, cfg), args.out):
        print(path)
    return 0


def _cmd_oracle_check(args) -> int:
    from fractions import Fraction

    from .oracle import brute_force_srp_enum
    from .srp import srp_group

    trace = read_trace(args.trace)
    keys = []
    for part in args.experts.split(","):
        l, i = part.split(":")
        keys.append(ExpertKey(int(l), int(i)))
    enum = brute_force_srp_enum(trace, keys, args.m)
    print(f"enum best F1 = {enum.best_f1} (undefined: {enum.undefined})")
    if not enum.undefined:
        scan = srp_group(trace, keys, args.m)
        print(f"scan = {Fraction(scan.f1_num, scan.f1_den)} alpha = {scan.alpha}")
        match = Fraction(scan.f1_num, scan.f1_den) == enum.best_f1
        print("MATCH" if match else "MISMATCH")
        return 0 if match else 1
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    # a synth --config file provides defaults; explicit flags still win
    if "synth" in argv[:1] and "--config" in argv:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv[1:])
        if known.config:
            with open(known.config, encoding="utf-8") as f:
                loaded = json.load(f)
            parser = _build_parser()
            for action in parser._subparsers._group_actions[0].choices["synth"]._actions:
                if action.dest in loaded:
                    action.default = loaded[action.dest]
            args = parser.parse_args(argv)
            return _dispatch(args)
    args = _build_parser().parse_args(argv)
    return _dispatch(args)


def _dispatch(args) -> int:
    handlers = {
        "convert": _cmd_convert,
        "validate": _cmd_validate,
        "stats": _cmd_stats,
        "srp": _cmd_srp,
        "sch": _cmd_sch,
        "lb": _cmd_lb,
        "spec": _cmd_spec,
        "corr": _cmd_corr,
        "synth": _cmd_synth,
        "report": _cmd_report,
        "oracle-check": _cmd_oracle_check,
    }
    try:
        return handlers[args.cmd](args)
    except MoelabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
