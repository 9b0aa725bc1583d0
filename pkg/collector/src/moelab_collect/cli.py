"""Command-line front end, one flag per CollectorConfig field."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence as SequenceOf

from .collect import collect_trace
from .config import CollectorConfig, TextSource
from .errors import CollectorError


def _source(arg: str) -> TextSource:
    label, sep, path = arg.partition("=")
    if not sep or not label or not path:
        raise argparse.ArgumentTypeError(f"expected DOMAIN=PATH, got {arg!r}")
    return TextSource(label, path)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="moelab-collect",
        description="Record a MoE checkpoint's routing decisions over labeled text as a .moet trace.",
    )
    p.add_argument("--model", required=True, help="checkpoint path or hub id")
    p.add_argument(
        "--source",
        dest="sources",
        type=_source,
        action="append",
        required=True,
        metavar="DOMAIN=PATH",
        help="labeled text file, one document per line; repeat for more domains",
    )
    p.add_argument("--out", required=True, help="output .moet path")
    p.add_argument("--seq-len", type=int, default=512, help="tokens per sequence (default 512)")
    p.add_argument("--max-seqs", type=int, default=0, help="cap on collected sequences, 0 = no cap")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--predicted", action="store_true", help="record greedy argmax predictions")
    p.add_argument("--ground-truth", action="store_true", help="record next-token targets")
    p.add_argument("--model-id", default="", help="trace header label (default: model basename)")
    p.add_argument("--device", default="cpu")
    return p


def main(argv: Optional[SequenceOf[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = CollectorConfig(
            model=args.model,
            sources=tuple(args.sources),
            out=args.out,
            seq_len=args.seq_len,
            max_sequences=args.max_seqs,
            batch_size=args.batch_size,
            with_predicted=args.predicted,
            with_ground_truth=args.ground_truth,
            model_id=args.model_id,
            device=args.device,
        )
        result = collect_trace(config)
    except (CollectorError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    skipped = f", {result.num_skipped} short documents skipped" if result.num_skipped else ""
    print(f"wrote {result.num_sequences} sequences x {args.seq_len} tokens to {result.path}{skipped}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
