"""Trace serialization: bit-exact binary format (.moet) and JSONL debug format.

Binary layout (all integers little-endian, no varints):

    magic "MOET" | version u16 = 1 | model_id: u16 length + UTF-8 bytes
    | num_layers u32 | per layer: experts u32, top_k u16, stream_kind u8
    | vocab_size u32 | num_sequences u64
    | per sequence:
        domain: u16 length + UTF-8 | num_tokens u32
        | flags u8 (bit0: has predicted_ids, bit1: has ground_truth_ids)
        | token_ids u32 x n | [predicted_ids u32 x n] | [ground_truth_ids u32 x n]
        | per layer: per token: count u8, expert indices u32 x count
          (indices strictly increasing)

JSONL: line 1 is a header object mirroring the header fields; each further
line is ``{"domain": str, "tokens": [...], "pred": [...]?, "truth": [...]?,
"acts": [[[...], ...], ...]}`` with ``acts[layer][token]`` a sorted index list.

Decoding validates every invariant and fails with coordinates.  Layers with a
fixed nominal top-k are read and written through numpy structured arrays, so
multi-gigabyte traces stream at memory-copy speed via `TraceReader` /
`TraceWriter` without materializing Python lists.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator

import numpy as np

from .errors import BadMagic, InvariantViolation, ParseError, Truncated, UnsupportedVersion
from .trace import (
    DEFAULT_DOMAIN,
    RoutingTrace,
    Sequence,
    StreamKind,
    TraceHeader,
    _validate_header,
    validate,
)

MAGIC = b"MOET"
FORMAT_VERSION = 1


# --------------------------------------------------------------------------
# numpy-backed sequence record used by the streaming fast paths

@dataclass
class ArraySequence:
    """One sequence with numpy storage: per layer a (counts, flat-indices) pair."""

    domain: str
    token_ids: np.ndarray  # u32
    layer_counts: list[np.ndarray]  # u8 per token
    layer_flat: list[np.ndarray]  # u32, concatenated per-token index lists
    predicted_ids: np.ndarray | None = None
    ground_truth_ids: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.token_ids.shape[0])

    def to_sequence(self) -> Sequence:
        acts = []
        for counts, flat in zip(self.layer_counts, self.layer_flat):
            off = np.zeros(len(counts) + 1, dtype=np.int64)
            np.cumsum(counts, out=off[1:])
            lst = flat.tolist()
            acts.append([lst[off[t]:off[t + 1]] for t in range(len(counts))])
        return Sequence(
            token_ids=self.token_ids.tolist(),
            activations=acts,
            domain=self.domain,
            predicted_ids=None if self.predicted_ids is None else self.predicted_ids.tolist(),
            ground_truth_ids=None if self.ground_truth_ids is None else self.ground_truth_ids.tolist(),
        )

    @classmethod
    def from_sequence(cls, seq: Sequence) -> "ArraySequence":
        layer_counts, layer_flat = [], []
        for layer in seq.activations:
            counts = np.fromiter((len(a) for a in layer), dtype=np.uint8, count=len(layer))
            flat = np.fromiter((e for a in layer for e in a), dtype=np.uint32, count=int(counts.sum()))
            layer_counts.append(counts)
            layer_flat.append(flat)
        return cls(
            domain=seq.domain,
            token_ids=np.asarray(seq.token_ids, dtype=np.uint32),
            layer_counts=layer_counts,
            layer_flat=layer_flat,
            predicted_ids=None if seq.predicted_ids is None else np.asarray(seq.predicted_ids, dtype=np.uint32),
            ground_truth_ids=None
            if seq.ground_truth_ids is None
            else np.asarray(seq.ground_truth_ids, dtype=np.uint32),
        )


def _report(err: InvariantViolation, collect: list[InvariantViolation] | None) -> None:
    if collect is None:
        raise err
    collect.append(err)


def _check_layer_arrays(
    counts: np.ndarray,
    flat: np.ndarray,
    nexp: int,
    top_k: int,
    si: int,
    l: int,
    collect: list[InvariantViolation] | None = None,
) -> None:
    """Flag per-layer invariant breaks with coordinates: raise, or append to collect."""
    if top_k > 0:
        bad = counts != top_k
        if bad.any():
            t = int(np.argmax(bad))
            _report(
                InvariantViolation(
                    f"TopKMismatch: {int(counts[t])} activations where nominal top_k = {top_k}",
                    sequence=si, layer=l, token=t,
                ),
                collect,
            )
    if flat.size:
        mx = int(flat.max())
        if mx >= nexp:
            off = np.cumsum(counts.astype(np.int64))
            j = int(np.argmax(flat == mx))
            t = int(np.searchsorted(off, j, side="right"))
            _report(
                InvariantViolation(
                    f"ExpertOutOfRange: index {mx} not in [0, {nexp})",
                    sequence=si, layer=l, token=t,
                ),
                collect,
            )
    if flat.size > 1:
        d = np.diff(flat.astype(np.int64))
        same_token = np.ones(flat.size - 1, dtype=bool)
        off = np.cumsum(counts.astype(np.int64))
        boundaries = off[:-1][(off[:-1] > 0) & (off[:-1] < flat.size)]
        same_token[boundaries - 1] = False
        bad = same_token & (d <= 0)
        if bad.any():
            j = int(np.argmax(bad))
            t = int(np.searchsorted(off, j, side="right"))
            kind = "DuplicateExpert" if d[j] == 0 else "UnsortedExperts"
            _report(
                InvariantViolation(
                    f"{kind}: indices not strictly increasing within token",
                    sequence=si, layer=l, token=t,
                ),
                collect,
            )


# --------------------------------------------------------------------------
# low-level byte helpers

def _read_exact(f: BinaryIO, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise Truncated(f"expected {n} bytes, got {len(b)}")
    return b


def _read_str(f: BinaryIO) -> str:
    (n,) = struct.unpack("<H", _read_exact(f, 2))
    return _read_exact(f, n).decode("utf-8")


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise ValueError(f"string too long for u16 length prefix ({len(b)} bytes)")
    return struct.pack("<H", len(b)) + b


def _encode_header(header: TraceHeader, num_sequences: int) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", FORMAT_VERSION)
    out += _pack_str(header.model_id)
    out += struct.pack("<I", header.num_layers)
    for e, k, s in zip(header.experts_per_layer, header.nominal_top_k, header.stream_kind):
        out += struct.pack("<IHB", e, k, int(s))
    out += struct.pack("<I", header.vocab_size)
    out += struct.pack("<Q", num_sequences)
    return bytes(out)


def _decode_header(f: BinaryIO) -> tuple[TraceHeader, int]:
    magic = f.read(4)
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {magic!r}")
    (version,) = struct.unpack("<H", _read_exact(f, 2))
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"version {version} (supported: {FORMAT_VERSION})")
    model_id = _read_str(f)
    (num_layers,) = struct.unpack("<I", _read_exact(f, 4))
    experts, top_k, kinds = [], [], []
    for _ in range(num_layers):
        e, k, s = struct.unpack("<IHB", _read_exact(f, 7))
        if s not in (0, 1):
            raise InvariantViolation(f"BadStreamKind: {s}")
        experts.append(e)
        top_k.append(k)
        kinds.append(StreamKind(s))
    (vocab,) = struct.unpack("<I", _read_exact(f, 4))
    (nseq,) = struct.unpack("<Q", _read_exact(f, 8))
    header = TraceHeader(
        model_id=model_id,
        num_layers=num_layers,
        experts_per_layer=experts,
        nominal_top_k=top_k,
        vocab_size=vocab,
        stream_kind=kinds,
        format_version=version,
    )
    bad = _validate_header(header)
    if bad:
        raise InvariantViolation(str(bad[0]))
    return header, nseq


def _encode_array_sequence(header: TraceHeader, seq: ArraySequence) -> bytes:
    n = len(seq)
    flags = (1 if seq.predicted_ids is not None else 0) | (2 if seq.ground_truth_ids is not None else 0)
    parts = [_pack_str(seq.domain), struct.pack("<IB", n, flags)]
    parts.append(np.ascontiguousarray(seq.token_ids, dtype="<u4").tobytes())
    if seq.predicted_ids is not None:
        parts.append(np.ascontiguousarray(seq.predicted_ids, dtype="<u4").tobytes())
    if seq.ground_truth_ids is not None:
        parts.append(np.ascontiguousarray(seq.ground_truth_ids, dtype="<u4").tobytes())
    for counts, flat in zip(seq.layer_counts, seq.layer_flat):
        if counts.size and int(counts.max()) > 0xFF:
            raise ValueError("per-token activation count exceeds u8 range of the binary format")
        k = int(counts[0]) if n and (counts == counts[0]).all() else -1
        if k >= 0:
            # uniform count: one structured block
            rec = np.empty(n, dtype=np.dtype([("c", "u1"), ("i", "<u4", (k,))]) if k else np.dtype([("c", "u1")]))
            rec["c"] = k
            if k:
                rec["i"] = flat.reshape(n, k)
            parts.append(rec.tobytes())
        else:
            off = np.zeros(n + 1, dtype=np.int64)
            np.cumsum(counts, out=off[1:])
            buf = bytearray()
            fb = np.ascontiguousarray(flat, dtype="<u4").tobytes()
            for t in range(n):
                buf.append(int(counts[t]))
                buf += fb[off[t] * 4 : off[t + 1] * 4]
            parts.append(bytes(buf))
    return b"".join(parts)


def _decode_array_sequence(
    f: BinaryIO,
    header: TraceHeader,
    si: int,
    collect: list[InvariantViolation] | None = None,
) -> ArraySequence:
    domain = _read_str(f)
    n, flags = struct.unpack("<IB", _read_exact(f, 5))
    if flags & ~0b11:
        _report(InvariantViolation(f"UnknownFlags: {flags:#x}", sequence=si), collect)
        flags &= 0b11
    token_ids = np.frombuffer(_read_exact(f, 4 * n), dtype="<u4")
    pred = np.frombuffer(_read_exact(f, 4 * n), dtype="<u4") if flags & 1 else None
    truth = np.frombuffer(_read_exact(f, 4 * n), dtype="<u4") if flags & 2 else None
    layer_counts, layer_flat = [], []
    for l in range(header.num_layers):
        k = header.nominal_top_k[l]
        if k > 0:
            raw = _read_exact(f, n * (1 + 4 * k))
            rec = np.frombuffer(raw, dtype=np.dtype([("c", "u1"), ("i", "<u4", (k,))]))
            counts = rec["c"]
            flat = np.ascontiguousarray(rec["i"]).reshape(-1)
        else:
            counts = np.empty(n, dtype=np.uint8)
            chunks = []
            for t in range(n):
                (c,) = _read_exact(f, 1)
                counts[t] = c
                chunks.append(_read_exact(f, 4 * c))
            flat = np.frombuffer(b"".join(chunks), dtype="<u4")
        _check_layer_arrays(counts, flat, header.experts_per_layer[l], k, si, l, collect)
        layer_counts.append(counts)
        layer_flat.append(flat)
    return ArraySequence(
        domain=domain,
        token_ids=token_ids,
        layer_counts=layer_counts,
        layer_flat=layer_flat,
        predicted_ids=pred,
        ground_truth_ids=truth,
    )


# --------------------------------------------------------------------------
# public binary API

def encode_binary(trace: RoutingTrace) -> bytes:
    """Serialize a valid trace; deterministic (same trace, same bytes)."""
    parts = [_encode_header(trace.header, len(trace.sequences))]
    for seq in trace.sequences:
        parts.append(_encode_array_sequence(trace.header, ArraySequence.from_sequence(seq)))
    return b"".join(parts)


def decode_binary(data: bytes) -> RoutingTrace:
    """Parse bytes into a trace, checking every invariant along the way."""
    f = io.BytesIO(data)
    header, nseq = _decode_header(f)
    seqs = []
    for si in range(nseq):
        seqs.append(_decode_array_sequence(f, header, si).to_sequence())
    if f.read(1):
        raise InvariantViolation("TrailingBytes: data after final sequence")
    return RoutingTrace(header=header, sequences=seqs)


class TraceReader:
    """Streaming binary reader: header up front, sequences on demand.

    Use for traces too large to hold as Python lists; yields `ArraySequence`.
    """

    def __init__(self, path: str):
        self._f = open(path, "rb")
        try:
            self.header, self.num_sequences = _decode_header(self._f)
        except Exception:
            self._f.close()
            raise

    def __iter__(self) -> Iterator[ArraySequence]:
        for si in range(self.num_sequences):
            yield _decode_array_sequence(self._f, self.header, si)

    def close(self) -> None:
        self._f.close()

    def __enter__(self) -> "TraceReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class TraceWriter:
    """Streaming binary writer; sequence count is patched into the header on close."""

    def __init__(self, path: str, header: TraceHeader):
        self.header = header
        self._f = open(path, "wb")
        self._head = _encode_header(header, 0)
        self._f.write(self._head)
        self._count = 0

    def write(self, seq: Sequence | ArraySequence) -> None:
        if isinstance(seq, Sequence):
            seq = ArraySequence.from_sequence(seq)
        self._f.write(_encode_array_sequence(self.header, seq))
        self._count += 1

    def close(self) -> None:
        if self._f.closed:
            return
        self._f.seek(len(self._head) - 8)
        self._f.write(struct.pack("<Q", self._count))
        self._f.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def scan_binary(path: str) -> tuple[TraceHeader, list[InvariantViolation]]:
    """Walk a binary trace collecting invariant violations instead of stopping.

    Structural damage (bad magic, truncation, undecodable header) still
    raises; everything content-level is accumulated with coordinates.
    """
    violations: list[InvariantViolation] = []
    with open(path, "rb") as f:
        header, nseq = _decode_header(f)
        for si in range(nseq):
            _decode_array_sequence(f, header, si, collect=violations)
        if f.read(1):
            violations.append(InvariantViolation("TrailingBytes: data after final sequence"))
    return header, violations


# --------------------------------------------------------------------------
# JSONL debug format

def _header_to_json(header: TraceHeader) -> dict:
    return {
        "format_version": header.format_version,
        "model_id": header.model_id,
        "num_layers": header.num_layers,
        "experts_per_layer": header.experts_per_layer,
        "nominal_top_k": header.nominal_top_k,
        "vocab_size": header.vocab_size,
        "stream_kind": [s.label for s in header.stream_kind],
    }


def dump_jsonl(trace: RoutingTrace) -> str:
    lines = [json.dumps(_header_to_json(trace.header), separators=(",", ":"))]
    for seq in trace.sequences:
        obj: dict = {"domain": seq.domain, "tokens": seq.token_ids}
        if seq.predicted_ids is not None:
            obj["pred"] = seq.predicted_ids
        if seq.ground_truth_ids is not None:
            obj["truth"] = seq.ground_truth_ids
        obj["acts"] = seq.activations
        lines.append(json.dumps(obj, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def _require(cond: bool, line: int, msg: str) -> None:
    if not cond:
        raise ParseError(line, msg)


def load_jsonl(text: str) -> RoutingTrace:
    lines = text.splitlines()
    _require(bool(lines), 1, "empty input")
    try:
        hd = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(1, f"bad JSON: {e}") from None
    _require(isinstance(hd, dict), 1, "header line must be an object")
    try:
        kinds = [StreamKind.from_label(s) for s in hd.get("stream_kind", [])]
        header = TraceHeader(
            model_id=hd["model_id"],
            num_layers=int(hd["num_layers"]),
            experts_per_layer=[int(x) for x in hd["experts_per_layer"]],
            nominal_top_k=[int(x) for x in hd["nominal_top_k"]],
            vocab_size=int(hd.get("vocab_size", 0)),
            stream_kind=kinds,
            format_version=int(hd.get("format_version", FORMAT_VERSION)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(1, f"bad header: {e}") from None
    if header.format_version != FORMAT_VERSION:
        raise UnsupportedVersion(f"version {header.format_version} (supported: {FORMAT_VERSION})")
    seqs = []
    for ln, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ParseError(ln, f"bad JSON: {e}") from None
        _require(isinstance(obj, dict), ln, "sequence line must be an object")
        _require("tokens" in obj and "acts" in obj, ln, 'sequence needs "tokens" and "acts"')
        seqs.append(
            Sequence(
                token_ids=obj["tokens"],
                activations=obj["acts"],
                domain=obj.get("domain", DEFAULT_DOMAIN),
                predicted_ids=obj.get("pred"),
                ground_truth_ids=obj.get("truth"),
            )
        )
    trace = RoutingTrace(header=header, sequences=seqs)
    bad = validate(trace)
    if bad:
        v = bad[0]
        raise InvariantViolation(f"{v.kind}: {v.message}", sequence=v.sequence, layer=v.layer, token=v.token)
    return trace


# --------------------------------------------------------------------------
# path-level convenience

def write_trace(path: str, trace: RoutingTrace) -> None:
    if path.endswith(".jsonl"):
        with open(path, "w", encoding="utf-8") as f:
            f.write(dump_jsonl(trace))
    else:
        with open(path, "wb") as f:
            f.write(encode_binary(trace))


def read_trace(path: str) -> RoutingTrace:
    if path.endswith(".jsonl"):
        with open(path, encoding="utf-8") as f:
            return load_jsonl(f.read())
    with open(path, "rb") as f:
        return decode_binary(f.read())
