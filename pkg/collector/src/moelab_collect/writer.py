"""Binary .moet trace writer.

All integers are little-endian:

    magic "MOET" | format version u16 | model_id u16 length + utf-8
    num_layers u32
    per layer: experts u32 | nominal top_k u16 (0 = varies) | stream u8
    vocab_size u32 (0 = unknown) | num_sequences u64
    per sequence:
        domain u16 length + utf-8 | num_tokens u32 | flags u8
        token_ids u32 * n
        predicted_ids u32 * n    when flags bit 0
        ground_truth_ids u32 * n when flags bit 1
        per layer, per token: count u8 | expert ids u32 * count, ascending

Stream codes are 0 for decoder and 1 for encoder token streams.  This
module is deliberately independent of the analyzer package; the byte
format itself is the contract between the two, and the analyzer's
validator is the referee.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence as SequenceOf

import numpy as np

MAGIC = b"MOET"
FORMAT_VERSION = 1
STREAM_CODES = {"decoder": 0, "encoder": 1}


@dataclass(frozen=True)
class LayerSpec:
    """Static shape of one routed layer."""

    num_experts: int
    top_k: int  # 0 means per-token activation counts vary
    stream: str = "decoder"

    def __post_init__(self):
        if self.num_experts < 1:
            raise ValueError(f"num_experts must be >= 1, got {self.num_experts}")
        if not 0 <= self.top_k <= 0xFF:
            raise ValueError(f"top_k must fit a u8 count, got {self.top_k}")
        if self.stream not in STREAM_CODES:
            raise ValueError(f"stream must be one of {sorted(STREAM_CODES)}, got {self.stream!r}")


@dataclass
class CollectedSequence:
    """One document's token stream and routing decisions.

    `expert_ids` holds one (n, k) integer array per layer with each row
    sorted ascending; k may differ between layers but not within one.
    """

    domain: str
    token_ids: np.ndarray
    expert_ids: SequenceOf[np.ndarray]
    predicted_ids: Optional[np.ndarray] = None
    ground_truth_ids: Optional[np.ndarray] = None


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise ValueError("string field exceeds u16 length prefix")
    return struct.pack("<H", len(b)) + b


def _check_ids(name: str, ids: np.ndarray, n: int) -> np.ndarray:
    arr = np.ascontiguousarray(ids, dtype=np.int64)
    if arr.shape != (n,):
        raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
    if arr.size and (arr.min() < 0 or arr.max() > 0xFFFFFFFF):
        raise ValueError(f"{name} outside u32 range")
    return arr


def _encode_layer(arr: np.ndarray, spec: LayerSpec, n: int, si: int, li: int) -> bytes:
    rows = np.ascontiguousarray(arr, dtype=np.int64)
    if rows.ndim != 2 or rows.shape[0] != n:
        raise ValueError(f"sequence {si} layer {li}: expert array shape {rows.shape} for {n} tokens")
    k = rows.shape[1]
    if k > 0xFF:
        raise ValueError(f"sequence {si} layer {li}: {k} experts per token exceeds the u8 count")
    if rows.size:
        if rows.min() < 0 or rows.max() >= spec.num_experts:
            raise ValueError(f"sequence {si} layer {li}: expert id outside [0, {spec.num_experts})")
        if k > 1 and not (np.diff(rows, axis=1) > 0).all():
            raise ValueError(f"sequence {si} layer {li}: expert ids must be strictly increasing per token")
    if k == 0:
        return bytes(n)  # count byte of zero per token
    rec = np.empty(n, dtype=np.dtype([("c", "u1"), ("i", "<u4", (k,))]))
    rec["c"] = k
    rec["i"] = rows
    return rec.tobytes()


def _encode_sequence(seq: CollectedSequence, layers: SequenceOf[LayerSpec], si: int) -> bytes:
    raw = np.ascontiguousarray(seq.token_ids, dtype=np.int64)
    if raw.ndim != 1:
        raise ValueError(f"sequence {si} token_ids must be one-dimensional")
    n = raw.shape[0]
    tokens = _check_ids(f"sequence {si} token_ids", raw, n)
    if len(seq.expert_ids) != len(layers):
        raise ValueError(f"sequence {si} has {len(seq.expert_ids)} expert layers for {len(layers)} declared")
    flags = (1 if seq.predicted_ids is not None else 0) | (2 if seq.ground_truth_ids is not None else 0)
    parts = [_pack_str(seq.domain), struct.pack("<IB", n, flags)]
    parts.append(tokens.astype("<u4").tobytes())
    if seq.predicted_ids is not None:
        parts.append(_check_ids(f"sequence {si} predicted_ids", seq.predicted_ids, n).astype("<u4").tobytes())
    if seq.ground_truth_ids is not None:
        parts.append(_check_ids(f"sequence {si} ground_truth_ids", seq.ground_truth_ids, n).astype("<u4").tobytes())
    for li, (arr, spec) in enumerate(zip(seq.expert_ids, layers)):
        parts.append(_encode_layer(arr, spec, n, si, li))
    return b"".join(parts)


def encode_trace(
    model_id: str,
    layers: SequenceOf[LayerSpec],
    vocab_size: int,
    sequences: SequenceOf[CollectedSequence],
) -> bytes:
    if not layers:
        raise ValueError("need at least one layer")
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION), _pack_str(model_id), struct.pack("<I", len(layers))]
    for spec in layers:
        parts.append(struct.pack("<IHB", spec.num_experts, spec.top_k, STREAM_CODES[spec.stream]))
    parts.append(struct.pack("<I", vocab_size))
    parts.append(struct.pack("<Q", len(sequences)))
    for si, seq in enumerate(sequences):
        parts.append(_encode_sequence(seq, layers, si))
    return b"".join(parts)


def write_moet(
    path: str,
    model_id: str,
    layers: SequenceOf[LayerSpec],
    vocab_size: int,
    sequences: SequenceOf[CollectedSequence],
) -> int:
    """Encode and write a trace file, returning the byte count."""
    blob = encode_trace(model_id, layers, vocab_size, sequences)
    with open(path, "wb") as f:
        f.write(blob)
    return len(blob)
