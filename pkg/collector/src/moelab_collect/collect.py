"""Run a checkpoint over labeled text and record its routing decisions.

The loop is a plain single-process batch walk over the dataset: tokenize
everything up front, forward one batch at a time with router hooks
armed, and write the trace when the last batch is done.  Output order is
dataset order regardless of batch size, and nothing here is stochastic,
so the same config always produces byte-identical traces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np
import torch

from .adapters import RouterTap, resolve_adapter
from .config import CollectorConfig, TextSource
from .errors import (
    CollectorError,
    StreamNotSupported,
    TokenizationUnderflow,
    UnsupportedArchitecture,
)
from .writer import CollectedSequence, LayerSpec, write_moet


@dataclass
class CollectResult:
    """What a collection run produced."""

    path: str
    num_sequences: int
    num_skipped: int  # documents below seq_len tokens
    layers: List[LayerSpec]


def iter_documents(sources) -> Iterator[Tuple[str, str]]:
    """Yield (domain, text) pairs in dataset order.

    Each source file contributes its non-empty lines, one document per
    line, in file order; sources are visited in the order given.
    """
    for src in sources:
        with open(src.path, encoding="utf-8") as f:
            for line in f:
                text = line.strip()
                if text:
                    yield src.domain, text


class _TapRecorder:
    """Forward hooks that stash each tap's output, one firing per pass."""

    def __init__(self, taps: List[RouterTap]):
        self.taps = taps
        self.slots: List[Optional[torch.Tensor]] = [None] * len(taps)
        self.handles = [tap.module.register_forward_hook(self._hook(i)) for i, tap in enumerate(taps)]

    def _hook(self, i: int):
        def record(module, args, output):
            if self.slots[i] is not None:
                raise CollectorError(f"router {self.taps[i].name} fired twice in one forward pass")
            self.slots[i] = self.taps[i].extract(output)

        return record

    def take(self) -> List[torch.Tensor]:
        for tap, slot in zip(self.taps, self.slots):
            if slot is None:
                raise CollectorError(f"router {tap.name} did not fire during the forward pass")
        out = [s for s in self.slots if s is not None]
        self.slots = [None] * len(self.taps)
        return out

    def close(self):
        for h in self.handles:
            h.remove()


def _tokenize_documents(config: CollectorConfig, tokenizer) -> Tuple[List[Tuple[str, List[int]]], int]:
    kept: List[Tuple[str, List[int]]] = []
    skipped = 0
    seen_any = False
    for domain, text in iter_documents(config.sources):
        seen_any = True
        ids = tokenizer(text)["input_ids"]
        if len(ids) < config.seq_len:
            skipped += 1
            continue
        kept.append((domain, ids[: config.seq_len]))
        if config.max_sequences and len(kept) >= config.max_sequences:
            break
    if not kept:
        if seen_any:
            raise TokenizationUnderflow(
                f"all {skipped} documents tokenized to fewer than seq_len={config.seq_len} tokens"
            )
        raise CollectorError("sources contain no documents")
    return kept, skipped


def collect_trace(config: CollectorConfig) -> CollectResult:
    """Collect routing decisions per CollectorConfig and write a .moet file.

    Raises UnsupportedArchitecture for checkpoints outside the adapter
    allowlist, TokenizationUnderflow when no document reaches seq_len,
    and StreamNotSupported when prediction streams are requested from an
    input-only adapter.
    """
    from transformers import AutoConfig, AutoTokenizer

    model_cfg = AutoConfig.from_pretrained(config.model)
    adapter = resolve_adapter(model_cfg.model_type)
    if (config.with_predicted or config.with_ground_truth) and not adapter.lm_streams:
        raise StreamNotSupported(
            f"{model_cfg.model_type!r} collection is input-only; predicted and "
            "ground-truth streams need a decoder-only language model"
        )

    tokenizer = AutoTokenizer.from_pretrained(config.model)
    kept, skipped = _tokenize_documents(config, tokenizer)

    model = adapter.load(config.model, config.device)
    taps = adapter.taps(model)
    if not taps:
        raise UnsupportedArchitecture(f"{config.model}: no hookable router modules found")

    eos = tokenizer.eos_token_id
    eos = int(eos) if eos is not None else 0

    recorder = _TapRecorder(taps)
    sequences: List[CollectedSequence] = []
    try:
        with torch.no_grad():
            for start in range(0, len(kept), config.batch_size):
                chunk = kept[start : start + config.batch_size]
                ids = torch.tensor([toks for _, toks in chunk], dtype=torch.long, device=config.device)
                logits = adapter.forward(model, ids)
                routed = recorder.take()
                bsz, n = ids.shape
                pred = None
                if config.with_predicted:
                    if logits is None:
                        raise StreamNotSupported("model forward produced no language-model logits")
                    pred = logits.argmax(dim=-1).to("cpu", torch.int64).numpy()
                for b, (domain, toks) in enumerate(chunk):
                    per_layer = []
                    for tap, out in zip(taps, routed):
                        rows = out.reshape(bsz, n, tap.top_k)[b].numpy()
                        per_layer.append(np.sort(rows, axis=1))
                    tok = np.asarray(toks, dtype=np.int64)
                    truth = np.concatenate([tok[1:], [eos]]) if config.with_ground_truth else None
                    sequences.append(
                        CollectedSequence(
                            domain=domain,
                            token_ids=tok,
                            expert_ids=per_layer,
                            predicted_ids=pred[b] if pred is not None else None,
                            ground_truth_ids=truth,
                        )
                    )
    finally:
        recorder.close()

    layers = [LayerSpec(tap.num_experts, tap.top_k, tap.stream) for tap in taps]
    vocab_size = int(getattr(model_cfg, "vocab_size", 0) or 0)
    write_moet(config.out, config.header_model_id(), layers, vocab_size, sequences)
    return CollectResult(config.out, len(sequences), skipped, layers)
