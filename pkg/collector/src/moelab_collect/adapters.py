"""Architecture adapters: where the routers live and how to read them.

Hook points differ per model family, so the collector carries a short
allowlist and refuses anything else instead of guessing at module names.
An adapter knows three things about its family: how to load the
checkpoint, which modules carry the per-token routing decision, and how
to turn a hooked output into expert indices.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, List

import torch
from torch import nn

from .errors import UnsupportedArchitecture


@dataclass
class RouterTap:
    """One hookable router site, listed in model layer order."""

    name: str  # qualified module name, for diagnostics
    module: nn.Module
    num_experts: int
    top_k: int
    stream: str  # "decoder" or "encoder"
    extract: Callable[[object], torch.Tensor]  # hook output -> (tokens, top_k) indices


def _layer_ordinal(name: str, pattern: str, fallback: int) -> int:
    m = re.search(pattern, name)
    return int(m.group(1)) if m else fallback


class MixtralAdapter:
    """Decoder-only Mixtral-style routing: top-k of E experts per layer.

    Each layer's gate module returns (logits, weights, indices) and the
    indices are exactly what the expert dispatch uses, so the tap reads
    them back instead of recomputing a top-k that might break ties
    differently.
    """

    model_types = ("mixtral",)
    lm_streams = True

    def load(self, ref: str, device: str) -> nn.Module:
        from transformers import AutoModelForCausalLM

        model = AutoModelForCausalLM.from_pretrained(ref)
        return model.float().eval().to(device)

    def taps(self, model: nn.Module) -> List[RouterTap]:
        from transformers.models.mixtral.modeling_mixtral import MixtralTopKRouter

        def take_indices(output) -> torch.Tensor:
            # (tokens, top_k) straight from the router
            return output[2].detach().to("cpu", torch.int64)

        found = []
        for name, mod in model.named_modules():
            if isinstance(mod, MixtralTopKRouter):
                ordinal = _layer_ordinal(name, r"\.layers\.(\d+)\.", len(found))
                found.append((ordinal, name, mod))
        found.sort(key=lambda item: item[0])
        return [
            RouterTap(name, mod, int(mod.num_experts), int(mod.top_k), "decoder", take_indices)
            for _, name, mod in found
        ]

    def forward(self, model: nn.Module, input_ids: torch.Tensor):
        return model(input_ids=input_ids).logits


class SwitchTransformersAdapter:
    """Encoder-decoder Switch-style routing: top-1 on sparse FF layers.

    Only the encoder stack is collected.  Encoder routing depends on the
    encoder token stream alone, so the pass runs just that stack and the
    emitted layers are tagged with the encoder stream.  The router's own
    output applies capacity masking after choosing an expert; the tap
    hooks the classifier underneath it and takes the argmax, which is the
    routing decision itself.
    """

    model_types = ("switch_transformers",)
    lm_streams = False

    def load(self, ref: str, device: str) -> nn.Module:
        from transformers import SwitchTransformersForConditionalGeneration

        model = SwitchTransformersForConditionalGeneration.from_pretrained(ref)
        return model.float().eval().to(device)

    def taps(self, model: nn.Module) -> List[RouterTap]:
        from transformers.models.switch_transformers.modeling_switch_transformers import (
            SwitchTransformersTop1Router,
        )

        def take_argmax(output) -> torch.Tensor:
            return output.detach().argmax(dim=-1, keepdim=True).to("cpu", torch.int64)

        found = []
        for name, mod in model.named_modules():
            if name.startswith("encoder.") and isinstance(mod, SwitchTransformersTop1Router):
                ordinal = _layer_ordinal(name, r"\.block\.(\d+)\.", len(found))
                found.append((ordinal, name + ".classifier", mod.classifier, int(mod.num_experts)))
        found.sort(key=lambda item: item[0])
        return [
            RouterTap(name, mod, num_experts, 1, "encoder", take_argmax)
            for _, name, mod, num_experts in found
        ]

    def forward(self, model: nn.Module, input_ids: torch.Tensor):
        model.encoder(input_ids=input_ids)
        return None


_ADAPTERS = (MixtralAdapter, SwitchTransformersAdapter)


def supported_model_types() -> List[str]:
    return sorted(t for cls in _ADAPTERS for t in cls.model_types)


def resolve_adapter(model_type: str):
    for cls in _ADAPTERS:
        if model_type in cls.model_types:
            return cls()
    raise UnsupportedArchitecture(
        f"no router adapter for model type {model_type!r} "
        f"(supported: {', '.join(supported_model_types())})"
    )
