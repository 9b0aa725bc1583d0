import json
import os
import random
import subprocess

import pytest

os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")
os.environ.setdefault("TRANSFORMERS_VERBOSITY", "error")
os.environ.setdefault("HF_HUB_OFFLINE", "1")

import torch  # noqa: E402

WORDS = (
    "the quick brown fox jumps over lazy dog a of to in is was for on as "
    "with his they at be this have from or had by hot but some what there "
    "we can out other were all your when up use word how said an each"
).split()

VOCAB_SIZE = 64  # model embedding rows; tokenizer ids stay well below


def _save_tokenizer(save_dir):
    from tokenizers import Tokenizer, models, pre_tokenizers
    from transformers import PreTrainedTokenizerFast

    vocab = {"<pad>": 0, "<unk>": 1, "</s>": 2}
    for w in WORDS:
        vocab[w] = len(vocab)
    tok = Tokenizer(models.WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok, pad_token="<pad>", unk_token="<unk>", eos_token="</s>"
    )
    fast.save_pretrained(save_dir)


@pytest.fixture(scope="session")
def mixtral_dir(tmp_path_factory):
    """Tiny randomly initialized Mixtral-architecture checkpoint on disk."""
    from transformers import MixtralConfig, MixtralForCausalLM

    d = tmp_path_factory.mktemp("tiny-mixtral")
    _save_tokenizer(d)
    cfg = MixtralConfig(
        vocab_size=VOCAB_SIZE,
        hidden_size=32,
        intermediate_size=56,
        num_hidden_layers=2,
        num_attention_heads=4,
        num_key_value_heads=2,
        num_local_experts=4,
        num_experts_per_tok=2,
        max_position_embeddings=128,
    )
    torch.manual_seed(7)
    MixtralForCausalLM(cfg).save_pretrained(d)
    return str(d)


@pytest.fixture(scope="session")
def switch_dir(tmp_path_factory):
    """Tiny Switch-style encoder-decoder checkpoint; sparse every other layer."""
    from transformers import SwitchTransformersConfig, SwitchTransformersForConditionalGeneration

    d = tmp_path_factory.mktemp("tiny-switch")
    _save_tokenizer(d)
    cfg = SwitchTransformersConfig(
        vocab_size=VOCAB_SIZE,
        d_model=32,
        d_kv=8,
        d_ff=48,
        num_layers=4,
        num_decoder_layers=2,
        num_heads=4,
        num_experts=4,
        encoder_sparse_step=2,
        decoder_sparse_step=2,
        expert_capacity=512,
        pad_token_id=0,
        eos_token_id=2,
        decoder_start_token_id=0,
    )
    torch.manual_seed(11)
    SwitchTransformersForConditionalGeneration(cfg).save_pretrained(d)
    return str(d)


@pytest.fixture(scope="session")
def dense_dir(tmp_path_factory):
    """A small dense (no-router) checkpoint, for the fail-closed path."""
    from transformers import GPT2Config, GPT2LMHeadModel

    d = tmp_path_factory.mktemp("tiny-dense")
    _save_tokenizer(d)
    cfg = GPT2Config(vocab_size=VOCAB_SIZE, n_positions=64, n_embd=32, n_layer=2, n_head=2)
    torch.manual_seed(3)
    GPT2LMHeadModel(cfg).save_pretrained(d)
    return str(d)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Two domain files, four long documents each plus one too-short line."""
    d = tmp_path_factory.mktemp("corpus")
    rng = random.Random(5)
    paths = {}
    for name in ("news", "code"):
        p = d / f"{name}.txt"
        with open(p, "w") as f:
            for _ in range(4):
                f.write(" ".join(rng.choice(WORDS) for _ in range(24)) + "\n")
            f.write("too short line\n")
        paths[name] = str(p)
    return paths


def run_moelab(*args):
    return subprocess.run(["moelab", *args], capture_output=True, text=True)


def read_trace_jsonl(moet_path, tmpdir):
    """Decode a .moet file through the analyzer CLI; (header, sequences)."""
    out = os.path.join(str(tmpdir), "roundtrip.jsonl")
    r = run_moelab("convert", "--in", moet_path, "--out", out)
    assert r.returncode == 0, r.stderr
    with open(out) as f:
        lines = [json.loads(line) for line in f]
    return lines[0], lines[1:]


# Conformance summary printed after the run, same shape as the analyzer's
# acceptance section.

_CONFORMANCE = []


def record_conformance(name: str, ok: bool, detail: str = "") -> None:
    _CONFORMANCE.append((name, ok, detail))


@pytest.fixture
def conformance():
    return record_conformance


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CONFORMANCE:
        return
    terminalreporter.section("collector conformance")
    for name, ok, detail in _CONFORMANCE:
        status = "PASS" if ok else "FAIL"
        line = f"{status}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
